#pragma once

#include <stdexcept>
#include <string>

namespace drm {

// Error taxonomy. ConfigError maps to exit code 2, DataError to 3,
// NumericalError to 4 in the CLI layer.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// panel-core
struct MissingColumn : DataError {
    explicit MissingColumn(const std::string& c) : DataError("missing column: " + c) {}
};
struct UnparseableRow : DataError {
    UnparseableRow(std::size_t line, const std::string& why)
        : DataError("unparseable row at line " + std::to_string(line) + ": " + why) {}
};
struct EmptyPanel : DataError {
    EmptyPanel() : DataError("panel contains no data rows") {}
};
struct NoValidStocks : DataError {
    explicit NoValidStocks(const std::string& date) : DataError("no valid stocks on " + date) {}
};
struct SpecOutOfRange : ConfigError {
    explicit SpecOutOfRange(const std::string& why) : ConfigError("split spec out of range: " + why) {}
};

// network / objective
struct DimensionMismatch : ConfigError {
    explicit DimensionMismatch(const std::string& why) : ConfigError("dimension mismatch: " + why) {}
};
struct ZeroVariance : NumericalError {
    ZeroVariance() : NumericalError("input vector has zero variance after demeaning") {}
};
struct EmptyNeighborhood : DataError {
    explicit EmptyNeighborhood(int i) : DataError("stock " + std::to_string(i) + " has no neighbors") {}
};
struct SingularNormalEquations : NumericalError {
    SingularNormalEquations() : NumericalError("normal equations singular beyond ridge tolerance") {}
};
struct SingularGram : NumericalError {
    SingularGram() : NumericalError("factor Gram matrix is singular") {}
};
struct ZeroReturns : NumericalError {
    ZeroReturns() : NumericalError("return vector has zero norm") {}
};
struct MissingHorizon : DataError {
    explicit MissingHorizon(int h) : DataError("forward horizon " + std::to_string(h) + " unavailable") {}
};

// trainer / riskmodel / portfolio
struct InsufficientHistory : DataError {
    explicit InsufficientHistory(const std::string& why) : DataError("insufficient history: " + why) {}
};
struct DivergedLoss : NumericalError {
    DivergedLoss() : NumericalError("training loss became non-finite") {}
};
struct RankDeficient : NumericalError {
    explicit RankDeficient(const std::string& why) : NumericalError("rank deficient design: " + why) {}
};
struct EmptyIndustry : DataError {
    explicit EmptyIndustry(const std::string& why) : DataError("empty industry: " + why) {}
};
struct ZeroPredictedVol : NumericalError {
    ZeroPredictedVol() : NumericalError("predicted factor volatility is zero") {}
};
struct SingularCovariance : NumericalError {
    SingularCovariance() : NumericalError("covariance matrix not invertible") {}
};
struct NonConvergence : NumericalError {
    explicit NonConvergence(const std::string& why) : NumericalError("solver did not converge: " + why) {}
};
struct NoOverlap : DataError {
    explicit NoOverlap(const std::string& why) : DataError("no overlapping observations: " + why) {}
};
struct InvalidSpec : ConfigError {
    explicit InvalidSpec(const std::string& why) : ConfigError("invalid spec: " + why) {}
};

}  // namespace drm
