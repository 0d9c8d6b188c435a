#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "drm/errors.hpp"
#include "json.hpp"

namespace drm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One observation of one stock on one day. Invalid rows are kept (with
// valid=false) so the load report can account for them.
struct Observation {
    std::vector<double> features;
    double ret = 0.0;
    double cap_weight = 0.0;
    std::string industry;
    bool valid = false;
};

struct LoadReport {
    std::size_t total_rows = 0;
    std::size_t valid_rows = 0;
    std::size_t invalid_rows = 0;
    std::map<std::string, std::size_t> invalid_reasons;

    nlohmann::json to_json() const {
        return {{"total_rows", total_rows},
                {"valid_rows", valid_rows},
                {"invalid_rows", invalid_rows},
                {"invalid_reasons", invalid_reasons}};
    }
};

// Aligned (date x stock) panel. Immutable after load; cell lookup goes
// through a per-date map from stock id to observation.
struct PanelDataset {
    std::vector<std::string> dates;      // strictly increasing, ISO-8601
    std::vector<std::string> stock_ids;  // unique, sorted
    int n_features = 0;
    // obs[d] holds the observations for dates[d], keyed by stock id.
    std::vector<std::map<std::string, Observation>> obs;
    LoadReport report;

    int date_index(const std::string& d) const {
        auto it = std::lower_bound(dates.begin(), dates.end(), d);
        if (it == dates.end() || *it != d) return -1;
        return static_cast<int>(it - dates.begin());
    }
};

// One day's valid observations, rows sorted by stock id.
struct CrossSection {
    std::string date;
    std::vector<std::string> stock_ids;
    MatrixXd features;  // N x P
    VectorXd returns;   // N
    VectorXd caps;      // N
    std::vector<std::string> industries;

    int size() const { return static_cast<int>(stock_ids.size()); }
};

struct SplitSpec {
    std::string train_end;
    std::string valid_end;
    std::string test_end;
};

struct DateRange {
    int begin = 0;  // inclusive index into panel.dates
    int end = 0;    // exclusive
    int size() const { return end - begin; }
};

struct Splits {
    DateRange train, valid, test;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline std::optional<double> parse_double(const std::string& s) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) return std::nullopt;
        return v;
    } catch (...) {
        return std::nullopt;
    }
}

}  // namespace detail

// Expected CSV header: date,stock_id,f1..fP,return,cap_weight,industry
inline PanelDataset load_panel(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open panel file: " + path);

    std::string header;
    if (!std::getline(in, header)) throw EmptyPanel();
    if (!header.empty() && header.back() == '\r') header.pop_back();
    auto cols = detail::split_csv_line(header);
    if (cols.size() < 5) throw MissingColumn("expected date,stock_id,f1..fP,return,cap_weight,industry");
    if (cols[0] != "date") throw MissingColumn("date");
    if (cols[1] != "stock_id") throw MissingColumn("stock_id");
    if (cols[cols.size() - 1] != "industry") throw MissingColumn("industry");
    if (cols[cols.size() - 2] != "cap_weight") throw MissingColumn("cap_weight");
    if (cols[cols.size() - 3] != "return") throw MissingColumn("return");
    const int P = static_cast<int>(cols.size()) - 5;
    if (P < 1) throw MissingColumn("f1");

    PanelDataset panel;
    panel.n_features = P;
    std::map<std::string, std::map<std::string, Observation>> by_date;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != cols.size())
            throw UnparseableRow(lineno, "expected " + std::to_string(cols.size()) + " fields, got " +
                                             std::to_string(f.size()));
        panel.report.total_rows++;
        Observation o;
        o.features.resize(P);
        bool ok = true;
        std::string reason;
        for (int j = 0; j < P; ++j) {
            auto v = detail::parse_double(f[2 + j]);
            if (!v || !std::isfinite(*v)) {
                ok = false;
                reason = "bad feature";
                break;
            }
            o.features[j] = *v;
        }
        auto ret = detail::parse_double(f[2 + P]);
        auto cap = detail::parse_double(f[3 + P]);
        if (ok && (!ret || !std::isfinite(*ret))) { ok = false; reason = "bad return"; }
        if (ok && (!cap || !std::isfinite(*cap) || *cap <= 0)) { ok = false; reason = "bad cap_weight"; }
        o.industry = f[4 + P];
        if (ok && o.industry.empty()) { ok = false; reason = "missing industry"; }
        if (ok) {
            o.ret = *ret;
            o.cap_weight = *cap;
            o.valid = true;
            panel.report.valid_rows++;
        } else {
            o.valid = false;
            panel.report.invalid_rows++;
            panel.report.invalid_reasons[reason]++;
        }
        by_date[f[0]][f[1]] = o;
    }
    if (panel.report.total_rows == 0) throw EmptyPanel();

    std::map<std::string, int> id_set;
    for (auto& [d, m] : by_date) {
        panel.dates.push_back(d);
        for (auto& [id, o] : m) id_set[id] = 1;
    }
    for (auto& [id, _] : id_set) panel.stock_ids.push_back(id);
    panel.obs.reserve(panel.dates.size());
    for (auto& d : panel.dates) panel.obs.push_back(std::move(by_date[d]));
    return panel;
}

inline void write_panel(const PanelDataset& panel, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write panel file: " + path);
    out << "date,stock_id";
    for (int j = 1; j <= panel.n_features; ++j) out << ",f" << j;
    out << ",return,cap_weight,industry\n";
    out.precision(17);
    for (std::size_t d = 0; d < panel.dates.size(); ++d) {
        for (const auto& [id, o] : panel.obs[d]) {
            if (!o.valid) continue;
            out << panel.dates[d] << ',' << id;
            for (double v : o.features) out << ',' << v;
            out << ',' << o.ret << ',' << o.cap_weight << ',' << o.industry << '\n';
        }
    }
}

inline CrossSection cross_section(const PanelDataset& panel, const std::string& date) {
    int d = panel.date_index(date);
    if (d < 0) throw DataError("date not in panel: " + date);
    CrossSection cs;
    cs.date = date;
    for (const auto& [id, o] : panel.obs[d])
        if (o.valid) cs.stock_ids.push_back(id);  // map iteration is already sorted
    const int N = cs.size();
    if (N == 0) throw NoValidStocks(date);
    cs.features.resize(N, panel.n_features);
    cs.returns.resize(N);
    cs.caps.resize(N);
    cs.industries.resize(N);
    for (int i = 0; i < N; ++i) {
        const Observation& o = panel.obs[d].at(cs.stock_ids[i]);
        for (int j = 0; j < panel.n_features; ++j) cs.features(i, j) = o.features[j];
        cs.returns(i) = o.ret;
        cs.caps(i) = o.cap_weight;
        cs.industries[i] = o.industry;
    }
    return cs;
}

// Partition dates <= test_end into train/valid/test ranges.
inline Splits split(const PanelDataset& panel, const SplitSpec& spec) {
    if (panel.dates.empty()) throw EmptyPanel();
    if (!(spec.train_end < spec.valid_end && spec.valid_end < spec.test_end))
        throw SpecOutOfRange("require train_end < valid_end < test_end");
    if (spec.train_end < panel.dates.front())
        throw SpecOutOfRange("train_end precedes first panel date");
    if (spec.test_end > panel.dates.back())
        throw SpecOutOfRange("test_end beyond last panel date");
    auto upper = [&](const std::string& d) {
        return static_cast<int>(std::upper_bound(panel.dates.begin(), panel.dates.end(), d) -
                                panel.dates.begin());
    };
    Splits s;
    s.train = {0, upper(spec.train_end)};
    s.valid = {s.train.end, upper(spec.valid_end)};
    s.test = {s.valid.end, upper(spec.test_end)};
    if (s.train.size() == 0) throw SpecOutOfRange("empty training range");
    return s;
}

}  // namespace drm
