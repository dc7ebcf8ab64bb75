#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ppmlhdfe/estimate.hpp"

namespace testing {

inline ppmlhdfe::RawTable table_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    return ppmlhdfe::parse_table(in);
}

inline std::string data_path(const std::string& file) { return std::string(PPMLHDFE_TEST_DATA) + "/" + file; }

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Columns of a generated data set, written out as CSV.
struct Frame {
    std::vector<std::string> names;
    std::vector<std::vector<double>> cols;

    void add(const std::string& name, std::vector<double> values) {
        names.push_back(name);
        cols.push_back(std::move(values));
    }
    std::string csv() const {
        std::string s;
        for (std::size_t j = 0; j < names.size(); ++j) s += (j ? "," : "") + names[j];
        s += '\n';
        const std::size_t n = cols.empty() ? 0 : cols[0].size();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < cols.size(); ++j) s += (j ? "," : "") + num(cols[j][i]);
            s += '\n';
        }
        return s;
    }
    ppmlhdfe::RawTable table() const { return table_from_csv(csv()); }
};

// Random Poisson panel: k regressors, `fes` factor columns f1.., optional
// offset column `off` and weight column `w`.
struct PanelSpec {
    int n = 200;
    int k = 2;
    std::vector<int> groups;  // one entry per factor
    bool offset = false;
    bool weights = false;
    double fe_scale = 0.5;
    double intercept = 0.5;
};

inline Frame random_panel(const PanelSpec& spec, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.5, 2.0);
    Frame f;
    std::vector<double> eta(static_cast<std::size_t>(spec.n), spec.intercept);
    for (int j = 0; j < spec.k; ++j) {
        std::vector<double> x(static_cast<std::size_t>(spec.n));
        const double beta = 0.3 * normal(rng);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = normal(rng);
            eta[i] += beta * x[i];
        }
        f.add("x" + std::to_string(j + 1), x);
    }
    for (std::size_t t = 0; t < spec.groups.size(); ++t) {
        const int G = spec.groups[t];
        std::vector<double> effect(static_cast<std::size_t>(G));
        for (auto& e : effect) e = spec.fe_scale * normal(rng);
        std::uniform_int_distribution<int> pick(0, G - 1);
        std::vector<double> codes(static_cast<std::size_t>(spec.n));
        // every level appears at least twice when n allows
        for (std::size_t i = 0; i < codes.size(); ++i)
            codes[i] = 1 + (static_cast<int>(i) < 2 * G ? static_cast<int>(i) % G : pick(rng));
        std::shuffle(codes.begin(), codes.end(), rng);
        for (std::size_t i = 0; i < codes.size(); ++i) eta[i] += effect[static_cast<std::size_t>(codes[i]) - 1];
        f.add("f" + std::to_string(t + 1), codes);
    }
    if (spec.offset) {
        std::vector<double> off(static_cast<std::size_t>(spec.n));
        for (std::size_t i = 0; i < off.size(); ++i) {
            off[i] = 0.3 * normal(rng);
            eta[i] += off[i];
        }
        f.add("off", off);
    }
    if (spec.weights) {
        std::vector<double> w(static_cast<std::size_t>(spec.n));
        for (auto& v : w) v = unif(rng);
        f.add("w", w);
    }
    std::vector<double> y(static_cast<std::size_t>(spec.n));
    for (std::size_t i = 0; i < y.size(); ++i) {
        std::poisson_distribution<int> pois(std::exp(std::min(eta[i], 5.0)));
        y[i] = pois(rng);
    }
    f.names.insert(f.names.begin(), "y");
    f.cols.insert(f.cols.begin(), y);
    return f;
}

inline std::vector<std::string> regressors(int k) {
    std::vector<std::string> xs;
    for (int j = 0; j < k; ++j) xs.push_back("x" + std::to_string(j + 1));
    return xs;
}

inline std::string factors(std::size_t count) {
    std::string s;
    for (std::size_t t = 0; t < count; ++t) s += (t ? " f" : "f") + std::to_string(t + 1);
    return s;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace testing
