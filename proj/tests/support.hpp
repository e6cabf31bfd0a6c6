#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "biasaudit/lmm.hpp"
#include "biasaudit/util.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using namespace biasaudit;

inline std::string data_path(const std::string& name) { return std::string(BIASAUDIT_TEST_DATA) + "/" + name; }

inline Frame load_fixture_frame(const std::string& name) {
    auto rows = parse_csv(read_file(data_path(name)));
    Frame f;
    const auto& header = rows.at(0);
    auto col = [&](const std::string& c) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == c) return i;
        throw std::runtime_error("missing column " + c);
    };
    const auto ig = col("group"), it = col("template"), iw = col("trait"), iwt = col("weight"), iy = col("y");
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() < header.size()) continue;
        f.response.push_back(std::stod(rows[r][iy]));
        f.weights.push_back(std::stod(rows[r][iwt]));
        f.factors["group"].push_back(rows[r][ig]);
        f.factors["template"].push_back(rows[r][it]);
        f.factors["trait"].push_back(rows[r][iw]);
    }
    return f;
}

inline ModelSpec fixture_spec() {
    ModelSpec s;
    s.response = "y";
    s.fixed = FixedContrast{"group", "male", "female"};
    s.random = {"template", "trait"};
    return s;
}

struct SimParams {
    std::size_t n_templates = 6;
    std::size_t n_traits = 13;
    std::size_t n = 2000;
    double beta0 = 0.0;
    double beta1 = 0.5;
    double sigma_t = 0.3;
    double sigma_w = 0.2;
    double sigma = 1.0;
    double w_lo = 0.5;
    double w_hi = 2.0;
};

/// Crossed design: row i gets template i % T, trait (i / T) % W, group alternating.
inline Frame simulate_frame(const SimParams& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> uw(p.w_lo, p.w_hi);
    std::vector<double> ut(p.n_templates), uw_(p.n_traits);
    for (auto& v : ut) v = p.sigma_t * z(rng);
    for (auto& v : uw_) v = p.sigma_w * z(rng);
    Frame f;
    for (std::size_t i = 0; i < p.n; ++i) {
        const std::size_t t = i % p.n_templates;
        const std::size_t w = (i / p.n_templates) % p.n_traits;
        const bool g1 = (i / (p.n_templates * p.n_traits)) % 2 == 0 ? (i % 2 == 0) : (i % 2 == 1);
        const double wt = uw(rng);
        const double y = p.beta0 + p.beta1 * (g1 ? 1.0 : 0.0) + ut[t] + uw_[w] + p.sigma / std::sqrt(wt) * z(rng);
        f.response.push_back(y);
        f.weights.push_back(wt);
        f.factors["group"].push_back(g1 ? "g1" : "g2");
        f.factors["template"].push_back("t" + std::to_string(t));
        f.factors["trait"].push_back("w" + std::to_string(w));
    }
    return f;
}

inline ModelSpec sim_spec() {
    ModelSpec s;
    s.fixed = FixedContrast{"group", "g1", "g2"};
    s.random = {"template", "trait"};
    return s;
}

/// Fresh empty directory under the system temp dir.
inline fs::path temp_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    fs::path d = fs::temp_directory_path() / ("biasaudit_" + tag + "_" + to_hex(rng()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

} // namespace testsupport
