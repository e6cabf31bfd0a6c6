#pragma once

// Weighted linear mixed model with up to two crossed random intercepts, fitted by
// profiled REML:
//
//   y = X beta + Z b + e,   b_k ~ N(0, sigma^2 theta_k^2 I),   e ~ N(0, sigma^2 diag(1/w))
//
// With Lambda = diag(theta) expanded over levels and b = Lambda u, the penalized
// weighted least squares system is solved through
//   L L' = Lambda Z'WZ Lambda + I,   cu = L^-1 Lambda Z'Wy,   RZX = L^-1 Lambda Z'WX,
//   M = X'WX - RZX'RZX,              beta = M^-1 (X'Wy - RZX'cu),  u = L^-T (cu - RZX beta)
// and the REML deviance is
//   log|L|^2 + log|M| - sum(log w) + (n-p) (1 + log(2 pi pwrss / (n-p))),
//   pwrss = sum w r^2 + |u|^2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "domain.hpp"
#include "error.hpp"
#include "optimize.hpp"

namespace biasaudit {

/// Column-oriented model frame: numeric response and weights plus categorical factors.
struct Frame {
    std::vector<double> response;
    std::vector<double> weights;
    std::map<std::string, std::vector<std::string>> factors;

    std::size_t size() const { return response.size(); }
};

/// Two-level fixed factor coded 1 for `level1` and 0 for `level2`.
struct FixedContrast {
    std::string factor;
    std::string level1;
    std::string level2;

    bool operator==(const FixedContrast&) const = default;
};

struct ModelSpec {
    std::string response = "association_score";
    std::optional<FixedContrast> fixed;  // absent: intercept only
    std::vector<std::string> random;     // at most two crossed intercepts
    std::string weight = "weight";

    bool operator==(const ModelSpec&) const = default;
};

inline void to_json(json& j, const FixedContrast& c) {
    j = json{{"factor", c.factor}, {"level1", c.level1}, {"level2", c.level2}};
}
inline void from_json(const json& j, FixedContrast& c) {
    j.at("factor").get_to(c.factor);
    j.at("level1").get_to(c.level1);
    j.at("level2").get_to(c.level2);
}
inline void to_json(json& j, const ModelSpec& s) {
    j = json{{"response", s.response}, {"random", s.random}, {"weight", s.weight}};
    j["fixed"] = s.fixed ? json(*s.fixed) : json(nullptr);
}
inline void from_json(const json& j, ModelSpec& s) {
    s.response = j.value("response", std::string{"association_score"});
    s.random = j.value("random", std::vector<std::string>{});
    s.weight = j.value("weight", std::string{"weight"});
    if (j.contains("fixed") && !j.at("fixed").is_null()) s.fixed = j.at("fixed").get<FixedContrast>();
    else s.fixed.reset();
}

/// Intercept-only version of `spec` with the same random structure and weights.
inline ModelSpec drop_fixed(ModelSpec spec) {
    spec.fixed.reset();
    return spec;
}

struct LmmFit {
    ModelSpec spec;                          // effective spec (degenerate random factors removed)
    std::vector<double> beta;                // intercept, then contrast coefficient
    std::vector<double> se_beta;
    double sigma2_resid = 0.0;
    std::vector<double> variance_components; // sigma2 * theta_k^2, in spec.random order
    std::vector<double> theta;
    double reml_criterion = 0.0;
    bool converged = false;
    bool boundary = false;
    std::size_t n = 0;
    std::map<std::string, std::size_t> group_sizes; // levels per random factor
    std::vector<std::string> warnings;
    double marginal_r2 = 0.0;
    int evaluations = 0;

    /// Contrast coefficient; 0 for intercept-only fits.
    double coefficient() const { return beta.size() > 1 ? beta[1] : 0.0; }
    double coefficient_se() const { return se_beta.size() > 1 ? se_beta[1] : 0.0; }
};

inline void to_json(json& j, const LmmFit& f) {
    j = json{{"spec", f.spec},
             {"beta", f.beta},
             {"se_beta", f.se_beta},
             {"sigma2_resid", f.sigma2_resid},
             {"variance_components", f.variance_components},
             {"theta", f.theta},
             {"reml_criterion", std::isfinite(f.reml_criterion) ? json(f.reml_criterion) : json(nullptr)},
             {"converged", f.converged},
             {"boundary", f.boundary},
             {"n", f.n},
             {"group_sizes", f.group_sizes},
             {"warnings", f.warnings},
             {"marginal_r2", f.marginal_r2},
             {"evaluations", f.evaluations}};
}

struct FitOptions {
    std::optional<std::vector<double>> theta; // evaluate at fixed theta instead of optimizing
    NelderMeadOptions optimizer{};
    double boundary_tol = 1e-4;
};

/// Design matrices and cross-products for one frame and spec. Response-independent
/// parts are computed once so bootstrap refits only recompute Z'Wy and X'Wy.
class LmmProblem {
public:
    LmmProblem(const Frame& frame, ModelSpec spec) : spec_(std::move(spec)) {
        const std::size_t n = frame.size();
        if (frame.weights.size() != n) throw DataError("response and weight columns differ in length");
        if (spec_.random.size() > 2) throw ConfigError("at most two random factors are supported");
        if (n == 0) throw DataError("empty model frame");

        y_ = Eigen::Map<const Eigen::VectorXd>(frame.response.data(), static_cast<Eigen::Index>(n));
        w_ = Eigen::Map<const Eigen::VectorXd>(frame.weights.data(), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(y_[i])) throw DataError("non-finite response at row " + std::to_string(i));
            if (!std::isfinite(w_[i]) || w_[i] <= 0.0)
                throw DataError("weight must be finite and positive at row " + std::to_string(i));
        }

        const Eigen::Index p = spec_.fixed ? 2 : 1;
        X_ = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), p);
        if (spec_.fixed) {
            const auto& col = column(frame, spec_.fixed->factor, n);
            for (std::size_t i = 0; i < n; ++i) {
                if (col[i] == spec_.fixed->level1) X_(static_cast<Eigen::Index>(i), 1) = 1.0;
                else if (col[i] == spec_.fixed->level2) X_(static_cast<Eigen::Index>(i), 1) = 0.0;
                else throw DataError("row " + std::to_string(i) + " has level '" + col[i] + "' outside contrast (" +
                                     spec_.fixed->level1 + ", " + spec_.fixed->level2 + ")");
            }
        }

        std::vector<std::string> kept;
        for (const auto& name : spec_.random) {
            const auto& col = column(frame, name, n);
            std::map<std::string, int> levels;
            for (const auto& v : col) levels.emplace(v, 0);
            if (levels.size() < 2) {
                warnings_.push_back("random factor '" + name + "' has " + std::to_string(levels.size()) +
                                    " level(s) and was dropped");
                continue;
            }
            int next = 0;
            for (auto& [_, idx] : levels) idx = next++;
            std::vector<int> codes(n);
            for (std::size_t i = 0; i < n; ++i) codes[i] = levels.at(col[i]);
            codes_.push_back(std::move(codes));
            offsets_.push_back(q_);
            nlevels_.push_back(levels.size());
            q_ += static_cast<Eigen::Index>(levels.size());
            group_sizes_[name] = levels.size();
            kept.push_back(name);
        }
        spec_.random = kept;

        const Eigen::VectorXd sw = w_.cwiseSqrt();
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sw.asDiagonal() * X_);
        if (qr.rank() < p) throw DesignError("fixed-effects design is rank deficient (a contrast level is absent?)");
        if (static_cast<Eigen::Index>(n) <= p) throw DesignError("need more rows than fixed effects");

        XtWX_ = X_.transpose() * w_.asDiagonal() * X_;
        ZtWZ_ = Eigen::MatrixXd::Zero(q_, q_);
        ZtWX_ = Eigen::MatrixXd::Zero(q_, p);
        for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            for (std::size_t a = 0; a < codes_.size(); ++a) {
                const Eigen::Index ja = offsets_[a] + codes_[a][i];
                ZtWX_.row(ja) += w_[ii] * X_.row(ii);
                for (std::size_t b = 0; b < codes_.size(); ++b)
                    ZtWZ_(ja, offsets_[b] + codes_[b][i]) += w_[ii];
            }
        }
        sum_log_w_ = w_.array().log().sum();
    }

    const ModelSpec& spec() const { return spec_; }
    std::size_t n() const { return static_cast<std::size_t>(y_.size()); }
    std::size_t n_random() const { return codes_.size(); }
    const Eigen::VectorXd& response() const { return y_; }
    const Eigen::VectorXd& weights() const { return w_; }
    const Eigen::MatrixXd& fixed_design() const { return X_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    double criterion(const std::vector<double>& theta) const { return criterion(theta, y_); }

    double criterion(const std::vector<double>& theta, const Eigen::VectorXd& y) const {
        return solve(theta, cross(y), y).criterion;
    }

    LmmFit fit(const FitOptions& opt = {}) const { return fit(y_, opt); }

    LmmFit fit(const Eigen::VectorXd& y, const FitOptions& opt = {}) const {
        const auto yt = cross(y);
        const std::size_t k = n_random();
        LmmFit out;
        out.spec = spec_;
        out.n = n();
        out.group_sizes = group_sizes_;
        out.warnings = warnings_;

        std::vector<double> theta;
        if (opt.theta) {
            if (opt.theta->size() != k)
                throw ConfigError("theta has " + std::to_string(opt.theta->size()) + " entries, model has " +
                                  std::to_string(k) + " random factors");
            for (double t : *opt.theta)
                if (!(t >= 0.0)) throw ConfigError("theta must be non-negative");
            theta = *opt.theta;
            out.converged = true;
        } else if (k == 0) {
            out.converged = true;
        } else if (exact_fit(y, yt)) {
            theta.assign(k, 0.0);
            out.converged = true;
            out.warnings.push_back("response is fitted exactly by the fixed effects; variance components set to 0");
        } else {
            auto res = nelder_mead([&](const std::vector<double>& t) { return solve(t, yt, y).criterion; },
                                   std::vector<double>(k, 1.0), opt.optimizer);
            theta = res.x;
            for (auto& t : theta) t = std::abs(t);
            out.converged = res.converged;
            out.evaluations = res.evals;
            if (!res.converged) out.warnings.push_back("optimizer reached the evaluation cap");
        }

        const auto s = solve(theta, yt, y);
        const auto nn = static_cast<double>(n());
        const auto p = static_cast<double>(X_.cols());
        out.theta = theta;
        out.reml_criterion = s.criterion;
        out.sigma2_resid = s.pwrss / (nn - p);
        out.beta.assign(s.beta.data(), s.beta.data() + s.beta.size());
        out.se_beta.resize(out.beta.size());
        for (std::size_t i = 0; i < out.beta.size(); ++i)
            out.se_beta[i] = std::sqrt(out.sigma2_resid * s.Minv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
        for (double t : theta) {
            out.variance_components.push_back(out.sigma2_resid * t * t);
            if (t < opt.boundary_tol) out.boundary = true;
        }
        out.marginal_r2 = marginal_r2(out, y.squaredNorm() / nn);
        return out;
    }

    /// Marginal R^2: var(X beta) / (var(X beta) + sum sigma2_k + sigma2 * mean(1/w)).
    /// Fixed-effect variance at rounding level relative to mean(y^2) counts as zero.
    double marginal_r2(const LmmFit& f, double mean_y2) const {
        double var_f = 0.0;
        if (X_.cols() > 1 && X_.rows() > 1) {
            const Eigen::Index k = X_.cols() - 1;
            const Eigen::VectorXd beta = Eigen::Map<const Eigen::VectorXd>(f.beta.data() + 1, k);
            const Eigen::VectorXd eta = X_.rightCols(k) * beta;
            var_f = (eta.array() - eta.mean()).square().sum() / static_cast<double>(eta.size() - 1);
            if (var_f <= 1e-24 * mean_y2) var_f = 0.0;
        }
        double var_r = 0.0;
        for (double v : f.variance_components) var_r += v;
        const double var_e = f.sigma2_resid * w_.cwiseInverse().mean();
        const double total = var_f + var_r + var_e;
        if (!(total > 0.0)) return 0.0;
        return var_f / total;
    }

    /// y* = X beta + Z u* + e*,  u*_k ~ N(0, sigma2_k),  e*_i ~ N(0, sigma2 / w_i).
    Eigen::VectorXd simulate(const LmmFit& f, std::uint64_t seed) const {
        if (f.beta.size() != static_cast<std::size_t>(X_.cols()) || f.variance_components.size() != n_random())
            throw ConfigError("fit does not match this model design");
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> z(0.0, 1.0);
        std::vector<Eigen::VectorXd> u;
        for (std::size_t k = 0; k < n_random(); ++k) {
            Eigen::VectorXd uk(static_cast<Eigen::Index>(nlevels_[k]));
            const double sd = std::sqrt(f.variance_components[k]);
            for (Eigen::Index l = 0; l < uk.size(); ++l) uk[l] = sd * z(rng);
            u.push_back(std::move(uk));
        }
        const Eigen::VectorXd beta = Eigen::Map<const Eigen::VectorXd>(f.beta.data(), X_.cols());
        Eigen::VectorXd y = X_ * beta;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            for (std::size_t k = 0; k < n_random(); ++k) y[i] += u[k][codes_[k][static_cast<std::size_t>(i)]];
            y[i] += std::sqrt(f.sigma2_resid / w_[i]) * z(rng);
        }
        return y;
    }

private:
    struct YTerms {
        Eigen::VectorXd Zty;
        Eigen::VectorXd Xty;
    };

    struct Solution {
        double criterion = 0.0;
        double pwrss = 0.0;
        Eigen::VectorXd beta;
        Eigen::MatrixXd Minv;
    };

    static const std::vector<std::string>& column(const Frame& frame, const std::string& name, std::size_t n) {
        auto it = frame.factors.find(name);
        if (it == frame.factors.end()) throw ConfigError("model frame has no factor '" + name + "'");
        if (it->second.size() != n) throw DataError("factor '" + name + "' has wrong length");
        return it->second;
    }

    YTerms cross(const Eigen::VectorXd& y) const {
        if (y.size() != y_.size()) throw DataError("response length does not match the design");
        YTerms t;
        const Eigen::VectorXd wy = w_.cwiseProduct(y);
        t.Xty = X_.transpose() * wy;
        t.Zty = Eigen::VectorXd::Zero(q_);
        for (std::size_t a = 0; a < codes_.size(); ++a)
            for (Eigen::Index i = 0; i < y.size(); ++i) t.Zty[offsets_[a] + codes_[a][static_cast<std::size_t>(i)]] += wy[i];
        return t;
    }

    bool exact_fit(const Eigen::VectorXd& y, const YTerms& yt) const {
        const Eigen::VectorXd beta = XtWX_.ldlt().solve(yt.Xty);
        const Eigen::VectorXd r = y - X_ * beta;
        const double rss = (w_.array() * r.array().square()).sum();
        const double scale = (w_.array() * y.array().square()).sum();
        return rss <= 1e-24 * std::max(scale, 1e-300) || rss == 0.0;
    }

    Solution solve(const std::vector<double>& theta, const YTerms& yt, const Eigen::VectorXd& y) const {
        if (theta.size() != n_random()) throw ConfigError("theta length does not match random factors");
        const Eigen::Index p = X_.cols();
        const auto nn = static_cast<double>(n());

        Eigen::VectorXd lam(q_);
        for (std::size_t a = 0; a < codes_.size(); ++a)
            lam.segment(offsets_[a], static_cast<Eigen::Index>(nlevels_[a])).setConstant(theta[a]);

        Eigen::VectorXd cu = Eigen::VectorXd::Zero(q_);
        Eigen::MatrixXd RZX = Eigen::MatrixXd::Zero(q_, p);
        double logdet_L = 0.0;
        Eigen::LLT<Eigen::MatrixXd> L;
        if (q_ > 0) {
            Eigen::MatrixXd A = lam.asDiagonal() * ZtWZ_ * lam.asDiagonal();
            A.diagonal().array() += 1.0;
            L.compute(A);
            if (L.info() != Eigen::Success)
                throw NumericalError("Cholesky of the random-effects system failed (theta = " + fmt_theta(theta) + ")");
            cu = L.matrixL().solve(lam.cwiseProduct(yt.Zty));
            RZX = L.matrixL().solve(lam.asDiagonal() * ZtWX_);
            logdet_L = 2.0 * L.matrixLLT().diagonal().array().log().sum();
        }

        const Eigen::MatrixXd M = XtWX_ - RZX.transpose() * RZX;
        Eigen::LLT<Eigen::MatrixXd> RX(M);
        if (RX.info() != Eigen::Success) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
            throw NumericalError("Cholesky of the fixed-effects system failed (theta = " + fmt_theta(theta) +
                                 ", condition ~ " + std::to_string(es.eigenvalues().maxCoeff() /
                                                                   std::max(es.eigenvalues().minCoeff(), 1e-300)) + ")");
        }

        Solution s;
        s.beta = RX.solve(yt.Xty - RZX.transpose() * cu);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(q_);
        double u2 = 0.0;
        if (q_ > 0) {
            const Eigen::VectorXd u = L.matrixU().solve(cu - RZX * s.beta);
            u2 = u.squaredNorm();
            b = lam.cwiseProduct(u);
        }
        Eigen::VectorXd r = y - X_ * s.beta;
        for (std::size_t a = 0; a < codes_.size(); ++a)
            for (Eigen::Index i = 0; i < r.size(); ++i) r[i] -= b[offsets_[a] + codes_[a][static_cast<std::size_t>(i)]];
        s.pwrss = (w_.array() * r.array().square()).sum() + u2;
        s.Minv = RX.solve(Eigen::MatrixXd::Identity(p, p));

        const double logdet_M = 2.0 * RX.matrixLLT().diagonal().array().log().sum();
        const double dof = nn - static_cast<double>(p);
        constexpr double two_pi = 6.283185307179586476925286766559;
        s.criterion = logdet_L + logdet_M - sum_log_w_ + dof * (1.0 + std::log(two_pi * s.pwrss / dof));
        return s;
    }

    static std::string fmt_theta(const std::vector<double>& theta) {
        std::string s = "(";
        for (std::size_t i = 0; i < theta.size(); ++i) s += (i ? ", " : "") + std::to_string(theta[i]);
        return s + ")";
    }

    ModelSpec spec_;
    Eigen::VectorXd y_, w_;
    Eigen::MatrixXd X_;
    std::vector<std::vector<int>> codes_;
    std::vector<Eigen::Index> offsets_;
    std::vector<std::size_t> nlevels_;
    Eigen::Index q_ = 0;
    std::map<std::string, std::size_t> group_sizes_;
    std::vector<std::string> warnings_;
    Eigen::MatrixXd XtWX_, ZtWZ_, ZtWX_;
    double sum_log_w_ = 0.0;
};

inline LmmFit fit(const Frame& frame, const ModelSpec& spec, const FitOptions& opt = {}) {
    return LmmProblem(frame, spec).fit(opt);
}

inline double reml_criterion(const std::vector<double>& theta, const Frame& frame, const ModelSpec& spec) {
    for (double t : theta)
        if (!(t >= 0.0)) throw ConfigError("theta must be non-negative");
    return LmmProblem(frame, spec).criterion(theta);
}

inline std::vector<double> simulate_response(const LmmFit& f, const Frame& frame, std::uint64_t seed) {
    Eigen::VectorXd y = LmmProblem(frame, f.spec).simulate(f, seed);
    return {y.data(), y.data() + y.size()};
}

} // namespace biasaudit
