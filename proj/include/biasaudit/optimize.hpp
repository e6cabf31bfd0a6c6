#pragma once

// Derivative-free Nelder-Mead simplex minimizer.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace biasaudit {

struct NelderMeadOptions {
    double ftol_rel = 1e-10;   // (f_max - f_min) <= ftol_rel * (|f_min| + ftol_abs)
    double ftol_abs = 1e-12;
    double xtol = 1e-9;        // max vertex distance from the best vertex
    int max_evals = 5000;
    double initial_step = 0.25;
    int restarts = 1;          // fresh simplex around the optimum after convergence
};

struct NelderMeadResult {
    std::vector<double> x;
    double f = 0.0;
    int evals = 0;
    bool converged = false;
};

inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> x0, const NelderMeadOptions& opt = {}) {
    const std::size_t d = x0.size();
    NelderMeadResult res;
    if (d == 0) {
        res.f = f(x0);
        res.evals = 1;
        res.converged = true;
        return res;
    }

    auto eval = [&](const std::vector<double>& x) {
        ++res.evals;
        double v = f(x);
        return std::isfinite(v) ? v : HUGE_VAL;
    };

    std::vector<double> best = std::move(x0);
    double fbest = eval(best);

    for (int round = 0; round <= opt.restarts; ++round) {
        std::vector<std::vector<double>> s(d + 1, best);
        std::vector<double> fs(d + 1);
        fs[0] = fbest;
        for (std::size_t i = 0; i < d; ++i) {
            double h = opt.initial_step * (round == 0 ? 1.0 : 0.1);
            if (std::abs(s[i + 1][i]) > 1e-8) h *= std::max(1.0, std::abs(s[i + 1][i]));
            s[i + 1][i] += h;
            fs[i + 1] = eval(s[i + 1]);
        }

        std::vector<std::size_t> idx(d + 1);
        bool done = false;
        while (res.evals < opt.max_evals) {
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return fs[a] < fs[b]; });
            const auto lo = idx.front(), hi = idx.back(), nh = idx[d - 1];

            double diam = 0.0;
            for (std::size_t i = 0; i <= d; ++i) {
                for (std::size_t k = 0; k < d; ++k) diam = std::max(diam, std::abs(s[i][k] - s[lo][k]));
            }
            if (fs[hi] - fs[lo] <= opt.ftol_rel * (std::abs(fs[lo]) + opt.ftol_abs) && diam <= opt.xtol) {
                done = true;
                break;
            }

            std::vector<double> c(d, 0.0);
            for (std::size_t i = 0; i <= d; ++i) {
                if (i == hi) continue;
                for (std::size_t k = 0; k < d; ++k) c[k] += s[i][k] / static_cast<double>(d);
            }
            auto along = [&](double t) {
                std::vector<double> x(d);
                for (std::size_t k = 0; k < d; ++k) x[k] = c[k] + t * (s[hi][k] - c[k]);
                return x;
            };

            auto xr = along(-1.0);
            double fr = eval(xr);
            if (fr < fs[lo]) {
                auto xe = along(-2.0);
                double fe = eval(xe);
                if (fe < fr) {
                    s[hi] = std::move(xe);
                    fs[hi] = fe;
                } else {
                    s[hi] = std::move(xr);
                    fs[hi] = fr;
                }
                continue;
            }
            if (fr < fs[nh]) {
                s[hi] = std::move(xr);
                fs[hi] = fr;
                continue;
            }
            const bool outside = fr < fs[hi];
            auto xc = along(outside ? -0.5 : 0.5);
            double fc = eval(xc);
            if (fc < (outside ? fr : fs[hi])) {
                s[hi] = std::move(xc);
                fs[hi] = fc;
                continue;
            }
            for (std::size_t i = 0; i <= d; ++i) {
                if (i == lo) continue;
                for (std::size_t k = 0; k < d; ++k) s[i][k] = s[lo][k] + 0.5 * (s[i][k] - s[lo][k]);
                fs[i] = eval(s[i]);
            }
        }

        const auto lo = static_cast<std::size_t>(std::min_element(fs.begin(), fs.end()) - fs.begin());
        if (fs[lo] <= fbest) {
            best = s[lo];
            fbest = fs[lo];
        }
        res.converged = done;
        if (!done) break;
    }

    res.x = std::move(best);
    res.f = fbest;
    return res;
}

} // namespace biasaudit
