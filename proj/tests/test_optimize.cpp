#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "biasaudit/optimize.hpp"

using namespace biasaudit;

TEST(NelderMead, Quadratic) {
    auto f = [](const std::vector<double>& x) {
        return (x[0] - 1.5) * (x[0] - 1.5) + 3.0 * (x[1] + 0.5) * (x[1] + 0.5) + 2.0;
    };
    const auto r = nelder_mead(f, {0.0, 0.0});
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.x[0], 1.5, 1e-6);
    EXPECT_NEAR(r.x[1], -0.5, 1e-6);
    EXPECT_NEAR(r.f, 2.0, 1e-12);
}

TEST(NelderMead, Rosenbrock) {
    auto f = [](const std::vector<double>& x) {
        return 100.0 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1.0 - x[0], 2);
    };
    const auto r = nelder_mead(f, {-1.2, 1.0});
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.x[0], 1.0, 1e-5);
    EXPECT_NEAR(r.x[1], 1.0, 1e-5);
}

TEST(NelderMead, OneDimensional) {
    auto f = [](const std::vector<double>& x) { return std::pow(x[0] - 0.3, 2); };
    const auto r = nelder_mead(f, {1.0});
    EXPECT_NEAR(r.x[0], 0.3, 1e-6);
}

TEST(NelderMead, EvaluationCapStopsEarly) {
    auto f = [](const std::vector<double>& x) {
        return 100.0 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1.0 - x[0], 2);
    };
    NelderMeadOptions opt;
    opt.max_evals = 20;
    const auto r = nelder_mead(f, {-1.2, 1.0}, opt);
    EXPECT_FALSE(r.converged);
    EXPECT_LE(r.evals, 20 + 3);
    EXPECT_LE(r.f, f({-1.2, 1.0}));
}

TEST(NelderMead, NonFiniteValuesAreAvoided) {
    auto f = [](const std::vector<double>& x) {
        if (x[0] < 0.0) return std::numeric_limits<double>::quiet_NaN();
        return std::pow(x[0] - 0.2, 2);
    };
    const auto r = nelder_mead(f, {0.5});
    EXPECT_TRUE(std::isfinite(r.f));
    EXPECT_NEAR(r.x[0], 0.2, 1e-6);
}

TEST(NelderMead, ZeroDimensions) {
    int calls = 0;
    auto f = [&](const std::vector<double>&) {
        ++calls;
        return 4.0;
    };
    const auto r = nelder_mead(f, {});
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.f, 4.0);
    EXPECT_EQ(calls, 1);
}
