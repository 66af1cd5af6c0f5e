#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cellpca/errors.hpp"
#include "cellpca/kernels.hpp"
#include "cellpca/rng.hpp"

using namespace cellpca;

namespace {

// Independent oracle: invert the biweight loss at level 0.5 by bisection.
double biweight_rho_inverse_half(double a) {
    RhoKernel k = RhoKernel::biweight(a);
    double lo = 0.0, hi = a;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (rho(k, mid) < 0.5)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double central_diff_rho(const RhoKernel& k, double z, double h = 1e-6) {
    return (rho(k, z + h) - rho(k, z - h)) / (2 * h);
}

}  // namespace

TEST_CASE("tanh rho piecewise values") {
    RhoKernel k = RhoKernel::tanh_default();
    CHECK(rho(k, 0.0) == 0.0);
    CHECK(rho(k, 1.0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(rho(k, -1.0) == doctest::Approx(0.5).epsilon(1e-14));
    // plateau value d = b^2/2 + (q1/q2) log cosh(q2 (c-b)), evaluated
    // independently with long doubles
    long double d_oracle = 1.5L * 1.5L / 2.0L +
                           (1.540793L / 0.8622731L) *
                               std::log(std::cosh(0.8622731L * (4.0L - 1.5L)));
    CHECK(rho(k, 5.0) == doctest::Approx(static_cast<double>(d_oracle)).epsilon(1e-12));
    CHECK(static_cast<double>(d_oracle) == doctest::Approx(3.762212297834482).epsilon(1e-12));
    CHECK(rho(k, 4.0) == doctest::Approx(rho(k, 100.0)).epsilon(1e-14));
    // continuity at the breakpoints (exact by construction of d)
    CHECK(rho(k, 1.5) == doctest::Approx(1.5 * 1.5 / 2).epsilon(1e-12));
}

TEST_CASE("tanh psi piecewise values and derivative consistency") {
    RhoKernel k = RhoKernel::tanh_default();
    CHECK(psi(k, 1.2) == 1.2);
    CHECK(psi(k, -1.2) == -1.2);
    CHECK(psi(k, 4.0) == 0.0);
    CHECK(psi(k, 7.0) == 0.0);
    double psi2_direct = 1.540793 * std::tanh(0.8622731 * 2.0);
    CHECK(psi(k, 2.0) == doctest::Approx(psi2_direct).epsilon(1e-14));
    CHECK(psi(k, 2.0) == doctest::Approx(central_diff_rho(k, 2.0)).epsilon(1e-8));
    CHECK(psi2_direct == doctest::Approx(1.445892670271387).epsilon(1e-12));

    // psi = rho' at 1000 random points away from the breakpoints
    Rng rng(17);
    int checked = 0;
    while (checked < 1000) {
        double z = (rng.uniform() * 12.0) - 6.0;
        if (std::abs(std::abs(z) - k.b) < 1e-3 || std::abs(std::abs(z) - k.c) < 1e-3) continue;
        CHECK(psi(k, z) == doctest::Approx(central_diff_rho(k, z)).epsilon(1e-6));
        ++checked;
    }
}

TEST_CASE("weights") {
    RhoKernel k = RhoKernel::tanh_default();
    CHECK(weight(k, 0.0) == 1.0);
    CHECK(weight(k, 0.7) == 1.0);
    CHECK(weight(k, -1.5) == 1.0);
    CHECK(weight(k, 6.0) == 0.0);
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        double z = rng.normal() * 3;
        double w = weight(k, z);
        CHECK(w >= 0.0);
        CHECK(w <= 1.0);
    }
    RhoKernel quad = RhoKernel::quadratic();
    CHECK(weight(quad, 0.0) == 1.0);
    CHECK(weight(quad, 3.7) == 1.0);
    CHECK(rho(quad, 2.0) == 4.0);
    CHECK(psi(quad, 2.0) == 4.0);
}

TEST_CASE("tanh rho is Lipschitz with constant max|psi|") {
    RhoKernel k = RhoKernel::tanh_default();
    double bound = k.q1;  // |psi| <= q1 everywhere (identity zone tops at b < q1)
    Rng rng(23);
    for (int i = 0; i < 2000; ++i) {
        double z1 = rng.normal() * 4;
        double z2 = rng.normal() * 4;
        CHECK(std::abs(rho(k, z2) - rho(k, z1)) <= bound * std::abs(z2 - z1) + 1e-12);
    }
}

TEST_CASE("h(t) = rho(sqrt(t)) is concave for both loss kinds") {
    for (auto k : {RhoKernel::tanh_default(), RhoKernel::quadratic()}) {
        auto h = [&](double t) { return rho(k, std::sqrt(t)); };
        Rng rng(31);
        for (int i = 0; i < 2000; ++i) {
            double t1 = rng.uniform() * 30;
            double t2 = rng.uniform() * 30;
            double lam = rng.uniform();
            double lhs = h(lam * t1 + (1 - lam) * t2);
            double rhs = lam * h(t1) + (1 - lam) * h(t2);
            CHECK(lhs >= rhs - 1e-10);
        }
    }
}

TEST_CASE("mscale solves the defining equation") {
    Rng rng(101);
    std::vector<double> z(2000);
    for (auto& v : z) v = rng.normal();
    double s = mscale(z);
    RhoKernel biw = RhoKernel::biweight();
    double lhs = 0;
    for (double v : z) lhs += rho(biw, v / s);
    CHECK(lhs / static_cast<double>(z.size()) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("mscale Gaussian consistency within 2 percent at 1e5 samples") {
    Rng rng(7);
    std::vector<double> z(100000);
    for (auto& v : z) v = 3.0 * rng.normal();
    CHECK(mscale(z) == doctest::Approx(3.0).epsilon(0.02));
}

TEST_CASE("mscale on a symmetric pair matches the rho inverse") {
    double t = biweight_rho_inverse_half(1.548);
    for (double s : {0.5, 1.0, 7.3}) {
        std::vector<double> z = {-s, s};
        CHECK(mscale(z) == doctest::Approx(s / t).epsilon(1e-9));
    }
}

TEST_CASE("mscale equivariance and permutation invariance") {
    Rng rng(11);
    std::vector<double> z(500);
    for (auto& v : z) v = rng.normal() + 0.3;
    double base = mscale(z);
    for (double c : {2.0, -5.0, 0.125}) {
        std::vector<double> scaled = z;
        for (auto& v : scaled) v *= c;
        CHECK(mscale(scaled) == doctest::Approx(std::abs(c) * base).epsilon(1e-10));
    }
    std::vector<double> shuffled = z;
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    CHECK(mscale(shuffled) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("mscale degenerate cases") {
    std::vector<double> zeros(10, 0.0);
    zeros[3] = 1.0;  // one nonzero among ten
    CHECK_THROWS_AS(mscale(zeros), AllZeroScale);
    auto floored = mscale_or_floor(zeros);
    CHECK(floored.degenerate);
    CHECK(floored.sigma == doctest::Approx(1e-12));
    std::vector<double> half_nonzero = {0, 0, 1, 2};  // exactly half: still no root
    CHECK_THROWS_AS(mscale(half_nonzero), AllZeroScale);
    std::vector<double> ok = {0, 1, 2, 3};
    CHECK(mscale(ok) > 0);
}

TEST_CASE("invalid kernel configuration is rejected") {
    CHECK_THROWS_AS(RhoKernel::biweight(-1.0), ValidationError);
}
