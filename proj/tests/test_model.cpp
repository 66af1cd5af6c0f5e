#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cellpca/errors.hpp"
#include "cellpca/model.hpp"
#include "cellpca/rng.hpp"

using namespace cellpca;

namespace {

Matrix random_matrix(Eigen::Index n, Eigen::Index p, Rng& rng, double sd = 1.0) {
    Matrix M(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) M(i, j) = sd * rng.normal();
    return M;
}

Matrix random_orthogonal(Eigen::Index q, Rng& rng) {
    Matrix G = random_matrix(q, q, rng);
    Eigen::HouseholderQR<Matrix> qr(G);
    return qr.householderQ() * Matrix::Identity(q, q);
}

ScalePack unit_scales(Eigen::Index p) {
    ScalePack s;
    s.sigma1 = Vector::Ones(p);
    s.sigma2 = 1.0;
    s.degenerate_columns.assign(static_cast<std::size_t>(p), false);
    return s;
}

}  // namespace

TEST_CASE("masked matrix zeroes unobserved cells and validates shapes") {
    Matrix M(2, 2);
    M << 1, 2, 3, 4;
    MaskArray mask(2, 2);
    mask << true, false, true, true;
    MaskedMatrix X(M, mask);
    CHECK(X.values(0, 1) == 0.0);
    CHECK(X.values(1, 1) == 4.0);
    CHECK(X.row_observed(0) == 1);
    CHECK(X.total_observed() == 3);
    MaskArray bad(3, 2);
    CHECK_THROWS_AS(MaskedMatrix(M, bad), DimensionMismatch);
}

TEST_CASE("cell residuals: exact fit, single perturbation, dense oracle") {
    Rng rng(3);
    const Eigen::Index n = 5, p = 4, q = 2;
    Matrix V = random_matrix(p, q, rng);
    Matrix U = random_matrix(n, q, rng);
    Vector mu = random_matrix(p, 1, rng).col(0);
    Matrix data = U * V.transpose();
    data.rowwise() += mu.transpose();

    SubspaceFit fit;
    fit.V = V;
    fit.U = U;
    fit.mu = mu;

    MaskedMatrix X(data);
    Matrix R = cell_residuals(X, fit);
    CHECK(R.cwiseAbs().maxCoeff() < 1e-12);

    Matrix bumped = data;
    bumped(2, 1) += 3.0;
    Matrix R2 = cell_residuals(MaskedMatrix(bumped), fit);
    CHECK(R2(2, 1) == doctest::Approx(3.0).epsilon(1e-12));
    R2(2, 1) = 0;
    CHECK(R2.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cell residuals hand oracle with missing cells") {
    Rng rng(4);
    const Eigen::Index n = 5, p = 4, q = 2;
    Matrix V = random_matrix(p, q, rng);
    Matrix U = random_matrix(n, q, rng);
    Vector mu = random_matrix(p, 1, rng).col(0);
    Matrix data = random_matrix(n, p, rng);
    MaskArray mask = MaskArray::Constant(n, p, true);
    mask(1, 2) = false;
    MaskedMatrix X(data, mask);

    SubspaceFit fit;
    fit.V = V;
    fit.U = U;
    fit.mu = mu;
    Matrix R = cell_residuals(X, fit);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!mask(i, j)) {
                CHECK(std::isnan(R(i, j)));
                continue;
            }
            double pred = mu(j);
            for (Eigen::Index l = 0; l < q; ++l) pred += U(i, l) * V(j, l);
            CHECK(R(i, j) == doctest::Approx(X.values(i, j) - pred).epsilon(1e-12));
        }

    SubspaceFit wrong = fit;
    wrong.mu = Vector::Zero(p + 1);
    CHECK_THROWS_AS(cell_residuals(X, wrong), DimensionMismatch);
}

TEST_CASE("row total deviation closed forms") {
    RhoKernel k1 = RhoKernel::tanh_default();
    ScalePack s = unit_scales(3);
    s.sigma1 << 2.0, 3.0, 4.0;

    Vector r(3);
    r << 0, 0, 0;
    std::vector<bool> mask = {true, true, true};
    CHECK(row_total_deviation(r, mask, s, k1) == 0.0);

    // single observed cell with residual sigma * 1: rho1(1) = 1/2
    std::vector<bool> one = {false, true, false};
    r << 0, 3.0, 0;
    CHECK(row_total_deviation(r, one, s, k1) ==
          doctest::Approx(3.0 * std::sqrt(0.5)).epsilon(1e-12));

    // all residuals beyond the rejection point with equal scales: plateau
    ScalePack eq = unit_scales(3);
    eq.sigma1 = Vector::Constant(3, 1.7);
    r << 10, -11, 12;
    double d = rho(k1, 99.0);
    CHECK(row_total_deviation(r, mask, eq, k1) ==
          doctest::Approx(1.7 * std::sqrt(d)).epsilon(1e-12));

    std::vector<bool> none = {false, false, false};
    CHECK_THROWS_AS(row_total_deviation(r, none, eq, k1), EmptyRow);
}

TEST_CASE("objective: exact fit gives zero, quadratic matches mean squared error") {
    Rng rng(9);
    const Eigen::Index n = 20, p = 6, q = 2;
    Matrix V = random_matrix(p, q, rng);
    Matrix U = random_matrix(n, q, rng);
    Vector mu = random_matrix(p, 1, rng).col(0);
    Matrix exact = U * V.transpose();
    exact.rowwise() += mu.transpose();
    RhoKernel t = RhoKernel::tanh_default();
    ScalePack s = unit_scales(p);
    CHECK(evaluate_objective(MaskedMatrix(exact), V, U, mu, s, t, t) < 1e-20);

    // quadratic kernels make it the plain average of squared residuals,
    // whatever the scales are
    Matrix noisy = exact + random_matrix(n, p, rng, 0.5);
    RhoKernel quad = RhoKernel::quadratic();
    ScalePack odd = unit_scales(p);
    odd.sigma1 << 1, 2, 3, 4, 5, 6;
    odd.sigma2 = 0.7;
    double obj = evaluate_objective(MaskedMatrix(noisy), V, U, mu, odd, quad, quad);
    double frob = (noisy - exact).squaredNorm() / static_cast<double>(n * p);
    CHECK(obj == doctest::Approx(frob).epsilon(1e-12));
}

TEST_CASE("objective: tiny case against an independent scalar loop") {
    RhoKernel t = RhoKernel::tanh_default();
    Matrix V(3, 1), U(3, 1);
    V << 0.5, -0.25, 1.0;
    U << 1.0, 2.0, -1.5;
    Vector mu(3);
    mu << 0.1, -0.2, 0.3;
    Matrix data(3, 3);
    data << 1.0, 0.4, -0.7, 0.2, 1.1, 2.0, -0.5, 0.9, 0.05;
    ScalePack s = unit_scales(3);
    s.sigma1 << 0.8, 1.1, 0.6;
    s.sigma2 = 0.9;

    double expected;
    {
        double total = 0;
        for (int i = 0; i < 3; ++i) {
            double inner = 0;
            for (int j = 0; j < 3; ++j) {
                double r = data(i, j) - U(i, 0) * V(j, 0) - mu(j);
                inner += s.sigma1(j) * s.sigma1(j) * rho(t, r / s.sigma1(j));
            }
            double rt = std::sqrt(inner / 3.0);
            total += 3.0 * rho(t, rt / s.sigma2);
        }
        expected = s.sigma2 * s.sigma2 * total / 9.0;
    }
    CHECK(evaluate_objective(MaskedMatrix(data), V, U, mu, s, t, t) ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("objective is invariant to orthogonal reparametrization") {
    Rng rng(13);
    const Eigen::Index n = 15, p = 7, q = 3;
    Matrix V = random_matrix(p, q, rng);
    Matrix U = random_matrix(n, q, rng);
    Vector mu = random_matrix(p, 1, rng).col(0);
    Matrix data = random_matrix(n, p, rng, 2.0);
    ScalePack s = unit_scales(p);
    RhoKernel t = RhoKernel::tanh_default();
    double base = evaluate_objective(MaskedMatrix(data), V, U, mu, s, t, t);
    for (int rep = 0; rep < 5; ++rep) {
        Matrix O = random_orthogonal(q, rng);
        double alt = evaluate_objective(MaskedMatrix(data), V * O, U * O, mu, s, t, t);
        CHECK(alt == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("weights: clean data, single wild cell, rejected row") {
    RhoKernel t = RhoKernel::tanh_default();
    const Eigen::Index n = 6, p = 4;
    ScalePack s = unit_scales(p);
    Matrix R = Matrix::Zero(n, p);
    MaskArray mask = MaskArray::Constant(n, p, true);
    mask(0, 3) = false;

    WeightState ws = compute_weights(R, mask, s, t, t);
    CHECK(ws.W(0, 3) == 0.0);
    CHECK(ws.Wc(1, 1) == 1.0);
    CHECK(ws.wr.minCoeff() == 1.0);
    CHECK(ws.W(1, 1) == 1.0);

    // one giant cell: its weight dies; the plateau caps its contribution to
    // the rowwise deviation, so the row itself survives
    R(2, 0) = 10.0;
    ScalePack s2 = unit_scales(p);
    s2.sigma2 = 0.5;
    ws = compute_weights(R, mask, s2, t, t);
    CHECK(ws.Wc(2, 0) == 0.0);
    double rt2 = std::sqrt(rho(t, 10.0) / 4.0);
    CHECK(rt2 / s2.sigma2 > t.b);
    CHECK(rt2 / s2.sigma2 < t.c);
    CHECK(ws.wr(2) > 0.0);
    CHECK(ws.wr(2) < 1.0);

    // a row with every residual on the plateau: rowwise weight can vanish
    ScalePack tight = unit_scales(p);
    tight.sigma2 = 0.1;
    Matrix R2 = Matrix::Zero(n, p);
    for (Eigen::Index j = 0; j < p; ++j) R2(4, j) = 50.0;
    ws = compute_weights(R2, mask, tight, t, t);
    double rt_expected = std::sqrt(rho(t, 50.0));  // equal unit scales
    CHECK(rt_expected / tight.sigma2 > 4.0);
    CHECK(ws.wr(4) == 0.0);
    CHECK(ws.W.row(4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("weights depend only on the residual-to-scale ratio") {
    Rng rng(21);
    const Eigen::Index n = 10, p = 5;
    Matrix R = random_matrix(n, p, rng, 1.5);
    MaskArray mask = MaskArray::Constant(n, p, true);
    RhoKernel t = RhoKernel::tanh_default();
    ScalePack s = unit_scales(p);
    WeightState a = compute_weights(R, mask, s, t, t);
    ScalePack doubled = s;
    doubled.sigma1 *= 2.0;
    WeightState b = compute_weights(2.0 * R, mask, doubled, t, t);
    CHECK((a.Wc - b.Wc).cwiseAbs().maxCoeff() < 1e-12);
}
