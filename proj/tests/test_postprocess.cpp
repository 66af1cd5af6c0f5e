#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cellpca/errors.hpp"
#include "cellpca/postprocess.hpp"
#include "cellpca/rng.hpp"
#include "cellpca/simulation.hpp"

using namespace cellpca;

namespace {

Matrix random_matrix(Eigen::Index n, Eigen::Index p, Rng& rng, double sd = 1.0) {
    Matrix M(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) M(i, j) = sd * rng.normal();
    return M;
}

Matrix random_orthonormal(Eigen::Index p, Eigen::Index q, Rng& rng) {
    Matrix G = random_matrix(p, q, rng);
    Eigen::HouseholderQR<Matrix> qr(G);
    return qr.householderQ() * Matrix::Identity(p, q);
}

}  // namespace

TEST_CASE("orthonormalize: span, identity of the fitted product, rank guard") {
    Rng rng(1);
    const Eigen::Index n = 12, p = 7, q = 3;

    // already orthonormal: same span, same product
    Matrix V = random_orthonormal(p, q, rng);
    Matrix U = random_matrix(n, q, rng);
    Vector mu = random_matrix(p, 1, rng).col(0);
    Orthonormalized o = orthonormalize(V, U, mu);
    CHECK((o.Vt.transpose() * o.Vt - Matrix::Identity(q, q)).norm() < 1e-12);
    CHECK(subspace_angle(o.Vt, V) < 1e-7);
    CHECK((o.Ut * o.Vt.transpose() - U * V.transpose()).cwiseAbs().maxCoeff() < 1e-12);

    // scaled columns: span invariance
    Matrix Vs = V;
    Vs.col(0) *= 2.0;
    Vs.col(1) *= 0.5;
    o = orthonormalize(Vs, U, mu);
    CHECK(subspace_angle(o.Vt, V) < 1e-7);

    // random general case: reconstruction identity
    Matrix Vr = random_matrix(p, q, rng);
    o = orthonormalize(Vr, U, mu);
    CHECK((o.Ut * o.Vt.transpose() - U * Vr.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((o.mut - mu).norm() == 0.0);

    Matrix Vdef = Vr;
    Vdef.col(2) = Vdef.col(0) + Vdef.col(1);
    Vdef.col(1) = 2.0 * Vdef.col(0);
    CHECK_THROWS_AS(orthonormalize(Vdef, U, mu), RankDeficient);
}

TEST_CASE("robust scatter of scores: Gaussian consistency") {
    Rng rng(7);
    const Eigen::Index n = 10000, q = 2;
    Matrix scores = random_matrix(n, q, rng);
    RobustShape shape = robust_scores_shape(scores);
    CHECK(shape.center.cwiseAbs().maxCoeff() < 0.05);
    CHECK((shape.scatter - Matrix::Identity(q, q)).cwiseAbs().maxCoeff() < 0.10);
}

TEST_CASE("robust scatter shrugs off 30 percent shifted rows") {
    Rng rng(8);
    const Eigen::Index n = 2000, q = 2;
    Matrix scores = random_matrix(n, q, rng);
    Vector clean_mean = scores.bottomRows(1400).colwise().mean();
    for (Eigen::Index i = 0; i < 600; ++i) scores(i, 0) += 20.0;
    RobustShape shape = robust_scores_shape(scores);
    CHECK((shape.center - clean_mean).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("robust scatter determinism on degenerate duplicated points") {
    const Eigen::Index q = 2, n = 4 * q;
    Matrix pts(n, q);
    for (Eigen::Index i = 0; i < n / 2; ++i) pts.row(i) << 1.0, 2.0;
    for (Eigen::Index i = n / 2; i < n; ++i) pts.row(i) << -3.0, 0.5;
    // two-point clouds make every h-subset covariance singular; the failure
    // itself must be deterministic
    CHECK_THROWS_AS(robust_scores_shape(pts), DegenerateScatter);
    CHECK_THROWS_AS(robust_scores_shape(pts), DegenerateScatter);
}

TEST_CASE("finalize: diagonal scatter, rotated scatter, fitted-cloud identity") {
    Rng rng(9);
    const Eigen::Index n = 30, p = 6, q = 2;
    Matrix V = random_orthonormal(p, q, rng);
    Matrix U = random_matrix(n, q, rng);
    Vector mu = random_matrix(p, 1, rng).col(0);
    SubspaceFit f;
    f.V = V;
    f.U = U;
    f.mu = mu;

    Matrix D = Matrix::Zero(q, q);
    D(0, 0) = 5.0;
    D(1, 1) = 2.0;
    Vector center = Vector::Zero(q);
    SubspaceFit fin = finalize(f, U, center, D);
    CHECK(fin.eigenvalues(0) == doctest::Approx(5.0));
    CHECK(fin.eigenvalues(1) == doctest::Approx(2.0));
    CHECK(subspace_angle(fin.V, V) < 1e-7);

    // known rotation: eigenvalues recovered exactly
    double c = std::cos(0.6), s = std::sin(0.6);
    Matrix R(q, q);
    R << c, -s, s, c;
    Matrix Sigma = R * D * R.transpose();
    Vector ctr(q);
    ctr << 0.3, -1.2;
    fin = finalize(f, U, ctr, Sigma);
    CHECK(fin.eigenvalues(0) == doctest::Approx(5.0).epsilon(1e-10));
    CHECK(fin.eigenvalues(1) == doctest::Approx(2.0).epsilon(1e-10));

    Matrix before = U * V.transpose();
    before.rowwise() += mu.transpose();
    Matrix after = fin.fitted();
    CHECK((after - before).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((fin.V.transpose() * fin.V - Matrix::Identity(q, q)).norm() < 1e-12);
}

TEST_CASE("full post-processing keeps the fitted matrix and orders eigenvalues") {
    Matrix data = gen_a09(120, 10, 31);
    SubspaceFit f = fit(MaskedMatrix(data), 2);
    Matrix before = f.fitted();
    SubspaceFit done = postprocess(f);
    CHECK((done.fitted() - before).cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE(done.eigenvalues.size() == 2);
    CHECK(done.eigenvalues(0) >= done.eigenvalues(1));
    CHECK(done.eigenvalues(1) > 0);
    CHECK((done.V.transpose() * done.V - Matrix::Identity(2, 2)).norm() < 1e-10);
    // projection invariants
    Matrix P = done.projection();
    CHECK((P - P.transpose()).norm() < 1e-10);
    CHECK((P * P - P).norm() < 1e-8);
    CHECK(P.norm() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-8));
}

TEST_CASE("eigenvalue scale tracks the generating spectrum on clean data") {
    // two-spike model with a known ratio; the robust eigenvalues should land
    // within a quarter of the truth
    Rng rng(13);
    const Eigen::Index n = 800, p = 12, q = 2;
    Matrix frame = random_orthonormal(p, p, rng);
    Vector lam = Vector::Constant(p, 0.1);
    lam(0) = 9.0;
    lam(1) = 4.0;
    Matrix Z = random_matrix(n, p, rng);
    Matrix data = Z * lam.cwiseSqrt().asDiagonal() * frame.transpose();
    SubspaceFit done = postprocess(fit(MaskedMatrix(data), q));
    double ratio = done.eigenvalues(0) / done.eigenvalues(1);
    CHECK(ratio == doctest::Approx(9.0 / 4.0).epsilon(0.25));
}

TEST_CASE("rank curve: exact rank-2 data") {
    Rng rng(17);
    const Eigen::Index n = 60, p = 8;
    Matrix V = random_orthonormal(p, 2, rng);
    Matrix U = random_matrix(n, 2, rng, 2.0);
    Matrix data = U * V.transpose();
    data.rowwise() += Vector::Ones(p).transpose();
    RankCurve curve = select_rank(MaskedMatrix(data), 3, 0.8);
    CHECK(curve.selected == 2);
    CHECK(curve.explained[1] > 1.0 - 1e-8);
    CHECK(curve.nu[1] < 1e-12);
    // nonincreasing objective in the rank
    for (std::size_t k = 1; k < curve.nu.size(); ++k)
        CHECK(curve.nu[k] <= curve.nu[k - 1] + 1e-8);

    RankCurve none = select_rank(MaskedMatrix(data), 3, 1.01);
    CHECK(none.selected == -1);
}
