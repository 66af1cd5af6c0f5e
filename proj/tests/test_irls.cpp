#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cellpca/errors.hpp"
#include "cellpca/irls.hpp"
#include "cellpca/rng.hpp"
#include "cellpca/simulation.hpp"
#include "cellpca/stats.hpp"

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

ScalePack unit_scales(Eigen::Index p) {
    ScalePack s;
    s.sigma1 = Vector::Ones(p);
    s.sigma2 = 1.0;
    s.degenerate_columns.assign(static_cast<std::size_t>(p), false);
    return s;
}

// Gradient-descent oracle for one column of the loadings update: minimize
// sum_i w_i (x_i - mu - u_i' v)^2 over v without touching the normal
// equations, so a bug in those cannot hide.
Vector descend_column(const Matrix& U, const Vector& x_minus_mu, const Vector& w) {
    const Eigen::Index q = U.cols();
    Vector v = Vector::Zero(q);
    double step = 1e-3;
    auto value = [&](const Vector& cand) {
        double total = 0;
        for (Eigen::Index i = 0; i < U.rows(); ++i) {
            double r = x_minus_mu(i) - U.row(i).dot(cand);
            total += w(i) * r * r;
        }
        return total;
    };
    double current = value(v);
    for (int it = 0; it < 200000; ++it) {
        Vector grad = Vector::Zero(q);
        for (Eigen::Index i = 0; i < U.rows(); ++i) {
            double r = x_minus_mu(i) - U.row(i).dot(v);
            grad -= 2.0 * w(i) * r * U.row(i).transpose();
        }
        Vector cand = v - step * grad;
        double cv = value(cand);
        if (cv < current) {
            v = cand;
            current = cv;
            step *= 1.2;
        } else {
            step *= 0.5;
            if (step < 1e-16) break;
        }
    }
    return v;
}

struct Spiked {
    Matrix data;
    Matrix truth;
};

// Gaussian with well-separated spikes so subspaces are crisply identified.
Spiked spiked_gaussian(Eigen::Index n, Eigen::Index p, Eigen::Index q, Rng& rng) {
    Matrix frame = random_orthonormal(p, p, rng);
    Vector lam(p);
    for (Eigen::Index k = 0; k < p; ++k) lam(k) = 0.25;
    if (q >= 1) lam(0) = 16.0;
    if (q >= 2) lam(1) = 8.0;
    if (q >= 3) lam(2) = 3.0;
    Matrix Z = random_matrix(n, p, rng);
    Spiked out;
    out.data = Z * lam.cwiseSqrt().asDiagonal() * frame.transpose();
    out.truth = frame.leftCols(q);
    return out;
}

Matrix classical_pca_loadings(const Matrix& data, Eigen::Index q) {
    Matrix centered = data.rowwise() - data.colwise().mean();
    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    return svd.matrixV().leftCols(q);
}

}  // namespace

TEST_CASE("update_loadings: unweighted projection and zeroed column") {
    Rng rng(1);
    const Eigen::Index n = 12, p = 5, q = 2;
    Matrix U = random_orthonormal(n, q, rng);
    Matrix data = random_matrix(n, p, rng);
    Vector mu = random_matrix(p, 1, rng).col(0);
    MaskedMatrix X(data);
    Matrix W = Matrix::Ones(n, p);
    Matrix V = update_loadings(X, U, mu, W);
    for (Eigen::Index j = 0; j < p; ++j) {
        Vector expect = U.transpose() * (data.col(j).array() - mu(j)).matrix();
        CHECK((V.row(j).transpose() - expect).norm() < 1e-10);
    }
    W.col(3).setZero();
    V = update_loadings(X, U, mu, W);
    CHECK(V.row(3).norm() == 0.0);
}

TEST_CASE("update_loadings matches the gradient-descent oracle") {
    Rng rng(2);
    const Eigen::Index n = 6, p = 4, q = 2;
    Matrix U = random_matrix(n, q, rng);
    Matrix data = random_matrix(n, p, rng);
    Vector mu = random_matrix(p, 1, rng).col(0);
    Matrix W(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) W(i, j) = 0.05 + 0.95 * rng.uniform();
    Matrix V = update_loadings(MaskedMatrix(data), U, mu, W);
    for (Eigen::Index j = 0; j < p; ++j) {
        Vector oracle = descend_column(U, (data.col(j).array() - mu(j)).matrix(), W.col(j));
        CHECK((V.row(j).transpose() - oracle).norm() < 1e-6);
    }
}

TEST_CASE("update_scores: projection case, weighted LS oracle") {
    Rng rng(3);
    const Eigen::Index n = 10, p = 6, q = 2;
    Matrix V = random_orthonormal(p, q, rng);
    Vector mu = random_matrix(p, 1, rng).col(0);
    Matrix U_true = random_matrix(n, q, rng);
    Matrix data = U_true * V.transpose();
    data.rowwise() += mu.transpose();
    MaskedMatrix X(data);

    Matrix Wc = Matrix::Ones(n, p);
    Matrix U = update_scores(X, V, mu, Wc);
    CHECK((U - U_true).cwiseAbs().maxCoeff() < 1e-10);

    // random weighted instance against an independently assembled solve
    Matrix noisy = data + random_matrix(n, p, rng, 0.3);
    MaskedMatrix Xn(noisy);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) Wc(i, j) = 0.1 + 0.9 * rng.uniform();
    U = update_scores(Xn, V, mu, Wc);
    for (Eigen::Index i = 0; i < n; ++i) {
        Matrix A = Matrix::Zero(q, q);
        Vector b = Vector::Zero(q);
        for (Eigen::Index j = 0; j < p; ++j) {
            A += Wc(i, j) * V.row(j).transpose() * V.row(j);
            b += Wc(i, j) * (noisy(i, j) - mu(j)) * V.row(j).transpose();
        }
        Vector expect = Eigen::LDLT<Matrix>(A).solve(b);
        CHECK((U.row(i).transpose() - expect).norm() < 1e-8);
    }
}

TEST_CASE("scores ignore the rowwise weight during their update") {
    Rng rng(33);
    const Eigen::Index n = 8, p = 5, q = 2;
    Matrix data = random_matrix(n, p, rng, 2.0);
    MaskedMatrix X(data);
    IrlsOptions opts;
    ScalePack s = unit_scales(p);
    IrlsState state;
    state.V = random_orthonormal(p, q, rng);
    state.U = random_matrix(n, q, rng);
    state.mu = Vector::Zero(p);
    state.weights = compute_weights(cell_residuals(X, state.V, state.U, state.mu), X.mask, s,
                                    opts.kernel1, opts.kernel2);
    // forcing one rowwise weight to zero must not change that row's scores
    WeightState forced = state.weights;
    forced.wr(2) = 0.0;
    forced.W.row(2).setZero();
    Matrix U_a = update_scores(X, state.V, state.mu, state.weights.cellwise_masked(X.mask));
    Matrix U_b = update_scores(X, state.V, state.mu, forced.cellwise_masked(X.mask));
    CHECK((U_a.row(2) - U_b.row(2)).norm() == 0.0);
}

TEST_CASE("update_center: column means, single atom, weighted oracle") {
    Rng rng(4);
    const Eigen::Index n = 9, p = 4, q = 2;
    Matrix data = random_matrix(n, p, rng);
    MaskedMatrix X(data);
    Matrix U = Matrix::Zero(n, q);
    Matrix V = random_matrix(p, q, rng);
    Matrix W = Matrix::Ones(n, p);
    Vector mu = update_center(X, V, U, W);
    CHECK((mu - data.colwise().mean().transpose()).cwiseAbs().maxCoeff() < 1e-12);

    Matrix atom = Matrix::Zero(n, p);
    atom.row(5).setOnes();
    U = random_matrix(n, q, rng);
    mu = update_center(X, V, U, atom);
    Vector expect = (data.row(5) - U.row(5) * V.transpose()).transpose();
    CHECK((mu - expect).cwiseAbs().maxCoeff() < 1e-12);

    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) W(i, j) = rng.uniform();
    mu = update_center(X, V, U, W);
    Matrix low = U * V.transpose();
    for (Eigen::Index j = 0; j < p; ++j) {
        double num = 0, den = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            num += W(i, j) * (data(i, j) - low(i, j));
            den += W(i, j);
        }
        CHECK(mu(j) == doctest::Approx(num / den).epsilon(1e-12));
    }

    Matrix dead = Matrix::Ones(n, p);
    dead.col(2).setZero();
    CHECK_THROWS_AS(update_center(X, V, U, dead), DegenerateColumn);
}

TEST_CASE("concentration step: fixed point on exact data and monotone descent") {
    Rng rng(5);
    const Eigen::Index n = 40, p = 8, q = 2;
    Matrix V = random_orthonormal(p, q, rng);
    Matrix U = random_matrix(n, q, rng, 2.0);
    Vector mu = random_matrix(p, 1, rng).col(0);
    Matrix exact = U * V.transpose();
    exact.rowwise() += mu.transpose();
    MaskedMatrix X(exact);
    IrlsOptions opts;
    ScalePack s = unit_scales(p);

    IrlsState state;
    state.V = V;
    state.U = U;
    state.mu = mu;
    state.weights = compute_weights(cell_residuals(X, V, U, mu), X.mask, s, opts.kernel1,
                                    opts.kernel2);
    StepResult step = concentration_step(X, s, opts, state);
    REQUIRE(!step.guarded());
    Matrix before = U * V.transpose();
    Matrix after = step.state.U * step.state.V.transpose();
    CHECK((after - before).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((step.state.mu - mu).cwiseAbs().maxCoeff() < 1e-10);

    // contaminated draw: every consecutive objective pair must not increase
    Matrix dirty = gen_a09(80, 10, 17);
    Rng crng(18);
    for (int k = 0; k < 80; ++k)
        dirty(static_cast<Eigen::Index>(crng.below(80)),
              static_cast<Eigen::Index>(crng.below(10))) += 6.0;
    SubspaceFit f = fit(MaskedMatrix(dirty), 2);
    REQUIRE(f.objective_trace.size() > 2);
    for (std::size_t k = 1; k < f.objective_trace.size(); ++k)
        CHECK(f.objective_trace[k] <= f.objective_trace[k - 1] + 1e-10);
}

TEST_CASE("weighted-objective lemma along the actual iteration trace") {
    Matrix dirty = gen_a09(60, 8, 23);
    Rng crng(24);
    for (int k = 0; k < 60; ++k)
        dirty(static_cast<Eigen::Index>(crng.below(60)),
              static_cast<Eigen::Index>(crng.below(8))) += 5.0;
    MaskedMatrix X(dirty);
    IrlsOptions opts;
    InitConfig icfg;
    icfg.q = 2;
    InitialFit init = initial_fit(X, icfg);
    ScalePack s = initial_scales(X, init.V0, init.U0, init.mu0, opts.kernel1);

    IrlsState state;
    state.V = init.V0;
    state.U = init.U0;
    state.mu = init.mu0;
    state.weights = compute_weights(cell_residuals(X, state.V, state.U, state.mu), X.mask, s,
                                    opts.kernel1, opts.kernel2);
    double obj_prev = evaluate_objective(X, state.V, state.U, state.mu, s, opts.kernel1,
                                         opts.kernel2);
    for (int k = 0; k < 25; ++k) {
        Matrix W_frozen = state.weights.W;
        double wobj_prev = evaluate_weighted_objective(X, state.V, state.U, state.mu, W_frozen);
        StepResult step = concentration_step(X, s, opts, state);
        REQUIRE(!step.guarded());
        // the surrogate decreases at frozen weights, and that forces the
        // true objective down as well
        double wobj_next =
            evaluate_weighted_objective(X, step.state.V, step.state.U, step.state.mu, W_frozen);
        CHECK(wobj_next <= wobj_prev + 1e-10);
        double obj_next = evaluate_objective(X, step.state.V, step.state.U, step.state.mu, s,
                                             opts.kernel1, opts.kernel2);
        CHECK(obj_next <= obj_prev + 1e-10);
        obj_prev = obj_next;
        state = step.state;
    }
}

TEST_CASE("zero-weight guard names the adversarial column") {
    Matrix data = gen_a09(100, 6, 77);
    for (int i = 0; i < 30; ++i) data(i, 4) += 1000.0;  // 30% gross outliers in column 4
    SubspaceFit f = fit(MaskedMatrix(data), 2);
    REQUIRE(!f.guard_columns.empty());
    CHECK(std::find(f.guard_columns.begin(), f.guard_columns.end(), 4) != f.guard_columns.end());
    CHECK(!f.converged);
}

TEST_CASE("quadratic kernels reproduce the classical subspace") {
    Rng rng(61);
    for (Eigen::Index q : {1, 2}) {
        Spiked sp = spiked_gaussian(100, 12, q, rng);
        IrlsOptions opts;
        opts.kernel1 = RhoKernel::quadratic();
        opts.kernel2 = RhoKernel::quadratic();
        opts.max_iter = 300;
        opts.rel_tol = 1e-13;
        SubspaceFit f = fit(MaskedMatrix(sp.data), q, opts);
        Matrix Vsvd = classical_pca_loadings(sp.data, q);
        CHECK(subspace_angle(f.V, Vsvd) < 1e-6);
    }
}

TEST_CASE("wild cells are rejected and the subspace recovered") {
    Rng rng(71);
    const Eigen::Index n = 80, p = 10, q = 2;
    Matrix V = random_orthonormal(p, q, rng);
    Matrix U = random_matrix(n, q, rng, 3.0);
    Matrix data = U * V.transpose();
    MaskArray wild = MaskArray::Constant(n, p, false);
    Rng pick(72);
    Eigen::Index planted = 0;
    while (planted < n * p / 10) {
        Eigen::Index i = static_cast<Eigen::Index>(pick.below(n));
        Eigen::Index j = static_cast<Eigen::Index>(pick.below(p));
        if (wild(i, j)) continue;
        data(i, j) += (pick.uniform() < 0.5 ? -1.0 : 1.0) * (20.0 + 10.0 * pick.uniform());
        wild(i, j) = true;
        ++planted;
    }
    SubspaceFit f = fit(MaskedMatrix(data), q);
    CHECK(subspace_angle(f.V, V) < 1e-3);
    Eigen::Index rejected = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j)
            if (wild(i, j) && f.weights.Wc(i, j) == 0.0) ++rejected;
    CHECK(rejected == planted);
}

TEST_CASE("projection matrix does not depend on the starting parametrization") {
    Rng rng(81);
    Matrix data = gen_a09(70, 9, 3);
    Rng crng(8);
    for (int k = 0; k < 50; ++k)
        data(static_cast<Eigen::Index>(crng.below(70)),
             static_cast<Eigen::Index>(crng.below(9))) += 4.0;
    MaskedMatrix X(data);
    const Eigen::Index q = 2;
    IrlsOptions opts;
    InitConfig icfg;
    icfg.q = q;
    InitialFit init = initial_fit(X, icfg);
    ScalePack s = initial_scales(X, init.V0, init.U0, init.mu0, opts.kernel1);
    SubspaceFit base = fit_from_init(X, opts, init.V0, init.U0, init.mu0, s);
    Matrix P_base = base.projection();
    Matrix X0_base = base.U * base.V.transpose();
    for (int rep = 0; rep < 3; ++rep) {
        Matrix O = random_orthonormal(q, q + 0, rng);
        SubspaceFit alt = fit_from_init(X, opts, init.V0 * O, init.U0 * O, init.mu0, s);
        CHECK((alt.projection() - P_base).norm() < 1e-10);
        CHECK((alt.U * alt.V.transpose() - X0_base).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("first-order conditions hold at a weight-stable fixed point") {
    Matrix data = gen_a09(60, 8, 41);
    Rng crng(42);
    for (int k = 0; k < 40; ++k)
        data(static_cast<Eigen::Index>(crng.below(60)),
             static_cast<Eigen::Index>(crng.below(8))) += 5.0;
    MaskedMatrix X(data);
    IrlsOptions opts;
    opts.max_iter = 1000;
    opts.rel_tol = 0.0;
    opts.weight_tol = 1e-11;
    SubspaceFit f = fit(X, 2, opts);
    REQUIRE(f.converged);

    const Matrix& W = f.weights.W;
    Matrix Wc_masked = f.weights.cellwise_masked(X.mask);
    // loadings condition, per column
    for (Eigen::Index j = 0; j < X.p(); ++j) {
        Vector w = W.col(j);
        Matrix Uw = f.U.array().colwise() * w.array();
        Matrix A = Uw.transpose() * f.U;
        Vector rhs = Uw.transpose() * (X.values.col(j).array() - f.mu(j)).matrix();
        double scale = A.norm() * f.V.row(j).norm() + rhs.norm() + 1e-12;
        CHECK((A * f.V.row(j).transpose() - rhs).norm() < 1e-6 * scale);
    }
    // scores condition, per row (cellwise weights only)
    for (Eigen::Index i = 0; i < X.n(); ++i) {
        Vector w = Wc_masked.row(i).transpose();
        Matrix Vw = f.V.array().colwise() * w.array();
        Matrix A = Vw.transpose() * f.V;
        Vector rhs = Vw.transpose() * (X.values.row(i).transpose() - f.mu);
        double scale = A.norm() * f.U.row(i).norm() + rhs.norm() + 1e-12;
        CHECK((A * f.U.row(i).transpose() - rhs).norm() < 1e-6 * scale);
    }
    // center condition
    Matrix R = X.values - f.U * f.V.transpose();
    R.rowwise() -= f.mu.transpose();
    for (Eigen::Index j = 0; j < X.p(); ++j) {
        double g = 0, den = 0;
        for (Eigen::Index i = 0; i < X.n(); ++i) {
            if (!X.mask(i, j)) continue;
            g += W(i, j) * R(i, j);
            den += W(i, j);
        }
        CHECK(std::abs(g) < 1e-6 * (den + 1.0));
    }
}

TEST_CASE("robust inner scores") {
    Rng rng(91);
    const Eigen::Index p = 8, q = 2;
    Matrix V = random_orthonormal(p, q, rng);
    Vector mu = random_matrix(p, 1, rng).col(0);
    Vector sigma1 = Vector::Ones(p);
    RhoKernel t = RhoKernel::tanh_default();

    Vector u_true(q);
    u_true << 1.4, -0.6;
    Vector x = V * u_true + mu;
    std::vector<bool> all(p, true);
    InnerScores in = robust_inner_scores(x, all, V, mu, sigma1, t);
    REQUIRE(in.valid);
    CHECK((in.u - u_true).norm() < 1e-10);
    CHECK(in.w_cell.minCoeff() == 1.0);

    // one wild coordinate: weight dies, solution matches dropping it
    Vector x_bad = x;
    x_bad(3) += 100.0;
    InnerScores bad = robust_inner_scores(x_bad, all, V, mu, sigma1, t);
    REQUIRE(bad.valid);
    CHECK(bad.w_cell(3) == 0.0);
    std::vector<bool> dropped(p, true);
    dropped[3] = false;
    InnerScores drop = robust_inner_scores(x_bad, dropped, V, mu, sigma1, t);
    REQUIRE(drop.valid);
    CHECK((bad.u - drop.u).norm() < 1e-6);

    std::vector<bool> none(p, false);
    InnerScores missing = robust_inner_scores(x, none, V, mu, sigma1, t);
    CHECK(!missing.valid);
}
