#include "cellpca/irls.hpp"

#include <cmath>

#include "cellpca/errors.hpp"
#include "cellpca/stats.hpp"

namespace cellpca {

Matrix update_loadings(const MaskedMatrix& X, const Matrix& U, const Vector& mu,
                       const Matrix& W) {
    const Eigen::Index p = X.p();
    const Eigen::Index q = U.cols();
    Matrix V(p, q);
    for (Eigen::Index j = 0; j < p; ++j) {
        Vector w = W.col(j);
        Matrix Uw = U.array().colwise() * w.array();
        Matrix A = Uw.transpose() * U;
        Vector rhs = Uw.transpose() * (X.values.col(j).array() - mu(j)).matrix();
        V.row(j) = pinv_solve(A, rhs).transpose();
    }
    return V;
}

Matrix update_scores(const MaskedMatrix& X, const Matrix& V, const Vector& mu,
                     const Matrix& Wc_masked) {
    const Eigen::Index n = X.n();
    const Eigen::Index q = V.cols();
    Matrix U(n, q);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector w = Wc_masked.row(i).transpose();
        Matrix Vw = V.array().colwise() * w.array();
        Matrix A = Vw.transpose() * V;
        Vector rhs = Vw.transpose() * (X.values.row(i).transpose() - mu);
        U.row(i) = pinv_solve(A, rhs).transpose();
    }
    return U;
}

Vector update_center(const MaskedMatrix& X, const Matrix& V, const Matrix& U, const Matrix& W) {
    const Eigen::Index p = X.p();
    Matrix low_rank = U * V.transpose();
    Vector mu(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        double num = 0.0, den = 0.0;
        for (Eigen::Index i = 0; i < X.n(); ++i) {
            double w = W(i, j);
            num += w * (X.values(i, j) - low_rank(i, j));
            den += w;
        }
        if (den <= 0.0)
            throw DegenerateColumn("update_center: all weights of column " + std::to_string(j) +
                                   " are zero");
        mu(j) = num / den;
    }
    return mu;
}

namespace {

std::vector<Eigen::Index> guard_violations(const MaskedMatrix& X, const Matrix& W, double cap) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < X.p(); ++j) {
        Eigen::Index observed = 0, zeros = 0;
        for (Eigen::Index i = 0; i < X.n(); ++i) {
            if (!X.mask(i, j)) continue;
            ++observed;
            if (W(i, j) == 0.0) ++zeros;
        }
        if (observed > 0 &&
            static_cast<double>(zeros) > cap * static_cast<double>(observed))
            cols.push_back(j);
    }
    return cols;
}

}  // namespace

StepResult concentration_step(const MaskedMatrix& X, const ScalePack& scales,
                              const IrlsOptions& opts, const IrlsState& state) {
    IrlsState next;
    next.V = update_loadings(X, state.U, state.mu, state.weights.W);
    next.U = update_scores(X, next.V, state.mu, state.weights.cellwise_masked(X.mask));
    next.mu = update_center(X, next.V, next.U, state.weights.W);
    Matrix R = cell_residuals(X, next.V, next.U, next.mu);
    next.weights = compute_weights(R, X.mask, scales, opts.kernel1, opts.kernel2);

    auto bad = guard_violations(X, next.weights.W, opts.zero_weight_cap);
    if (!bad.empty()) return {state, std::move(bad)};
    return {std::move(next), {}};
}

SubspaceFit fit_from_init(const MaskedMatrix& X, const IrlsOptions& opts, const Matrix& V0,
                          const Matrix& U0, const Vector& mu0, const ScalePack& scales) {
    IrlsState state;
    state.V = V0;
    state.U = U0;
    state.mu = mu0;
    Matrix R = cell_residuals(X, V0, U0, mu0);
    state.weights = compute_weights(R, X.mask, scales, opts.kernel1, opts.kernel2);

    SubspaceFit out;
    out.scales = scales;
    out.kernel1 = opts.kernel1;
    out.kernel2 = opts.kernel2;
    out.objective_trace.push_back(
        evaluate_objective(X, state.V, state.U, state.mu, scales, opts.kernel1, opts.kernel2));

    auto assemble = [&](const IrlsState& s, bool converged, int iters,
                        std::vector<Eigen::Index> guard) {
        out.V = s.V;
        out.U = s.U;
        out.mu = s.mu;
        out.weights = s.weights;
        out.converged = converged;
        out.iterations = iters;
        out.guard_columns = std::move(guard);
        return out;
    };

    auto bad0 = guard_violations(X, state.weights.W, opts.zero_weight_cap);
    if (!bad0.empty()) return assemble(state, false, 0, std::move(bad0));

    for (int k = 1; k <= opts.max_iter; ++k) {
        Matrix prev_W = state.weights.W;
        StepResult step = concentration_step(X, scales, opts, state);
        if (step.guarded()) return assemble(state, false, k - 1, std::move(step.guard_columns));
        state = std::move(step.state);

        double obj = evaluate_objective(X, state.V, state.U, state.mu, scales, opts.kernel1,
                                        opts.kernel2);
        double prev = out.objective_trace.back();
        out.objective_trace.push_back(obj);

        bool obj_done = std::abs(prev - obj) <= opts.rel_tol * std::max(std::abs(prev), 1e-300);
        bool weight_done = opts.weight_tol > 0 &&
                           (state.weights.W - prev_W).cwiseAbs().maxCoeff() <= opts.weight_tol;
        if (obj_done || weight_done) return assemble(state, true, k, {});
    }
    return assemble(state, false, opts.max_iter, {});
}

SubspaceFit fit(const MaskedMatrix& X, Eigen::Index q, const IrlsOptions& opts) {
    InitConfig init_cfg = opts.init;
    init_cfg.q = q;
    InitialFit init = initial_fit(X, init_cfg);
    ScalePack scales = initial_scales(X, init.V0, init.U0, init.mu0, opts.kernel1);
    return fit_from_init(X, opts, init.V0, init.U0, init.mu0, scales);
}

InnerScores robust_inner_scores(const Vector& x, const std::vector<bool>& mask, const Matrix& V,
                                const Vector& mu, const Vector& sigma1, const RhoKernel& kernel1,
                                int max_iter, double tol) {
    const Eigen::Index p = V.rows();
    const Eigen::Index q = V.cols();
    InnerScores res;
    res.u = Vector::Zero(q);
    res.w_cell = Vector::Zero(p);

    std::vector<Eigen::Index> J;
    for (Eigen::Index j = 0; j < p; ++j)
        if (mask[static_cast<std::size_t>(j)]) J.push_back(j);
    if (J.empty()) return res;  // all coordinates missing

    const Eigen::Index nj = static_cast<Eigen::Index>(J.size());
    Matrix Vj(nj, q);
    Vector xj(nj), sj(nj);
    for (Eigen::Index k = 0; k < nj; ++k) {
        Vj.row(k) = V.row(J[static_cast<std::size_t>(k)]);
        xj(k) = x(J[static_cast<std::size_t>(k)]) - mu(J[static_cast<std::size_t>(k)]);
        sj(k) = sigma1(J[static_cast<std::size_t>(k)]);
    }

    auto solve = [&](const Vector& weights) {
        Matrix Vw = Vj.array().colwise() * weights.array();
        return pinv_solve(Vw.transpose() * Vj, Vw.transpose() * xj);
    };
    struct Attempt {
        Vector u, w;
        bool valid = false;
    };
    auto iterate = [&](Vector u) {
        Attempt out;
        Vector w(nj);
        for (int it = 0; it < max_iter; ++it) {
            Vector r = xj - Vj * u;
            for (Eigen::Index k = 0; k < nj; ++k) w(k) = weight(kernel1, r(k) / sj(k));
            if (w.maxCoeff() == 0.0) return out;  // fully rejected
            Vector u_new = solve(w);
            bool done = (u_new - u).norm() <= tol * (1.0 + u_new.norm());
            u = u_new;
            if (done) break;
        }
        out.u = u;
        out.w = w;
        out.valid = true;
        return out;
    };

    // A least-squares start serves clean and on-subspace observations, but a
    // single gross cell can poison it so badly that every weight dies.
    // Restart once from u = 0, whose first weights reject only the cells
    // that are outlying in the raw residual.
    Attempt attempt = iterate(solve(Vector::Ones(nj)));
    if (!attempt.valid) attempt = iterate(Vector::Zero(q));
    if (!attempt.valid) return res;

    res.u = attempt.u;
    for (Eigen::Index k = 0; k < nj; ++k) res.w_cell(J[static_cast<std::size_t>(k)]) = attempt.w(k);
    res.valid = true;
    return res;
}

}  // namespace cellpca
