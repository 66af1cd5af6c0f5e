#include "cellpca/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cellpca/errors.hpp"
#include "cellpca/stats.hpp"

namespace cellpca {

Orthonormalized orthonormalize(const Matrix& V, const Matrix& U, const Vector& mu) {
    Eigen::JacobiSVD<Matrix> svd(V, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    if (s(s.size() - 1) < 1e-10 * s(0))
        throw RankDeficient("orthonormalize: loadings lost column rank");
    Orthonormalized out;
    out.Vt = svd.matrixU();
    // U V^T Vt = U (R S Q^T) Q = U R S for V = Q S R^T.
    out.Ut = U * svd.matrixV() * s.asDiagonal();
    out.mut = mu;
    return out;
}

namespace {

Matrix covariance_of(const Matrix& pts, const Vector& center) {
    Matrix centered = pts.rowwise() - center.transpose();
    return centered.transpose() * centered / static_cast<double>(pts.rows());
}

// C-steps: iterate concentration on the h points with smallest Mahalanobis
// distance until the subset is stable. Ties break by index for determinism.
struct HSubsetFit {
    Vector center;
    Matrix cov;
    double logdet;
};

Eigen::LDLT<Matrix> checked_ldlt(const Matrix& cov) {
    Eigen::LDLT<Matrix> ldlt(cov);
    bool bad = ldlt.info() != Eigen::Success || !ldlt.isPositive();
    if (!bad) {
        double dmax = ldlt.vectorD().maxCoeff();
        bad = !(dmax > 0) || ldlt.vectorD().minCoeff() <= 1e-12 * dmax;
    }
    if (bad) throw DegenerateScatter("robust_scores_shape: singular subset covariance");
    return ldlt;
}

HSubsetFit c_steps(const Matrix& pts, Eigen::Index h, Vector center, Matrix cov) {
    const Eigen::Index n = pts.rows();
    std::vector<Eigen::Index> subset, prev;
    for (int it = 0; it < 200; ++it) {
        Eigen::LDLT<Matrix> ldlt = checked_ldlt(cov);
        std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            Vector d = pts.row(i).transpose() - center;
            dist[static_cast<std::size_t>(i)] = {d.dot(ldlt.solve(d)), i};
        }
        std::sort(dist.begin(), dist.end());
        subset.clear();
        for (Eigen::Index k = 0; k < h; ++k) subset.push_back(dist[static_cast<std::size_t>(k)].second);
        std::sort(subset.begin(), subset.end());
        if (subset == prev) break;
        prev = subset;

        Matrix sel(h, pts.cols());
        for (Eigen::Index k = 0; k < h; ++k) sel.row(k) = pts.row(subset[static_cast<std::size_t>(k)]);
        center = sel.colwise().mean();
        cov = covariance_of(sel, center);
    }
    Eigen::LDLT<Matrix> ldlt = checked_ldlt(cov);
    double logdet = ldlt.vectorD().array().log().sum();
    return {center, cov, logdet};
}

std::vector<double> column_ranks(const Matrix& pts, Eigen::Index j) {
    const Eigen::Index n = pts.rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return pts(a, j) < pts(b, j); });
    std::vector<double> rank(static_cast<std::size_t>(n));
    std::size_t k = 0;
    while (k < order.size()) {
        std::size_t k2 = k;
        while (k2 + 1 < order.size() && pts(order[k2 + 1], j) == pts(order[k], j)) ++k2;
        double avg = 0.5 * (static_cast<double>(k) + static_cast<double>(k2)) + 1.0;
        for (std::size_t t = k; t <= k2; ++t) rank[static_cast<std::size_t>(order[t])] = avg;
        k = k2 + 1;
    }
    return rank;
}

}  // namespace

RobustShape robust_scores_shape(const Matrix& Ut) {
    const Eigen::Index n = Ut.rows();
    const Eigen::Index q = Ut.cols();
    if (n <= 2 * q)
        throw ValidationError("robust_scores_shape: needs n > 2q scores");

    // Standardize coordinates by median and M-scale so the starts are
    // comparable across measurement units.
    Vector med(q), sc(q);
    for (Eigen::Index j = 0; j < q; ++j) {
        std::vector<double> col(Ut.col(j).data(), Ut.col(j).data() + n);
        med(j) = median(col);
        for (double& v : col) v -= med(j);
        sc(j) = mscale_or_floor(col).sigma;
    }
    Matrix Z = (Ut.rowwise() - med.transpose()) * sc.cwiseInverse().asDiagonal();

    const Eigen::Index h = (n + q + 1 + 1) / 2;  // ceil((n+q+1)/2)

    std::vector<Matrix> starts;
    starts.push_back(Matrix::Identity(q, q));
    {
        // Covariance of the half sample with the smallest norms.
        std::vector<std::pair<double, Eigen::Index>> norms(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) norms[static_cast<std::size_t>(i)] = {Z.row(i).squaredNorm(), i};
        std::sort(norms.begin(), norms.end());
        Eigen::Index half = n / 2;
        Matrix sel(half, q);
        for (Eigen::Index k = 0; k < half; ++k) sel.row(k) = Z.row(norms[static_cast<std::size_t>(k)].second);
        Vector c = sel.colwise().mean();
        starts.push_back(covariance_of(sel, c));
    }
    {
        // Spearman rank correlation shape.
        Matrix Rk(n, q);
        for (Eigen::Index j = 0; j < q; ++j) {
            auto rk = column_ranks(Z, j);
            for (Eigen::Index i = 0; i < n; ++i) Rk(i, j) = rk[static_cast<std::size_t>(i)];
        }
        Vector c = Rk.colwise().mean();
        Matrix S = covariance_of(Rk, c);
        Vector dd = S.diagonal().cwiseSqrt();
        Matrix corr = dd.cwiseInverse().asDiagonal() * S * dd.cwiseInverse().asDiagonal();
        starts.push_back(corr);
    }

    Vector med0 = Vector::Zero(q);
    for (Eigen::Index j = 0; j < q; ++j) {
        std::vector<double> col(Z.col(j).data(), Z.col(j).data() + n);
        med0(j) = median(col);
    }

    bool have_best = false;
    HSubsetFit best{};
    for (const auto& start : starts) {
        try {
            HSubsetFit cand = c_steps(Z, h, med0, start);
            if (!have_best || cand.logdet < best.logdet) {
                best = cand;
                have_best = true;
            }
        } catch (const DegenerateScatter&) {
            // try the remaining starts
        }
    }
    if (!have_best)
        throw DegenerateScatter("robust_scores_shape: every start produced a singular subset");

    // Gaussian consistency factor for the h-subset covariance.
    double alpha = static_cast<double>(h) / static_cast<double>(n);
    double qa = chi2_quantile(alpha, static_cast<double>(q));
    double factor = alpha / chi2_cdf(qa, static_cast<double>(q) + 2.0);
    Matrix raw_cov = best.cov * factor;

    // The raw subset estimate is consistent but inefficient; the usual
    // reweighting pass recovers most of the lost accuracy.
    Vector center_rw;
    Matrix cov_rw;
    {
        Eigen::LDLT<Matrix> ldlt = checked_ldlt(raw_cov);
        double cutoff = chi2_quantile(0.975, static_cast<double>(q));
        Eigen::Index kept = 0;
        center_rw = Vector::Zero(q);
        std::vector<bool> in(static_cast<std::size_t>(n), false);
        for (Eigen::Index i = 0; i < n; ++i) {
            Vector d = Z.row(i).transpose() - best.center;
            if (d.dot(ldlt.solve(d)) <= cutoff) {
                in[static_cast<std::size_t>(i)] = true;
                center_rw += Z.row(i).transpose();
                ++kept;
            }
        }
        if (kept <= q) throw DegenerateScatter("robust_scores_shape: reweighting kept too few");
        center_rw /= static_cast<double>(kept);
        cov_rw = Matrix::Zero(q, q);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!in[static_cast<std::size_t>(i)]) continue;
            Vector d = Z.row(i).transpose() - center_rw;
            cov_rw += d * d.transpose();
        }
        cov_rw /= static_cast<double>(kept);
        cov_rw *= 0.975 / chi2_cdf(cutoff, static_cast<double>(q) + 2.0);
        checked_ldlt(cov_rw);
    }

    RobustShape out;
    out.center = med + sc.cwiseProduct(center_rw);
    out.scatter = sc.asDiagonal() * cov_rw * sc.asDiagonal();
    return out;
}

SubspaceFit finalize(const SubspaceFit& fit, const Matrix& Ut, const Vector& mu_U,
                     const Matrix& Sigma_U) {
    const Eigen::Index q = fit.q();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(Sigma_U);
    if (eig.info() != Eigen::Success)
        throw NumericalError("finalize: spectral decomposition failed");

    // Descending eigenvalues, deterministic signs.
    Matrix R(q, q);
    Vector lambda(q);
    for (Eigen::Index k = 0; k < q; ++k) {
        lambda(k) = eig.eigenvalues()(q - 1 - k);
        Vector v = eig.eigenvectors().col(q - 1 - k);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        R.col(k) = v;
    }

    SubspaceFit out = fit;
    out.V = fit.V * R;
    out.mu = fit.mu + fit.V * mu_U;
    out.U = (Ut.rowwise() - mu_U.transpose()) * R;
    out.eigenvalues = lambda;
    return out;
}

SubspaceFit postprocess(const SubspaceFit& fit) {
    Orthonormalized ortho = orthonormalize(fit.V, fit.U, fit.mu);
    SubspaceFit staged = fit;
    staged.V = ortho.Vt;
    staged.U = ortho.Ut;
    staged.mu = ortho.mut;
    RobustShape shape = robust_scores_shape(ortho.Ut);
    return finalize(staged, ortho.Ut, shape.center, shape.scatter);
}

RankCurve select_rank(const MaskedMatrix& X, Eigen::Index rmax, double threshold,
                      const IrlsOptions& opts) {
    if (rmax < 1 || rmax >= std::min(X.n(), X.p()))
        throw ValidationError("select_rank: need 1 <= rmax < min(n,p)");

    RankCurve curve;
    curve.threshold = threshold;

    // Baseline: objective of the columnwise-median fit, with its own scales.
    {
        Matrix Vz = Matrix::Zero(X.p(), 1);
        Matrix Uz = Matrix::Zero(X.n(), 1);
        Vector mu_med(X.p());
        for (Eigen::Index j = 0; j < X.p(); ++j) {
            std::vector<double> col;
            for (Eigen::Index i = 0; i < X.n(); ++i)
                if (X.mask(i, j)) col.push_back(X.values(i, j));
            mu_med(j) = median(col);
        }
        ScalePack sc = initial_scales(X, Vz, Uz, mu_med, opts.kernel1);
        curve.nu0 = evaluate_objective(X, Vz, Uz, mu_med, sc, opts.kernel1, opts.kernel2);
    }

    for (Eigen::Index r = 1; r <= rmax; ++r) {
        SubspaceFit f = fit(X, r, opts);
        double nu = f.objective_trace.back();
        curve.ranks.push_back(static_cast<int>(r));
        curve.nu.push_back(nu);
        double expl = 1.0 - nu / curve.nu0;
        curve.explained.push_back(expl);
        if (curve.selected < 0 && expl >= threshold) curve.selected = static_cast<int>(r);
    }
    return curve;
}

}  // namespace cellpca
