#include "cellpca/diagnostics.hpp"

#include <cmath>
#include <limits>

#include "cellpca/errors.hpp"
#include "cellpca/rng.hpp"
#include "cellpca/stats.hpp"

namespace cellpca {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

StandardizedResiduals standardized_residuals(const MaskedMatrix& X, const SubspaceFit& fit) {
    Matrix R = cell_residuals(X, fit);
    const Eigen::Index n = X.n();
    const Eigen::Index p = X.p();
    StandardizedResiduals out;
    out.rtilde = Matrix::Constant(n, p, kNaN);
    out.column_scale = Vector(p);
    out.degenerate_columns.assign(static_cast<std::size_t>(p), false);
    for (Eigen::Index j = 0; j < p; ++j) {
        std::vector<double> col;
        for (Eigen::Index i = 0; i < n; ++i)
            if (X.mask(i, j)) col.push_back(R(i, j));
        MScaleResult sc = mscale_or_floor(col);
        out.column_scale(j) = sc.sigma;
        out.degenerate_columns[static_cast<std::size_t>(j)] = sc.degenerate;
        for (Eigen::Index i = 0; i < n; ++i)
            if (X.mask(i, j)) out.rtilde(i, j) = sc.degenerate ? 0.0 : R(i, j) / sc.sigma;
    }
    return out;
}

CellmapGrid cellmap(const Matrix& rtilde, const MaskArray& mask, const Vector& wr) {
    const Eigen::Index n = rtilde.rows();
    const Eigen::Index p = rtilde.cols();
    if (mask.rows() != n || mask.cols() != p || wr.size() != n)
        throw DimensionMismatch("cellmap: dimension mismatch");
    CellmapGrid g;
    g.rtilde = rtilde;
    g.category.resize(n, p);
    g.intensity = Matrix::Zero(n, p);
    g.row_shade = Vector::Ones(n) - wr;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!mask(i, j)) {
                g.category(i, j) = static_cast<std::uint8_t>(CellCategory::Missing);
                continue;
            }
            double r = rtilde(i, j);
            if (std::abs(r) < g.flag_cutoff) {
                g.category(i, j) = static_cast<std::uint8_t>(CellCategory::Regular);
            } else {
                g.category(i, j) = static_cast<std::uint8_t>(
                    r > 0 ? CellCategory::PositiveOutlier : CellCategory::NegativeOutlier);
                double t = (std::abs(r) - g.flag_cutoff) / (g.saturation - g.flag_cutoff);
                g.intensity(i, j) = std::min(t, 1.0);
            }
        }
    }
    return g;
}

double score_distance(const Vector& x_scores, const Vector& eigenvalues) {
    if (x_scores.size() != eigenvalues.size())
        throw DimensionMismatch("score_distance: length mismatch");
    double sum = 0.0;
    for (Eigen::Index l = 0; l < x_scores.size(); ++l) {
        if (eigenvalues(l) <= 0.0)
            throw ZeroEigenvalue("score_distance: nonpositive eigenvalue");
        sum += x_scores(l) * x_scores(l) / eigenvalues(l);
    }
    return std::sqrt(sum);
}

double residual_cutoff(const SubspaceFit& fit, int n_sim, std::uint64_t seed) {
    const Eigen::Index n = fit.U.rows();
    const Eigen::Index p = fit.V.rows();
    const Eigen::Index q = fit.q();
    if (fit.eigenvalues.size() != q)
        throw ValidationError("residual_cutoff: fit has no eigenvalues; run post-processing");

    Matrix P = fit.projection();
    Matrix offsub = Matrix::Identity(p, p) - P;
    std::vector<bool> full_mask(static_cast<std::size_t>(p), true);

    std::vector<double> norms;
    norms.reserve(static_cast<std::size_t>(n_sim) * static_cast<std::size_t>(n));
    for (int rep = 0; rep < n_sim; ++rep) {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(rep));
        // Scores at the fitted eigenvalues plus noise at the fitted residual
        // scales, projected off the subspace.
        Matrix X(n, p);
        for (Eigen::Index i = 0; i < n; ++i) {
            Vector u(q);
            for (Eigen::Index l = 0; l < q; ++l)
                u(l) = rng.normal() * std::sqrt(std::max(fit.eigenvalues(l), 0.0));
            Vector e(p);
            for (Eigen::Index j = 0; j < p; ++j) e(j) = rng.normal() * fit.scales.sigma1(j);
            X.row(i) = (fit.mu + fit.V * u + offsub * e).transpose();
        }
        // Per-row residuals through the same robust score solver the real
        // pipeline uses; orthogonal projection would understate the norms.
        Matrix R(n, p);
        for (Eigen::Index i = 0; i < n; ++i) {
            Vector x = X.row(i).transpose();
            InnerScores inner =
                robust_inner_scores(x, full_mask, fit.V, fit.mu, fit.scales.sigma1, fit.kernel1);
            Vector u_hat = inner.valid ? inner.u : Vector::Zero(q);
            R.row(i) = (x - fit.V * u_hat - fit.mu).transpose();
        }
        for (Eigen::Index j = 0; j < p; ++j) {
            std::vector<double> col(R.col(j).data(), R.col(j).data() + n);
            double s = mscale_or_floor(col).sigma;
            R.col(j) /= s;
        }
        for (Eigen::Index i = 0; i < n; ++i) norms.push_back(R.row(i).norm());
    }
    return quantile(std::move(norms), 0.99);
}

OutlierMap outlier_map(const MaskedMatrix& X, const SubspaceFit& fit, double cutoff_resnorm) {
    const Eigen::Index n = X.n();
    const Eigen::Index p = X.p();
    const Eigen::Index q = fit.q();
    if (fit.eigenvalues.size() != q)
        throw ValidationError("outlier_map: fit has no eigenvalues; run post-processing");

    StandardizedResiduals sr = standardized_residuals(X, fit);
    OutlierMap out;
    out.cutoff_sd = std::sqrt(chi2_quantile(0.99, static_cast<double>(q)));
    out.cutoff_resnorm = cutoff_resnorm;
    out.records.reserve(static_cast<std::size_t>(n));

    for (Eigen::Index i = 0; i < n; ++i) {
        // Plain projection scores V^T (x - mu); masked least squares when
        // cells are missing. Downweighting is deliberately absent here so
        // leverage shows up undamped.
        std::vector<Eigen::Index> J;
        for (Eigen::Index j = 0; j < p; ++j)
            if (X.mask(i, j)) J.push_back(j);
        Matrix Vj(static_cast<Eigen::Index>(J.size()), q);
        Vector xj(static_cast<Eigen::Index>(J.size()));
        for (std::size_t k = 0; k < J.size(); ++k) {
            Vj.row(static_cast<Eigen::Index>(k)) = fit.V.row(J[k]);
            xj(static_cast<Eigen::Index>(k)) = X.values(i, J[k]) - fit.mu(J[k]);
        }
        Vector u = pinv_solve(Vj.transpose() * Vj, Vj.transpose() * xj);

        OutlierMapRecord rec;
        rec.index = i;
        rec.sd = score_distance(u, fit.eigenvalues);
        double sq = 0.0;
        for (Eigen::Index j = 0; j < p; ++j)
            if (X.mask(i, j)) sq += sr.rtilde(i, j) * sr.rtilde(i, j);
        rec.resnorm = std::sqrt(sq);
        rec.wr = fit.weights.wr(i);
        double wbar = 0.0;
        for (Eigen::Index j = 0; j < p; ++j)
            if (X.mask(i, j)) wbar += fit.weights.Wc(i, j);
        rec.point_size = 1.0 - wbar / static_cast<double>(p);
        bool big_sd = rec.sd > out.cutoff_sd;
        bool big_res = rec.resnorm > out.cutoff_resnorm;
        rec.cls = big_sd ? (big_res ? CaseClass::BadLeverage : CaseClass::GoodLeverage)
                         : (big_res ? CaseClass::OrthogonalOutlier : CaseClass::Regular);
        out.records.push_back(rec);
    }
    return out;
}

Vector impute_row(const Vector& x, const std::vector<bool>& mask, const Vector& fitted_row,
                  const Vector& cell_weights) {
    const Eigen::Index p = x.size();
    Vector out(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        if (!mask[static_cast<std::size_t>(j)]) {
            out(j) = fitted_row(j);
            continue;
        }
        double w = cell_weights(j);
        if (w >= 1.0) {
            out(j) = x(j);
        } else if (w <= 0.0) {
            out(j) = fitted_row(j);
        } else {
            double v = fitted_row(j) + w * (x(j) - fitted_row(j));
            // clamp away the last-ulp rounding so betweenness is exact
            out(j) = std::min(std::max(v, std::min(x(j), fitted_row(j))),
                              std::max(x(j), fitted_row(j)));
        }
    }
    return out;
}

PredictionResult predict(const Vector& x, const std::vector<bool>& mask, const SubspaceFit& fit) {
    const Eigen::Index p = fit.V.rows();
    PredictionResult res;
    res.u = Vector::Constant(fit.q(), kNaN);
    res.x_hat = Vector::Constant(p, kNaN);
    res.x_imputed = Vector::Constant(p, kNaN);
    res.w = Vector::Zero(p);

    InnerScores inner =
        robust_inner_scores(x, mask, fit.V, fit.mu, fit.scales.sigma1, fit.kernel1);
    if (!inner.valid) return res;

    res.valid = true;
    res.u = inner.u;
    res.x_hat = fit.V * inner.u + fit.mu;
    res.w = inner.w_cell;
    res.x_imputed = impute_row(x, mask, res.x_hat, res.w);
    return res;
}

}  // namespace cellpca
