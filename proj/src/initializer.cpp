#include "cellpca/initializer.hpp"

#include <cmath>

#include "cellpca/errors.hpp"
#include "cellpca/stats.hpp"

namespace cellpca {

namespace {

Matrix top_right_singvecs(const Matrix& A, Eigen::Index q) {
    Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinV);
    return svd.matrixV().leftCols(q);
}

void validate_inputs(const MaskedMatrix& X, Eigen::Index q) {
    if (q < 1 || q >= std::min(X.n(), X.p()))
        throw ValidationError("initial_fit: rank must satisfy 1 <= q < min(n,p)");
    for (Eigen::Index i = 0; i < X.n(); ++i)
        if (X.row_observed(i) == 0)
            throw EmptyRow("initial_fit: row " + std::to_string(i) + " has no observed cells");
    for (Eigen::Index j = 0; j < X.p(); ++j)
        if (X.col_observed(j) < q + 1)
            throw TooManyMissing("initial_fit: column " + std::to_string(j) + " has fewer than " +
                                 std::to_string(q + 1) + " observed cells");
}

}  // namespace

InitialFit initial_fit(const MaskedMatrix& X, const InitConfig& cfg) {
    validate_inputs(X, cfg.q);
    const Eigen::Index n = X.n();
    const Eigen::Index p = X.p();
    const Eigen::Index q = cfg.q;

    // Columnwise robust standardization.
    Vector med(p), scale(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        std::vector<double> col;
        col.reserve(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i)
            if (X.mask(i, j)) col.push_back(X.values(i, j));
        med(j) = median(col);
        for (double& v : col) v -= med(j);
        scale(j) = mscale_or_floor(col).sigma;
    }

    // Standardized working copy; univariate outliers become holes.
    Matrix Z = Matrix::Zero(n, p);
    MaskArray keep = MaskArray::Constant(n, p, false);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j)
            if (X.mask(i, j)) {
                double z = (X.values(i, j) - med(j)) / scale(j);
                if (std::abs(z) <= cfg.univariate_cutoff) {
                    Z(i, j) = z;
                    keep(i, j) = true;
                }
            }

    // Flagging can empty a row or thin a column below the SVD's needs; those
    // cells are readmitted as plain standardized values.
    for (Eigen::Index i = 0; i < n; ++i) {
        if (keep.row(i).any()) continue;
        for (Eigen::Index j = 0; j < p; ++j)
            if (X.mask(i, j)) {
                Z(i, j) = (X.values(i, j) - med(j)) / scale(j);
                keep(i, j) = true;
            }
    }

    Vector c0 = Vector::Zero(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        std::vector<double> col;
        for (Eigen::Index i = 0; i < n; ++i)
            if (keep(i, j)) col.push_back(Z(i, j));
        if (!col.empty()) c0(j) = median(col);
    }

    // Rank-q SVD iterated with refill of the holes.
    Matrix filled = Z;
    Vector center = c0;
    Vector mu_z = Vector::Zero(p);
    Matrix V = Matrix::Zero(p, q);
    double prev_obj = -1.0;
    for (int it = 0; it < cfg.max_iter; ++it) {
        Matrix centered = filled;
        if (cfg.spherical) {
            centered.rowwise() -= center.transpose();
            for (Eigen::Index i = 0; i < n; ++i) {
                double norm = centered.row(i).norm();
                if (norm > 0) centered.row(i) /= norm;
            }
        } else {
            Vector colmean = filled.colwise().mean();
            centered.rowwise() -= colmean.transpose();
        }
        V = top_right_singvecs(centered, q);

        // Scores and center on the unscaled working copy.
        mu_z = filled.colwise().mean();
        Matrix U = (filled.rowwise() - mu_z.transpose()) * V;
        Matrix Zhat = U * V.transpose();
        Zhat.rowwise() += mu_z.transpose();

        CompensatedSum obj_sum;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < p; ++j) {
                if (keep(i, j)) {
                    double r = Z(i, j) - Zhat(i, j);
                    obj_sum.add(r * r);
                } else {
                    filled(i, j) = Zhat(i, j);
                }
            }
        double obj = obj_sum.value();

        // Keep the spherization center on the fitted subspace so exact
        // low-rank data reaches an exact fixed point.
        center = mu_z + V * (V.transpose() * (c0 - mu_z));

        if (prev_obj >= 0) {
            if (obj <= 1e-20 * static_cast<double>(n * p)) break;
            if (std::abs(prev_obj - obj) <= cfg.rel_tol * prev_obj) break;
        }
        prev_obj = obj;
    }

    // Back to original coordinates.
    InitialFit out;
    Matrix V_raw = scale.asDiagonal() * V;
    out.V0 = orth_basis(V_raw);
    out.mu0 = med + scale.cwiseProduct(mu_z);
    Matrix X_imp = filled;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) X_imp(i, j) = med(j) + scale(j) * filled(i, j);
    out.U0 = (X_imp.rowwise() - out.mu0.transpose()) * out.V0;
    return out;
}

ScalePack initial_scales(const MaskedMatrix& X, const Matrix& V0, const Matrix& U0,
                         const Vector& mu0, const RhoKernel& kernel1) {
    Matrix R = cell_residuals(X, V0, U0, mu0);
    const Eigen::Index n = X.n();
    const Eigen::Index p = X.p();

    ScalePack scales;
    scales.sigma1 = Vector(p);
    scales.degenerate_columns.assign(static_cast<std::size_t>(p), false);
    for (Eigen::Index j = 0; j < p; ++j) {
        std::vector<double> col;
        col.reserve(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i)
            if (X.mask(i, j)) col.push_back(R(i, j));
        MScaleResult res = mscale_or_floor(col);
        scales.sigma1(j) = res.sigma;
        scales.degenerate_columns[static_cast<std::size_t>(j)] = res.degenerate;
    }

    // sigma2 comes second: the rowwise deviations use the frozen sigma1.
    Vector rt = row_total_deviations(R, X.mask, scales, kernel1);
    std::vector<double> rt_vec(rt.data(), rt.data() + rt.size());
    MScaleResult res2 = mscale_or_floor(rt_vec);
    scales.sigma2 = res2.sigma;
    scales.sigma2_degenerate = res2.degenerate;
    return scales;
}

InitialFit iterative_classical_pca(const MaskedMatrix& X, Eigen::Index q, int max_iter,
                                   double rel_tol) {
    validate_inputs(X, q);
    const Eigen::Index n = X.n();
    const Eigen::Index p = X.p();

    Matrix filled = X.values;
    for (Eigen::Index j = 0; j < p; ++j) {
        double sum = 0;
        Eigen::Index count = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (X.mask(i, j)) {
                sum += X.values(i, j);
                ++count;
            }
        double mean = sum / static_cast<double>(count);
        for (Eigen::Index i = 0; i < n; ++i)
            if (!X.mask(i, j)) filled(i, j) = mean;
    }

    InitialFit out;
    double prev_obj = -1.0;
    for (int it = 0; it < max_iter; ++it) {
        Vector mu = filled.colwise().mean();
        Matrix centered = filled.rowwise() - mu.transpose();
        Matrix V = top_right_singvecs(centered, q);
        Matrix U = centered * V;
        Matrix hat = U * V.transpose();
        hat.rowwise() += mu.transpose();

        CompensatedSum obj_sum;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < p; ++j) {
                if (X.mask(i, j)) {
                    double r = X.values(i, j) - hat(i, j);
                    obj_sum.add(r * r);
                } else {
                    filled(i, j) = hat(i, j);
                }
            }
        double obj = obj_sum.value();
        out.V0 = V;
        out.U0 = U;
        out.mu0 = mu;
        if (prev_obj >= 0) {
            if (obj <= 1e-20 * static_cast<double>(n * p)) break;
            if (std::abs(prev_obj - obj) <= rel_tol * prev_obj) break;
        }
        prev_obj = obj;
    }
    return out;
}

}  // namespace cellpca
