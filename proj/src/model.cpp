#include "cellpca/model.hpp"

#include <cmath>
#include <limits>

#include "cellpca/errors.hpp"
#include "cellpca/stats.hpp"

namespace cellpca {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

MaskedMatrix::MaskedMatrix(Matrix values_in, MaskArray mask_in)
    : values(std::move(values_in)), mask(std::move(mask_in)) {
    if (values.rows() != mask.rows() || values.cols() != mask.cols())
        throw DimensionMismatch("mask dimensions must equal value dimensions");
    values = mask.select(values.array(), 0.0).matrix();
}

MaskedMatrix::MaskedMatrix(Matrix values_in) : values(std::move(values_in)) {
    mask = MaskArray::Constant(values.rows(), values.cols(), true);
}

Eigen::Index MaskedMatrix::row_observed(Eigen::Index i) const {
    return mask.row(i).count();
}

Eigen::Index MaskedMatrix::col_observed(Eigen::Index j) const {
    return mask.col(j).count();
}

Eigen::Index MaskedMatrix::total_observed() const {
    return mask.count();
}

Matrix WeightState::cellwise_masked(const MaskArray& mask) const {
    return mask.select(Wc.array(), 0.0).matrix();
}

Matrix SubspaceFit::fitted() const {
    return U * V.transpose() + Vector::Ones(U.rows()) * mu.transpose();
}

Matrix SubspaceFit::projection() const {
    Eigen::MatrixXd Q = orth_basis(V);
    return Q * Q.transpose();
}

Matrix cell_residuals(const MaskedMatrix& X, const Matrix& V, const Matrix& U, const Vector& mu) {
    if (V.rows() != X.p() || U.rows() != X.n() || V.cols() != U.cols() || mu.size() != X.p())
        throw DimensionMismatch("cell_residuals: fit dimensions do not match the data");
    Matrix R = X.values - U * V.transpose();
    R.rowwise() -= mu.transpose();
    return X.mask.select(R.array(), kNaN).matrix();
}

Matrix cell_residuals(const MaskedMatrix& X, const SubspaceFit& fit) {
    return cell_residuals(X, fit.V, fit.U, fit.mu);
}

double row_total_deviation(const Eigen::Ref<const Vector>& residual_row,
                           const std::vector<bool>& mask_row, const ScalePack& scales,
                           const RhoKernel& kernel1) {
    const Eigen::Index p = residual_row.size();
    CompensatedSum sum;
    Eigen::Index mi = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (!mask_row[static_cast<std::size_t>(j)]) continue;
        ++mi;
        double s = scales.sigma1(j);
        sum.add(s * s * rho(kernel1, residual_row(j) / s));
    }
    if (mi == 0) throw EmptyRow("row_total_deviation: row has no observed cells");
    return std::sqrt(std::max(sum.value() / static_cast<double>(mi), 0.0));
}

Vector row_total_deviations(const Matrix& residuals, const MaskArray& mask,
                            const ScalePack& scales, const RhoKernel& kernel1) {
    const Eigen::Index n = residuals.rows();
    const Eigen::Index p = residuals.cols();
    Vector rt(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        CompensatedSum sum;
        Eigen::Index mi = 0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (!mask(i, j)) continue;
            ++mi;
            double s = scales.sigma1(j);
            sum.add(s * s * rho(kernel1, residuals(i, j) / s));
        }
        if (mi == 0) throw EmptyRow("row_total_deviations: row has no observed cells");
        rt(i) = std::sqrt(std::max(sum.value() / static_cast<double>(mi), 0.0));
    }
    return rt;
}

double evaluate_objective(const MaskedMatrix& X, const Matrix& V, const Matrix& U,
                          const Vector& mu, const ScalePack& scales, const RhoKernel& kernel1,
                          const RhoKernel& kernel2) {
    if (scales.sigma1.size() != X.p())
        throw DimensionMismatch("evaluate_objective: scale vector length != p");
    Matrix R = cell_residuals(X, V, U, mu);
    Vector rt = row_total_deviations(R, X.mask, scales, kernel1);
    const double sigma2 = scales.sigma2;
    CompensatedSum sum;
    for (Eigen::Index i = 0; i < X.n(); ++i) {
        double mi = static_cast<double>(X.row_observed(i));
        sum.add(mi * rho(kernel2, rt(i) / sigma2));
    }
    double m = static_cast<double>(X.total_observed());
    return sigma2 * sigma2 / m * sum.value();
}

double evaluate_weighted_objective(const MaskedMatrix& X, const Matrix& V, const Matrix& U,
                                   const Vector& mu, const Matrix& W) {
    Matrix R = X.values - U * V.transpose();
    R.rowwise() -= mu.transpose();
    CompensatedSum sum;
    for (Eigen::Index i = 0; i < X.n(); ++i)
        for (Eigen::Index j = 0; j < X.p(); ++j)
            if (X.mask(i, j)) sum.add(W(i, j) * R(i, j) * R(i, j));
    return sum.value();
}

WeightState compute_weights(const Matrix& residuals, const MaskArray& mask,
                            const ScalePack& scales, const RhoKernel& kernel1,
                            const RhoKernel& kernel2) {
    const Eigen::Index n = residuals.rows();
    const Eigen::Index p = residuals.cols();
    if (mask.rows() != n || mask.cols() != p || scales.sigma1.size() != p)
        throw DimensionMismatch("compute_weights: dimension mismatch");

    WeightState ws;
    ws.Wc = Matrix::Zero(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j)
            if (mask(i, j)) ws.Wc(i, j) = weight(kernel1, residuals(i, j) / scales.sigma1(j));

    Vector rt = row_total_deviations(residuals, mask, scales, kernel1);
    ws.wr = Vector(n);
    for (Eigen::Index i = 0; i < n; ++i) ws.wr(i) = weight(kernel2, rt(i) / scales.sigma2);

    ws.W = Matrix::Zero(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j)
            if (mask(i, j)) ws.W(i, j) = ws.Wc(i, j) * ws.wr(i);
    return ws;
}

}  // namespace cellpca
