#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cellpca/kernels.hpp"

namespace cellpca {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MaskArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Observed n x p data with a missingness mask. Cells with mask = false are
/// zeroed on construction so no arithmetic ever reads a placeholder.
struct MaskedMatrix {
    Matrix values;
    MaskArray mask;

    MaskedMatrix() = default;
    MaskedMatrix(Matrix values_in, MaskArray mask_in);

    /// Fully observed matrix.
    explicit MaskedMatrix(Matrix values_in);

    Eigen::Index n() const { return values.rows(); }
    Eigen::Index p() const { return values.cols(); }

    /// Observed cells in row i (m_i).
    Eigen::Index row_observed(Eigen::Index i) const;
    /// Observed cells in column j.
    Eigen::Index col_observed(Eigen::Index j) const;
    /// Total observed cells (m).
    Eigen::Index total_observed() const;
};

/// Per-column residual scales and the rowwise deviation scale, frozen after
/// initialization for the whole IRLS run.
struct ScalePack {
    Vector sigma1;                     // length p, strictly positive
    double sigma2 = 1.0;               // strictly positive
    std::vector<bool> degenerate_columns;  // floored sigma1 entries
    bool sigma2_degenerate = false;
};

/// Cellwise weights, rowwise weights, and their combination with the mask.
struct WeightState {
    Matrix Wc;   // n x p cellwise weights in [0,1]; 0 at unobserved cells
    Vector wr;   // length n rowwise weights in [0,1]
    Matrix W;    // combined: Wc .* (wr broadcast) .* mask

    /// Cellwise-only weights gated by the mask (the score update uses these).
    Matrix cellwise_masked(const MaskArray& mask) const;
};

/// A fitted principal-subspace model.
struct SubspaceFit {
    Matrix V;          // p x q loadings (orthonormal after post-processing)
    Matrix U;          // n x q scores
    Vector mu;         // length p center
    ScalePack scales;
    WeightState weights;
    Vector eigenvalues;             // length q, filled by post-processing only
    std::vector<double> objective_trace;
    bool converged = false;
    int iterations = 0;
    std::vector<Eigen::Index> guard_columns;  // nonempty if the zero-weight guard fired
    RhoKernel kernel1 = RhoKernel::tanh_default();
    RhoKernel kernel2 = RhoKernel::tanh_default();

    Eigen::Index q() const { return V.cols(); }

    /// Fitted matrix U V^T + 1 mu^T.
    Matrix fitted() const;

    /// Projection matrix of the fitted subspace, V (V^T V)^-1 V^T.
    Matrix projection() const;
};

/// Residuals x_ij - (U V^T)_ij - mu_j at observed cells, NaN at missing ones.
Matrix cell_residuals(const MaskedMatrix& X, const SubspaceFit& fit);
Matrix cell_residuals(const MaskedMatrix& X, const Matrix& V, const Matrix& U, const Vector& mu);

/// Rowwise total deviation: rho1-tempered root-mean residual size of one row.
double row_total_deviation(const Eigen::Ref<const Vector>& residual_row,
                           const std::vector<bool>& mask_row, const ScalePack& scales,
                           const RhoKernel& kernel1);

/// All rowwise total deviations of a residual matrix.
Vector row_total_deviations(const Matrix& residuals, const MaskArray& mask,
                            const ScalePack& scales, const RhoKernel& kernel1);

/// The cellPCA objective: a rho2-tempered average of the rowwise total
/// deviations, normalized so that quadratic losses on complete data reduce it
/// to mean squared error.
double evaluate_objective(const MaskedMatrix& X, const Matrix& V, const Matrix& U,
                          const Vector& mu, const ScalePack& scales, const RhoKernel& kernel1,
                          const RhoKernel& kernel2);

/// Weighted least-squares surrogate sum(w_ij (x_ij - mu_j - (U V^T)_ij)^2).
double evaluate_weighted_objective(const MaskedMatrix& X, const Matrix& V, const Matrix& U,
                                   const Vector& mu, const Matrix& W);

/// Cellwise and rowwise weights from residuals at frozen scales.
WeightState compute_weights(const Matrix& residuals, const MaskArray& mask,
                            const ScalePack& scales, const RhoKernel& kernel1,
                            const RhoKernel& kernel2);

}  // namespace cellpca
