#pragma once

#include "cellpca/model.hpp"

namespace cellpca {

struct InitConfig {
    Eigen::Index q = 2;
    double univariate_cutoff = 2.57;  // standardized cells beyond this are set aside
    bool spherical = true;            // unit-norm row scaling before each SVD
    int max_iter = 100;
    double rel_tol = 1e-10;  // loose tolerances leak into the fitted span
};

struct InitialFit {
    Matrix V0;   // p x q, orthonormal columns
    Matrix U0;   // n x q
    Vector mu0;  // length p
};

/// Deterministic starting triple that resists cellwise and rowwise outliers.
///
/// Columns are standardized by median and M-scale, cells flagged by the
/// univariate cutoff are treated as missing, and a rank-q SVD is iterated
/// with refill of the missing cells. With `spherical` on, rows are scaled to
/// unit norm about a center that is re-projected onto the current fit, and
/// scores are recomputed on unscaled data, so exact low-rank inputs are
/// recovered exactly.
InitialFit initial_fit(const MaskedMatrix& X, const InitConfig& cfg);

/// Frozen scales from the initial residuals: per-column M-scales first, then
/// the M-scale of the rowwise total deviations computed with those.
ScalePack initial_scales(const MaskedMatrix& X, const Matrix& V0, const Matrix& U0,
                         const Vector& mu0, const RhoKernel& kernel1);

/// Classical PCA with missing cells: alternate a rank-q SVD with refill of
/// the unobserved cells, no robustness of any kind.
InitialFit iterative_classical_pca(const MaskedMatrix& X, Eigen::Index q, int max_iter = 100,
                                   double rel_tol = 1e-8);

}  // namespace cellpca
