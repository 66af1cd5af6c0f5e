#pragma once

#include "cellpca/irls.hpp"
#include "cellpca/model.hpp"

namespace cellpca {

/// Orthonormalized reparametrization: Vt spans the same space with
/// orthonormal columns and Ut Vt^T reproduces U V^T.
struct Orthonormalized {
    Matrix Vt;
    Matrix Ut;
    Vector mut;
};

Orthonormalized orthonormalize(const Matrix& V, const Matrix& U, const Vector& mu);

/// Deterministic robust location/scatter of q-variate scores: a reduced
/// deterministic-starts MCD. Starts are the identity shape, the covariance of
/// the 50% smallest-norm half, and the Spearman rank correlation shape, each
/// refined by C-steps on h = ceil((n+q+1)/2) points, followed by the Gaussian
/// consistency rescaling.
struct RobustShape {
    Vector center;   // length q
    Matrix scatter;  // q x q, symmetric positive definite
};

RobustShape robust_scores_shape(const Matrix& Ut);

/// Rotate to principal directions inside the subspace: loadings become
/// eigenvector directions of the robust score scatter, scores are recentered,
/// and eigenvalues are attached. The fitted matrix is unchanged.
SubspaceFit finalize(const SubspaceFit& fit, const Matrix& Ut, const Vector& mu_U,
                     const Matrix& Sigma_U);

/// Full post-processing chain on a converged fit.
SubspaceFit postprocess(const SubspaceFit& fit);

struct RankCurve {
    std::vector<int> ranks;
    std::vector<double> nu;      // objective value per rank
    double nu0 = 0.0;            // objective of the median-centered baseline
    std::vector<double> explained;  // 1 - nu_r / nu0
    int selected = -1;           // first rank at or above the threshold, -1 if none
    double threshold = 0.8;
};

/// Objective-based explained-variability curve over ranks 1..rmax.
RankCurve select_rank(const MaskedMatrix& X, Eigen::Index rmax, double threshold,
                      const IrlsOptions& opts = {});

}  // namespace cellpca
