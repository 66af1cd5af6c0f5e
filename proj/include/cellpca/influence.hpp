#pragma once

#include <cstdint>

#include "cellpca/model.hpp"

namespace cellpca {

/// Population description: a centered Gaussian with covariance Sigma, its
/// top-q subspace V0, and the scale vector (sigma_1,1..sigma_1,p, sigma_2)
/// fixed at population values.
struct ModelH0 {
    Matrix Sigma;
    Matrix chol;  // lower Cholesky factor of Sigma
    Matrix V0;    // p x q, orthonormal, deterministic signs
    Vector sigma; // length p+1
    RhoKernel kernel1 = RhoKernel::tanh_default();
    RhoKernel kernel2 = RhoKernel::tanh_default();

    Eigen::Index p() const { return Sigma.rows(); }
    Eigen::Index q() const { return V0.cols(); }

    /// Draw n rows from H0.
    Matrix sample(Eigen::Index n, std::uint64_t seed) const;
};

/// Population Gaussian model with analytic sigma1 (M-scale of the
/// off-subspace residual coordinates) and Monte Carlo sigma2.
ModelH0 make_gaussian_model(const Matrix& Sigma, Eigen::Index q,
                            const RhoKernel& kernel1 = RhoKernel::tanh_default(),
                            const RhoKernel& kernel2 = RhoKernel::tanh_default(),
                            Eigen::Index mc_size = 200000, std::uint64_t seed = 20240824);

/// Population M-scale of N(0,1), i.e. the k solving E[rho_a(Z/k)] = 1/2.
double gaussian_mscale_constant(double a = 1.548, double delta = 0.5);

/// Estimating-equation vector g = vec(mean of W_x (V u_x - x) u_x^T) over the
/// rows of `points`. Fully rejected points contribute zero.
Vector g_vector(const Matrix& points, const Matrix& V, const Vector& sigma,
                const RhoKernel& kernel1, const RhoKernel& kernel2);

/// Same for a point mass at z.
Vector g_vector_atom(const Vector& z, const Matrix& V, const Vector& sigma,
                     const RhoKernel& kernel1, const RhoKernel& kernel2);

/// Commutation matrix K_{p,q}: maps vec(A) to vec(A^T) for p x q matrices.
Matrix commutation_matrix(Eigen::Index p, Eigen::Index q);

/// The exact p^2 x pq projector-derivative matrix
/// R0 = V0 (x) (I - P0)  +  ((I - P0) (x) V0) K_{p,q}.
Matrix matrix_R0(const Matrix& V0);

struct IfMetadata {
    Eigen::Index mc_size = 0;
    std::uint64_t seed = 0;
    double fd_step = 0.0;
    double fd_stability = 0.0;  // max relative entry change when the step is halved
};

/// Finite-difference Jacobians of g at the population optimum, sharing one
/// fixed Monte Carlo sample across all perturbed evaluations.
class InfluenceLab {
public:
    InfluenceLab(ModelH0 model, Eigen::Index mc_size = 200000, std::uint64_t seed = 1,
                 double fd_step = 1e-4);

    const ModelH0& model() const { return model_; }
    const Matrix& sample() const { return sample_; }

    /// pq x pq derivative of g in vec(V); halved-step stability is recorded.
    const Matrix& B() const { return B_; }
    /// pq x (p+1) derivative of g in sigma.
    const Matrix& S() const { return S_; }
    const Matrix& R0() const { return R0_; }
    const IfMetadata& metadata_B() const { return meta_B_; }
    const IfMetadata& metadata_S() const { return meta_S_; }

    /// Rowwise (point-mass) influence of the projection matrix at z.
    Matrix if_fdcm(const Vector& z, const Vector& if_sigma) const;
    Matrix if_fdcm(const Vector& z) const;  // fixed-scale mode (if_sigma = 0)

    /// Cellwise influence: one degenerate clamped term per coordinate.
    Matrix if_ficm(const Vector& z, const Vector& if_sigma) const;
    Matrix if_ficm(const Vector& z) const;

    /// p^2 x p^2 asymptotic covariance of vec(P_hat) at fixed scales.
    Matrix asymptotic_covariance(Eigen::Index mc_size, std::uint64_t seed) const;

private:
    Vector apply_if(const Vector& rhs_atom, const Vector& if_sigma) const;

    ModelH0 model_;
    Matrix sample_;
    Matrix B_, S_, R0_;
    Eigen::PartialPivLU<Matrix> B_lu_;
    IfMetadata meta_B_, meta_S_;
};

/// Loadings of the fixed-scale functional on a weighted sample: alternate
/// per-point robust scores with the loadings normal equations until V is
/// stationary. Shared by the replicate experiments and the finite-epsilon
/// contamination oracles.
Matrix fit_loadings_fixed_scale(const Matrix& points, const Vector& masses, const Matrix& V_start,
                                const Vector& sigma, const RhoKernel& kernel1,
                                const RhoKernel& kernel2, int max_iter = 500, double tol = 1e-11);

/// Projection matrix of the column space of V (V need not be orthonormal).
Matrix projector_of(const Matrix& V);

}  // namespace cellpca
