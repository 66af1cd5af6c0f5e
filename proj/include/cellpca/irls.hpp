#pragma once

#include "cellpca/initializer.hpp"
#include "cellpca/model.hpp"

namespace cellpca {

struct IrlsOptions {
    int max_iter = 100;
    double rel_tol = 1e-9;        // relative objective change
    double weight_tol = 0.0;      // optional extra stop: max |W_k - W_{k-1}| (0 = off)
    double zero_weight_cap = 0.25;  // maximal fraction of zero weights per column
    RhoKernel kernel1 = RhoKernel::tanh_default();
    RhoKernel kernel2 = RhoKernel::tanh_default();
    InitConfig init;  // q is taken from the fit call

    static IrlsOptions only_cell() {
        IrlsOptions o;
        o.kernel2 = RhoKernel::quadratic();
        return o;
    }
    static IrlsOptions only_row() {
        IrlsOptions o;
        o.kernel1 = RhoKernel::quadratic();
        return o;
    }
};

/// One alternating state of the concentration loop.
struct IrlsState {
    Matrix V;
    Matrix U;
    Vector mu;
    WeightState weights;
};

struct StepResult {
    IrlsState state;
    std::vector<Eigen::Index> guard_columns;  // nonempty: guard fired, state unchanged
    bool guarded() const { return !guard_columns.empty(); }
};

/// Row j of the result solves the weighted normal system
/// (U^T W^j U) v_j = U^T W^j (x^j - mu_j 1) through the pseudo-inverse.
Matrix update_loadings(const MaskedMatrix& X, const Matrix& U, const Vector& mu, const Matrix& W);

/// Row i solves (V^T Wc_i V) u_i = V^T Wc_i (x_i - mu); only cellwise weights
/// enter, the constant rowwise factor cancels. All-zero rows get u_i = 0.
Matrix update_scores(const MaskedMatrix& X, const Matrix& V, const Vector& mu,
                     const Matrix& Wc_masked);

/// Weighted column means of x_ij - (U V^T)_ij.
Vector update_center(const MaskedMatrix& X, const Matrix& V, const Matrix& U, const Matrix& W);

/// One full pass: loadings, scores, center, weight refresh, in that order.
/// The refreshed weights are checked against the zero-weight cap; on
/// violation the input state is returned untouched with the offending
/// columns listed.
StepResult concentration_step(const MaskedMatrix& X, const ScalePack& scales,
                              const IrlsOptions& opts, const IrlsState& state);

/// Full fit: robust initializer, frozen scales, concentration until the
/// relative objective change drops below tolerance.
SubspaceFit fit(const MaskedMatrix& X, Eigen::Index q, const IrlsOptions& opts = {});

/// Concentration from a caller-supplied start and frozen scales.
SubspaceFit fit_from_init(const MaskedMatrix& X, const IrlsOptions& opts, const Matrix& V0,
                          const Matrix& U0, const Vector& mu0, const ScalePack& scales);

/// Scores of a single (possibly incomplete) observation by IRLS on the inner
/// problem. Invalid result signals all-missing input or all weights zero.
struct InnerScores {
    Vector u;       // length q
    Vector w_cell;  // length p; 0 outside the observed set
    bool valid = false;
};

InnerScores robust_inner_scores(const Vector& x, const std::vector<bool>& mask, const Matrix& V,
                                const Vector& mu, const Vector& sigma1, const RhoKernel& kernel1,
                                int max_iter = 100, double tol = 1e-10);

}  // namespace cellpca
