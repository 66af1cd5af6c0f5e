#pragma once

#include <vector>

namespace cellpca {

/// Bounded loss family. Every downweighting decision flows through here.
///
/// The tanh kind is quadratic on [0, b], bends over smoothly on [b, c] and is
/// constant (= d) beyond c, so its derivative psi is the identity near zero,
/// redescends, and vanishes past c. The continuity constants q1, q2 are tied
/// to (b, c) = (1.5, 4); other pairs are rejected because the matching
/// (q1, q2) solution is not parameterized here.
struct RhoKernel {
    enum class Kind { Tanh, Biweight, Quadratic };

    Kind kind = Kind::Tanh;
    double b = 1.5;       // tanh: end of the identity zone
    double c = 4.0;       // tanh: rejection point
    double q1 = 1.540793; // tanh continuity constants
    double q2 = 0.8622731;
    double a = 1.548;     // biweight tuning constant
    double d = 0.0;       // tanh plateau value, derived from (b, c, q1, q2)

    static RhoKernel tanh_default();
    static RhoKernel biweight(double a = 1.548);
    static RhoKernel quadratic();

    bool is_quadratic() const { return kind == Kind::Quadratic; }
};

/// Loss value; even, nondecreasing in |z|, rho(0) = 0.
double rho(const RhoKernel& k, double z);

/// Derivative of rho; odd, continuous.
double psi(const RhoKernel& k, double z);

/// psi(z)/z with the continuity convention weight(0) = 1.
/// Quadratic kind returns 1 everywhere: a constant factor in the weights
/// leaves every weighted least-squares argmin unchanged.
double weight(const RhoKernel& k, double z);

struct MScaleResult {
    double sigma;
    bool degenerate;  // no positive root; sigma holds the documented floor
};

/// M-estimator of scale: the sigma solving mean(rho_a(z_i/sigma)) = delta.
/// Non-finite samples are dropped. Throws AllZeroScale when too many samples
/// are exactly zero for a root to exist.
double mscale(const std::vector<double>& samples, const RhoKernel& kernel = RhoKernel::biweight(),
              double delta = 0.5);

/// mscale that substitutes 1e-12 * (max|z| or 1) instead of throwing.
MScaleResult mscale_or_floor(const std::vector<double>& samples,
                             const RhoKernel& kernel = RhoKernel::biweight(),
                             double delta = 0.5);

}  // namespace cellpca
