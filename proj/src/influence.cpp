#include "cellpca/influence.hpp"

#include <cmath>

#include "cellpca/errors.hpp"
#include "cellpca/irls.hpp"
#include "cellpca/rng.hpp"
#include "cellpca/stats.hpp"

namespace cellpca {

Matrix ModelH0::sample(Eigen::Index n, std::uint64_t seed) const {
    Rng rng(seed);
    Matrix Z(n, p());
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p(); ++j) Z(i, j) = rng.normal();
    return Z * chol.transpose();
}

double gaussian_mscale_constant(double a, double delta) {
    // E[rho_a(Z/k)] in closed form through truncated normal moments.
    auto expectation = [&](double k) {
        double t = a * k;
        double phi = std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI);
        double inner = std::erf(t / std::sqrt(2.0));  // P(|Z| <= t)
        double m2 = inner - 2.0 * t * phi;
        double m4 = 3.0 * inner - 2.0 * t * (t * t + 3.0) * phi;
        double m6 = 15.0 * inner - 2.0 * t * (t * t * t * t + 5.0 * t * t + 15.0) * phi;
        double a2 = t * t;  // (a k)^2
        return 3.0 * m2 / a2 - 3.0 * m4 / (a2 * a2) + m6 / (a2 * a2 * a2) + (1.0 - inner);
    };
    double lo = 0.5, hi = 2.0;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (expectation(mid) > delta)
            lo = mid;  // expectation decreases in k
        else
            hi = mid;
        if (hi - lo < 1e-15) break;
    }
    return 0.5 * (lo + hi);
}

ModelH0 make_gaussian_model(const Matrix& Sigma, Eigen::Index q, const RhoKernel& kernel1,
                            const RhoKernel& kernel2, Eigen::Index mc_size, std::uint64_t seed) {
    const Eigen::Index p = Sigma.rows();
    if (Sigma.cols() != p) throw DimensionMismatch("make_gaussian_model: Sigma must be square");
    if (q < 1 || q >= p) throw ValidationError("make_gaussian_model: need 1 <= q < p");

    ModelH0 m;
    m.Sigma = Sigma;
    m.kernel1 = kernel1;
    m.kernel2 = kernel2;
    Eigen::LLT<Matrix> llt(Sigma);
    if (llt.info() != Eigen::Success)
        throw NumericalError("make_gaussian_model: Sigma is not positive definite");
    m.chol = llt.matrixL();

    Eigen::SelfAdjointEigenSolver<Matrix> eig(Sigma);
    m.V0 = Matrix(p, q);
    for (Eigen::Index k = 0; k < q; ++k) {
        Vector v = eig.eigenvectors().col(p - 1 - k);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        m.V0.col(k) = v;
    }

    // sigma1: population M-scale of the off-subspace residual coordinates.
    Matrix P = m.V0 * m.V0.transpose();
    Matrix offsub = Matrix::Identity(p, p) - P;
    Matrix resid_cov = offsub * Sigma * offsub;
    double k0 = gaussian_mscale_constant(RhoKernel::biweight().a, 0.5);
    m.sigma = Vector(p + 1);
    for (Eigen::Index j = 0; j < p; ++j)
        m.sigma(j) = k0 * std::sqrt(std::max(resid_cov(j, j), 1e-300));

    // sigma2: M-scale of the rowwise deviations, by Monte Carlo.
    Matrix draws = m.sample(mc_size, seed);
    Matrix resid = draws * offsub.transpose();
    std::vector<double> rts(static_cast<std::size_t>(mc_size));
    for (Eigen::Index i = 0; i < mc_size; ++i) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            double s = m.sigma(j);
            acc += s * s * rho(kernel1, resid(i, j) / s);
        }
        rts[static_cast<std::size_t>(i)] = std::sqrt(acc / static_cast<double>(p));
    }
    m.sigma(p) = mscale(rts);
    return m;
}

namespace {

// Integrand of g at one point: W_x (V u_x - x) u_x^T, flattened column-major.
// Returns false when the point is fully rejected (zero contribution).
bool g_point(const Vector& x, const Matrix& V, const Vector& sigma, const RhoKernel& kernel1,
             const RhoKernel& kernel2, Matrix& out) {
    const Eigen::Index p = V.rows();
    static thread_local std::vector<bool> full_mask;
    full_mask.assign(static_cast<std::size_t>(p), true);
    Vector mu = Vector::Zero(p);
    Vector sigma1 = sigma.head(p);
    InnerScores inner = robust_inner_scores(x, full_mask, V, mu, sigma1, kernel1, 200, 1e-11);
    if (!inner.valid) {
        out.setZero();
        return false;
    }
    Vector r = x - V * inner.u;
    double rt_acc = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
        double s = sigma1(j);
        rt_acc += s * s * rho(kernel1, r(j) / s);
    }
    double rt = std::sqrt(std::max(rt_acc / static_cast<double>(p), 0.0));
    double wr = weight(kernel2, rt / sigma(p));
    Vector w(p);
    for (Eigen::Index j = 0; j < p; ++j) w(j) = weight(kernel1, r(j) / sigma1(j)) * wr;
    out = (-(w.array() * r.array())).matrix() * inner.u.transpose();
    return true;
}

}  // namespace

Vector g_vector(const Matrix& points, const Matrix& V, const Vector& sigma,
                const RhoKernel& kernel1, const RhoKernel& kernel2) {
    const Eigen::Index n = points.rows();
    if (n < 1000)
        throw MonteCarloBudgetTooSmall("g_vector: fewer than 1e3 Monte Carlo draws");
    const Eigen::Index p = V.rows();
    const Eigen::Index q = V.cols();
    Matrix acc = Matrix::Zero(p, q);
    Matrix term(p, q);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (g_point(points.row(i).transpose(), V, sigma, kernel1, kernel2, term)) acc += term;
    }
    acc /= static_cast<double>(n);
    return Eigen::Map<Vector>(acc.data(), p * q);
}

Vector g_vector_atom(const Vector& z, const Matrix& V, const Vector& sigma,
                     const RhoKernel& kernel1, const RhoKernel& kernel2) {
    const Eigen::Index p = V.rows();
    const Eigen::Index q = V.cols();
    Matrix term(p, q);
    g_point(z, V, sigma, kernel1, kernel2, term);
    return Eigen::Map<Vector>(term.data(), p * q);
}

Matrix commutation_matrix(Eigen::Index p, Eigen::Index q) {
    Matrix K = Matrix::Zero(p * q, p * q);
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < q; ++j) K(j + i * q, i + j * p) = 1.0;
    return K;
}

namespace {

Matrix kron(const Matrix& A, const Matrix& B) {
    Matrix out(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return out;
}

}  // namespace

Matrix matrix_R0(const Matrix& V0) {
    const Eigen::Index p = V0.rows();
    const Eigen::Index q = V0.cols();
    Matrix P0 = V0 * V0.transpose();
    Matrix offsub = Matrix::Identity(p, p) - P0;
    return kron(V0, offsub) + kron(offsub, V0) * commutation_matrix(p, q);
}

InfluenceLab::InfluenceLab(ModelH0 model, Eigen::Index mc_size, std::uint64_t seed,
                           double fd_step)
    : model_(std::move(model)) {
    if (mc_size < 1000)
        throw MonteCarloBudgetTooSmall("InfluenceLab: fewer than 1e3 Monte Carlo draws");
    sample_ = model_.sample(mc_size, seed);
    const Eigen::Index p = model_.p();
    const Eigen::Index q = model_.q();

    auto g_at = [&](const Matrix& V, const Vector& sigma) {
        return g_vector(sample_, V, sigma, model_.kernel1, model_.kernel2);
    };

    auto build_B = [&](double h_rel) {
        Matrix B(p * q, p * q);
        for (Eigen::Index m = 0; m < q; ++m)
            for (Eigen::Index l = 0; l < p; ++l) {
                double h = h_rel * std::max(1.0, std::abs(model_.V0(l, m)));
                Matrix Vp = model_.V0, Vm = model_.V0;
                Vp(l, m) += h;
                Vm(l, m) -= h;
                B.col(m * p + l) = (g_at(Vp, model_.sigma) - g_at(Vm, model_.sigma)) / (2.0 * h);
            }
        return B;
    };
    auto build_S = [&](double h_rel) {
        Matrix S(p * q, p + 1);
        for (Eigen::Index k = 0; k <= p; ++k) {
            double h = h_rel * model_.sigma(k);
            Vector sp = model_.sigma, sm = model_.sigma;
            sp(k) += h;
            sm(k) -= h;
            S.col(k) = (g_at(model_.V0, sp) - g_at(model_.V0, sm)) / (2.0 * h);
        }
        return S;
    };

    auto rel_change = [](const Matrix& A, const Matrix& Bm) {
        double scale = Bm.cwiseAbs().maxCoeff();
        if (scale == 0.0) return 0.0;
        return (A - Bm).cwiseAbs().maxCoeff() / scale;
    };

    B_ = build_B(fd_step);
    Matrix B_half = build_B(0.5 * fd_step);
    meta_B_ = {mc_size, seed, fd_step, rel_change(B_half, B_)};
    B_ = B_half;  // keep the finer-step estimate

    S_ = build_S(fd_step);
    Matrix S_half = build_S(0.5 * fd_step);
    meta_S_ = {mc_size, seed, fd_step, rel_change(S_half, S_)};
    S_ = S_half;

    R0_ = matrix_R0(model_.V0);

    Eigen::JacobiSVD<Matrix> svd(B_);
    double cond = svd.singularValues()(0) / svd.singularValues()(p * q - 1);
    if (!std::isfinite(cond) || cond > 1e12)
        throw SingularB("InfluenceLab: B is numerically singular (condition " +
                        std::to_string(cond) + ")");
    B_lu_.compute(B_);
}

Vector InfluenceLab::apply_if(const Vector& rhs_atom, const Vector& if_sigma) const {
    Vector rhs = rhs_atom;
    if (if_sigma.size() > 0) {
        if (if_sigma.size() != model_.p() + 1)
            throw DimensionMismatch("if_sigma must have length p+1");
        rhs += S_ * if_sigma;
    }
    return -(R0_ * B_lu_.solve(rhs));
}

Matrix InfluenceLab::if_fdcm(const Vector& z, const Vector& if_sigma) const {
    const Eigen::Index p = model_.p();
    Vector g = g_vector_atom(z, model_.V0, model_.sigma, model_.kernel1, model_.kernel2);
    Vector v = apply_if(g, if_sigma);
    return Eigen::Map<const Matrix>(v.data(), p, p);
}

Matrix InfluenceLab::if_fdcm(const Vector& z) const { return if_fdcm(z, Vector()); }

Matrix InfluenceLab::if_ficm(const Vector& z, const Vector& if_sigma) const {
    const Eigen::Index p = model_.p();
    const Eigen::Index q = model_.q();
    // One degenerate term per coordinate: the fixed sample with coordinate j
    // clamped at z_j. The terms sum with unit coefficient; the probability of
    // a single clamped coordinate is p*eps, and the conditional mixture over
    // which coordinate carries weight 1/p each, so the factors cancel.
    Vector g_sum = Vector::Zero(p * q);
    for (Eigen::Index j = 0; j < p; ++j) {
        Matrix clamped = sample_;
        clamped.col(j).setConstant(z(j));
        g_sum += g_vector(clamped, model_.V0, model_.sigma, model_.kernel1, model_.kernel2);
    }
    Vector v = apply_if(g_sum, if_sigma);
    return Eigen::Map<const Matrix>(v.data(), p, p);
}

Matrix InfluenceLab::if_ficm(const Vector& z) const { return if_ficm(z, Vector()); }

Matrix InfluenceLab::asymptotic_covariance(Eigen::Index mc_size, std::uint64_t seed) const {
    if (mc_size < 1000)
        throw MonteCarloBudgetTooSmall("asymptotic_covariance: fewer than 1e3 draws");
    const Eigen::Index p = model_.p();
    const Eigen::Index q = model_.q();
    Matrix draws = model_.sample(mc_size, seed);
    Matrix A = Matrix::Zero(p * q, p * q);
    Matrix term(p, q);
    for (Eigen::Index i = 0; i < mc_size; ++i) {
        if (!g_point(draws.row(i).transpose(), model_.V0, model_.sigma, model_.kernel1,
                     model_.kernel2, term))
            continue;
        Eigen::Map<Vector> gv(term.data(), p * q);
        A += gv * gv.transpose();
    }
    A /= static_cast<double>(mc_size);
    Matrix K = R0_ * B_lu_.solve(Matrix::Identity(p * q, p * q));
    return K * A * K.transpose();
}

Matrix fit_loadings_fixed_scale(const Matrix& points, const Vector& masses, const Matrix& V_start,
                                const Vector& sigma, const RhoKernel& kernel1,
                                const RhoKernel& kernel2, int max_iter, double tol) {
    const Eigen::Index n = points.rows();
    const Eigen::Index p = points.cols();
    const Eigen::Index q = V_start.cols();
    if (masses.size() != n) throw DimensionMismatch("fit_loadings_fixed_scale: mass length != n");

    std::vector<bool> full_mask(static_cast<std::size_t>(p), true);
    Vector mu = Vector::Zero(p);
    Vector sigma1 = sigma.head(p);

    Matrix V = V_start;
    for (int it = 0; it < max_iter; ++it) {
        std::vector<Matrix> A(static_cast<std::size_t>(p), Matrix::Zero(q, q));
        std::vector<Vector> b(static_cast<std::size_t>(p), Vector::Zero(q));
        for (Eigen::Index i = 0; i < n; ++i) {
            Vector x = points.row(i).transpose();
            InnerScores inner = robust_inner_scores(x, full_mask, V, mu, sigma1, kernel1, 200, 1e-11);
            if (!inner.valid) continue;
            Vector r = x - V * inner.u;
            double rt_acc = 0.0;
            for (Eigen::Index j = 0; j < p; ++j) {
                double s = sigma1(j);
                rt_acc += s * s * rho(kernel1, r(j) / s);
            }
            double rt = std::sqrt(std::max(rt_acc / static_cast<double>(p), 0.0));
            double wr = weight(kernel2, rt / sigma(p));
            Matrix uu = inner.u * inner.u.transpose();
            for (Eigen::Index j = 0; j < p; ++j) {
                double w = masses(i) * weight(kernel1, r(j) / sigma1(j)) * wr;
                if (w == 0.0) continue;
                A[static_cast<std::size_t>(j)] += w * uu;
                b[static_cast<std::size_t>(j)] += w * x(j) * inner.u;
            }
        }
        Matrix V_new(p, q);
        for (Eigen::Index j = 0; j < p; ++j)
            V_new.row(j) =
                pinv_solve(A[static_cast<std::size_t>(j)], b[static_cast<std::size_t>(j)]).transpose();
        double delta = (V_new - V).norm();
        V = V_new;
        if (delta <= tol * (1.0 + V.norm())) break;
    }
    return V;
}

Matrix projector_of(const Matrix& V) {
    Matrix Q = orth_basis(V);
    return Q * Q.transpose();
}

}  // namespace cellpca
