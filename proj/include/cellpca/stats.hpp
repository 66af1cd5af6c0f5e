#pragma once

#include <Eigen/Dense>
#include <vector>

namespace cellpca {

/// Neumaier compensated accumulator; the objective needs trustworthy
/// low-order digits on up to ~1e7 terms.
class CompensatedSum {
public:
    void add(double x) {
        double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Median of a sample (copies, ignores nothing; caller filters).
double median(std::vector<double> v);

/// Empirical quantile, linear interpolation between order statistics.
double quantile(std::vector<double> v, double prob);

/// Regularized lower incomplete gamma P(a,x).
double gamma_p(double a, double x);

/// Chi-square CDF with df degrees of freedom.
double chi2_cdf(double x, double df);

/// Chi-square quantile: Wilson-Hilferty start polished by Newton to 1e-10.
double chi2_quantile(double prob, double df);

/// Minimum-norm least-squares solve via SVD; singular values below
/// rcond * s_max are treated as zero.
Eigen::VectorXd pinv_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                           double rcond = 1e-12);

/// Orthonormal basis of the column space (thin SVD, left vectors).
Eigen::MatrixXd orth_basis(const Eigen::MatrixXd& A);

}  // namespace cellpca
