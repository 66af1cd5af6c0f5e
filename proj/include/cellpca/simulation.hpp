#pragma once

#include <cstdint>
#include <string>

#include "cellpca/model.hpp"

namespace cellpca {

enum class CovModel { A09, ALYZ };
enum class Scheme { None, Cellwise, Rowwise, Mixed };
enum class Estimator { CPCA, OnlyCell, OnlyRow, CellPCA };

std::string to_string(CovModel m);
std::string to_string(Scheme s);
std::string to_string(Estimator e);

/// Banded alternating-sign covariance: Sigma_jk = (-0.9)^|j-k|, unit diagonal.
Matrix a09_covariance(Eigen::Index p);

/// Seed-deterministic Gaussian draws from the A09 model.
Matrix gen_a09(Eigen::Index n, Eigen::Index p, std::uint64_t seed);

/// Random-frame covariance with a fixed replaced spectrum. Only p in {20,200}
/// carry calibrated spectra; other p interpolate and require strict = false.
Vector alyz_spectrum(Eigen::Index p, bool strict = true);

struct AlyzDraw {
    Matrix data;
    Matrix Sigma;  // the covariance actually used; its top-q space is the truth
};

AlyzDraw gen_alyz(Eigen::Index n, Eigen::Index p, std::uint64_t seed, bool strict = true);

struct Contaminated {
    Matrix data;
    MaskArray cell_outliers;        // true at shifted cells
    std::vector<bool> row_outliers; // true at replaced rows
};

/// Cellwise shifts of gamma_c * sigma_j, rowwise replacement by draws around
/// gamma_r (e1 + e3) for A09 (e1 + e_{q+1} for ALYZ) with covariance
/// Sigma/1.5, or both. Fractions are exact counts.
Contaminated contaminate(const Matrix& clean, const Matrix& Sigma, CovModel model, Scheme scheme,
                         Eigen::Index q, double gamma_c, double gamma_r, double cell_fraction,
                         double row_fraction, std::uint64_t seed);

/// Uniformly random missing cells with an exact count; position sets that
/// would empty a row or thin a column below min_col_obs are resampled.
MaskedMatrix inject_na(const Matrix& data, double fraction, std::uint64_t seed,
                       Eigen::Index min_col_obs = 3, int max_retries = 100);

/// Largest principal angle between the column spaces, in radians.
double subspace_angle(const Matrix& V1, const Matrix& V2);

/// Mean squared prediction error over observed, uncontaminated cells in
/// uncontaminated rows.
double mse_clean(const Matrix& clean, const Matrix& predictions, const MaskArray& cell_outliers,
                 const std::vector<bool>& row_outliers, const MaskArray& observed);

struct SimConfig {
    CovModel model = CovModel::A09;
    Eigen::Index n = 100, p = 20, q = 2;
    Scheme scheme = Scheme::Cellwise;
    std::vector<double> gamma_c;  // grid for cellwise / mixed
    std::vector<double> gamma_r;  // grid for rowwise (mixed derives it when empty)
    double cell_fraction = -1;    // negative: scheme default (0.2, or 0.1 mixed)
    double row_fraction = -1;
    double na_fraction = 0.0;
    int replicates = 50;
    std::vector<Estimator> estimators = {Estimator::CPCA, Estimator::OnlyCell,
                                         Estimator::OnlyRow, Estimator::CellPCA};
    std::uint64_t seed = 1;
    bool strict_alyz = true;
};

struct SimRecord {
    Estimator estimator;
    double gamma;
    int replicate;
    double angle;
    double mse;
    bool failed;
};

struct MedianRow {
    Estimator estimator;
    double gamma;
    double angle_median;
    double mse_median;
    int n_ok;
};

struct SimResult {
    SimConfig cfg;
    std::vector<SimRecord> records;
    std::vector<MedianRow> medians;
};

/// Full Monte Carlo protocol: generate, contaminate, inject NAs, run every
/// estimator, score angle and MSE, aggregate medians. Deterministic in the
/// master seed; per-replicate failures are recorded, not fatal.
SimResult run_study(const SimConfig& cfg);

/// One estimator on one masked dataset: fitted loadings and predictions.
struct EstimatorFit {
    Matrix V;     // p x q
    Matrix Xhat;  // n x p
};

EstimatorFit run_estimator(Estimator which, const MaskedMatrix& X, Eigen::Index q);

}  // namespace cellpca
