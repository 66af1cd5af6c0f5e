#pragma once

#include <cstdint>

#include "cellpca/irls.hpp"
#include "cellpca/model.hpp"

namespace cellpca {

/// Residual matrix standardized columnwise by fresh M-scales of the final
/// residuals (not the frozen fitting scales).
struct StandardizedResiduals {
    Matrix rtilde;                      // NaN at unobserved cells
    Vector column_scale;                // the M-scales used
    std::vector<bool> degenerate_columns;
};

StandardizedResiduals standardized_residuals(const MaskedMatrix& X, const SubspaceFit& fit);

enum class CellCategory : std::uint8_t { Regular, Missing, PositiveOutlier, NegativeOutlier };

/// Per-cell categories and color intensities for a residual cellmap.
struct CellmapGrid {
    Matrix rtilde;
    Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> category;
    Matrix intensity;      // in [0,1]; 0 for regular/missing cells
    Vector row_shade;      // 1 - w_i^r: 0 = white circle, 1 = black
    double flag_cutoff = 2.57;
    double saturation = 6.0;
};

CellmapGrid cellmap(const Matrix& rtilde, const MaskArray& mask, const Vector& wr);

/// Mahalanobis-type distance of scores under the fitted eigenvalues.
double score_distance(const Vector& x_scores, const Vector& eigenvalues);

/// 0.99-quantile of ||rtilde_i|| under a Gaussian model matched to the fit:
/// scores from the fitted eigenvalues plus off-subspace noise at the fitted
/// residual scales. Seed-controlled; replicates use independent substreams.
double residual_cutoff(const SubspaceFit& fit, int n_sim, std::uint64_t seed);

enum class CaseClass : std::uint8_t { Regular, GoodLeverage, OrthogonalOutlier, BadLeverage };

struct OutlierMapRecord {
    Eigen::Index index;
    double sd;          // score distance
    double resnorm;     // ||rtilde_i||
    double wr;          // rowwise weight
    double point_size;  // 1 - mean cellwise weight
    CaseClass cls;
};

struct OutlierMap {
    std::vector<OutlierMapRecord> records;
    double cutoff_sd;
    double cutoff_resnorm;
};

OutlierMap outlier_map(const MaskedMatrix& X, const SubspaceFit& fit, double cutoff_resnorm);

/// Shrink one row toward the subspace: observed cells move from their value
/// toward the fitted value as the cell weight drops from 1 to 0; missing
/// cells take the fitted value.
Vector impute_row(const Vector& x, const std::vector<bool>& mask, const Vector& fitted_row,
                  const Vector& cell_weights);

struct PredictionResult {
    bool valid = false;  // false: all cells missing or all weights vanished
    Vector u;            // length q
    Vector x_hat;        // length p
    Vector x_imputed;    // length p
    Vector w;            // length p cellwise weights (0 outside observed set)
};

/// Out-of-sample fit of a new (possibly incomplete) observation.
PredictionResult predict(const Vector& x, const std::vector<bool>& mask, const SubspaceFit& fit);

}  // namespace cellpca
