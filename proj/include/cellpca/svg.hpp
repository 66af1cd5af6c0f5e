#pragma once

#include <string>
#include <vector>

#include "cellpca/diagnostics.hpp"

namespace cellpca {

/// Default cellmap column selection: everything up to 60 columns, beyond
/// that the 20 columns with the largest median |rtilde|.
std::vector<Eigen::Index> default_cellmap_columns(const CellmapGrid& grid);

/// Residual cellmap: yellow regular cells, white missing, orange-to-red
/// positive and purple-to-blue negative ramps, grayscale rowwise circles.
void render_cellmap(const CellmapGrid& grid, const std::string& path,
                    const std::vector<Eigen::Index>& rows = {},
                    const std::vector<Eigen::Index>& cols = {});

/// Scatter of residual norm against score distance with dotted cutoff lines;
/// point radius grows with the share of downweighted cells, fill darkens as
/// the rowwise weight drops.
void render_outlier_map(const OutlierMap& map, const std::string& path);

}  // namespace cellpca
