#pragma once

#include <string>
#include <vector>

#include "cellpca/diagnostics.hpp"
#include "cellpca/model.hpp"

namespace cellpca {

/// Serialize a fit as JSON. Numbers are written in shortest round-trip form
/// and matrices are streamed row by row, so transient memory stays O(row).
void write_fit(const SubspaceFit& fit, const std::string& path);

/// Parse a fit written by write_fit. Uses event-based parsing: matrices fill
/// preallocated storage instead of an intermediate document tree.
SubspaceFit read_fit(const std::string& path);

/// Serialize out-of-sample predictions (one object per row; invalid rows
/// carry null fields).
void write_predictions(const std::vector<PredictionResult>& results, const std::string& path);

}  // namespace cellpca
