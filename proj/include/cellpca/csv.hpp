#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cellpca/model.hpp"
#include "cellpca/simulation.hpp"

namespace cellpca {

struct CsvOptions {
    std::vector<std::string> na_tokens = {"", "NA", "NaN"};
    enum class Header { Auto, Yes, No };
    Header header = Header::Auto;
    char delimiter = ',';
};

struct IngestionReport {
    Eigen::Index n = 0;  // retained rows
    Eigen::Index p = 0;
    Eigen::Index na_count = 0;
    std::vector<Eigen::Index> dropped_rows;      // all-NA rows, by original data-row index
    std::vector<Eigen::Index> constant_columns;  // identical observed values
    std::vector<std::string> column_names;
};

/// Parse numeric CSV text; na_tokens become missing cells, all-NA rows are
/// dropped and reported, anything else non-numeric is an error.
std::pair<MaskedMatrix, IngestionReport> parse_csv(const std::string& text,
                                                   const CsvOptions& options = {});

std::pair<MaskedMatrix, IngestionReport> read_csv(const std::string& path,
                                                  const CsvOptions& options = {});

/// Write a masked matrix; unobserved cells become "NA". Numbers use the
/// shortest round-trip decimal form.
void write_masked_csv(const MaskedMatrix& X, const std::string& path,
                      const std::vector<std::string>& column_names = {});

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

/// Long-format study records: model, scheme, estimator, gamma, replicate, angle, mse.
std::string sim_result_csv(const SimResult& result);

/// Median summary per estimator and gamma.
std::string sim_summary_json(const SimResult& result);

}  // namespace cellpca
