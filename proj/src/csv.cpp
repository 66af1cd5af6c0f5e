#include "cellpca/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cellpca/errors.hpp"

namespace cellpca {

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        std::size_t pos = line.find(delim, start);
        if (pos == std::string::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

bool parse_number(const std::string& token, double& out) {
    const char* first = token.data();
    const char* last = token.data() + token.size();
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last;
}

bool is_na(const std::string& token, const std::vector<std::string>& na_tokens) {
    return std::find(na_tokens.begin(), na_tokens.end(), token) != na_tokens.end();
}

}  // namespace

std::pair<MaskedMatrix, IngestionReport> parse_csv(const std::string& text,
                                                   const CsvOptions& options) {
    std::vector<std::vector<std::string>> rows;
    {
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (trim(line).empty()) continue;
            rows.push_back(split_line(line, options.delimiter));
        }
    }
    if (rows.empty()) throw EmptyFile("csv: no content");

    IngestionReport report;
    std::size_t first_data = 0;
    bool header = options.header == CsvOptions::Header::Yes;
    if (options.header == CsvOptions::Header::Auto) {
        for (const auto& tok : rows[0]) {
            double ignored;
            if (!is_na(tok, options.na_tokens) && !parse_number(tok, ignored)) {
                header = true;
                break;
            }
        }
    }
    if (header) {
        report.column_names = rows[0];
        first_data = 1;
    }
    if (first_data >= rows.size()) throw EmptyFile("csv: header only, no data rows");

    const std::size_t p = rows[first_data].size();
    std::vector<Vector> values;
    std::vector<std::vector<bool>> masks;
    for (std::size_t r = first_data; r < rows.size(); ++r) {
        if (rows[r].size() != p)
            throw RaggedRows("csv: row " + std::to_string(r + 1) + " has " +
                             std::to_string(rows[r].size()) + " fields, expected " +
                             std::to_string(p));
        Vector vals = Vector::Zero(static_cast<Eigen::Index>(p));
        std::vector<bool> mask(p, false);
        bool any = false;
        for (std::size_t c = 0; c < p; ++c) {
            const std::string& tok = rows[r][c];
            if (is_na(tok, options.na_tokens)) continue;
            double v;
            if (!parse_number(tok, v)) throw CsvParseError(r + 1, c + 1, tok);
            vals(static_cast<Eigen::Index>(c)) = v;
            mask[c] = true;
            any = true;
        }
        if (!any) {
            report.dropped_rows.push_back(static_cast<Eigen::Index>(r - first_data));
            continue;
        }
        values.push_back(std::move(vals));
        masks.push_back(std::move(mask));
    }
    if (values.empty()) throw EmptyFile("csv: every row was entirely missing");

    const Eigen::Index n = static_cast<Eigen::Index>(values.size());
    Matrix M(n, static_cast<Eigen::Index>(p));
    MaskArray mask(n, static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < n; ++i) {
        M.row(i) = values[static_cast<std::size_t>(i)].transpose();
        for (std::size_t c = 0; c < p; ++c)
            mask(i, static_cast<Eigen::Index>(c)) = masks[static_cast<std::size_t>(i)][c];
    }

    report.n = n;
    report.p = static_cast<Eigen::Index>(p);
    report.na_count = static_cast<Eigen::Index>(n * static_cast<Eigen::Index>(p)) - mask.count();
    for (Eigen::Index j = 0; j < report.p; ++j) {
        bool constant = true, seen = false;
        double ref = 0;
        for (Eigen::Index i = 0; i < n && constant; ++i) {
            if (!mask(i, j)) continue;
            if (!seen) {
                ref = M(i, j);
                seen = true;
            } else if (M(i, j) != ref) {
                constant = false;
            }
        }
        if (seen && constant) report.constant_columns.push_back(j);
    }
    return {MaskedMatrix(std::move(M), std::move(mask)), std::move(report)};
}

std::pair<MaskedMatrix, IngestionReport> read_csv(const std::string& path,
                                                  const CsvOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str(), options);
}

void write_masked_csv(const MaskedMatrix& X, const std::string& path,
                      const std::vector<std::string>& column_names) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    if (!column_names.empty()) {
        for (std::size_t c = 0; c < column_names.size(); ++c) {
            if (c) out << ',';
            out << column_names[c];
        }
        out << '\n';
    }
    for (Eigen::Index i = 0; i < X.n(); ++i) {
        for (Eigen::Index j = 0; j < X.p(); ++j) {
            if (j) out << ',';
            if (X.mask(i, j))
                out << format_double(X.values(i, j));
            else
                out << "NA";
        }
        out << '\n';
    }
    if (!out) throw IoError("failed while writing " + path);
}

std::string sim_result_csv(const SimResult& result) {
    std::ostringstream out;
    out << "model,scheme,estimator,gamma,replicate,angle,mse\n";
    for (const auto& rec : result.records) {
        out << to_string(result.cfg.model) << ',' << to_string(result.cfg.scheme) << ','
            << to_string(rec.estimator) << ',' << format_double(rec.gamma) << ','
            << rec.replicate << ',';
        if (rec.failed)
            out << "NA,NA\n";
        else
            out << format_double(rec.angle) << ',' << format_double(rec.mse) << '\n';
    }
    return out.str();
}

std::string sim_summary_json(const SimResult& result) {
    std::ostringstream out;
    out << "{\n  \"model\": \"" << to_string(result.cfg.model) << "\",\n  \"scheme\": \""
        << to_string(result.cfg.scheme) << "\",\n  \"replicates\": " << result.cfg.replicates
        << ",\n  \"medians\": [\n";
    for (std::size_t k = 0; k < result.medians.size(); ++k) {
        const auto& row = result.medians[k];
        out << "    {\"estimator\": \"" << to_string(row.estimator)
            << "\", \"gamma\": " << format_double(row.gamma)
            << ", \"angle\": " << format_double(row.angle_median)
            << ", \"mse\": " << format_double(row.mse_median) << ", \"n\": " << row.n_ok << "}";
        out << (k + 1 < result.medians.size() ? ",\n" : "\n");
    }
    out << "  ]\n}\n";
    return out.str();
}

}  // namespace cellpca
