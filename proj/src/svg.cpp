#include "cellpca/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cellpca/errors.hpp"
#include "cellpca/stats.hpp"

namespace cellpca {

namespace {

struct Color {
    int r, g, b;
};

Color lerp(Color a, Color b, double t) {
    auto mix = [&](int x, int y) { return static_cast<int>(std::lround(x + t * (y - x))); };
    return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

std::string hex(Color c) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02X%02X%02X", c.r, c.g, c.b);
    return buf;
}

constexpr Color kYellow{255, 235, 59};
constexpr Color kLightOrange{255, 210, 130};
constexpr Color kDarkRed{139, 0, 0};
constexpr Color kLightPurple{216, 191, 216};
constexpr Color kDarkBlue{0, 0, 139};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::vector<Eigen::Index> default_cellmap_columns(const CellmapGrid& grid) {
    const Eigen::Index p = grid.rtilde.cols();
    std::vector<Eigen::Index> cols;
    if (p <= 60) {
        for (Eigen::Index j = 0; j < p; ++j) cols.push_back(j);
        return cols;
    }
    std::vector<std::pair<double, Eigen::Index>> scored;
    for (Eigen::Index j = 0; j < p; ++j) {
        std::vector<double> absr;
        for (Eigen::Index i = 0; i < grid.rtilde.rows(); ++i) {
            double v = grid.rtilde(i, j);
            if (std::isfinite(v)) absr.push_back(std::abs(v));
        }
        scored.emplace_back(absr.empty() ? 0.0 : -median(absr), j);
    }
    std::sort(scored.begin(), scored.end());
    for (std::size_t k = 0; k < 20; ++k) cols.push_back(scored[k].second);
    std::sort(cols.begin(), cols.end());
    return cols;
}

void render_cellmap(const CellmapGrid& grid, const std::string& path,
                    const std::vector<Eigen::Index>& rows_in,
                    const std::vector<Eigen::Index>& cols_in) {
    std::vector<Eigen::Index> rows = rows_in;
    std::vector<Eigen::Index> cols = cols_in;
    if (rows.empty())
        for (Eigen::Index i = 0; i < grid.rtilde.rows(); ++i) rows.push_back(i);
    if (cols.empty()) cols = default_cellmap_columns(grid);

    const double cell = 14.0;
    const double left = 48.0, top = 16.0;
    const double circle_gap = 22.0;
    double width = left + cell * static_cast<double>(cols.size()) + circle_gap + 20.0;
    double height = top + cell * static_cast<double>(rows.size()) + 16.0;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\""
        << fmt(height) << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (std::size_t r = 0; r < rows.size(); ++r) {
        Eigen::Index i = rows[r];
        double y = top + cell * static_cast<double>(r);
        out << "<text x=\"4\" y=\"" << fmt(y + cell - 3) << "\" font-size=\"10\">" << i
            << "</text>\n";
        for (std::size_t c = 0; c < cols.size(); ++c) {
            Eigen::Index j = cols[c];
            double x = left + cell * static_cast<double>(c);
            Color fill = kYellow;
            auto cat = static_cast<CellCategory>(grid.category(i, j));
            if (cat == CellCategory::Missing)
                fill = {255, 255, 255};
            else if (cat == CellCategory::PositiveOutlier)
                fill = lerp(kLightOrange, kDarkRed, grid.intensity(i, j));
            else if (cat == CellCategory::NegativeOutlier)
                fill = lerp(kLightPurple, kDarkBlue, grid.intensity(i, j));
            out << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(cell)
                << "\" height=\"" << fmt(cell) << "\" fill=\"" << hex(fill)
                << "\" stroke=\"#777777\" stroke-width=\"0.5\"/>\n";
        }
        // rowwise weight circle: white at w_r = 1, black at w_r = 0
        int v = static_cast<int>(std::lround(255.0 * (1.0 - grid.row_shade(i))));
        double cx = left + cell * static_cast<double>(cols.size()) + circle_gap * 0.5;
        out << "<circle cx=\"" << fmt(cx) << "\" cy=\"" << fmt(y + cell * 0.5) << "\" r=\""
            << fmt(cell * 0.35) << "\" fill=\"" << hex({v, v, v})
            << "\" stroke=\"black\" stroke-width=\"0.6\"/>\n";
    }
    out << "</svg>\n";
    if (!out) throw IoError("failed while writing " + path);
}

void render_outlier_map(const OutlierMap& map, const std::string& path) {
    const double w = 480, h = 360;
    const double ml = 56, mr = 16, mt = 16, mb = 44;

    double max_sd = map.cutoff_sd * 1.25;
    double max_res = map.cutoff_resnorm * 1.25;
    for (const auto& rec : map.records) {
        max_sd = std::max(max_sd, rec.sd * 1.05);
        max_res = std::max(max_res, rec.resnorm * 1.05);
    }
    auto X = [&](double sd) { return ml + (w - ml - mr) * sd / max_sd; };
    auto Y = [&](double res) { return h - mb - (h - mt - mb) * res / max_res; };

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\""
        << fmt(h) << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(h - mb) << "\" x2=\"" << fmt(w - mr)
        << "\" y2=\"" << fmt(h - mb) << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(mt) << "\" x2=\"" << fmt(ml)
        << "\" y2=\"" << fmt(h - mb) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << fmt((ml + w - mr) / 2) << "\" y=\"" << fmt(h - 10)
        << "\" font-size=\"12\" text-anchor=\"middle\">score distance</text>\n";
    out << "<text x=\"14\" y=\"" << fmt((mt + h - mb) / 2)
        << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << fmt((mt + h - mb) / 2) << ")\">residual norm</text>\n";

    // dotted cutoffs
    out << "<line x1=\"" << fmt(X(map.cutoff_sd)) << "\" y1=\"" << fmt(mt) << "\" x2=\""
        << fmt(X(map.cutoff_sd)) << "\" y2=\"" << fmt(h - mb)
        << "\" stroke=\"black\" stroke-dasharray=\"3,3\"/>\n";
    out << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(Y(map.cutoff_resnorm)) << "\" x2=\""
        << fmt(w - mr) << "\" y2=\"" << fmt(Y(map.cutoff_resnorm))
        << "\" stroke=\"black\" stroke-dasharray=\"3,3\"/>\n";

    for (const auto& rec : map.records) {
        int v = static_cast<int>(std::lround(255.0 * rec.wr));
        double r = 2.0 + 6.0 * std::clamp(rec.point_size, 0.0, 1.0);
        out << "<circle cx=\"" << fmt(X(rec.sd)) << "\" cy=\"" << fmt(Y(rec.resnorm)) << "\" r=\""
            << fmt(r) << "\" fill=\"" << hex({v, v, v})
            << "\" stroke=\"black\" stroke-width=\"0.6\"/>\n";
    }
    out << "</svg>\n";
    if (!out) throw IoError("failed while writing " + path);
}

}  // namespace cellpca
