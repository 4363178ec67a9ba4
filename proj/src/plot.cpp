#include "cacophony/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "cacophony/train.hpp"

namespace cacophony {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kMarginLeft = 60;
constexpr int kMarginRight = 20;
constexpr int kMarginTop = 20;
constexpr int kMarginBottom = 45;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

double column_value(const MetricsRow& row, const std::string& column) {
    if (column == "loss_total") return row.loss_total;
    if (column == "loss_con") return row.loss_con;
    if (column == "loss_cap") return row.loss_cap;
    if (column == "loss_mae") return row.loss_mae;
    if (column == "lr") return row.lr;
    if (column == "tau") return row.tau;
    if (column == "gap_norm") return row.gap_norm;
    throw std::invalid_argument("plot_curves: unknown column " + column);
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return std::string(buf);
}

std::string coord(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
}

}  // namespace

void plot_curves(const std::vector<std::string>& csv_paths, const std::string& column,
                 const std::string& split_filter, const std::vector<std::string>& labels,
                 const std::string& out_svg) {
    if (csv_paths.empty()) throw std::invalid_argument("plot_curves: no input CSVs");
    if (!labels.empty() && labels.size() != csv_paths.size())
        throw std::invalid_argument("plot_curves: label count must match CSV count");

    struct Series {
        std::string label;
        std::vector<std::pair<double, double>> points;
    };
    std::vector<Series> series;
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
    bool have_range = false;
    for (size_t i = 0; i < csv_paths.size(); ++i) {
        Series s;
        s.label = labels.empty() ? csv_paths[i] : labels[i];
        for (const MetricsRow& row : read_metrics_csv(csv_paths[i])) {
            if (!split_filter.empty() && row.split != split_filter) continue;
            const double x = static_cast<double>(row.step);
            const double y = column_value(row, column);
            if (!have_range) {
                x_min = x_max = x;
                y_min = y_max = y;
                have_range = true;
            }
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
            s.points.emplace_back(x, y);
        }
        series.push_back(std::move(s));
    }
    if (!have_range) throw std::invalid_argument("plot_curves: no rows matched");
    if (x_max == x_min) x_max = x_min + 1;
    if (y_max == y_min) y_max = y_min + 1;

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto sx = [&](double x) { return kMarginLeft + (x - x_min) / (x_max - x_min) * plot_w; };
    auto sy = [&](double y) { return kMarginTop + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h; };

    std::ofstream f(out_svg);
    if (!f) throw std::runtime_error("plot_curves: cannot open " + out_svg);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    f << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    // axes
    f << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft << "\" y2=\""
      << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + plot_h << "\" x2=\"" << kMarginLeft + plot_w
      << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
    // tick labels
    f << "<text x=\"" << kMarginLeft << "\" y=\"" << kHeight - 25 << "\" font-size=\"11\">" << num(x_min)
      << "</text>\n";
    f << "<text x=\"" << kMarginLeft + plot_w - 30 << "\" y=\"" << kHeight - 25 << "\" font-size=\"11\">"
      << num(x_max) << "</text>\n";
    f << "<text x=\"5\" y=\"" << kMarginTop + plot_h << "\" font-size=\"11\">" << num(y_min) << "</text>\n";
    f << "<text x=\"5\" y=\"" << kMarginTop + 10 << "\" font-size=\"11\">" << num(y_max) << "</text>\n";
    // axis titles
    f << "<text x=\"" << kMarginLeft + plot_w / 2 - 15 << "\" y=\"" << kHeight - 8
      << "\" font-size=\"12\">step</text>\n";
    f << "<text x=\"8\" y=\"" << kMarginTop - 6 << "\" font-size=\"12\">" << column << "</text>\n";

    for (size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % 6];
        const auto& pts = series[i].points;
        if (pts.size() == 1) {
            f << "<circle cx=\"" << coord(sx(pts[0].first)) << "\" cy=\"" << coord(sy(pts[0].second))
              << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        } else if (!pts.empty()) {
            f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (size_t p = 0; p < pts.size(); ++p) {
                if (p) f << ' ';
                f << coord(sx(pts[p].first)) << ',' << coord(sy(pts[p].second));
            }
            f << "\"/>\n";
        }
        // legend entry
        const int ly = kMarginTop + 14 + static_cast<int>(i) * 16;
        f << "<rect x=\"" << kMarginLeft + plot_w - 150 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
          << color << "\"/>\n";
        f << "<text x=\"" << kMarginLeft + plot_w - 136 << "\" y=\"" << ly << "\" font-size=\"11\">"
          << series[i].label << "</text>\n";
    }
    f << "</svg>\n";
}

}  // namespace cacophony
