// SPDX-License-Identifier: Apache-2.0
//
// Self-contained SVG charts written directly, no plotting dependency.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace rflab {

struct ChartSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

struct LineChart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<ChartSeries> series;
    int width = 720;
    int height = 420;
};

namespace svg_detail {

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    return colors[i % 8];
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

struct Range {
    double lo = 0.0, hi = 1.0;
};

inline Range nice_range(double lo, double hi) {
    if (!(std::isfinite(lo) && std::isfinite(hi))) return {0.0, 1.0};
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

}  // namespace svg_detail

inline std::string render_line_chart(const LineChart& chart) {
    using svg_detail::fmt;
    const int ml = 64, mr = 16, mt = 36, mb = 46;
    const double pw = chart.width - ml - mr;
    const double ph = chart.height - mt - mb;

    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
    double ylo = xlo, yhi = -xlo;
    for (const auto& s : chart.series)
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            xlo = std::min(xlo, x);
            xhi = std::max(xhi, x);
            ylo = std::min(ylo, y);
            yhi = std::max(yhi, y);
        }
    if (!std::isfinite(xlo)) {
        xlo = 0.0;
        xhi = 1.0;
        ylo = 0.0;
        yhi = 1.0;
    }
    const auto xr = svg_detail::nice_range(xlo, xhi);
    const auto yr = svg_detail::nice_range(ylo, yhi);
    auto px = [&](double x) { return ml + pw * (x - xr.lo) / (xr.hi - xr.lo); };
    auto py = [&](double y) { return mt + ph * (1.0 - (y - yr.lo) / (yr.hi - yr.lo)); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << chart.width << "\" height=\""
       << chart.height << "\" viewBox=\"0 0 " << chart.width << " " << chart.height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << chart.width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"14\">" << chart.title << "</text>\n";

    // Axes with 5 ticks per dimension.
    os << "<g stroke=\"#444\" stroke-width=\"1\" font-family=\"sans-serif\" font-size=\"10\">\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
       << mt + ph << "\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
       << "\"/>\n";
    for (int k = 0; k <= 5; ++k) {
        const double xv = xr.lo + (xr.hi - xr.lo) * k / 5.0;
        const double yv = yr.lo + (yr.hi - yr.lo) * k / 5.0;
        os << "<line x1=\"" << fmt(px(xv)) << "\" y1=\"" << mt + ph << "\" x2=\"" << fmt(px(xv))
           << "\" y2=\"" << mt + ph + 4 << "\"/>\n";
        os << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << mt + ph + 16
           << "\" text-anchor=\"middle\" stroke=\"none\" fill=\"#222\">" << fmt(xv) << "</text>\n";
        os << "<line x1=\"" << ml - 4 << "\" y1=\"" << fmt(py(yv)) << "\" x2=\"" << ml << "\" y2=\""
           << fmt(py(yv)) << "\"/>\n";
        os << "<text x=\"" << ml - 7 << "\" y=\"" << fmt(py(yv) + 3)
           << "\" text-anchor=\"end\" stroke=\"none\" fill=\"#222\">" << fmt(yv) << "</text>\n";
    }
    os << "</g>\n";
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << chart.height - 8
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << chart.x_label
       << "</text>\n";
    os << "<text x=\"14\" y=\"" << mt + ph / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 "
       << mt + ph / 2 << ")\">" << chart.y_label << "</text>\n";

    for (std::size_t si = 0; si < chart.series.size(); ++si) {
        const auto& s = chart.series[si];
        os << "<polyline fill=\"none\" stroke=\"" << svg_detail::palette(si)
           << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : s.points)
            if (std::isfinite(x) && std::isfinite(y)) os << fmt(px(x)) << "," << fmt(py(y)) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << ml + pw - 6 << "\" y=\"" << mt + 14 + 14 * static_cast<double>(si)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\""
           << svg_detail::palette(si) << "\">" << s.label << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

struct HistogramChart {
    std::string title;
    std::string x_label;
    std::vector<std::string> labels;           // one per series
    std::vector<std::vector<double>> samples;  // one vector per series
    int bins = 30;
    int width = 720;
    int height = 420;
};

inline std::string render_histogram(const HistogramChart& chart) {
    using svg_detail::fmt;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : chart.samples)
        for (double v : s) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(std::isfinite(lo) && std::isfinite(hi))) {
        lo = 0.0;
        hi = 1.0;
    }
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    LineChart stairs;
    stairs.title = chart.title;
    stairs.x_label = chart.x_label;
    stairs.y_label = "density";
    stairs.width = chart.width;
    stairs.height = chart.height;
    const double bin_w = (hi - lo) / chart.bins;
    for (std::size_t si = 0; si < chart.samples.size(); ++si) {
        std::vector<double> counts(static_cast<std::size_t>(chart.bins), 0.0);
        for (double v : chart.samples[si]) {
            int b = static_cast<int>((v - lo) / bin_w);
            b = std::clamp(b, 0, chart.bins - 1);
            counts[static_cast<std::size_t>(b)] += 1.0;
        }
        const double n = std::max<std::size_t>(1, chart.samples[si].size());
        ChartSeries s;
        s.label = si < chart.labels.size() ? chart.labels[si] : "series";
        for (int b = 0; b < chart.bins; ++b) {
            const double density = counts[static_cast<std::size_t>(b)] / (n * bin_w);
            s.points.emplace_back(lo + b * bin_w, density);
            s.points.emplace_back(lo + (b + 1) * bin_w, density);
        }
        stairs.series.push_back(std::move(s));
    }
    return render_line_chart(stairs);
}

inline void save_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("save_text_file: cannot open " + path);
    os << content;
}

}  // namespace rflab
