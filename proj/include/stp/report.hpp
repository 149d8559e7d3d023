#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stp/fixedpoint.hpp"

// Output artifacts: RFC-4180 CSV (LF line endings, header mandatory), JSON
// with stable key order, and self-contained SVG polyline plots. All floats go
// through to_chars so bytes are reproducible across runs and worker counts.

namespace stp {

using ordered_json = nlohmann::ordered_json;

inline std::string fmt_float(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

inline std::string csv_escape(const std::string& cell) {
    if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

class CsvWriter {
  public:
    explicit CsvWriter(std::vector<std::string> header) : width_(header.size()) {
        append_row(header);
    }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != width_) throw std::logic_error("csv row width mismatch");
        append_row(cells);
    }

    const std::string& str() const { return text_; }

  private:
    void append_row(const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) text_ += ',';
            text_ += csv_escape(cells[i]);
        }
        text_ += '\n';
    }

    size_t width_;
    std::string text_;
};

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

// Minimal polyline chart; enough for tail fractions, log-law fits, and
// discrepancy profiles.
inline std::string svg_line_plot(const std::string& title, const std::string& xlabel,
                                 const std::string& ylabel,
                                 const std::vector<PlotSeries>& series) {
    const double W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double xpad = (xmax - xmin) * 0.05, ypad = (ymax - ymin) * 0.08;
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
           "viewBox=\"0 0 640 420\">\n";
    svg += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"15\">" + title + "</text>\n";
    // axes
    svg += "<line x1=\"" + fmt_float(ml) + "\" y1=\"" + fmt_float(H - mb) + "\" x2=\"" +
           fmt_float(W - mr) + "\" y2=\"" + fmt_float(H - mb) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt_float(ml) + "\" y1=\"" + fmt_float(mt) + "\" x2=\"" +
           fmt_float(ml) + "\" y2=\"" + fmt_float(H - mb) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        svg += "<text x=\"" + fmt_float(px(fx)) + "\" y=\"" + fmt_float(H - mb + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               fmt_float(fx) + "</text>\n";
        svg += "<text x=\"" + fmt_float(ml - 8) + "\" y=\"" + fmt_float(py(fy) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               fmt_float(fy) + "</text>\n";
    }
    svg += "<text x=\"" + fmt_float((ml + W - mr) / 2) + "\" y=\"" + fmt_float(H - 12) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + xlabel +
           "</text>\n";
    svg += "<text x=\"16\" y=\"" + fmt_float((mt + H - mb) / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
           "transform=\"rotate(-90 16 " + fmt_float((mt + H - mb) / 2) + ")\">" + ylabel +
           "</text>\n";
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        if (s.points.empty()) continue;
        std::string pts;
        for (const auto& [x, y] : s.points)
            pts += fmt_float(px(x)) + "," + fmt_float(py(y)) + " ";
        svg += std::string("<polyline fill=\"none\" stroke=\"") + colors[si % 5] +
               "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        svg += std::string("<text x=\"") + fmt_float(W - mr - 6) + "\" y=\"" +
               fmt_float(mt + 16 * static_cast<double>(si + 1)) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" +
               colors[si % 5] + "\">" + s.name + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace stp
