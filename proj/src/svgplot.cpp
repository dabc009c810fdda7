#include "evr/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "evr/errors.hpp"

namespace evr {
namespace {

constexpr int kW = 720, kH = 420;
constexpr int kLeft = 64, kRight = 24, kTop = 40, kBottom = 48;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteN = 8;

std::string num(double v) {
    if (!std::isfinite(v)) return "0";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

struct Range {
    double lo = 0, hi = 1;
    void widen(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
};

// round the axis span outwards to a 1/2/5 grid so labels stay short
std::vector<double> nice_ticks(double lo, double hi, int target) {
    if (hi <= lo) hi = lo + 1;
    double raw = (hi - lo) / std::max(1, target);
    double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (mag * m >= raw) {
            step = mag * m;
            break;
        }
    }
    std::vector<double> ticks;
    double t0 = std::ceil(lo / step) * step;
    for (double t = t0; t <= hi + step * 1e-9; t += step) {
        double v = std::abs(t) < step * 1e-9 ? 0.0 : t;
        ticks.push_back(v);
        if (ticks.size() > 20) break;
    }
    return ticks;
}

std::ofstream open_svg(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
        << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
    out << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
    return out;
}

void title_and_axes(std::ofstream& out, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel) {
    out << "<text x=\"" << kW / 2 << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\""
        << " text-anchor=\"middle\">" << xml_escape(title) << "</text>\n";
    out << "<text x=\"" << (kLeft + (kW - kLeft - kRight) / 2) << "\" y=\"" << (kH - 10)
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">"
        << xml_escape(xlabel) << "</text>\n";
    out << "<text x=\"16\" y=\"" << (kTop + (kH - kTop - kBottom) / 2)
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\""
        << " transform=\"rotate(-90 16 " << (kTop + (kH - kTop - kBottom) / 2) << ")\">"
        << xml_escape(ylabel) << "</text>\n";
    out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << (kW - kLeft - kRight)
        << "\" height=\"" << (kH - kTop - kBottom)
        << "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n";
}

} // namespace

void write_line_svg(const std::string& path, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<Series>& series) {
    Range rx, ry;
    bool any = false;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw ValidationError("series " + s.label + ": x/y length mismatch");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!any) {
                rx.lo = rx.hi = s.x[i];
                ry.lo = ry.hi = s.y[i];
                any = true;
            }
            rx.widen(s.x[i]);
            ry.widen(s.y[i]);
        }
    }
    if (!any) {
        rx = {0, 1};
        ry = {0, 1};
    }
    if (ry.hi - ry.lo < 1e-12) {
        ry.lo -= 0.5;
        ry.hi += 0.5;
    }
    if (rx.hi - rx.lo < 1e-12) rx.hi = rx.lo + 1;

    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - rx.lo) / (rx.hi - rx.lo) * pw; };
    auto py = [&](double y) { return kTop + ph - (y - ry.lo) / (ry.hi - ry.lo) * ph; };

    std::ofstream out = open_svg(path);
    for (double t : nice_ticks(ry.lo, ry.hi, 6)) {
        double y = py(t);
        out << "<line x1=\"" << kLeft << "\" y1=\"" << num(y) << "\" x2=\"" << (kW - kRight)
            << "\" y2=\"" << num(y) << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << (kLeft - 6) << "\" y=\"" << num(y + 4)
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << num(t)
            << "</text>\n";
    }
    for (double t : nice_ticks(rx.lo, rx.hi, 8)) {
        double x = px(t);
        out << "<line x1=\"" << num(x) << "\" y1=\"" << kTop << "\" x2=\"" << num(x) << "\" y2=\""
            << (kH - kBottom) << "\" stroke=\"#eeeeee\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << num(x) << "\" y=\"" << (kH - kBottom + 16)
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << num(t)
            << "</text>\n";
    }
    title_and_axes(out, title, xlabel, ylabel);

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % kPaletteN];
        if (!s.x.empty()) {
            out << "<polyline fill=\"none\" stroke=\"" << color
                << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (i) out << ' ';
                out << num(px(s.x[i])) << ',' << num(py(s.y[i]));
            }
            out << "\"/>\n";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                out << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i]))
                    << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
        }
        double ly = kTop + 14 + 16.0 * double(si);
        out << "<line x1=\"" << (kLeft + 10) << "\" y1=\"" << num(ly - 4) << "\" x2=\""
            << (kLeft + 34) << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << (kLeft + 40) << "\" y=\"" << num(ly)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(s.label)
            << "</text>\n";
    }
    out << "</svg>\n";
}

void write_bars_svg(const std::string& path, const std::string& title,
                    const std::vector<std::string>& group_labels,
                    const std::vector<std::string>& bar_labels,
                    const std::vector<std::vector<double>>& values) {
    if (values.size() != group_labels.size())
        throw ValidationError("bar chart: values/groups mismatch");
    double vmax = 0;
    for (const auto& row : values) {
        if (row.size() != bar_labels.size())
            throw ValidationError("bar chart: row width mismatch");
        for (double v : row) vmax = std::max(vmax, v);
    }
    if (vmax <= 0) vmax = 1;

    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    const std::size_t ng = std::max<std::size_t>(1, group_labels.size());
    const std::size_t nb = std::max<std::size_t>(1, bar_labels.size());
    const double group_w = pw / double(ng);
    const double bar_w = group_w * 0.8 / double(nb);

    std::ofstream out = open_svg(path);
    for (double t : nice_ticks(0, vmax, 6)) {
        double y = kTop + ph - t / vmax * ph;
        out << "<line x1=\"" << kLeft << "\" y1=\"" << num(y) << "\" x2=\"" << (kW - kRight)
            << "\" y2=\"" << num(y) << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << (kLeft - 6) << "\" y=\"" << num(y + 4)
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << num(t)
            << "</text>\n";
    }
    title_and_axes(out, title, "", "");

    for (std::size_t g = 0; g < group_labels.size(); ++g) {
        double gx = kLeft + group_w * double(g);
        for (std::size_t b = 0; b < bar_labels.size(); ++b) {
            double v = values[g][b];
            double h = v / vmax * ph;
            double x = gx + group_w * 0.1 + bar_w * double(b);
            out << "<rect x=\"" << num(x) << "\" y=\"" << num(kTop + ph - h) << "\" width=\""
                << num(bar_w * 0.9) << "\" height=\"" << num(h) << "\" fill=\""
                << kPalette[b % kPaletteN] << "\"/>\n";
        }
        out << "<text x=\"" << num(gx + group_w / 2) << "\" y=\"" << (kH - kBottom + 16)
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">"
            << xml_escape(group_labels[g]) << "</text>\n";
    }
    for (std::size_t b = 0; b < bar_labels.size(); ++b) {
        double ly = kTop + 14 + 16.0 * double(b);
        out << "<rect x=\"" << (kLeft + 10) << "\" y=\"" << num(ly - 10)
            << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[b % kPaletteN] << "\"/>\n";
        out << "<text x=\"" << (kLeft + 26) << "\" y=\"" << num(ly)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(bar_labels[b])
            << "</text>\n";
    }
    out << "</svg>\n";
}

} // namespace evr
