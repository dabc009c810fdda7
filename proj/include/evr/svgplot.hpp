#pragma once
#include <string>
#include <vector>

namespace evr {

// Minimal deterministic SVG charts for report artifacts. Output depends only
// on the inputs (fixed palette, fixed formatting), so rendered reports can be
// diffed byte-for-byte across runs.

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y; // same length as x
};

void write_line_svg(const std::string& path, const std::string& title,
                    const std::string& xlabel, const std::string& ylabel,
                    const std::vector<Series>& series);

// One group per entry of `group_labels`, one bar per entry of `bar_labels`;
// values[g][b]. Used for per-step action histograms.
void write_bars_svg(const std::string& path, const std::string& title,
                    const std::vector<std::string>& group_labels,
                    const std::vector<std::string>& bar_labels,
                    const std::vector<std::vector<double>>& values);

} // namespace evr
