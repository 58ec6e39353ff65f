#pragma once

#include <filesystem>
#include <string>
#include <vector>

/// Static SVG figures and matching tab-separated tables built from finished
/// run directories.
namespace uaed::plot {

struct Figure {
    std::filesystem::path svg;
    std::filesystem::path table;
};

/// Writes worst_case, profile, policy_density and loss_variance figures to
/// `out_dir`. Throws Error on an empty run list and FormatError when a run
/// lacks its summary or metrics.
std::vector<Figure> plot_runs(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

/// Log-scale axis limits (powers of ten) covering [lo, hi] and spanning at
/// least `min_decades` decades.
std::pair<double, double> log_axis(double lo, double hi, int min_decades = 2);

} // namespace uaed::plot
