#pragma once

#include "batchlab/metrics.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace batchlab {

enum class LineStyle { solid, dashed };

struct PlotSeries {
    std::string label;
    LineStyle style = LineStyle::solid;
    std::vector<MetricsRow> rows;
};

// One figure: two stacked charts sharing the epoch axis.
struct PanelSpec {
    std::string file;  // e.g. "panel_a_error.svg"
    std::string title;
    std::string top_column;
    std::string bottom_column;
    bool log_scale = false;
};

// The four panels: errors, losses, confidence/usage, privileged correctness.
std::vector<PanelSpec> default_panels(bool log_loss);

// Renders one panel as an SVG document (800x500 viewBox).
std::string render_panel(const PanelSpec& panel, const std::vector<PlotSeries>& series);

// Loads `run_dir/metrics.csv`; an empty file or a header-only file raises SchemaError.
// The style is dashed when the run's config.json uses the implicit sampler.
PlotSeries load_series(const std::filesystem::path& run_dir, const std::string& label = {});

// Manifest: {"runs": [{"dir": "...", "label": "...", "style": "solid|dashed"}]},
// with dirs relative to the manifest. label and style are optional.
std::vector<PlotSeries> load_manifest(const std::filesystem::path& manifest);

// Writes one SVG per panel into `out_dir`; returns the written paths.
std::vector<std::filesystem::path> export_plots(const std::vector<PlotSeries>& series,
                                                const std::filesystem::path& out_dir,
                                                bool log_loss = false);

}  // namespace batchlab
