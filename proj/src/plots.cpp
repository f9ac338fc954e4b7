#include "batchlab/plots.hpp"

#include "batchlab/config.hpp"
#include "batchlab/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>

namespace batchlab {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 500.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 780.0;

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::optional<double> column_value(const MetricsRow& r, std::string_view column) {
    if (column == "epoch") return r.epoch;
    if (column == "samples_seen") return static_cast<double>(r.samples_seen);
    if (column == "lr") return r.lr;
    if (column == "train_err_labeled") return r.train_err_labeled;
    if (column == "val_acc") return r.val_acc;
    if (column == "test_err") return r.test_err;
    if (column == "sup_loss") return r.sup_loss;
    if (column == "unsup_loss") return r.unsup_loss;
    if (column == "mean_confidence_unlabeled") return r.mean_confidence_unlabeled;
    if (column == "pseudo_label_ratio") return r.pseudo_label_ratio;
    if (column == "unlabeled_pred_acc") return r.unlabeled_pred_acc;
    if (column == "pseudo_label_acc") return r.pseudo_label_acc;
    throw SchemaError(fmt::format("unknown metrics column '{}'", column));
}

std::string escape(std::string_view s) {
    std::string out;
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

std::string fmt_tick(double v) { return fmt::format("{:.3g}", v); }

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    bool empty() const { return lo > hi; }
};

void render_chart(std::string& svg, const std::string& column, double top, double bottom, Range xr,
                  bool log_scale, const std::vector<PlotSeries>& series) {
    Range yr;
    for (const auto& s : series)
        for (const auto& row : s.rows)
            if (auto v = column_value(row, column); v && std::isfinite(*v) && (!log_scale || *v > 0.0))
                yr.add(log_scale ? std::log10(*v) : *v);
    if (yr.empty()) yr = Range{0.0, 1.0};
    if (yr.hi - yr.lo < 1e-12) {
        yr.lo -= 0.5;
        yr.hi += 0.5;
    }
    if (xr.hi - xr.lo < 1e-12) xr.hi = xr.lo + 1.0;

    auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * (kRight - kLeft); };
    auto py = [&](double y) { return bottom - (y - yr.lo) / (yr.hi - yr.lo) * (bottom - top); };

    svg += fmt::format(R"(<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>)"
                       "\n",
                       kLeft, top, kRight - kLeft, bottom - top);
    svg += fmt::format(R"svg(<text x="{}" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 {} {})">{}{}</text>)svg"
                       "\n",
                       16, (top + bottom) / 2, 16, (top + bottom) / 2, escape(column),
                       log_scale ? " (log)" : "");
    for (int i = 0; i <= 4; ++i) {
        const double y = yr.lo + (yr.hi - yr.lo) * i / 4.0;
        const double v = log_scale ? std::pow(10.0, y) : y;
        svg += fmt::format(R"(<line x1="{}" y1="{:.2f}" x2="{}" y2="{:.2f}" stroke="#ddd"/>)"
                           R"(<text x="{}" y="{:.2f}" font-size="10" text-anchor="end">{}</text>)"
                           "\n",
                           kLeft, py(y), kRight, py(y), kLeft - 4, py(y) + 3, fmt_tick(v));
        const double x = xr.lo + (xr.hi - xr.lo) * i / 4.0;
        svg += fmt::format(R"(<text x="{:.2f}" y="{}" font-size="10" text-anchor="middle">{}</text>)"
                           "\n",
                           px(x), bottom + 12, fmt_tick(x));
    }

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kPalette[k % kPalette.size()];
        const std::string dash = s.style == LineStyle::dashed ? R"( stroke-dasharray="6 4")" : "";
        // Undefined values split the line into separate polylines.
        std::string points;
        auto flush = [&] {
            if (!points.empty())
                svg += fmt::format(R"(<polyline fill="none" stroke="{}" stroke-width="1.5"{} points="{}"/>)"
                                   "\n",
                                   color, dash, points);
            points.clear();
        };
        for (const auto& row : s.rows) {
            const auto v = column_value(row, column);
            if (!v || !std::isfinite(*v) || (log_scale && *v <= 0.0)) {
                flush();
                continue;
            }
            const double y = log_scale ? std::log10(*v) : *v;
            if (!points.empty()) points += ' ';
            points += fmt::format("{:.2f},{:.2f}", px(row.epoch), py(y));
        }
        flush();
    }
}

}  // namespace

std::vector<PanelSpec> default_panels(bool log_loss) {
    return {
        {"panel_a_error.svg", "(a) labeled train error / test error", "train_err_labeled", "test_err", false},
        {"panel_b_loss.svg", "(b) supervised / unsupervised loss", "sup_loss", "unsup_loss", log_loss},
        {"panel_c_confidence.svg", "(c) mean confidence / pseudo-label ratio", "mean_confidence_unlabeled",
         "pseudo_label_ratio", false},
        {"panel_d_correctness.svg", "(d) correct unlabeled predictions / correct pseudo-labels",
         "unlabeled_pred_acc", "pseudo_label_acc", false},
    };
}

std::string render_panel(const PanelSpec& panel, const std::vector<PlotSeries>& series) {
    Range xr;
    for (const auto& s : series)
        for (const auto& row : s.rows) xr.add(row.epoch);
    if (xr.empty()) xr = Range{0.0, 1.0};

    std::string svg = fmt::format(
        R"(<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {} {}" width="{}" height="{}" font-family="sans-serif">)"
        "\n",
        kWidth, kHeight, kWidth, kHeight);
    svg += R"(<rect width="100%" height="100%" fill="white"/>)" "\n";
    svg += fmt::format(R"(<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>)" "\n",
                       kWidth / 2, escape(panel.title));
    render_chart(svg, panel.top_column, 40.0, 225.0, xr, panel.log_scale, series);
    render_chart(svg, panel.bottom_column, 260.0, 455.0, xr, panel.log_scale, series);
    svg += fmt::format(R"(<text x="{}" y="488" font-size="12" text-anchor="middle">epoch</text>)" "\n",
                       (kLeft + kRight) / 2);

    for (std::size_t k = 0; k < series.size(); ++k) {
        const double y = 52.0 + 14.0 * static_cast<double>(k);
        const std::string dash =
            series[k].style == LineStyle::dashed ? R"( stroke-dasharray="6 4")" : "";
        svg += fmt::format(R"(<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="1.5"{}/>)"
                           R"(<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>)"
                           "\n",
                           kRight - 30, y, kRight - 8, y, kPalette[k % kPalette.size()], dash,
                           kRight - 34, y + 3, escape(series[k].label));
    }
    svg += "</svg>\n";
    return svg;
}

PlotSeries load_series(const fs::path& run_dir, const std::string& label) {
    const fs::path csv = run_dir / "metrics.csv";
    if (!fs::exists(csv)) throw SchemaError(fmt::format("'{}' has no metrics.csv", run_dir.string()));
    PlotSeries s;
    s.rows = read_metrics_csv(csv);
    if (s.rows.empty()) throw SchemaError(fmt::format("'{}' contains no metrics rows", csv.string()));
    s.label = label.empty() ? run_dir.filename().string() : label;
    const fs::path cfg = run_dir / "config.json";
    if (fs::exists(cfg)) {
        const auto j = read_json_file(cfg);
        if (j.contains("sampler") && j["sampler"].value("mode", "") == "implicit") s.style = LineStyle::dashed;
    }
    return s;
}

std::vector<PlotSeries> load_manifest(const fs::path& manifest) {
    const auto j = read_json_file(manifest);
    if (!j.is_object() || !j.contains("runs") || !j["runs"].is_array() || j["runs"].empty())
        throw SchemaError(fmt::format("'{}': expected a non-empty \"runs\" array", manifest.string()));
    std::vector<PlotSeries> out;
    for (const auto& run : j["runs"]) {
        if (!run.is_object() || !run.contains("dir") || !run["dir"].is_string())
            throw SchemaError(fmt::format("'{}': every run needs a \"dir\"", manifest.string()));
        fs::path dir = run["dir"].get<std::string>();
        if (dir.is_relative()) dir = manifest.parent_path() / dir;
        PlotSeries s = load_series(dir, run.value("label", ""));
        if (run.contains("style")) {
            const std::string style = run["style"].get<std::string>();
            if (style == "solid")
                s.style = LineStyle::solid;
            else if (style == "dashed")
                s.style = LineStyle::dashed;
            else
                throw SchemaError(fmt::format("'{}': unknown style '{}'", manifest.string(), style));
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<fs::path> export_plots(const std::vector<PlotSeries>& series, const fs::path& out_dir,
                                   bool log_loss) {
    if (series.empty()) throw SchemaError("no runs to plot");
    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    for (const auto& panel : default_panels(log_loss)) {
        const fs::path path = out_dir / panel.file;
        std::ofstream out(path);
        if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
        out << render_panel(panel, series);
        written.push_back(path);
    }
    return written;
}

}  // namespace batchlab
