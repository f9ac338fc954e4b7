#include "batchlab/config.hpp"
#include "batchlab/error.hpp"
#include "batchlab/experiment.hpp"
#include "batchlab/plots.hpp"
#include "batchlab/rng.hpp"
#include "batchlab/sampler.hpp"
#include "batchlab/synthdata.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace batchlab;

namespace {

RunConfig config_from(const std::string& text) { return parse_run_config(nlohmann::json::parse(text)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Semi-supervised batch-sampling lab core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
    py::register_exception<SplitError>(m, "SplitError", PyExc_ValueError);
    py::register_exception<InfeasibleError>(m, "InfeasibleError", PyExc_RuntimeError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def(
        "generate",
        [](const std::string& kind, std::size_t n, double noise_sigma, std::vector<int> num_classes,
           std::uint64_t seed, std::vector<std::string> task_defs) {
            DatasetSpec spec;
            spec.kind = parse_dataset_kind(kind);
            spec.n = n;
            spec.noise_sigma = noise_sigma;
            spec.num_classes = std::move(num_classes);
            spec.seed = seed;
            spec.task_defs.clear();
            for (const auto& d : task_defs) spec.task_defs.push_back(parse_task_def(d));
            Dataset data = generate(spec);
            return py::make_tuple(data.features, data.labels);
        },
        py::arg("kind") = "moons", py::arg("n"), py::arg("noise_sigma") = 0.1,
        py::arg("num_classes") = std::vector<int>{2}, py::arg("seed") = 0,
        py::arg("task_defs") = std::vector<std::string>{"moon"},
        "Synthetic dataset: (features [n, 2], labels per task).");

    m.def(
        "implicit_epoch",
        [](std::vector<Index> ids, std::size_t batch_size, std::uint64_t seed) {
            Rng rng(seed);
            return implicit_epoch(ids, batch_size, rng);
        },
        py::arg("ids"), py::arg("batch_size"), py::arg("seed"),
        "One shuffled pass in batches; the trailing partial batch is dropped.");

    m.def(
        "explicit_stream",
        [](std::vector<Index> labeled, std::vector<Index> unlabeled, std::size_t batch_size,
           double labeled_fraction, std::uint64_t seed, std::size_t num_steps) {
            return explicit_stream(labeled, unlabeled, batch_size, labeled_fraction, seed, num_steps);
        },
        py::arg("labeled"), py::arg("unlabeled"), py::arg("batch_size"), py::arg("labeled_fraction"),
        py::arg("seed"), py::arg("num_steps"));

    m.def("labeled_per_batch", &labeled_per_batch, py::arg("labeled_fraction"), py::arg("batch_size"));

    m.def(
        "budget_samples",
        [](double epochs, std::uint64_t train_size, double multiplier) {
            return budget_samples_for(epochs, train_size, multiplier);
        },
        py::arg("epochs"), py::arg("train_size"), py::arg("multiplier") = 1.0);

    m.def(
        "unsupervised_loss",
        [](const Eigen::MatrixXd& logits, std::vector<int> pseudo_labels, std::vector<bool> keep,
           std::size_t u_count) {
            PseudoLabelBatch plb;
            plb.pseudo_labels = std::move(pseudo_labels);
            plb.confidences.assign(plb.pseudo_labels.size(), 1.0);
            plb.keep_mask.assign(keep.begin(), keep.end());
            const LossTerm t = unsupervised_loss(logits, plb, u_count);
            return py::make_tuple(t.loss, t.grad);
        },
        py::arg("logits"), py::arg("pseudo_labels"), py::arg("keep_mask"), py::arg("u_count"),
        "(sum of kept cross-entropy / u_count, gradient w.r.t. logits).");

    m.def(
        "normalize_config", [](const std::string& text) { return to_json(config_from(text)).dump(); },
        py::arg("config_json"), "Validates a run configuration and returns it with defaults filled in.");

    m.def(
        "run",
        [](const std::string& text, const std::filesystem::path& out_dir, std::size_t jobs) {
            const RunConfig cfg = config_from(text);
            ExperimentResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(cfg, out_dir, jobs);
            }
            return r.summary.dump();
        },
        py::arg("config_json"), py::arg("out_dir"), py::arg("jobs") = 1,
        "Trains every replicate and returns summary.json as text.");

    m.def(
        "audit_sampler",
        [](const std::string& text, std::optional<std::size_t> steps) {
            const AuditResult a = audit_sampler(config_from(text), steps);
            py::list rows;
            for (const auto& r : a.rows)
                rows.append(py::make_tuple(r.sample_id, r.configuration, r.exposure_count, r.expected_exposure));
            py::object ratio = a.labeled_unlabeled_ratio ? py::object(py::float_(*a.labeled_unlabeled_ratio))
                                                         : py::object(py::none());
            return py::make_tuple(rows, ratio);
        },
        py::arg("config_json"), py::arg("steps") = py::none(),
        "([(sample_id, configuration, exposure_count, expected_exposure)], labeled:unlabeled ratio).");

    m.def(
        "read_metrics",
        [](const std::filesystem::path& path) {
            py::list out;
            for (const auto& r : read_metrics_csv(path)) {
                py::dict d;
                d["epoch"] = r.epoch;
                d["samples_seen"] = r.samples_seen;
                d["lr"] = r.lr;
                d["train_err_labeled"] = r.train_err_labeled;
                d["val_acc"] = r.val_acc;
                d["test_err"] = r.test_err;
                d["sup_loss"] = r.sup_loss;
                d["unsup_loss"] = r.unsup_loss;
                d["mean_confidence_unlabeled"] = r.mean_confidence_unlabeled;
                d["pseudo_label_ratio"] = r.pseudo_label_ratio;
                d["unlabeled_pred_acc"] = r.unlabeled_pred_acc;
                d["pseudo_label_acc"] = r.pseudo_label_acc;
                out.append(d);
            }
            return out;
        },
        py::arg("path"));

    m.def(
        "export_plots",
        [](const std::filesystem::path& run_dir, const std::filesystem::path& out_dir, bool log_loss) {
            return export_plots({load_series(run_dir)}, out_dir, log_loss);
        },
        py::arg("run_dir"), py::arg("out_dir"), py::arg("log_loss") = false);
}
