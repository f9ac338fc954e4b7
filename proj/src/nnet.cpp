#include "batchlab/nnet.hpp"

#include "batchlab/error.hpp"
#include "batchlab/rng.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstring>

namespace batchlab {

namespace {

template <typename Derived>
bool bitwise_equal(const Eigen::DenseBase<Derived>& a, const Eigen::DenseBase<Derived>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double x = a(i, j);
            const double y = b(i, j);
            if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
        }
    return true;
}

}  // namespace

std::size_t MlpParams::num_parameters() const {
    std::size_t total = 0;
    for (const auto& layer : layers)
        total += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    return total;
}

bool MlpParams::same_values(const MlpParams& other) const {
    if (!same_shape(*this, other)) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (!bitwise_equal(layers[l].weight, other.layers[l].weight)) return false;
        if (!bitwise_equal(layers[l].bias, other.layers[l].bias)) return false;
    }
    return true;
}

bool same_shape(const MlpParams& a, const MlpParams& b) {
    if (a.layer_dims != b.layer_dims || a.heads != b.heads || a.layers.size() != b.layers.size())
        return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (a.layers[l].weight.rows() != b.layers[l].weight.rows() ||
            a.layers[l].weight.cols() != b.layers[l].weight.cols() ||
            a.layers[l].bias.size() != b.layers[l].bias.size())
            return false;
    }
    return true;
}

std::vector<HeadSlice> heads_for(std::span<const int> num_classes) {
    std::vector<HeadSlice> heads;
    std::size_t offset = 0;
    for (int c : num_classes) {
        if (c < 2) throw ConfigError("every task head needs at least 2 classes");
        heads.push_back({offset, static_cast<std::size_t>(c)});
        offset += static_cast<std::size_t>(c);
    }
    return heads;
}

MlpParams init_mlp(std::vector<std::size_t> layer_dims, std::vector<HeadSlice> heads,
                   std::uint64_t seed) {
    if (layer_dims.size() < 2) throw ConfigError("layer_dims needs an input and an output width");
    for (std::size_t width : layer_dims)
        if (width == 0) throw ConfigError("layer widths must be positive");
    if (heads.empty()) throw ConfigError("at least one task head is required");
    std::size_t covered = 0;
    for (const auto& head : heads) {
        if (head.offset != covered || head.width == 0)
            throw ConfigError("head slices must be contiguous, disjoint and non-empty");
        covered += head.width;
    }
    if (covered != layer_dims.back())
        throw ConfigError(fmt::format("head slices cover {} outputs, network has {}", covered,
                                      layer_dims.back()));

    MlpParams params;
    params.layer_dims = std::move(layer_dims);
    params.heads = std::move(heads);
    Rng rng(derive_seed(seed, Stream::init));
    for (std::size_t l = 0; l + 1 < params.layer_dims.size(); ++l) {
        const auto fan_in = static_cast<Eigen::Index>(params.layer_dims[l]);
        const auto fan_out = static_cast<Eigen::Index>(params.layer_dims[l + 1]);
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        DenseLayer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
        for (Eigen::Index i = 0; i < fan_out; ++i)
            for (Eigen::Index j = 0; j < fan_in; ++j) layer.weight(i, j) = rng.uniform(-limit, limit);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

GradBuffer zeros_like(const MlpParams& params) {
    GradBuffer grads;
    grads.layer_dims = params.layer_dims;
    grads.heads = params.heads;
    for (const auto& layer : params.layers)
        grads.layers.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                                Eigen::VectorXd::Zero(layer.bias.size())});
    return grads;
}

ForwardCache forward(const MlpParams& params, const Eigen::MatrixXd& x) {
    if (static_cast<std::size_t>(x.cols()) != params.input_dim())
        throw ConfigError(fmt::format("input width {} does not match network input {}", x.cols(),
                                      params.input_dim()));
    ForwardCache cache;
    cache.params = &params;
    cache.revision = params.revision;
    Eigen::MatrixXd h = x;
    const std::size_t n_layers = params.layers.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& layer = params.layers[l];
        Eigen::MatrixXd z = h * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        cache.inputs.push_back(std::move(h));
        if (l + 1 < n_layers) {
            h = z.cwiseMax(0.0);
            cache.pre.push_back(std::move(z));
        } else {
            cache.logits = std::move(z);
        }
    }
    return cache;
}

GradBuffer backward(const MlpParams& params, const ForwardCache& cache,
                    const Eigen::MatrixXd& dlogits) {
    if (cache.params != &params || cache.revision != params.revision)
        throw ConfigError("stale forward cache: parameters changed since the forward pass");
    if (dlogits.rows() != cache.logits.rows() || dlogits.cols() != cache.logits.cols())
        throw ConfigError("upstream gradient shape does not match the logits");
    GradBuffer grads = zeros_like(params);
    Eigen::MatrixXd delta = dlogits;
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        grads.layers[l].weight.noalias() = delta.transpose() * cache.inputs[l];
        grads.layers[l].bias = delta.colwise().sum().transpose();
        if (l == 0) break;
        Eigen::MatrixXd upstream = delta * params.layers[l].weight;
        delta = upstream.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
    return grads;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd probs = logits.colwise() - logits.rowwise().maxCoeff();
    probs = probs.array().exp();
    probs.array().colwise() /= probs.rowwise().sum().array();
    return probs;
}

XentResult softmax_xent(const Eigen::MatrixXd& logits, std::span<const int> targets,
                        std::span<const double> weights) {
    const auto rows = logits.rows();
    const auto classes = logits.cols();
    if (static_cast<std::size_t>(rows) != targets.size() ||
        static_cast<std::size_t>(rows) != weights.size())
        throw ConfigError("targets and weights must have one entry per row");
    XentResult out;
    out.grad = Eigen::MatrixXd::Zero(rows, classes);
    out.per_row_ce = Eigen::VectorXd::Zero(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const int target = targets[static_cast<std::size_t>(i)];
        if (target < 0 || target >= classes)
            throw ConfigError(fmt::format("target {} outside [0, {})", target, classes));
        const double w = weights[static_cast<std::size_t>(i)];
        if (!(w >= 0.0)) throw ConfigError("row weights must be non-negative");
        const double m = logits.row(i).maxCoeff();
        double denom = 0.0;
        for (Eigen::Index c = 0; c < classes; ++c) denom += std::exp(logits(i, c) - m);
        const double log_denom = std::log(denom);
        const double ce = -(logits(i, target) - m - log_denom);
        out.per_row_ce(i) = ce;
        if (w == 0.0) continue;
        out.loss += w * ce;
        for (Eigen::Index c = 0; c < classes; ++c)
            out.grad(i, c) = w * std::exp(logits(i, c) - m - log_denom);
        out.grad(i, target) -= w;
    }
    return out;
}

Prediction predict_from_logits(const Eigen::MatrixXd& task_logits) {
    const Eigen::MatrixXd probs = softmax_rows(task_logits);
    Prediction out;
    out.classes.resize(static_cast<std::size_t>(probs.rows()));
    out.confidences.resize(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index best = 0;
        // Compare logits so exact ties resolve to the lowest index.
        for (Eigen::Index c = 1; c < task_logits.cols(); ++c)
            if (task_logits(i, c) > task_logits(i, best)) best = c;
        out.classes[static_cast<std::size_t>(i)] = static_cast<int>(best);
        out.confidences[static_cast<std::size_t>(i)] = probs(i, best);
    }
    return out;
}

Prediction predict(const MlpParams& params, const Eigen::MatrixXd& x, std::size_t task) {
    if (task >= params.num_tasks())
        throw ConfigError(fmt::format("task {} out of range ({} heads)", task, params.num_tasks()));
    const auto cache = forward(params, x);
    return predict_from_logits(head_logits(cache.logits, params.heads[task]));
}

EmaParams make_ema(const MlpParams& params, double decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("EMA decay must lie in [0, 1)");
    EmaParams ema{params, decay};
    ema.shadow.revision = 0;
    return ema;
}

void ema_update(EmaParams& ema, const MlpParams& params) {
    if (!same_shape(ema.shadow, params)) throw ConfigError("EMA shape does not match the model");
    const double keep = ema.decay;
    const double take = 1.0 - ema.decay;
    zip_tensors(ema.shadow, params, [&](auto& shadow, const auto& live, bool) {
        shadow = keep * shadow + take * live;
    });
    ++ema.shadow.revision;
}

}  // namespace batchlab
