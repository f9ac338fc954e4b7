#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace batchlab {

// Output columns [offset, offset + width) belong to one task.
struct HeadSlice {
    std::size_t offset = 0;
    std::size_t width = 0;

    friend bool operator==(const HeadSlice&, const HeadSlice&) = default;
};

struct DenseLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out
};

// Dense ReLU network with one linear output layer split into task heads.
// `revision` increases on every in-place update so forward caches can be
// checked for staleness.
struct MlpParams {
    std::vector<std::size_t> layer_dims;
    std::vector<HeadSlice> heads;
    std::vector<DenseLayer> layers;
    std::uint64_t revision = 0;

    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
    std::size_t num_tasks() const { return heads.size(); }
    std::size_t num_parameters() const;

    // Bitwise equality of shapes and values; revision is ignored.
    bool same_values(const MlpParams& other) const;
};

// Gradients share the parameter layout.
using GradBuffer = MlpParams;

// Consecutive head slices for per-task class counts.
std::vector<HeadSlice> heads_for(std::span<const int> num_classes);

// He-uniform weights (limit sqrt(6 / fan_in)), zero biases. The last entry of
// `layer_dims` must equal the summed head widths.
MlpParams init_mlp(std::vector<std::size_t> layer_dims, std::vector<HeadSlice> heads,
                   std::uint64_t seed);

GradBuffer zeros_like(const MlpParams& params);

struct ForwardCache {
    const MlpParams* params = nullptr;
    std::uint64_t revision = 0;
    std::vector<Eigen::MatrixXd> inputs;  // input of each layer, rows = samples
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each hidden layer
    Eigen::MatrixXd logits;               // rows = samples, cols = output_dim
};

// Rows of `x` are samples. Throws ConfigError on a width mismatch.
ForwardCache forward(const MlpParams& params, const Eigen::MatrixXd& x);

// Exact gradient of a loss with dL/dlogits = `dlogits`. Throws ConfigError
// when the cache was produced by different or since-modified parameters.
GradBuffer backward(const MlpParams& params, const ForwardCache& cache,
                    const Eigen::MatrixXd& dlogits);

// Row-wise max-subtracted softmax.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

struct XentResult {
    double loss = 0.0;
    Eigen::MatrixXd grad;        // dloss/dlogits
    Eigen::VectorXd per_row_ce;  // unweighted cross-entropy per row
};

// loss = sum_i weights_i * CE(logits_i, targets_i). Rows with zero weight still
// report their CE in per_row_ce but contribute nothing to loss or gradient.
XentResult softmax_xent(const Eigen::MatrixXd& logits, std::span<const int> targets,
                        std::span<const double> weights);

struct Prediction {
    std::vector<int> classes;
    std::vector<double> confidences;
};

// Argmax with lowest-index tie-break, confidence = max softmax probability.
Prediction predict_from_logits(const Eigen::MatrixXd& task_logits);
Prediction predict(const MlpParams& params, const Eigen::MatrixXd& x, std::size_t task);

// Columns of the task's head.
inline Eigen::MatrixXd head_logits(const Eigen::MatrixXd& logits, const HeadSlice& head) {
    return logits.middleCols(static_cast<Eigen::Index>(head.offset),
                             static_cast<Eigen::Index>(head.width));
}

struct EmaParams {
    MlpParams shadow;
    double decay = 0.999;
};

EmaParams make_ema(const MlpParams& params, double decay);

// shadow <- decay * shadow + (1 - decay) * params
void ema_update(EmaParams& ema, const MlpParams& params);

// Applies fn(a_tensor, b_tensor, is_weight) to each matching pair of tensors.
template <typename A, typename B, typename Fn>
void zip_tensors(A& a, B& b, Fn&& fn) {
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        fn(a.layers[l].weight, b.layers[l].weight, true);
        fn(a.layers[l].bias, b.layers[l].bias, false);
    }
}

// Shapes and head slices agree.
bool same_shape(const MlpParams& a, const MlpParams& b);

}  // namespace batchlab
