#pragma once

#include "batchlab/rng.hpp"

#include <Eigen/Dense>

namespace batchlab {

// Vector-space stand-ins for flip-and-shift (weak) and RandAugment (strong).
// Noise levels are fractions of the per-dimension training std.
struct AugmentConfig {
    double weak_sigma = 0.05;
    double strong_sigma = 0.25;
    double strong_scale_lo = 0.7;
    double strong_scale_hi = 1.3;
    double strong_drop_prob = 0.1;

    void validate() const;
};

// x + eps, eps_j ~ N(0, (weak_sigma * feature_std_j)^2). One row per sample.
Eigen::MatrixXd weak_augment(const Eigen::MatrixXd& x, const AugmentConfig& cfg,
                             const Eigen::RowVectorXd& feature_std, Rng& rng);

// mask .* (s * (x + eps)) with a per-row scale s ~ U[lo, hi], per-entry
// eps ~ N(0, (strong_sigma * feature_std_j)^2) and mask ~ Bernoulli(1 - drop_prob).
Eigen::MatrixXd strong_augment(const Eigen::MatrixXd& x, const AugmentConfig& cfg,
                               const Eigen::RowVectorXd& feature_std, Rng& rng);

}  // namespace batchlab
