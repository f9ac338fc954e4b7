#include "batchlab/augment.hpp"

#include "batchlab/error.hpp"

#include <cmath>

namespace batchlab {

void AugmentConfig::validate() const {
    if (!(weak_sigma >= 0.0 && weak_sigma < strong_sigma))
        throw ConfigError("augment: need 0 <= weak_sigma < strong_sigma");
    if (!(strong_scale_lo > 0.0 && strong_scale_lo <= strong_scale_hi))
        throw ConfigError("augment: need 0 < strong_scale_lo <= strong_scale_hi");
    if (!(strong_drop_prob >= 0.0 && strong_drop_prob < 1.0))
        throw ConfigError("augment: strong_drop_prob must lie in [0, 1)");
}

Eigen::MatrixXd weak_augment(const Eigen::MatrixXd& x, const AugmentConfig& cfg,
                             const Eigen::RowVectorXd& feature_std, Rng& rng) {
    if (feature_std.size() != x.cols()) throw ConfigError("feature_std width mismatch");
    Eigen::MatrixXd out = x;
    if (cfg.weak_sigma == 0.0) return out;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j)
            out(i, j) += cfg.weak_sigma * feature_std(j) * rng.normal();
    return out;
}

Eigen::MatrixXd strong_augment(const Eigen::MatrixXd& x, const AugmentConfig& cfg,
                               const Eigen::RowVectorXd& feature_std, Rng& rng) {
    if (feature_std.size() != x.cols()) throw ConfigError("feature_std width mismatch");
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double scale = rng.uniform(cfg.strong_scale_lo, cfg.strong_scale_hi);
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double noisy = x(i, j) + cfg.strong_sigma * feature_std(j) * rng.normal();
            const bool keep = !rng.bernoulli(cfg.strong_drop_prob);
            out(i, j) = keep ? scale * noisy : 0.0;
        }
    }
    return out;
}

}  // namespace batchlab
