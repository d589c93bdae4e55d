#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "magicstyle/errors.hpp"
#include "magicstyle/schedule.hpp"
#include "magicstyle/toy_unet.hpp"

namespace magicstyle {

// Mean squared noise-prediction error for one (x0, t, eps) draw:
//   || eps - eps_theta(sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, t, c) ||^2 / n
inline double denoising_loss(const ToyUNet& net, const Latent& x0, Timestep t, const Latent& eps,
                             const Conditioning& cond) {
    const Latent x_t = marginal_noise(x0, t, eps, net.schedule());
    const Latent pred = net.predict_noise(x_t, t, cond);
    double se = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) se += (pred[i] - eps[i]) * (pred[i] - eps[i]);
    return se / static_cast<double>(pred.size());
}

struct TrainOptions {
    std::size_t iterations = 50;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
};

// SGD on the output convolution only, everything upstream frozen. Enough to
// fit the toy to a small synthetic set for demos; acceptance never needs it.
// Returns the loss before each update.
inline std::vector<double> train_output_head(ToyUNet& net, const std::vector<Latent>& data, const TrainOptions& opt) {
    if (data.empty()) throw ParameterError("training needs at least one sample");
    if (!(opt.learning_rate > 0.0)) throw ParameterError("learning rate must be positive");
    const LatentShape s = net.latent_shape();
    const Conditioning cond = net.null_conditioning();
    const double gain = net.config().residual_gain;
    const toy::Grid grid{s.height, s.width};
    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_int_distribution<Timestep> step(1, net.schedule().num_train_steps());
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<double> history;
    for (std::size_t it = 0; it < opt.iterations; ++it) {
        const Latent& x0 = data[pick(rng)];
        require_same_shape(x0, Latent(s), "train_output_head");
        const Timestep t = step(rng);
        Latent eps(s);
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = normal(rng);

        const Latent x_t = marginal_noise(x0, t, eps, net.schedule());
        const FeatureMap features = net.output_features(x_t, t, cond);
        const FeatureMap cols = net.output_conv().im2col(features, grid);
        const Latent pred = axpby(1.0, net.prior_noise(x_t, t), gain, net.features_to_latent(features));
        FeatureMap err(static_cast<Eigen::Index>(s.plane()), static_cast<Eigen::Index>(s.channels));
        double se = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) {
            for (std::size_t p = 0; p < s.plane(); ++p) {
                const double d = pred[c * s.plane() + p] - eps[c * s.plane() + p];
                err(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = d;
                se += d * d;
            }
        }
        const double n = static_cast<double>(s.size());
        history.push_back(se / n);
        FeatureMap& w = net.output_conv().weight;
        w -= opt.learning_rate * (2.0 * gain / n) * (cols.transpose() * err);
        // Keep weights f32-representable so save/load stays exact.
        w = w.cast<float>().cast<double>();
    }
    return history;
}

}  // namespace magicstyle
