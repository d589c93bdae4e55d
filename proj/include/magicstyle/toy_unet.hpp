#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "magicstyle/attention.hpp"
#include "magicstyle/denoiser.hpp"
#include "magicstyle/errors.hpp"
#include "magicstyle/feature_cache.hpp"
#include "magicstyle/latent.hpp"
#include "magicstyle/schedule.hpp"

namespace magicstyle {

struct ToyUNetConfig {
    std::size_t latent_channels = 192;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t base_width = 32;
    std::size_t levels = 2;
    std::size_t down_attention = 1;  // self-attention blocks per encoder level
    std::size_t up_attention = 1;    // self-attention blocks per decoder level
    std::size_t heads = 2;
    std::size_t context_tokens = 4;
    std::size_t context_dim = 16;
    std::uint64_t seed = 0;
    // Preconditioning: eps = eps_prior(x, t) + residual_gain * F(c_in * (x - sqrt(abar) * data_mean), t),
    // where eps_prior is the exact noise predictor for i.i.d. N(data_mean, data_std^2) latents.
    double data_mean = 0.5;
    double data_std = 0.5;
    double residual_gain = 0.2;
    // Self-attention Q/K init: both scaled by qk_gain, and W_K = rho * W_Q + sqrt(1 - rho^2) * noise,
    // so rho > 0 makes attention favour tokens with similar features.
    double qk_gain = 3.0;
    double qk_correlation = 1.0;
    ScheduleSpec schedule;

    std::size_t attention_site_count() const { return levels * (down_attention + up_attention); }

    void validate() const {
        if (levels == 0) throw ConfigError("toy unet needs at least one resolution level");
        if (attention_site_count() == 0) throw ConfigError("toy unet config has no self-attention sites");
        if (!(data_std > 0.0)) throw ConfigError("data_std must be positive");
        if (!(qk_correlation >= 0.0 && qk_correlation <= 1.0)) throw ConfigError("qk_correlation must be in [0, 1]");
        if (latent_channels == 0 || base_width == 0 || context_tokens == 0 || context_dim == 0) {
            throw ConfigError("toy unet dimensions must be positive");
        }
        if (heads == 0 || base_width % heads != 0) {
            throw ConfigError("base_width " + std::to_string(base_width) + " not divisible by " +
                              std::to_string(heads) + " heads");
        }
        const std::size_t factor = std::size_t{1} << (levels - 1);
        if (height == 0 || width == 0 || height % factor != 0 || width % factor != 0) {
            throw ConfigError("latent " + std::to_string(height) + "x" + std::to_string(width) +
                              " not divisible by 2^(levels-1) = " + std::to_string(factor));
        }
    }
};

namespace toy {

inline Eigen::ArrayXXd silu(const Eigen::ArrayXXd& x) { return x / (1.0 + (-x).exp()); }

inline FeatureMap silu(const FeatureMap& x) {
    FeatureMap out = x;
    out.array() = x.array() / (1.0 + (-x.array()).exp());
    return out;
}

// Spatial grid carried as (height*width) tokens x channels.
struct Grid {
    std::size_t height;
    std::size_t width;
};

// 3x3 (or 1x1) same-padded convolution over a token-major grid.
struct Conv2d {
    std::size_t in = 0, out = 0, kernel = 3;
    FeatureMap weight;            // (in*kernel*kernel) x out
    Eigen::RowVectorXd bias;      // out

    FeatureMap im2col(const FeatureMap& x, Grid g) const {
        const auto r = static_cast<long>(kernel / 2);
        FeatureMap cols = FeatureMap::Zero(static_cast<Eigen::Index>(g.height * g.width),
                                           static_cast<Eigen::Index>(in * kernel * kernel));
        for (long y = 0; y < static_cast<long>(g.height); ++y) {
            for (long xx = 0; xx < static_cast<long>(g.width); ++xx) {
                const auto row = static_cast<Eigen::Index>(y * static_cast<long>(g.width) + xx);
                for (long ky = -r; ky <= r; ++ky) {
                    for (long kx = -r; kx <= r; ++kx) {
                        const long sy = y + ky, sx = xx + kx;
                        if (sy < 0 || sx < 0 || sy >= static_cast<long>(g.height) || sx >= static_cast<long>(g.width))
                            continue;
                        const auto tap = static_cast<Eigen::Index>(((ky + r) * static_cast<long>(kernel) + (kx + r)) *
                                                                   static_cast<long>(in));
                        cols.row(row).segment(tap, static_cast<Eigen::Index>(in)) =
                            x.row(static_cast<Eigen::Index>(sy * static_cast<long>(g.width) + sx));
                    }
                }
            }
        }
        return cols;
    }

    FeatureMap forward(const FeatureMap& x, Grid g) const {
        FeatureMap y = kernel == 1 ? FeatureMap(x * weight) : FeatureMap(im2col(x, g) * weight);
        y.rowwise() += bias;
        return y;
    }
};

struct ResBlock {
    Conv2d conv1, conv2;
    FeatureMap time_proj;  // width x width

    FeatureMap forward(const FeatureMap& x, Grid g, const Eigen::RowVectorXd& temb) const {
        FeatureMap h = conv1.forward(silu(layer_norm_rows(x, 1e-5)), g);
        h.rowwise() += temb * time_proj;
        h = conv2.forward(silu(layer_norm_rows(h, 1e-5)), g);
        return x + h;
    }
};

struct CrossAttention {
    FeatureMap w_q, w_k, w_v;  // width x width, context_dim x width, context_dim x width
    std::size_t heads = 1;

    FeatureMap forward(const FeatureMap& x, const FeatureMap& context) const {
        const HeadTensor q = split_heads(layer_norm_rows(x, 1e-5) * w_q, heads);
        const HeadTensor k = split_heads(context * w_k, heads);
        const HeadTensor v = split_heads(context * w_v, heads);
        return scaled_dot_attention(q, k, v) + x;
    }
};

struct SelfAttentionBlock {
    SiteId site;
    ProjectionWeights weights;
    CrossAttention cross;
};

struct Level {
    ResBlock down_res;
    std::vector<SelfAttentionBlock> down_attn;
    ResBlock up_res;
    std::vector<SelfAttentionBlock> up_attn;
};

inline FeatureMap avg_pool2(const FeatureMap& x, Grid g) {
    const std::size_t h = g.height / 2, w = g.width / 2;
    FeatureMap out(static_cast<Eigen::Index>(h * w), x.cols());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
            auto at = [&](std::size_t yy, std::size_t xc) { return x.row(static_cast<Eigen::Index>(yy * g.width + xc)); };
            out.row(static_cast<Eigen::Index>(y * w + xx)) =
                0.25 * (at(2 * y, 2 * xx) + at(2 * y, 2 * xx + 1) + at(2 * y + 1, 2 * xx) + at(2 * y + 1, 2 * xx + 1));
        }
    }
    return out;
}

inline FeatureMap upsample_nearest2(const FeatureMap& x, Grid g) {
    const std::size_t h = g.height * 2, w = g.width * 2;
    FeatureMap out(static_cast<Eigen::Index>(h * w), x.cols());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
            out.row(static_cast<Eigen::Index>(y * w + xx)) = x.row(static_cast<Eigen::Index>((y / 2) * g.width + xx / 2));
        }
    }
    return out;
}

inline Eigen::RowVectorXd sinusoidal_embedding(double t, std::size_t dim) {
    Eigen::RowVectorXd e(static_cast<Eigen::Index>(dim));
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e(static_cast<Eigen::Index>(i)) = std::sin(t * freq);
        e(static_cast<Eigen::Index>(i + half)) = std::cos(t * freq);
    }
    if (dim % 2 == 1) e(static_cast<Eigen::Index>(dim - 1)) = 0.0;
    return e;
}

// Weights are drawn in float precision so they persist losslessly as f32.
class WeightInit {
public:
    explicit WeightInit(std::uint64_t seed) : rng_(seed) {}

    FeatureMap matrix(std::size_t rows, std::size_t cols, double stddev) {
        FeatureMap m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(normal_(rng_) * stddev);
        return m;
    }

    Conv2d conv(std::size_t in, std::size_t out, std::size_t kernel, double gain = 1.0) {
        Conv2d c{in, out, kernel, {}, {}};
        const std::size_t fan_in = in * kernel * kernel;
        c.weight = matrix(fan_in, out, gain / std::sqrt(static_cast<double>(fan_in)));
        c.bias = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(out));
        return c;
    }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace toy

// Desk-scale latent U-Net. Each level runs a residual block followed by
// (self-attention, cross-attention) pairs, on both the downsampling and the
// upsampling path. Weights are fixed by the seed; no training is needed.
class ToyUNet final : public DenoiserBackend {
public:
    explicit ToyUNet(ToyUNetConfig config) : config_(config), schedule_(config.schedule.build()) {
        config_.validate();
        build();
    }

    const ToyUNetConfig& config() const { return config_; }

    LatentShape latent_shape() const override {
        return {config_.latent_channels, config_.height, config_.width};
    }

    std::pair<std::size_t, std::size_t> conditioning_shape() const override {
        return {config_.context_tokens, config_.context_dim};
    }

    std::vector<SiteId> attention_sites() const override {
        std::vector<SiteId> sites;
        for (const auto& lvl : levels_)
            for (const auto& b : lvl.down_attn) sites.push_back(b.site);
        for (auto it = levels_.rbegin(); it != levels_.rend(); ++it)
            for (const auto& b : it->up_attn) sites.push_back(b.site);
        return sites;
    }

    std::vector<SiteId> decoder_attention_sites() const override {
        std::vector<SiteId> sites;
        for (auto it = levels_.rbegin(); it != levels_.rend(); ++it)
            for (const auto& b : it->up_attn) sites.push_back(b.site);
        return sites.empty() ? attention_sites() : sites;
    }

    const NoiseSchedule& schedule() const { return schedule_; }

    // Closed-form noise prediction under the Gaussian data prior.
    Latent prior_noise(const Latent& x_t, Timestep t) const {
        const double ab = schedule_.alpha_bar(t);
        const double var = ab * config_.data_std * config_.data_std + (1.0 - ab);
        const double shift = std::sqrt(ab) * config_.data_mean;
        const double k = std::sqrt(1.0 - ab) / var;
        Latent out(x_t.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * (x_t[i] - shift);
        return out;
    }

    // Activations entering the output convolution (after norm + SiLU).
    FeatureMap output_features(const Latent& x_t, Timestep t, const Conditioning& cond, const HookMap& hooks = {},
                               AttentionRecords* records = nullptr) const {
        const LatentShape s = latent_shape();
        const double ab = schedule_.alpha_bar(t);
        const double c_in = 1.0 / std::sqrt(ab * config_.data_std * config_.data_std + (1.0 - ab));
        const double shift = std::sqrt(ab) * config_.data_mean;
        FeatureMap x(static_cast<Eigen::Index>(s.plane()), static_cast<Eigen::Index>(s.channels));
        for (std::size_t c = 0; c < s.channels; ++c)
            for (std::size_t p = 0; p < s.plane(); ++p)
                x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = c_in * (x_t[c * s.plane() + p] - shift);

        const Eigen::RowVectorXd temb =
            toy::silu(Eigen::ArrayXXd((toy::sinusoidal_embedding(static_cast<double>(t), config_.base_width) * time_w1_)
                                          .array()))
                .matrix() *
            time_w2_;

        toy::Grid g{s.height, s.width};
        FeatureMap h = conv_in_.forward(x, g);
        std::vector<FeatureMap> skips;
        std::vector<toy::Grid> grids;
        for (std::size_t l = 0; l < levels_.size(); ++l) {
            const auto& lvl = levels_[l];
            h = lvl.down_res.forward(h, g, temb);
            for (const auto& b : lvl.down_attn) h = attention_pair(b, h, cond, hooks, records);
            skips.push_back(h);
            grids.push_back(g);
            if (l + 1 < levels_.size()) {
                h = toy::avg_pool2(h, g);
                g = {g.height / 2, g.width / 2};
            }
        }
        h = mid_.forward(h, g, temb);
        for (std::size_t l = levels_.size(); l-- > 0;) {
            const auto& lvl = levels_[l];
            if (l + 1 < levels_.size()) {
                h = toy::upsample_nearest2(h, g);
                g = grids[l];
            }
            h += skips[l];
            h = lvl.up_res.forward(h, g, temb);
            for (const auto& b : lvl.up_attn) h = attention_pair(b, h, cond, hooks, records);
        }
        return toy::silu(layer_norm_rows(h, 1e-5));
    }

    // Residual branch output F (before residual_gain) in latent layout.
    Latent features_to_latent(const FeatureMap& features) const {
        const LatentShape s = latent_shape();
        const FeatureMap y = conv_out_.forward(features, {s.height, s.width});
        Latent out(s);
        for (std::size_t c = 0; c < s.channels; ++c)
            for (std::size_t p = 0; p < s.plane(); ++p)
                out[c * s.plane() + p] = y(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c));
        return out;
    }

    toy::Conv2d& output_conv() { return conv_out_; }
    const toy::Conv2d& output_conv() const { return conv_out_; }

    // Every weight tensor with a stable name, in construction order.
    std::vector<std::pair<std::string, FeatureMap*>> named_parameters() {
        std::vector<std::pair<std::string, FeatureMap*>> p;
        p.emplace_back("time.w1", &time_w1_);
        p.emplace_back("time.w2", &time_w2_);
        add_conv(p, "conv_in", conv_in_);
        for (std::size_t l = 0; l < levels_.size(); ++l) {
            auto& lvl = levels_[l];
            add_res(p, "down." + std::to_string(l) + ".res", lvl.down_res);
            for (auto& b : lvl.down_attn) add_attn(p, b);
            add_res(p, "up." + std::to_string(l) + ".res", lvl.up_res);
            for (auto& b : lvl.up_attn) add_attn(p, b);
        }
        add_res(p, "mid.res", mid_);
        add_conv(p, "conv_out", conv_out_);
        return p;
    }

    void save_weights(const std::filesystem::path& path) {
        io::ByteWriter w;
        w.raw("MSTW", 4);
        w.u32(1);
        auto params = named_parameters();
        w.u32(static_cast<std::uint32_t>(params.size()));
        for (auto& [name, m] : params) {
            w.u32(static_cast<std::uint32_t>(name.size()));
            w.raw(name.data(), name.size());
            std::vector<float> values(m->data(), m->data() + m->size());
            w.array(StoredHeads(1, static_cast<std::size_t>(m->rows()), static_cast<std::size_t>(m->cols()),
                                std::move(values)));
        }
        io::write_file(path, w.bytes());
    }

    void load_weights(const std::filesystem::path& path) {
        const auto bytes = io::read_file(path);
        io::ByteReader r(bytes);
        if (r.string(4) != "MSTW") throw FormatError(0, "bad magic, expected 'MSTW'");
        if (const auto v = r.u32(); v != 1) throw VersionError(v, 1);
        auto params = named_parameters();
        const std::uint32_t count = r.u32();
        if (count != params.size()) {
            throw FormatError(8, "weight file holds " + std::to_string(count) + " tensors, model has " +
                                     std::to_string(params.size()));
        }
        for (auto& [name, m] : params) {
            const std::size_t at = r.offset();
            if (r.string(r.u32()) != name) throw FormatError(at, "expected tensor '" + name + "'");
            const StoredHeads a = r.array();
            if (a.heads() != 1 || a.tokens() != static_cast<std::size_t>(m->rows()) ||
                a.head_dim() != static_cast<std::size_t>(m->cols())) {
                throw FormatError(at, "tensor '" + name + "' has wrong shape " + a.shape_string());
            }
            for (std::size_t i = 0; i < a.size(); ++i) m->data()[i] = a.values()[i];
        }
    }

protected:
    Latent do_predict_noise(const Latent& x_t, Timestep t, const Conditioning& cond, const HookMap& hooks,
                            AttentionRecords* records) const override {
        const Latent residual = features_to_latent(output_features(x_t, t, cond, hooks, records));
        return axpby(1.0, prior_noise(x_t, t), config_.residual_gain, residual);
    }

private:
    FeatureMap attention_pair(const toy::SelfAttentionBlock& b, const FeatureMap& h, const Conditioning& cond,
                              const HookMap& hooks, AttentionRecords* records) const {
        const FeatureMap sa = intercept_self_attention(b.site, h, b.weights, hooks, records);
        return b.cross.forward(sa, cond.embedding);
    }

    void build() {
        toy::WeightInit init(config_.seed);
        const std::size_t w = config_.base_width;
        time_w1_ = init.matrix(w, w, 1.0 / std::sqrt(static_cast<double>(w)));
        time_w2_ = init.matrix(w, w, 1.0 / std::sqrt(static_cast<double>(w)));
        conv_in_ = init.conv(config_.latent_channels, w, 3);

        auto res = [&] {
            toy::ResBlock r;
            r.conv1 = init.conv(w, w, 3);
            r.conv2 = init.conv(w, w, 3, 0.5);
            r.time_proj = init.matrix(w, w, 0.5 / std::sqrt(static_cast<double>(w)));
            return r;
        };
        auto attn = [&](const std::string& site) {
            toy::SelfAttentionBlock b;
            b.site = site;
            const double s = 1.0 / std::sqrt(static_cast<double>(w));
            const double rho = config_.qk_correlation;
            b.weights.w_q = init.matrix(w, w, s * config_.qk_gain);
            const FeatureMap noise = init.matrix(w, w, s * config_.qk_gain);
            b.weights.w_k = (rho * b.weights.w_q + std::sqrt(1.0 - rho * rho) * noise).cast<float>().cast<double>();
            b.weights.w_v = init.matrix(w, w, s);
            b.weights.num_heads = config_.heads;
            b.weights.pre_norm = PreNorm::layer_norm;
            b.cross.heads = config_.heads;
            b.cross.w_q = init.matrix(w, w, s);
            b.cross.w_k = init.matrix(config_.context_dim, w, 1.0 / std::sqrt(static_cast<double>(config_.context_dim)));
            b.cross.w_v = init.matrix(config_.context_dim, w, 1.0 / std::sqrt(static_cast<double>(config_.context_dim)));
            return b;
        };

        levels_.resize(config_.levels);
        for (std::size_t l = 0; l < config_.levels; ++l) {
            auto& lvl = levels_[l];
            lvl.down_res = res();
            for (std::size_t a = 0; a < config_.down_attention; ++a)
                lvl.down_attn.push_back(attn("down." + std::to_string(l) + ".attn." + std::to_string(a)));
        }
        mid_ = res();
        for (std::size_t l = config_.levels; l-- > 0;) {
            auto& lvl = levels_[l];
            lvl.up_res = res();
            for (std::size_t a = 0; a < config_.up_attention; ++a)
                lvl.up_attn.push_back(attn("up." + std::to_string(l) + ".attn." + std::to_string(a)));
        }
        conv_out_ = init.conv(w, config_.latent_channels, 3);
    }

    static void add_conv(std::vector<std::pair<std::string, FeatureMap*>>& p, const std::string& name, toy::Conv2d& c) {
        p.emplace_back(name + ".weight", &c.weight);
    }
    static void add_res(std::vector<std::pair<std::string, FeatureMap*>>& p, const std::string& name,
                        toy::ResBlock& r) {
        add_conv(p, name + ".conv1", r.conv1);
        add_conv(p, name + ".conv2", r.conv2);
        p.emplace_back(name + ".time_proj", &r.time_proj);
    }
    static void add_attn(std::vector<std::pair<std::string, FeatureMap*>>& p, toy::SelfAttentionBlock& b) {
        p.emplace_back(b.site + ".w_q", &b.weights.w_q);
        p.emplace_back(b.site + ".w_k", &b.weights.w_k);
        p.emplace_back(b.site + ".w_v", &b.weights.w_v);
        p.emplace_back(b.site + ".cross.w_q", &b.cross.w_q);
        p.emplace_back(b.site + ".cross.w_k", &b.cross.w_k);
        p.emplace_back(b.site + ".cross.w_v", &b.cross.w_v);
    }

    ToyUNetConfig config_;
    NoiseSchedule schedule_;
    FeatureMap time_w1_, time_w2_;
    toy::Conv2d conv_in_;
    std::vector<toy::Level> levels_;
    toy::ResBlock mid_;
    toy::Conv2d conv_out_;
};

inline std::unique_ptr<ToyUNet> build_toy_unet(const ToyUNetConfig& config) {
    return std::make_unique<ToyUNet>(config);
}

}  // namespace magicstyle
