#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "magicstyle/errors.hpp"
#include "magicstyle/feature_cache.hpp"
#include "magicstyle/heads.hpp"

namespace magicstyle {

// Normalization the block applies to its input before the Q/K/V projections.
enum class PreNorm { none, layer_norm };

struct ProjectionWeights {
    FeatureMap w_q;  // channels x inner
    FeatureMap w_k;
    FeatureMap w_v;
    std::size_t num_heads = 1;
    PreNorm pre_norm = PreNorm::none;
    double norm_eps = 1e-5;

    std::size_t channels() const { return static_cast<std::size_t>(w_q.rows()); }
    std::size_t inner_dim() const { return static_cast<std::size_t>(w_q.cols()); }
    std::size_t head_dim() const { return inner_dim() / num_heads; }

    void validate() const {
        if (w_k.rows() != w_q.rows() || w_v.rows() != w_q.rows() || w_k.cols() != w_q.cols() ||
            w_v.cols() != w_q.cols()) {
            throw ShapeError("W_Q, W_K and W_V must share shape");
        }
        if (num_heads == 0 || inner_dim() % num_heads != 0) {
            throw ShapeError("inner dim " + std::to_string(inner_dim()) + " not divisible by " +
                             std::to_string(num_heads) + " heads");
        }
    }
};

// Per-token layer norm over channels, no affine parameters.
inline FeatureMap layer_norm_rows(const FeatureMap& x, double eps) {
    FeatureMap out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).sum() / n;
        const double var = (x.row(r).array() - mean).square().sum() / n;
        out.row(r) = (x.row(r).array() - mean) / std::sqrt(var + eps);
    }
    return out;
}

inline FeatureMap attention_input(const FeatureMap& phi, const ProjectionWeights& w) {
    if (static_cast<std::size_t>(phi.cols()) != w.channels()) {
        throw ShapeError("feature map has " + std::to_string(phi.cols()) + " channels, projection expects " +
                         std::to_string(w.channels()));
    }
    return w.pre_norm == PreNorm::layer_norm ? layer_norm_rows(phi, w.norm_eps) : phi;
}

inline QKV project_qkv(const FeatureMap& phi, const ProjectionWeights& w) {
    w.validate();
    const FeatureMap h = attention_input(phi, w);
    return {split_heads(h * w.w_q, w.num_heads), split_heads(h * w.w_k, w.num_heads),
            split_heads(h * w.w_v, w.num_heads)};
}

inline HeadTensor project_query(const FeatureMap& phi, const ProjectionWeights& w) {
    w.validate();
    return split_heads(attention_input(phi, w) * w.w_q, w.num_heads);
}

// Row-wise numerically stable softmax, in place.
inline void softmax_rows(Eigen::MatrixXd& logits) {
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
    }
}

inline FeatureMap scaled_dot_attention(const HeadTensor& q, const HeadTensor& k, const HeadTensor& v) {
    if (k.tokens() != v.tokens()) {
        throw ShapeError("key has " + std::to_string(k.tokens()) + " tokens, value has " +
                         std::to_string(v.tokens()));
    }
    if (q.heads() != k.heads() || q.heads() != v.heads() || q.head_dim() != k.head_dim() ||
        q.head_dim() != v.head_dim()) {
        throw ShapeError("Q " + q.shape_string() + ", K " + k.shape_string() + ", V " + v.shape_string() +
                         " disagree on heads/head_dim");
    }
    if (k.tokens() == 0) throw ShapeError("attention over zero key tokens");
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.head_dim()));
    HeadTensor out(q.heads(), q.tokens(), q.head_dim());
    for (std::size_t h = 0; h < q.heads(); ++h) {
        Eigen::MatrixXd p = (q.head(h) * k.head(h).transpose()) * scale;
        softmax_rows(p);
        out.head(h) = p * v.head(h);
    }
    return merge_heads(out);
}

inline FeatureMap scaled_dot_attention(const QKV& qkv) { return scaled_dot_attention(qkv.q, qkv.k, qkv.v); }

// --- AdaIN --------------------------------------------------------------------

struct ChannelStats {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd stddev;
};

// Population mean / std of every column, over the token (row) axis.
inline ChannelStats channel_stats(const FeatureMap& x) {
    if (x.rows() == 0) throw ShapeError("statistics over zero tokens");
    const double n = static_cast<double>(x.rows());
    ChannelStats s;
    s.mean = x.colwise().sum() / n;
    s.stddev = ((x.rowwise() - s.mean).array().square().colwise().sum() / n).sqrt().matrix();
    return s;
}

// Guarded std used as the content denominator: hypot(sigma, eps_guard). It
// equals sigma to O(eps^2) for ordinary channels and eps_guard for constant ones.
inline double guarded_std(double sigma, double eps_guard) { return std::hypot(sigma, eps_guard); }

inline FeatureMap adain(const FeatureMap& content, const FeatureMap& style, double eps_guard = 1e-5) {
    if (content.cols() != style.cols()) {
        throw ShapeError("adain channel mismatch: content " + std::to_string(content.cols()) + ", style " +
                         std::to_string(style.cols()));
    }
    if (!(eps_guard > 0.0)) throw ParameterError("eps_guard must be positive");
    const ChannelStats c = channel_stats(content);
    const ChannelStats s = channel_stats(style);
    FeatureMap out(content.rows(), content.cols());
    for (Eigen::Index j = 0; j < content.cols(); ++j) {
        const double gain = s.stddev(j) / guarded_std(c.stddev(j), eps_guard);
        out.col(j) = ((content.col(j).array() - c.mean(j)) * gain + s.mean(j)).matrix();
    }
    return out;
}

// How AdaIN statistics are taken over cached values.
enum class ValueStats {
    per_channel,  // per inner-dim column over tokens, before the head split
    per_head,     // pooled over tokens and head_dim within each head
};

template <typename T>
HeadTensor adain_values(const BasicHeadTensor<T>& content, const BasicHeadTensor<T>& style, double eps_guard,
                        ValueStats mode) {
    if (content.heads() != style.heads() || content.head_dim() != style.head_dim()) {
        throw ShapeError("adain over values " + content.shape_string() + " and " + style.shape_string());
    }
    if (mode == ValueStats::per_channel) {
        return split_heads(adain(merge_heads(content), merge_heads(style), eps_guard), content.heads());
    }
    HeadTensor out(content.heads(), content.tokens(), content.head_dim());
    for (std::size_t h = 0; h < content.heads(); ++h) {
        const Eigen::ArrayXXd c = content.head(h).template cast<double>().array();
        const Eigen::ArrayXXd s = style.head(h).template cast<double>().array();
        const double mc = c.mean(), ms = s.mean();
        const double sc = std::sqrt((c - mc).square().mean());
        const double ss = std::sqrt((s - ms).square().mean());
        out.head(h) = ((c - mc) * (ss / guarded_std(sc, eps_guard)) + ms).matrix();
    }
    return out;
}

// --- query blend and Feature Fusion Attention ----------------------------------

inline void check_blend_weights(double alpha, double beta) {
    if (std::abs(alpha + beta - 1.0) > 1e-9) {
        throw ConstraintError("alpha + beta must equal 1, got " + std::to_string(alpha) + " + " +
                              std::to_string(beta));
    }
}

inline HeadTensor blend_queries(const HeadTensor& q_content, const HeadTensor& q_current, double alpha,
                                double beta) {
    check_blend_weights(alpha, beta);
    if (!q_content.same_shape(q_current)) {
        throw ShapeError("query shapes " + q_content.shape_string() + " and " + q_current.shape_string() +
                         " differ");
    }
    HeadTensor out(q_content.heads(), q_content.tokens(), q_content.head_dim());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.values()[i] = alpha * q_content.values()[i] + beta * q_current.values()[i];
    }
    return out;
}

struct FfaParams {
    double alpha = 0.8;
    double beta = 0.2;
    double eps_guard = 1e-5;
    ValueStats value_stats = ValueStats::per_channel;
};

struct ContentFeatures {
    HeadTensor q, k, v;
};

struct StyleFeatures {
    HeadTensor k, v;
};

// Replaces the self-attention output for the residual features f_res:
//   Q = alpha * Q_content + beta * query(f_res)
//   K = [K_content; K_style]
//   V = [AdaIN(V_content, V_style); V_style]
//   out = softmax(Q K^T / sqrt(d)) V + f_res
inline FeatureMap ffa(const FeatureMap& f_res, const ContentFeatures& content, const StyleFeatures& style,
                      const FfaParams& params, const ProjectionWeights& weights) {
    check_blend_weights(params.alpha, params.beta);
    if (weights.inner_dim() != static_cast<std::size_t>(f_res.cols())) {
        throw ShapeError("residual add needs inner dim == channels, got " + std::to_string(weights.inner_dim()) +
                         " vs " + std::to_string(f_res.cols()));
    }
    const HeadTensor q_current = project_query(f_res, weights);
    const HeadTensor q = blend_queries(content.q, q_current, params.alpha, params.beta);
    const HeadTensor k = concat_tokens(content.k, style.k);
    const HeadTensor v =
        concat_tokens(adain_values(content.v, style.v, params.eps_guard, params.value_stats), style.v);
    return scaled_dot_attention(q, k, v) + f_res;
}

inline FeatureMap ffa(const FeatureMap& f_res, const CachedFeatures& content, const CachedFeatures& style,
                      const FfaParams& params, const ProjectionWeights& weights) {
    if (!content.q) throw ValidationError("content cache entry carries no query");
    ContentFeatures c{content.q->cast<double>(), content.k.cast<double>(), content.v.cast<double>()};
    StyleFeatures s{style.k.cast<double>(), style.v.cast<double>()};
    return ffa(f_res, c, s, params, weights);
}

}  // namespace magicstyle
