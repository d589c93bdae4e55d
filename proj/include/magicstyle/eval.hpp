#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "magicstyle/attention.hpp"
#include "magicstyle/codec.hpp"
#include "magicstyle/errors.hpp"
#include "magicstyle/latent.hpp"
#include "magicstyle/pipeline.hpp"

namespace magicstyle {

// Peak 1.0. Identical images give +infinity.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_shape(b)) throw ShapeError("psnr needs equal image shapes");
    if (a.size() == 0) throw ShapeError("psnr of empty images");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// L2 distance between the per-channel (mean, std) vectors of two latents.
inline double style_stats_distance(const Latent& a, const Latent& b) {
    if (a.channels() != b.channels()) {
        throw ShapeError("style_stats_distance channel mismatch: " + std::to_string(a.channels()) + " vs " +
                         std::to_string(b.channels()));
    }
    const ChannelStats sa = channel_stats(latent_tokens(a));
    const ChannelStats sb = channel_stats(latent_tokens(b));
    return std::sqrt((sa.mean - sb.mean).squaredNorm() + (sa.stddev - sb.stddev).squaredNorm());
}

// Ranks starting at 1, ties share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ParameterError("spearman needs two equal-length series, n >= 2");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

struct SweepReport {
    std::vector<double> betas;
    std::vector<double> content_distance;
    std::vector<double> style_stats_distance;
    std::vector<double> psnr_db;

    std::size_t size() const { return betas.size(); }

    std::string to_csv() const {
        std::string out = "beta,content_distance,style_stats_distance,psnr_db\n";
        auto fmt = [](double v) {
            if (std::isinf(v)) return std::string(v > 0 ? "inf" : "-inf");
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.6g", v);
            return std::string(buf);
        };
        for (std::size_t i = 0; i < betas.size(); ++i) {
            out += fmt(betas[i]) + "," + fmt(content_distance[i]) + "," + fmt(style_stats_distance[i]) + "," +
                   fmt(psnr_db[i]) + "\n";
        }
        return out;
    }
};

// One stylization per beta (alpha = 1 - beta), measured against the plain
// inversion-reconstruction of the content image.
inline SweepReport beta_sweep(const ImageBuffer& content, const ImageBuffer& style, const DenoiserBackend& backend,
                              const Codec& codec, const std::vector<double>& betas, const StylizeConfig& base) {
    if (betas.empty()) throw ParameterError("beta sweep needs at least one beta");
    for (std::size_t i = 0; i < betas.size(); ++i) {
        if (!(betas[i] >= 0.0 && betas[i] <= 1.0)) throw ParameterError("betas must lie in [0, 1]");
        if (i > 0 && !(betas[i] > betas[i - 1])) throw ParameterError("betas must be strictly ascending");
    }
    const double k = codec.latent_scale();
    const Latent content_latent = scaled(codec.encode(content), k);
    const Latent style_latent = scaled(codec.encode(style), k);
    StylizeConfig plain = base;
    plain.alpha = 1.0;
    plain.beta = 0.0;
    const Latent reference = reconstruct(content_latent, backend, plain);
    const ImageBuffer reference_image = codec.decode(scaled(reference, 1.0 / k));

    SweepReport report;
    for (const double beta : betas) {
        StylizeConfig cfg = base;
        cfg.beta = beta;
        cfg.alpha = 1.0 - beta;
        const StylizeResult r = stylize(content, style, backend, codec, cfg);
        report.betas.push_back(beta);
        report.content_distance.push_back(relative_l2(r.output, reference));
        report.style_stats_distance.push_back(style_stats_distance(r.output, style_latent));
        report.psnr_db.push_back(psnr(r.image, reference_image));
    }
    return report;
}

}  // namespace magicstyle
