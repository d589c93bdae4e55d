#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "magicstyle/attention.hpp"
#include "magicstyle/codec.hpp"
#include "magicstyle/denoiser.hpp"
#include "magicstyle/errors.hpp"
#include "magicstyle/feature_cache.hpp"
#include "magicstyle/latent.hpp"
#include "magicstyle/schedule.hpp"

namespace magicstyle {

// Which self-attention sites are recorded during inversion and replaced by
// FFA during sampling.
struct InjectionSites {
    enum class Kind { decoder, all, explicit_list };

    Kind kind = Kind::decoder;
    std::vector<SiteId> ids;

    static InjectionSites decoder() { return {}; }
    static InjectionSites all() { return {Kind::all, {}}; }
    static InjectionSites of(std::vector<SiteId> ids) { return {Kind::explicit_list, std::move(ids)}; }

    std::vector<SiteId> resolve(const DenoiserBackend& backend) const {
        const auto known = list_attention_sites(backend);
        switch (kind) {
            case Kind::all:
                return known;
            case Kind::decoder:
                return backend.decoder_attention_sites();
            case Kind::explicit_list:
            default: {
                const std::set<SiteId> k(known.begin(), known.end());
                std::set<SiteId> seen;
                for (const auto& id : ids) {
                    if (!k.contains(id)) throw SiteError("unknown attention site '" + id + "'");
                    if (!seen.insert(id).second) throw ConfigError("injection site '" + id + "' listed twice");
                }
                if (ids.empty()) throw ConfigError("explicit injection site list is empty");
                return ids;
            }
        }
    }
};

struct StylizeConfig {
    double alpha = 0.8;
    double beta = 0.2;
    std::uint32_t steps = 30;
    double cfg_inversion = 1.0;
    double cfg_forward = 5.0;
    InjectionSites injection_sites;
    double eps_guard = 1e-5;
    std::uint64_t seed = 0;
    std::optional<Conditioning> conditioning;  // null conditioning when empty
    ValueStats value_stats = ValueStats::per_channel;
    ScheduleSpec schedule;
    bool keep_trajectory = false;

    void validate() const {
        check_blend_weights(alpha, beta);
        if (steps < 1) throw ParameterError("steps must be >= 1");
        if (!(cfg_inversion >= 0.0) || !(cfg_forward >= 0.0)) {
            throw ParameterError("guidance scales must be non-negative");
        }
        if (!(eps_guard > 0.0)) throw ParameterError("eps_guard must be positive");
    }

    Conditioning conditioning_for(const DenoiserBackend& backend) const {
        return conditioning ? *conditioning : backend.null_conditioning();
    }

    FfaParams ffa_params() const { return {alpha, beta, eps_guard, value_stats}; }
};

// --- latent AdaIN -------------------------------------------------------------

// (H*W) x C view of a latent, one token per spatial position.
inline FeatureMap latent_tokens(const Latent& z) {
    FeatureMap m(static_cast<Eigen::Index>(z.shape().plane()), static_cast<Eigen::Index>(z.channels()));
    for (std::size_t c = 0; c < z.channels(); ++c)
        for (std::size_t p = 0; p < z.shape().plane(); ++p)
            m(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = z[c * z.shape().plane() + p];
    return m;
}

inline Latent latent_from_tokens(const FeatureMap& m, const LatentShape& shape) {
    Latent z(shape);
    for (std::size_t c = 0; c < shape.channels; ++c)
        for (std::size_t p = 0; p < shape.plane(); ++p)
            z[c * shape.plane() + p] = m(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c));
    return z;
}

// Per-channel AdaIN over the spatial axes of two terminal latents.
inline Latent fuse_initial_latents(const Latent& z_content, const Latent& z_style, double eps_guard = 1e-5) {
    require_same_shape(z_content, z_style, "fuse_initial_latents");
    return latent_from_tokens(adain(latent_tokens(z_content), latent_tokens(z_style), eps_guard), z_content.shape());
}

// --- plain DDIM ---------------------------------------------------------------

// Inversion from the clean latent up to the last plan timestep. The step
// prev -> t evaluates the network at timestep t, so the timesteps seen here
// are exactly the ones forward sampling evaluates.
inline Latent ddim_invert(const Latent& latent, const DenoiserBackend& backend, const NoiseSchedule& schedule,
                          const TimestepPlan& plan, const Conditioning& cond, double guidance) {
    Latent x = latent;
    Timestep prev = 0;
    for (const Timestep t : plan.ascending()) {
        const Latent eps = guided_noise(backend, x, t, cond, guidance);
        x = ddim_invert_step(x, eps, prev, t, schedule);
        prev = t;
    }
    return x;
}

inline Latent ddim_sample(const Latent& z_t, const DenoiserBackend& backend, const NoiseSchedule& schedule,
                          const TimestepPlan& plan, const Conditioning& cond, double guidance) {
    Latent x = z_t;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const Timestep t = plan.steps[i];
        const Timestep t_prev = i + 1 < plan.size() ? plan.steps[i + 1] : 0;
        x = ddim_denoise_step(x, guided_noise(backend, x, t, cond, guidance), t, t_prev, schedule);
    }
    return x;
}

// Invert then sample with no feature injection.
inline Latent reconstruct(const Latent& latent, const DenoiserBackend& backend, const StylizeConfig& config) {
    config.validate();
    const NoiseSchedule schedule = config.schedule.build();
    const TimestepPlan plan = plan_timesteps(schedule, config.steps);
    const Conditioning cond = config.conditioning_for(backend);
    const Latent z_t = ddim_invert(latent, backend, schedule, plan, cond, config.cfg_inversion);
    return ddim_sample(z_t, backend, schedule, plan, cond, config.cfg_forward);
}

// --- CSDI / FFF ---------------------------------------------------------------

// DDIM inversion that records self-attention features at every injection site
// and plan timestep. Content entries keep Q/K/V, style entries K/V.
inline Latent csdi_invert(const Latent& latent, const DenoiserBackend& backend, const NoiseSchedule& schedule,
                          const TimestepPlan& plan, FeatureStore& store, Role role, const StylizeConfig& config) {
    config.validate();
    if (latent.shape() != backend.latent_shape()) {
        throw ShapeError("latent " + to_string(latent.shape()) + " does not match backend " +
                         to_string(backend.latent_shape()));
    }
    const auto sites = config.injection_sites.resolve(backend);
    const Conditioning cond = config.conditioning_for(backend);
    HookMap hooks;
    for (const auto& s : sites) hooks[s].mode = HookMode::record;

    Latent x = latent;
    Timestep prev = 0;
    for (const Timestep t : plan.ascending()) {
        AttentionRecords records;
        const Latent eps = guided_noise(backend, x, t, cond, config.cfg_inversion, hooks, &records);
        for (const auto& s : sites) {
            const auto it = records.find(s);
            if (it == records.end()) {
                throw AdapterContractError("backend did not record site '" + s + "' at timestep " + std::to_string(t));
            }
            store.record({t, s, role}, CachedFeatures::from_qkv(it->second, role));
        }
        x = ddim_invert_step(x, eps, prev, t, schedule);
        prev = t;
    }
    return x;
}

// Forward DDIM from the fused latent with FFA at every injection site, using
// the features cached at the same timestep. Both guidance branches get the
// same injection.
inline Latent fff_sample(const Latent& z_cs, const DenoiserBackend& backend, const NoiseSchedule& schedule,
                         const TimestepPlan& plan, const FeatureStore& store, const StylizeConfig& config,
                         std::vector<Latent>* trajectory = nullptr) {
    config.validate();
    const auto sites = config.injection_sites.resolve(backend);
    const Conditioning cond = config.conditioning_for(backend);
    Latent x = z_cs;
    if (trajectory) trajectory->push_back(x);
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const Timestep t = plan.steps[i];
        const Timestep t_prev = i + 1 < plan.size() ? plan.steps[i + 1] : 0;
        HookMap hooks;
        for (const auto& s : sites) {
            SiteHook& h = hooks[s];
            h.mode = HookMode::ffa;
            h.content = &store.lookup({t, s, Role::content});
            h.style = &store.lookup({t, s, Role::style});
            h.params = config.ffa_params();
        }
        const Latent eps = guided_noise(backend, x, t, cond, config.cfg_forward, hooks);
        x = ddim_denoise_step(x, eps, t, t_prev, schedule);
        if (trajectory) trajectory->push_back(x);
    }
    return x;
}

struct StylizeResult {
    Latent output;  // Z_0
    ImageBuffer image;
    Latent content_terminal;  // Z^C_T
    Latent style_terminal;    // Z^S_T
    Latent fused_terminal;    // Z^CS_T
    std::vector<Latent> trajectory;  // filled when keep_trajectory is set
    std::shared_ptr<const FeatureStore> cache;
};

inline StylizeResult stylize_latents(const Latent& content, const Latent& style, const DenoiserBackend& backend,
                                     const StylizeConfig& config) {
    config.validate();
    if (content.shape() != style.shape()) {
        throw ShapeError("content latent " + to_string(content.shape()) + " and style latent " +
                         to_string(style.shape()) + " differ; resize the style image to the content size");
    }
    const NoiseSchedule schedule = config.schedule.build();
    const TimestepPlan plan = plan_timesteps(schedule, config.steps);

    auto store = std::make_shared<FeatureStore>();
    StylizeResult r;
    r.content_terminal = csdi_invert(content, backend, schedule, plan, *store, Role::content, config);
    r.style_terminal = csdi_invert(style, backend, schedule, plan, *store, Role::style, config);
    store->freeze();
    r.cache = store;

    r.fused_terminal = fuse_initial_latents(r.content_terminal, r.style_terminal, config.eps_guard);
    r.output = fff_sample(r.fused_terminal, backend, schedule, plan, *store, config,
                          config.keep_trajectory ? &r.trajectory : nullptr);
    return r;
}

// Encode, CSDI on both images, AdaIN-fuse, FFF, decode.
inline StylizeResult stylize(const ImageBuffer& content_image, const ImageBuffer& style_image,
                             const DenoiserBackend& backend, const Codec& codec, const StylizeConfig& config) {
    if (!content_image.same_shape(style_image)) {
        throw ShapeError("content image " + std::to_string(content_image.height()) + "x" +
                         std::to_string(content_image.width()) + " and style image " +
                         std::to_string(style_image.height()) + "x" + std::to_string(style_image.width()) +
                         " differ; resize the style image to the content size");
    }
    const double k = codec.latent_scale();
    StylizeResult r = stylize_latents(scaled(codec.encode(content_image), k), scaled(codec.encode(style_image), k),
                                      backend, config);
    r.image = codec.decode(k == 1.0 ? r.output : scaled(r.output, 1.0 / k));
    return r;
}

}  // namespace magicstyle
