#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "magicstyle/attention.hpp"
#include "magicstyle/errors.hpp"
#include "magicstyle/feature_cache.hpp"
#include "magicstyle/latent.hpp"
#include "magicstyle/schedule.hpp"

namespace magicstyle {

using SiteId = std::string;

// Text-side context fed to cross-attention. The null conditioning is an
// all-zeros matrix of the backend's context shape.
struct Conditioning {
    FeatureMap embedding;  // context tokens x context dim

    static Conditioning null(std::size_t tokens, std::size_t dim) {
        return {FeatureMap::Zero(static_cast<Eigen::Index>(tokens), static_cast<Eigen::Index>(dim))};
    }

    bool is_null() const { return embedding.size() == 0 || embedding.isZero(0.0); }
};

enum class HookMode { passthrough, record, ffa };

// Per-site behaviour for one predict_noise call. In ffa mode the cached
// features are borrowed for the duration of the call.
struct SiteHook {
    HookMode mode = HookMode::passthrough;
    const CachedFeatures* content = nullptr;
    const CachedFeatures* style = nullptr;
    FfaParams params;
};

using HookMap = std::map<SiteId, SiteHook>;
using AttentionRecords = std::map<SiteId, QKV>;

// Self-attention block output under the hook for `site`. Backends route every
// self-attention block through here so record/ffa semantics are identical
// across implementations.
inline FeatureMap intercept_self_attention(const SiteId& site, const FeatureMap& f_res,
                                           const ProjectionWeights& weights, const HookMap& hooks,
                                           AttentionRecords* records) {
    const auto it = hooks.find(site);
    const HookMode mode = it == hooks.end() ? HookMode::passthrough : it->second.mode;
    switch (mode) {
        case HookMode::ffa: {
            const SiteHook& hook = it->second;
            if (hook.content == nullptr || hook.style == nullptr) {
                throw ValidationError("ffa hook at site '" + site + "' has no cached features bound");
            }
            return ffa(f_res, *hook.content, *hook.style, hook.params, weights);
        }
        case HookMode::record: {
            QKV qkv = project_qkv(f_res, weights);
            FeatureMap out = scaled_dot_attention(qkv) + f_res;
            if (records != nullptr) records->insert_or_assign(site, std::move(qkv));
            return out;
        }
        case HookMode::passthrough:
        default:
            return scaled_dot_attention(project_qkv(f_res, weights)) + f_res;
    }
}

// Noise predictor eps_theta(x_t, t, c) with interceptable self-attention blocks.
//
// Adapters for external latent-diffusion models implement the protected
// virtuals; the public entry points enforce the hook/shape contract.
class DenoiserBackend {
public:
    virtual ~DenoiserBackend() = default;

    virtual LatentShape latent_shape() const = 0;
    virtual std::pair<std::size_t, std::size_t> conditioning_shape() const = 0;

    // Every self-attention site, in execution order.
    virtual std::vector<SiteId> attention_sites() const = 0;

    // Sites on the upsampling half of the network; default injection set.
    virtual std::vector<SiteId> decoder_attention_sites() const { return attention_sites(); }

    Conditioning null_conditioning() const {
        const auto [tokens, dim] = conditioning_shape();
        return Conditioning::null(tokens, dim);
    }

    Latent predict_noise(const Latent& x_t, Timestep t, const Conditioning& cond, const HookMap& hooks = {},
                         AttentionRecords* records = nullptr) const {
        if (x_t.shape() != latent_shape()) {
            throw ShapeError("latent shape " + to_string(x_t.shape()) + " does not match backend " +
                             to_string(latent_shape()));
        }
        const auto [tokens, dim] = conditioning_shape();
        if (static_cast<std::size_t>(cond.embedding.rows()) != tokens ||
            static_cast<std::size_t>(cond.embedding.cols()) != dim) {
            throw ShapeError("conditioning must be " + std::to_string(tokens) + "x" + std::to_string(dim));
        }
        if (!hooks.empty()) {
            const auto sites = attention_sites();
            const std::set<SiteId> known(sites.begin(), sites.end());
            for (const auto& [site, hook] : hooks) {
                if (!known.contains(site)) throw SiteError("unknown attention site '" + site + "'");
            }
        }
        Latent eps = do_predict_noise(x_t, t, cond, hooks, records);
        if (eps.shape() != x_t.shape()) {
            throw AdapterContractError("backend returned noise of shape " + to_string(eps.shape()));
        }
        return eps;
    }

protected:
    virtual Latent do_predict_noise(const Latent& x_t, Timestep t, const Conditioning& cond, const HookMap& hooks,
                                    AttentionRecords* records) const = 0;
};

// Validated site enumeration: rejects backends that report duplicate ids.
inline std::vector<SiteId> list_attention_sites(const DenoiserBackend& backend) {
    auto sites = backend.attention_sites();
    std::set<SiteId> seen;
    for (const auto& s : sites) {
        if (!seen.insert(s).second) throw AdapterContractError("backend reports duplicate attention site '" + s + "'");
    }
    return sites;
}

inline Latent cfg_combine(const Latent& eps_uncond, const Latent& eps_cond, double scale) {
    require_same_shape(eps_uncond, eps_cond, "cfg_combine");
    if (scale == 1.0) return eps_cond;
    if (scale == 0.0) return eps_uncond;
    Latent out(eps_cond.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_uncond[i] + scale * (eps_cond[i] - eps_uncond[i]);
    return out;
}

// Classifier-free guided prediction. Scale 1 needs only the conditional
// branch; otherwise both branches see the same hooks. Records, if requested,
// come from the conditional branch.
inline Latent guided_noise(const DenoiserBackend& backend, const Latent& x_t, Timestep t, const Conditioning& cond,
                           double scale, const HookMap& hooks = {}, AttentionRecords* records = nullptr) {
    Latent eps_cond = backend.predict_noise(x_t, t, cond, hooks, records);
    if (scale == 1.0) return eps_cond;
    const Latent eps_uncond = backend.predict_noise(x_t, t, backend.null_conditioning(), hooks, nullptr);
    return cfg_combine(eps_uncond, eps_cond, scale);
}

// Named factories for in-process adapters ("adapter:<name>" on the CLI).
using BackendFactory = std::function<std::unique_ptr<DenoiserBackend>(std::uint64_t seed)>;

inline std::map<std::string, BackendFactory>& adapter_registry() {
    static std::map<std::string, BackendFactory> registry;
    return registry;
}

inline void register_adapter(const std::string& name, BackendFactory factory) {
    adapter_registry().insert_or_assign(name, std::move(factory));
}

inline std::unique_ptr<DenoiserBackend> make_adapter(const std::string& name, std::uint64_t seed) {
    const auto& reg = adapter_registry();
    const auto it = reg.find(name);
    if (it == reg.end()) throw ConfigError("no backend adapter registered under '" + name + "'");
    return it->second(seed);
}

}  // namespace magicstyle
