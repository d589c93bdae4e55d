#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "magicstyle/denoiser.hpp"
#include "magicstyle/toy_training.hpp"
#include "magicstyle/toy_unet.hpp"
#include "test_util.hpp"

namespace magicstyle {
namespace {

ToyUNetConfig small_config(std::uint64_t seed = 0) {
    ToyUNetConfig c;
    c.seed = seed;
    return c;
}

TEST(ToyUNet, DeterministicAcrossInstances) {
    std::mt19937_64 rng(1);
    const ToyUNet a(small_config()), b(small_config());
    const Latent x = test::random_latent(a.latent_shape(), rng);
    const Latent ea = a.predict_noise(x, 500, a.null_conditioning());
    EXPECT_EQ(ea, a.predict_noise(x, 500, a.null_conditioning()));
    EXPECT_EQ(ea, b.predict_noise(x, 500, b.null_conditioning()));
    const ToyUNet c(small_config(1));
    EXPECT_NE(ea, c.predict_noise(x, 500, c.null_conditioning()));
}

TEST(ToyUNet, SiteCountFollowsConfig) {
    ToyUNetConfig c = small_config();
    c.levels = 2;
    c.down_attention = 0;
    c.up_attention = 1;
    const ToyUNet net(c);
    const auto sites = list_attention_sites(net);
    ASSERT_EQ(sites.size(), c.levels * (c.down_attention + c.up_attention));
    EXPECT_EQ(sites, (std::vector<SiteId>{"up.1.attn.0", "up.0.attn.0"}));
    EXPECT_EQ(sites, list_attention_sites(ToyUNet(c)));

    const ToyUNet def(small_config());
    EXPECT_EQ(list_attention_sites(def).size(), 4u);
    EXPECT_EQ(def.decoder_attention_sites(), (std::vector<SiteId>{"up.1.attn.0", "up.0.attn.0"}));
}

TEST(ToyUNet, InvalidConfigs) {
    ToyUNetConfig c = small_config();
    c.levels = 0;
    EXPECT_THROW(ToyUNet{c}, ConfigError);
    c = small_config();
    c.down_attention = c.up_attention = 0;
    EXPECT_THROW(ToyUNet{c}, ConfigError);
    c = small_config();
    c.heads = 3;
    EXPECT_THROW(ToyUNet{c}, ConfigError);
    c = small_config();
    c.height = 7;
    EXPECT_THROW(ToyUNet{c}, ConfigError);
}

TEST(ToyUNet, UnknownSiteAndShapeErrors) {
    std::mt19937_64 rng(2);
    const ToyUNet net(small_config());
    const Latent x = test::random_latent(net.latent_shape(), rng);
    HookMap hooks;
    hooks["mid.attn.9"].mode = HookMode::record;
    EXPECT_THROW(net.predict_noise(x, 10, net.null_conditioning(), hooks), SiteError);
    EXPECT_THROW(net.predict_noise(Latent({3, 8, 8}), 10, net.null_conditioning()), ShapeError);
    EXPECT_THROW(net.predict_noise(x, 10, Conditioning::null(2, 2)), ShapeError);
}

TEST(ToyUNet, RecordingIsNonInvasive) {
    std::mt19937_64 rng(3);
    const ToyUNet net(small_config());
    const Latent x = test::random_latent(net.latent_shape(), rng);
    HookMap hooks;
    for (const auto& s : net.attention_sites()) hooks[s].mode = HookMode::record;
    AttentionRecords rec;
    const Latent a = net.predict_noise(x, 300, net.null_conditioning(), hooks, &rec);
    const Latent b = net.predict_noise(x, 300, net.null_conditioning());
    EXPECT_LT(relative_l2(a, b), 1e-6);
    EXPECT_EQ(rec.size(), net.attention_sites().size());
}

TEST(ToyUNet, SelfFfaMatchesPassthrough) {
    // Feed each site its own recorded features as both content and style.
    std::mt19937_64 rng(4);
    const ToyUNet net(small_config());
    const Latent x = test::random_latent(net.latent_shape(), rng);
    const auto sites = net.attention_sites();
    HookMap rec_hooks;
    for (const auto& s : sites) rec_hooks[s].mode = HookMode::record;
    AttentionRecords rec;
    const Latent plain = net.predict_noise(x, 700, net.null_conditioning(), rec_hooks, &rec);

    std::map<SiteId, CachedFeatures> content, style;
    HookMap ffa_hooks;
    for (const auto& s : sites) {
        content[s] = CachedFeatures::from_qkv(rec.at(s), Role::content);
        style[s] = CachedFeatures::from_qkv(rec.at(s), Role::style);
    }
    for (const auto& s : sites) {
        SiteHook& h = ffa_hooks[s];
        h.mode = HookMode::ffa;
        h.content = &content[s];
        h.style = &style[s];
        h.params = FfaParams{1.0, 0.0};
    }
    const Latent injected = net.predict_noise(x, 700, net.null_conditioning(), ffa_hooks);
    EXPECT_LT(relative_l2(injected, plain), 1e-5);
}

TEST(ToyUNet, UnhookedSitesAreUntouched) {
    std::mt19937_64 rng(5);
    const ToyUNet net(small_config());
    const Latent x = test::random_latent(net.latent_shape(), rng);
    HookMap hooks;
    hooks[net.attention_sites().front()].mode = HookMode::passthrough;
    EXPECT_EQ(net.predict_noise(x, 50, net.null_conditioning(), hooks), net.predict_noise(x, 50, net.null_conditioning()));
}

TEST(ToyUNet, ConditioningReachesCrossAttention) {
    std::mt19937_64 rng(6);
    const ToyUNet net(small_config());
    const Latent x = test::random_latent(net.latent_shape(), rng);
    const auto [tokens, dim] = net.conditioning_shape();
    Conditioning c{test::random_features(tokens, dim, rng)};
    EXPECT_TRUE(net.null_conditioning().is_null());
    EXPECT_FALSE(c.is_null());
    EXPECT_NE(net.predict_noise(x, 400, c), net.predict_noise(x, 400, net.null_conditioning()));
}

TEST(ToyUNet, WeightsRoundTripThroughFile) {
    std::mt19937_64 rng(7);
    ToyUNet a(small_config(3));
    ToyUNet b(small_config(4));
    const auto path = test::temp_path("weights.mstw");
    a.save_weights(path);
    b.load_weights(path);
    std::filesystem::remove(path);
    const Latent x = test::random_latent(a.latent_shape(), rng);
    EXPECT_EQ(a.predict_noise(x, 200, a.null_conditioning()), b.predict_noise(x, 200, b.null_conditioning()));
}

TEST(CfgCombine, Scales) {
    Latent u({1, 1, 1}, 0.0), c({1, 1, 1}, 1.0);
    EXPECT_EQ(cfg_combine(u, c, 1.0), c);
    EXPECT_EQ(cfg_combine(u, c, 0.0), u);
    EXPECT_DOUBLE_EQ(cfg_combine(u, c, 5.0)[0], 0.0 + 5.0 * (1.0 - 0.0));
    EXPECT_THROW(cfg_combine(u, Latent({2, 1, 1}), 2.0), ShapeError);

    std::mt19937_64 rng(8);
    const Latent a = test::random_latent({2, 3, 3}, rng), b = test::random_latent({2, 3, 3}, rng);
    const Latent g = cfg_combine(a, b, 5.0);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], a[i] + 5.0 * (b[i] - a[i]), 1e-14);
}

TEST(GuidedNoise, NullConditioningCollapsesGuidance) {
    std::mt19937_64 rng(9);
    const ToyUNet net(small_config());
    const Latent x = test::random_latent(net.latent_shape(), rng);
    const Latent e1 = guided_noise(net, x, 600, net.null_conditioning(), 1.0);
    const Latent e5 = guided_noise(net, x, 600, net.null_conditioning(), 5.0);
    EXPECT_LT(relative_l2(e5, e1), 1e-12);
}

// Minimal external adapter that misreports its sites.
class DuplicateSiteAdapter final : public DenoiserBackend {
public:
    LatentShape latent_shape() const override { return {1, 2, 2}; }
    std::pair<std::size_t, std::size_t> conditioning_shape() const override { return {1, 1}; }
    std::vector<SiteId> attention_sites() const override { return {"a", "b", "a"}; }

protected:
    Latent do_predict_noise(const Latent& x, Timestep, const Conditioning&, const HookMap&,
                            AttentionRecords*) const override {
        return x;
    }
};

TEST(Adapters, DuplicateSitesViolateContract) {
    EXPECT_THROW(list_attention_sites(DuplicateSiteAdapter{}), AdapterContractError);
}

TEST(Adapters, RegistryLookup) {
    register_adapter("test-dup", [](std::uint64_t) { return std::make_unique<DuplicateSiteAdapter>(); });
    EXPECT_EQ(make_adapter("test-dup", 0)->latent_shape(), (LatentShape{1, 2, 2}));
    EXPECT_THROW(make_adapter("nope", 0), ConfigError);
}

TEST(Training, DenoisingLossDropsOnSyntheticData) {
    ToyUNetConfig c = small_config();
    c.latent_channels = 12;
    ToyUNet net(c);
    std::mt19937_64 rng(10);
    std::vector<Latent> data;
    for (int i = 0; i < 4; ++i) {
        Latent x = test::random_latent(net.latent_shape(), rng);
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = 0.5 + 0.1 * x[j] + 0.3 * std::sin(static_cast<double>(j));
        data.push_back(x);
    }
    std::normal_distribution<double> n(0.0, 1.0);
    auto eval = [&] {
        std::mt19937_64 r(11);
        double total = 0.0;
        for (int k = 0; k < 20; ++k) {
            Latent eps(net.latent_shape());
            for (std::size_t j = 0; j < eps.size(); ++j) eps[j] = n(r);
            total += denoising_loss(net, data[static_cast<std::size_t>(k) % data.size()],
                                    static_cast<Timestep>(50 + 45 * k), eps, net.null_conditioning());
        }
        return total / 20.0;
    };
    const double before = eval();
    train_output_head(net, data, TrainOptions{200, 0.5, 1});
    EXPECT_LT(eval(), before);
}

}  // namespace
}  // namespace magicstyle
