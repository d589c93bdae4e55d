// magicstyle: invert | stylize | sweep | grid
//
// Exit codes: 0 ok, 1 runtime failure ("error: <category>: <message>" on
// stderr), 2 usage error.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "magicstyle/codec.hpp"
#include "magicstyle/eval.hpp"
#include "magicstyle/feature_cache.hpp"
#include "magicstyle/pipeline.hpp"
#include "magicstyle/png_io.hpp"
#include "magicstyle/toy_unet.hpp"

namespace ms = magicstyle;
using json = nlohmann::json;

namespace {

constexpr std::size_t kCodecFactor = 8;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct JobConfig {
    std::vector<std::string> content;
    std::vector<std::string> style;
    std::string out;
    std::string dump_cache;
    double alpha = 0.8;
    double beta = 0.2;
    std::uint32_t steps = 30;
    double cfg_inversion = 1.0;
    double cfg_forward = 5.0;
    std::vector<std::string> sites{"decoder"};
    std::uint64_t seed = 0;
    std::size_t size = 64;
    std::string backend = "toy";
    double eps_guard = 1e-5;
    std::vector<double> betas{0.0, 0.2, 0.5, 0.8, 1.0};

    json to_json() const {
        return {{"content", content}, {"style", style},   {"out", out},
                {"dump_cache", dump_cache}, {"alpha", alpha}, {"beta", beta},
                {"steps", steps},     {"cfg_inversion", cfg_inversion}, {"cfg_forward", cfg_forward},
                {"sites", sites},     {"seed", seed},     {"size", size},
                {"backend", backend}, {"eps_guard", eps_guard}, {"betas", betas}};
    }
};

// One configuration layer: only the fields it sets.
struct Layer {
    std::optional<std::vector<std::string>> content, style, sites;
    std::optional<std::string> out, dump_cache, backend;
    std::optional<double> alpha, beta, cfg_inversion, cfg_forward, eps_guard;
    std::optional<std::uint32_t> steps;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> size;
    std::optional<std::vector<double>> betas;
};

template <typename T>
void take(T& dst, const std::optional<T>& src) {
    if (src) dst = *src;
}

// Later layers win. alpha and beta travel as a pair: the highest layer that
// sets either decides both, filling the missing one as 1 - x.
JobConfig resolve(const std::vector<Layer>& layers) {
    JobConfig job;
    for (const Layer& l : layers) {
        take(job.content, l.content);
        take(job.style, l.style);
        take(job.sites, l.sites);
        take(job.out, l.out);
        take(job.dump_cache, l.dump_cache);
        take(job.backend, l.backend);
        take(job.cfg_inversion, l.cfg_inversion);
        take(job.cfg_forward, l.cfg_forward);
        take(job.eps_guard, l.eps_guard);
        take(job.steps, l.steps);
        take(job.seed, l.seed);
        take(job.size, l.size);
        take(job.betas, l.betas);
        if (l.alpha || l.beta) {
            job.alpha = l.alpha ? *l.alpha : 1.0 - *l.beta;
            job.beta = l.beta ? *l.beta : 1.0 - *l.alpha;
        }
    }
    return job;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_betas(const std::vector<std::string>& items) {
    std::vector<double> out;
    for (const auto& it : items) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(it, &used));
            if (used != it.size()) throw std::invalid_argument(it);
        } catch (const std::exception&) {
            throw UsageError("--betas: '" + it + "' is not a number");
        }
    }
    return out;
}

Layer read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ms::IoError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ms::ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ms::ConfigError("config '" + path + "' must be a JSON object");

    Layer l;
    auto strings = [&](const json& v, const std::string& key) {
        if (v.is_string()) return split_list(v.get<std::string>());
        if (v.is_array()) return v.get<std::vector<std::string>>();
        throw ms::ConfigError("config key '" + key + "' must be a string or array of strings");
    };
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "content") l.content = strings(v, key);
            else if (key == "style") l.style = strings(v, key);
            else if (key == "sites") l.sites = strings(v, key);
            else if (key == "out") l.out = v.get<std::string>();
            else if (key == "dump_cache") l.dump_cache = v.get<std::string>();
            else if (key == "backend") l.backend = v.get<std::string>();
            else if (key == "alpha") l.alpha = v.get<double>();
            else if (key == "beta") l.beta = v.get<double>();
            else if (key == "cfg_inversion") l.cfg_inversion = v.get<double>();
            else if (key == "cfg_forward") l.cfg_forward = v.get<double>();
            else if (key == "eps_guard") l.eps_guard = v.get<double>();
            else if (key == "steps") l.steps = v.get<std::uint32_t>();
            else if (key == "seed") l.seed = v.get<std::uint64_t>();
            else if (key == "size") l.size = v.get<std::size_t>();
            else if (key == "betas") l.betas = v.is_string() ? parse_betas(split_list(v.get<std::string>()))
                                                             : v.get<std::vector<double>>();
            else throw ms::ConfigError("unknown config key '" + key + "'");
        }
    } catch (const json::type_error& e) {
        throw ms::ConfigError("config '" + path + "': " + e.what());
    }
    return l;
}

// Flag values land here; CLI11 tells us which ones were given.
struct Flags {
    std::vector<std::string> content, style, sites;
    std::string out, dump_cache, backend, config;
    double alpha = 0, beta = 0, cfg_inversion = 0, cfg_forward = 0, eps_guard = 0;
    std::uint32_t steps = 0;
    std::uint64_t seed = 0;
    std::size_t size = 0;
    std::string betas;
    bool print_config = false;
};

void add_flags(CLI::App& cmd, Flags& f) {
    cmd.add_option("--content", f.content, "Content image PNG (comma-separated list for grid)")->delimiter(',');
    cmd.add_option("--style", f.style, "Style image PNG (comma-separated list for grid)")->delimiter(',');
    cmd.add_option("--out", f.out, "Output path (PNG, or CSV for sweep)");
    cmd.add_option("--alpha", f.alpha, "Content query weight");
    cmd.add_option("--beta", f.beta, "Current query weight (alpha + beta = 1)");
    cmd.add_option("--steps", f.steps, "DDIM steps for inversion and sampling");
    cmd.add_option("--cfg-inversion", f.cfg_inversion, "Guidance scale during inversion");
    cmd.add_option("--cfg-forward", f.cfg_forward, "Guidance scale during sampling");
    cmd.add_option("--sites", f.sites, "Injection sites: decoder, all, or a comma-separated list")->delimiter(',');
    cmd.add_option("--seed", f.seed, "Backend weight seed");
    cmd.add_option("--size", f.size, "Square working resolution in pixels");
    cmd.add_option("--backend", f.backend, "toy or adapter:<name>");
    cmd.add_option("--config", f.config, "JSON config file (flags override it)");
    cmd.add_option("--dump-cache", f.dump_cache, "Write the feature cache here");
    cmd.add_option("--eps-guard", f.eps_guard, "AdaIN variance guard");
    cmd.add_flag("--print-config", f.print_config, "Print the resolved configuration as JSON and exit");
}

Layer flag_layer(const CLI::App& cmd, const Flags& f) {
    Layer l;
    auto given = [&](const char* name) { return cmd.count(name) > 0; };
    if (given("--content")) l.content = f.content;
    if (given("--style")) l.style = f.style;
    if (given("--sites")) l.sites = f.sites;
    if (given("--out")) l.out = f.out;
    if (given("--dump-cache")) l.dump_cache = f.dump_cache;
    if (given("--backend")) l.backend = f.backend;
    if (given("--alpha")) l.alpha = f.alpha;
    if (given("--beta")) l.beta = f.beta;
    if (given("--cfg-inversion")) l.cfg_inversion = f.cfg_inversion;
    if (given("--cfg-forward")) l.cfg_forward = f.cfg_forward;
    if (given("--eps-guard")) l.eps_guard = f.eps_guard;
    if (given("--steps")) l.steps = f.steps;
    if (given("--seed")) l.seed = f.seed;
    if (given("--size")) l.size = f.size;
    if (cmd.get_option_no_throw("--betas") != nullptr && given("--betas")) l.betas = parse_betas(split_list(f.betas));
    return l;
}

// --- job plumbing --------------------------------------------------------------

const std::string& single(const std::vector<std::string>& v, const char* flag) {
    if (v.empty()) throw UsageError(std::string("missing ") + flag);
    if (v.size() > 1) throw UsageError(std::string(flag) + " takes one path for this command");
    return v.front();
}

void require_out(const JobConfig& job) {
    if (job.out.empty()) throw UsageError("missing --out");
}

ms::StylizeConfig stylize_config(const JobConfig& job) {
    ms::StylizeConfig c;
    c.alpha = job.alpha;
    c.beta = job.beta;
    c.steps = job.steps;
    c.cfg_inversion = job.cfg_inversion;
    c.cfg_forward = job.cfg_forward;
    c.eps_guard = job.eps_guard;
    c.seed = job.seed;
    if (job.sites.size() == 1 && job.sites[0] == "decoder") {
        c.injection_sites = ms::InjectionSites::decoder();
    } else if (job.sites.size() == 1 && job.sites[0] == "all") {
        c.injection_sites = ms::InjectionSites::all();
    } else {
        c.injection_sites = ms::InjectionSites::of(job.sites);
    }
    c.validate();
    return c;
}

std::unique_ptr<ms::DenoiserBackend> make_backend(const JobConfig& job) {
    if (job.backend == "toy") {
        if (job.size == 0 || job.size % kCodecFactor != 0) {
            throw ms::ConfigError("--size must be a positive multiple of " + std::to_string(kCodecFactor));
        }
        ms::ToyUNetConfig cfg;
        cfg.latent_channels = 3 * kCodecFactor * kCodecFactor;
        cfg.height = cfg.width = job.size / kCodecFactor;
        cfg.seed = job.seed;
        return ms::build_toy_unet(cfg);
    }
    const std::string prefix = "adapter:";
    if (job.backend.rfind(prefix, 0) == 0) return ms::make_adapter(job.backend.substr(prefix.size()), job.seed);
    throw ms::ConfigError("unknown backend '" + job.backend + "', expected toy or adapter:<name>");
}

ms::ImageBuffer load_image(const std::string& path, std::size_t size) {
    return ms::center_crop_resize(ms::read_png(path), size);
}

int cmd_invert(const JobConfig& job) {
    const std::string& content = single(job.content, "--content");
    if (job.out.empty() && job.dump_cache.empty()) throw UsageError("invert needs --out and/or --dump-cache");
    const auto backend = make_backend(job);
    const ms::SpaceToDepthCodec codec(kCodecFactor);
    const ms::StylizeConfig cfg = stylize_config(job);
    const ms::NoiseSchedule schedule = cfg.schedule.build();
    const ms::TimestepPlan plan = ms::plan_timesteps(schedule, cfg.steps);

    const ms::Latent x = ms::scaled(codec.encode(load_image(content, job.size)), codec.latent_scale());
    ms::FeatureStore store;
    const ms::Latent z_t = ms::csdi_invert(x, *backend, schedule, plan, store, ms::Role::content, cfg);
    if (!job.dump_cache.empty()) ms::save(store, job.dump_cache);
    if (!job.out.empty()) {
        const ms::Latent back =
            ms::ddim_sample(z_t, *backend, schedule, plan, cfg.conditioning_for(*backend), cfg.cfg_forward);
        ms::write_png(job.out, codec.decode(ms::scaled(back, 1.0 / codec.latent_scale())));
        std::printf("reconstruction relative L2 %.6g\n", ms::relative_l2(back, x));
    }
    return 0;
}

int cmd_stylize(const JobConfig& job) {
    const std::string& content = single(job.content, "--content");
    const std::string& style = single(job.style, "--style");
    require_out(job);
    const auto backend = make_backend(job);
    const ms::SpaceToDepthCodec codec(kCodecFactor);
    const ms::StylizeResult r =
        ms::stylize(load_image(content, job.size), load_image(style, job.size), *backend, codec, stylize_config(job));
    ms::write_png(job.out, r.image);
    if (!job.dump_cache.empty()) ms::save(*r.cache, job.dump_cache);
    return 0;
}

int cmd_sweep(const JobConfig& job) {
    const std::string& content = single(job.content, "--content");
    const std::string& style = single(job.style, "--style");
    const auto backend = make_backend(job);
    const ms::SpaceToDepthCodec codec(kCodecFactor);
    ms::StylizeConfig base = stylize_config(job);
    const ms::SweepReport r = ms::beta_sweep(load_image(content, job.size), load_image(style, job.size), *backend,
                                             codec, job.betas, base);
    if (job.out.empty()) {
        std::cout << r.to_csv();
    } else {
        std::ofstream f(job.out, std::ios::binary);
        if (!(f << r.to_csv())) throw ms::IoError("cannot write '" + job.out + "'");
    }
    return 0;
}

// Styles across the top row, contents down the left column, outputs in the
// cells; the corner tile is left white.
int cmd_grid(const JobConfig& job) {
    if (job.content.empty()) throw UsageError("missing --content");
    if (job.style.empty()) throw UsageError("missing --style");
    require_out(job);
    const auto backend = make_backend(job);
    const ms::SpaceToDepthCodec codec(kCodecFactor);
    const ms::StylizeConfig cfg = stylize_config(job);
    const std::size_t n = job.size;
    ms::ImageBuffer sheet((job.content.size() + 1) * n, (job.style.size() + 1) * n, 1.0);
    auto paste = [&](const ms::ImageBuffer& tile, std::size_t row, std::size_t col) {
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x)
                for (std::size_t c = 0; c < 3; ++c) sheet.at(row * n + y, col * n + x, c) = tile.at(y, x, c);
    };
    std::vector<ms::ImageBuffer> styles;
    for (std::size_t j = 0; j < job.style.size(); ++j) {
        styles.push_back(load_image(job.style[j], n));
        paste(styles.back(), 0, j + 1);
    }
    for (std::size_t i = 0; i < job.content.size(); ++i) {
        const ms::ImageBuffer content = load_image(job.content[i], n);
        paste(content, i + 1, 0);
        for (std::size_t j = 0; j < styles.size(); ++j) {
            paste(ms::stylize(content, styles[j], *backend, codec, cfg).image, i + 1, j + 1);
        }
    }
    ms::write_png(job.out, sheet);
    return 0;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MagicStyle: training-free portrait style transfer by DDIM inversion and feature fusion"};
    app.require_subcommand(1);
    Flags flags;

    auto* invert = app.add_subcommand("invert", "DDIM-invert the content image, recording attention features");
    auto* stylize = app.add_subcommand("stylize", "Stylize a content image with a style image");
    auto* sweep = app.add_subcommand("sweep", "Run a beta sweep and emit CSV");
    auto* grid = app.add_subcommand("grid", "Tile stylizations of every content/style pair into one PNG");
    for (auto* cmd : {invert, stylize, sweep, grid}) add_flags(*cmd, flags);
    sweep->add_option("--betas", flags.betas, "Comma-separated ascending betas in [0, 1]");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << one_line(e.what()) << "\n";
        return 2;
    }

    CLI::App* cmd = app.get_subcommands().front();
    try {
        std::vector<Layer> layers;
        if (cmd->count("--config")) layers.push_back(read_config_file(flags.config));
        layers.push_back(flag_layer(*cmd, flags));
        const JobConfig job = resolve(layers);
        if (flags.print_config) {
            std::cout << job.to_json().dump() << "\n";
            return 0;
        }
        const std::string name = cmd->get_name();
        if (name == "invert") return cmd_invert(job);
        if (name == "stylize") return cmd_stylize(job);
        if (name == "sweep") return cmd_sweep(job);
        return cmd_grid(job);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const ms::Error& e) {
        std::cerr << "error: " << e.category() << ": " << one_line(e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
        return 1;
    }
}
