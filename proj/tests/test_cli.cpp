#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "json.hpp"
#include "magicstyle/feature_cache.hpp"
#include "magicstyle/png_io.hpp"
#include "test_util.hpp"

namespace magicstyle {
namespace {

namespace fs = std::filesystem;

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = test::temp_path(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        write_png(path("c.png"), test::synthetic_content(1));
        write_png(path("s.png"), test::synthetic_style(1));
        write_png(path("s2.png"), test::synthetic_style(2));
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    Outcome run(const std::string& args) const {
        const std::string out = path("stdout.txt"), err = path("stderr.txt");
        const std::string cmd = std::string(MAGICSTYLE_CLI) + " " + args + " >" + out + " 2>" + err;
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    fs::path dir_;
};

TEST_F(Cli, StylizeWithDefaultsWritesPng) {
    const Outcome r = run("stylize --content " + path("c.png") + " --style " + path("s.png") + " --out " + path("o.png"));
    ASSERT_EQ(r.code, 0) << r.err;
    const ImageBuffer im = read_png(path("o.png"));
    EXPECT_EQ(im.height(), 64u);
    EXPECT_EQ(im.width(), 64u);
}

TEST_F(Cli, MissingContentIsAUsageError) {
    const Outcome r = run("stylize --style " + path("s.png") + " --out " + path("o.png"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("--content"), std::string::npos);
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("stylize --no-such-flag").code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, SweepEmitsOneCsvRowPerBeta) {
    const Outcome r = run("sweep --steps 5 --content " + path("c.png") + " --style " + path("s.png"));
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "beta,content_distance,style_stats_distance,psnr_db");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 5);

    const Outcome f = run("sweep --steps 5 --betas 0,1 --out " + path("sweep.csv") + " --content " + path("c.png") +
                      " --style " + path("s.png"));
    ASSERT_EQ(f.code, 0) << f.err;
    EXPECT_EQ(slurp(path("sweep.csv")).rfind("beta,", 0), 0u);
}

TEST_F(Cli, FlagBeatsConfigBeatsDefault) {
    std::ofstream(path("cfg.json")) << R"({"steps": 12, "seed": 3, "cfg_forward": 2.5, "alpha": 0.6})";
    const Outcome r = run("stylize --print-config --config " + path("cfg.json") + " --steps 7");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["steps"], 7);           // flag
    EXPECT_EQ(j["seed"], 3);            // config
    EXPECT_EQ(j["cfg_forward"], 2.5);   // config
    EXPECT_EQ(j["cfg_inversion"], 1.0); // default
    EXPECT_EQ(j["size"], 64);           // default
    EXPECT_DOUBLE_EQ(j["alpha"].get<double>(), 0.6);
    EXPECT_DOUBLE_EQ(j["beta"].get<double>(), 0.4);

    // a flag for beta overrides the whole pair from the config
    const auto k = nlohmann::json::parse(run("stylize --print-config --config " + path("cfg.json") + " --beta 0.3").out);
    EXPECT_DOUBLE_EQ(k["alpha"].get<double>(), 0.7);
    EXPECT_DOUBLE_EQ(k["beta"].get<double>(), 0.3);

    const auto d = nlohmann::json::parse(run("stylize --print-config").out);
    EXPECT_EQ(d["steps"], 30);
    EXPECT_EQ(d["alpha"], 0.8);
    EXPECT_EQ(d["beta"], 0.2);
    EXPECT_EQ(d["cfg_forward"], 5.0);
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
    const std::string common = " --steps 6 --content " + path("c.png") + " --style " + path("s.png");
    ASSERT_EQ(run("stylize --out " + path("a.png") + common).code, 0);
    ASSERT_EQ(run("stylize --out " + path("b.png") + common).code, 0);
    EXPECT_EQ(slurp(path("a.png")), slurp(path("b.png")));
}

TEST_F(Cli, RuntimeErrorsPrintCategory) {
    const std::string io = " --out " + path("o.png") + " --style " + path("s.png");
    Outcome r = run("stylize --content " + path("absent.png") + io);
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("error: io: ", 0), 0u) << r.err;

    r = run("stylize --alpha 0.5 --beta 0.7 --content " + path("c.png") + io);
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("error: constraint: ", 0), 0u) << r.err;

    std::ofstream(path("bad.json")) << R"({"stepz": 3})";
    r = run("stylize --config " + path("bad.json") + " --content " + path("c.png") + io);
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("error: config: ", 0), 0u) << r.err;
    EXPECT_NE(r.err.find("stepz"), std::string::npos);

    r = run("stylize --sites up.9.attn.9 --content " + path("c.png") + io);
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("error: site: ", 0), 0u) << r.err;
}

TEST_F(Cli, DumpedCacheLoadsBack) {
    const Outcome r = run("stylize --steps 4 --dump-cache " + path("cache.msfc") + " --content " + path("c.png") +
                      " --style " + path("s.png") + " --out " + path("o.png"));
    ASSERT_EQ(r.code, 0) << r.err;
    const FeatureStore store = load(path("cache.msfc"));
    EXPECT_EQ(store.count(Role::content), 4u * 2u);
    EXPECT_EQ(store.count(Role::style), 4u * 2u);

    const Outcome inv = run("invert --steps 4 --dump-cache " + path("inv.msfc") + " --content " + path("c.png"));
    ASSERT_EQ(inv.code, 0) << inv.err;
    const FeatureStore content_only = load(path("inv.msfc"));
    EXPECT_EQ(content_only.count(Role::content), 4u * 2u);
    EXPECT_EQ(content_only.count(Role::style), 0u);
}

TEST_F(Cli, GridTilesContentsByStyles) {
    const Outcome r = run("grid --steps 3 --size 32 --content " + path("c.png") + " --style " + path("s.png") + "," +
                      path("s2.png") + " --out " + path("g.png"));
    ASSERT_EQ(r.code, 0) << r.err;
    const ImageBuffer g = read_png(path("g.png"));
    EXPECT_EQ(g.height(), 2u * 32u);
    EXPECT_EQ(g.width(), 3u * 32u);
    EXPECT_EQ(g.at(0, 0, 0), 1.0);
}

}  // namespace
}  // namespace magicstyle
