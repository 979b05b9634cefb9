// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cimn/cli.hpp"
#include "cimn/config.hpp"
#include "cimn/data.hpp"
#include "cimn/model.hpp"

using namespace cimn;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"cimn"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << text;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& child) const { return (path / child).string(); }
};

const char* kGenCfg =
    "gen.num_identities = 16\n"
    "gen.num_cameras = 3\n"
    "gen.obs_dim = 5\n"
    "gen.images_per_identity = 4\n"
    "gen.num_test_identities = 4\n"
    "gen.seed = 5\n";

}  // namespace

TEST_CASE("flat config: parse, defaults, serialize round trip") {
    config::FlatConfig cfg = config::FlatConfig::parse_string(
        "# comment\n"
        "a.b = 3\n"
        "c.d = 1.5, 2.5 # trailing comment\n"
        "e.f = hello\n"
        "g.h = true\n");
    CHECK(cfg.get_int("a.b", 0) == 3);
    CHECK(cfg.get_real_list("c.d", {}) == std::vector<double>{1.5, 2.5});
    CHECK(cfg.get_string("e.f", "") == "hello");
    CHECK(cfg.get_bool("g.h", false));
    CHECK(cfg.get_int("missing", 42) == 42);

    config::FlatConfig reparsed = config::FlatConfig::parse_string(cfg.serialize());
    CHECK(reparsed.serialize() == cfg.serialize());

    CHECK_THROWS_AS(cfg.require_known({"a.b"}), IoError);
    CHECK_THROWS_AS(config::FlatConfig::parse_string("no equals sign\n"), IoError);
}

TEST_CASE("cmd_generate writes manifests and provenance; reruns are byte-identical") {
    TempDir dir1("cli_gen1"), dir2("cli_gen2"), dir3("cli_gen3");
    const std::string cfg_path = dir1 / "gen.cfg";
    write_text(cfg_path, kGenCfg);

    CHECK(run_cli({"generate", "--config", cfg_path, "--out", dir1 / "out"}) == 0);
    CHECK(fs::exists(dir1 / "out/train.manifest"));
    CHECK(fs::exists(dir1 / "out/query.manifest"));
    CHECK(fs::exists(dir1 / "out/gallery.manifest"));
    CHECK(fs::exists(dir1 / "out/resolved.cfg"));

    CHECK(run_cli({"generate", "--config", cfg_path, "--out", dir2 / "out"}) == 0);
    CHECK(slurp(dir1 / "out/train.manifest") == slurp(dir2 / "out/train.manifest"));

    // A rerun from the resolved config alone reproduces the run.
    CHECK(run_cli({"generate", "--config", dir1 / "out/resolved.cfg", "--out", dir3 / "out"}) ==
          0);
    CHECK(slurp(dir1 / "out/train.manifest") == slurp(dir3 / "out/train.manifest"));
    CHECK(slurp(dir1 / "out/resolved.cfg") == slurp(dir3 / "out/resolved.cfg"));
}

TEST_CASE("cmd_generate fails cleanly on a missing config") {
    CHECK(run_cli({"generate", "--config", "does_not_exist.cfg", "--out", "cli_gen_missing"}) !=
          0);
    fs::remove_all("cli_gen_missing");
}

TEST_CASE("cmd_split: sct invariant, cg size matching, seed in the file") {
    TempDir dir("cli_split");
    write_text(dir / "gen.cfg", kGenCfg);
    REQUIRE(run_cli({"generate", "--config", dir / "gen.cfg", "--out", dir / "data"}) == 0);

    CHECK(run_cli({"split", "--manifest", dir / "data/train.manifest", "--mode", "sct", "--seed",
                   "9", "--out", dir / "sct"}) == 0);
    data::SplitFile sct = data::load_split(dir / "sct/split.sct");
    CHECK(sct.mode == "sct");
    CHECK(sct.seed == 9);
    data::Dataset manifest = data::load_manifest(dir / "data/train.manifest");
    data::Dataset applied = data::apply_split(manifest, sct);
    CHECK(applied.satisfies_sct());

    CHECK(run_cli({"split", "--manifest", dir / "data/train.manifest", "--mode", "cg", "--seed",
                   "9", "--out", dir / "cg"}) == 0);
    data::SplitFile cg = data::load_split(dir / "cg/split.cg");
    CHECK(cg.sample_ids.size() == sct.sample_ids.size());
}

TEST_CASE("cmd_train then cmd_eval produce a checkpoint and a valid report") {
    TempDir dir("cli_train");
    write_text(dir / "gen.cfg", kGenCfg);
    REQUIRE(run_cli({"generate", "--config", dir / "gen.cfg", "--out", dir / "data"}) == 0);

    std::string train_cfg =
        "data.manifest = " + (dir / "data/train.manifest") + "\n" +
        "model.stage_dims = 8, 8, 8, 8\n"
        "model.embedding_dim = 4\n"
        "train.p = 3\n"
        "train.k = 2\n"
        "train.max_epoch = 2\n"
        "train.base_lr = 0.05\n"
        "train.seed = 3\n";
    write_text(dir / "train.cfg", train_cfg);
    CHECK(run_cli({"train", "--config", dir / "train.cfg", "--out", dir / "run"}) == 0);
    CHECK(fs::exists(dir / "run/final.ckpt"));
    CHECK(fs::exists(dir / "run/metrics.log"));
    CHECK(fs::exists(dir / "run/resolved.cfg"));

    CHECK(run_cli({"eval", "--checkpoint", dir / "run/final.ckpt", "--query",
                   dir / "data/query.manifest", "--gallery", dir / "data/gallery.manifest",
                   "--out", dir / "eval"}) == 0);
    CHECK(fs::exists(dir / "eval/report.txt"));
    CHECK(fs::exists(dir / "eval/report.records"));

    // An untrained checkpoint still yields a valid (near-chance) report.
    model::ModelConfig mc;
    mc.input_dim = 5;
    mc.stage_dims = {8, 8, 8, 8};
    mc.embedding_dim = 4;
    mc.num_classes = 16;
    model::ModelState fresh;
    fresh.config = mc;
    fresh.params = model::init_params(mc, 77);
    fresh.running = model::init_running_stats(mc);
    model::save_checkpoint(fresh, dir / "fresh.ckpt");
    CHECK(run_cli({"eval", "--checkpoint", dir / "fresh.ckpt", "--query",
                   dir / "data/query.manifest", "--gallery", dir / "data/gallery.manifest"}) ==
          0);
}

TEST_CASE("cmd_train rejects unknown config keys") {
    TempDir dir("cli_badkey");
    write_text(dir / "train.cfg", "data.manifest = x\ntrain.typo_key = 1\n");
    CHECK(run_cli({"train", "--config", dir / "train.cfg", "--out", dir / "run"}) != 0);
}

TEST_CASE("cmd_gradcheck exits zero on the default seed") {
    CHECK(run_cli({"gradcheck", "--seed", "1"}) == 0);
}

TEST_CASE("hyperparam sweep emits one row per value") {
    TempDir dir("cli_sweep");
    std::string cfg =
        "gen.num_identities = 16\n"
        "gen.num_cameras = 3\n"
        "gen.obs_dim = 5\n"
        "gen.images_per_identity = 4\n"
        "gen.num_test_identities = 4\n"
        "model.stage_dims = 8, 8, 8, 8\n"
        "model.embedding_dim = 4\n"
        "train.p = 3\n"
        "train.k = 2\n"
        "train.max_epoch = 2\n"
        "train.base_lr = 0.05\n"
        "sweep.seeds = 1\n"
        "sweep.param = lambda\n"
        "sweep.values = 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9\n";
    write_text(dir / "sweep.cfg", cfg);
    CHECK(run_cli({"sweep", "--kind", "hyperparam", "--config", dir / "sweep.cfg", "--out",
                   dir / "out"}) == 0);
    std::istringstream csv(slurp(dir / "out/table.csv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 10);  // header + 9 values
}

TEST_CASE("stability and ablation sweeps emit their tables") {
    TempDir dir("cli_sweep2");
    std::string cfg =
        "gen.num_identities = 16\n"
        "gen.num_cameras = 3\n"
        "gen.obs_dim = 5\n"
        "gen.images_per_identity = 4\n"
        "gen.num_test_identities = 4\n"
        "model.stage_dims = 8, 8, 8, 8\n"
        "model.embedding_dim = 4\n"
        "train.p = 3\n"
        "train.k = 2\n"
        "train.max_epoch = 2\n"
        "train.base_lr = 0.05\n"
        "sweep.seeds = 1\n"
        "sweep.rhos = 0, 1\n";
    write_text(dir / "sweep.cfg", cfg);

    CHECK(run_cli({"sweep", "--kind", "stability", "--config", dir / "sweep.cfg", "--out",
                   dir / "stab"}) == 0);
    std::string stab = slurp(dir / "stab/table.csv");
    CHECK(stab.rfind("rho,method,seed,rank1,map\n", 0) == 0);
    CHECK(std::count(stab.begin(), stab.end(), '\n') == 5);  // header + 2 rhos x 2 methods

    CHECK(run_cli({"sweep", "--kind", "ablation", "--config", dir / "sweep.cfg", "--out",
                   dir / "abl"}) == 0);
    std::string abl = slurp(dir / "abl/table.csv");
    CHECK(std::count(abl.begin(), abl.end(), '\n') == 5);  // header + 4 rows
}

TEST_CASE("unknown subcommand exits nonzero") {
    CHECK(run_cli({"frobnicate"}) != 0);
}
