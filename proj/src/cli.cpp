// SPDX-License-Identifier: Apache-2.0
#include "cimn/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cimn/config.hpp"
#include "cimn/eval.hpp"
#include "cimn/gradcheck.hpp"

namespace cimn::cli {

namespace {

namespace fs = std::filesystem;

std::string resolve_out(const std::string& out) {
    const char* root = std::getenv("CIMN_OUT_ROOT");
    if (root && *root && !out.empty() && !fs::path(out).is_absolute())
        return (fs::path(root) / out).string();
    return out;
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os << text;
}

// ---- generate ----------------------------------------------------------

const std::vector<std::string> kGenKeys = {
    "gen.num_identities",      "gen.num_cameras",         "gen.obs_dim",
    "gen.images_per_identity", "gen.camera_shift_strength", "gen.within_identity_noise",
    "gen.ccsp_fraction",       "gen.num_test_identities", "gen.test_images_per_camera",
    "gen.seed",
};

synth::GeneratorConfig gen_config_from(const config::FlatConfig& cfg) {
    synth::GeneratorConfig g;
    g.num_identities = static_cast<std::size_t>(cfg.get_int("gen.num_identities", g.num_identities));
    g.num_cameras = static_cast<std::size_t>(cfg.get_int("gen.num_cameras", g.num_cameras));
    g.obs_dim = static_cast<std::size_t>(cfg.get_int("gen.obs_dim", g.obs_dim));
    g.images_per_identity =
        static_cast<std::size_t>(cfg.get_int("gen.images_per_identity", g.images_per_identity));
    g.camera_shift_strength = cfg.get_real("gen.camera_shift_strength", g.camera_shift_strength);
    g.within_identity_noise = cfg.get_real("gen.within_identity_noise", g.within_identity_noise);
    g.ccsp_fraction = cfg.get_real("gen.ccsp_fraction", g.ccsp_fraction);
    g.num_test_identities =
        static_cast<std::size_t>(cfg.get_int("gen.num_test_identities", g.num_test_identities));
    g.test_images_per_camera = static_cast<std::size_t>(
        cfg.get_int("gen.test_images_per_camera", g.test_images_per_camera));
    g.seed = static_cast<std::uint64_t>(cfg.get_int("gen.seed", static_cast<std::int64_t>(g.seed)));
    return g;
}

void materialize_gen(config::FlatConfig& cfg, const synth::GeneratorConfig& g) {
    cfg.set_int("gen.num_identities", static_cast<std::int64_t>(g.num_identities));
    cfg.set_int("gen.num_cameras", static_cast<std::int64_t>(g.num_cameras));
    cfg.set_int("gen.obs_dim", static_cast<std::int64_t>(g.obs_dim));
    cfg.set_int("gen.images_per_identity", static_cast<std::int64_t>(g.images_per_identity));
    cfg.set_real("gen.camera_shift_strength", g.camera_shift_strength);
    cfg.set_real("gen.within_identity_noise", g.within_identity_noise);
    cfg.set_real("gen.ccsp_fraction", g.ccsp_fraction);
    cfg.set_int("gen.num_test_identities", static_cast<std::int64_t>(g.num_test_identities));
    cfg.set_int("gen.test_images_per_camera", static_cast<std::int64_t>(g.test_images_per_camera));
    cfg.set_int("gen.seed", static_cast<std::int64_t>(g.seed));
}

// ---- train -------------------------------------------------------------

const std::vector<std::string> kTrainKeys = {
    "data.manifest",      "data.split",
    "model.stage_dims",   "model.embedding_dim",     "model.alignment_tap",
    "train.base_lr",      "train.max_epoch",         "train.p",
    "train.k",            "train.r",                 "train.batches_per_epoch",
    "train.checkpoint_every", "train.seed",          "train.first_order",
    "train.inner_eta_override", "train.method",
    "loss.lambda",        "loss.gamma1",             "loss.gamma2",
    "loss.gamma3",        "loss.margin",             "loss.mmd_bandwidth",
    "loss.mmd_single_cross_term", "loss.mean_reduce",
    "eval.query",         "eval.gallery",
};

train::TrainConfig train_config_from(const config::FlatConfig& cfg) {
    train::TrainConfig t;
    std::vector<std::int64_t> dims = cfg.get_int_list("model.stage_dims", {32, 32, 32, 32});
    if (dims.size() != 4) throw IoError("model.stage_dims needs exactly 4 entries");
    for (std::size_t i = 0; i < 4; ++i) t.model.stage_dims[i] = static_cast<std::size_t>(dims[i]);
    t.model.embedding_dim =
        static_cast<std::size_t>(cfg.get_int("model.embedding_dim", t.model.embedding_dim));
    t.model.alignment_tap = model::tap_from_string(cfg.get_string("model.alignment_tap", "stage2"));
    t.base_lr = cfg.get_real("train.base_lr", t.base_lr);
    t.max_epoch = static_cast<std::size_t>(cfg.get_int("train.max_epoch", t.max_epoch));
    t.p = static_cast<std::size_t>(cfg.get_int("train.p", t.p));
    t.k = static_cast<std::size_t>(cfg.get_int("train.k", t.k));
    t.r = static_cast<std::size_t>(cfg.get_int("train.r", t.r));
    t.batches_per_epoch =
        static_cast<std::size_t>(cfg.get_int("train.batches_per_epoch", t.batches_per_epoch));
    t.checkpoint_every =
        static_cast<std::size_t>(cfg.get_int("train.checkpoint_every", t.checkpoint_every));
    t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", static_cast<std::int64_t>(t.seed)));
    t.first_order = cfg.get_bool("train.first_order", t.first_order);
    t.inner_eta_override = cfg.get_real("train.inner_eta_override", t.inner_eta_override);
    t.method = train::method_from_string(cfg.get_string("train.method", "cimn"));
    t.weights.lambda = cfg.get_real("loss.lambda", t.weights.lambda);
    t.weights.gamma1 = cfg.get_real("loss.gamma1", t.weights.gamma1);
    t.weights.gamma2 = cfg.get_real("loss.gamma2", t.weights.gamma2);
    t.weights.gamma3 = cfg.get_real("loss.gamma3", t.weights.gamma3);
    t.weights.margin = cfg.get_real("loss.margin", t.weights.margin);
    t.weights.mmd_bandwidth = cfg.get_real("loss.mmd_bandwidth", t.weights.mmd_bandwidth);
    t.weights.mmd_single_cross_term =
        cfg.get_bool("loss.mmd_single_cross_term", t.weights.mmd_single_cross_term);
    t.weights.mean_reduce = cfg.get_bool("loss.mean_reduce", t.weights.mean_reduce);
    return t;
}

void materialize_train(config::FlatConfig& cfg, const train::TrainConfig& t) {
    cfg.set_int_list("model.stage_dims",
                     {static_cast<std::int64_t>(t.model.stage_dims[0]),
                      static_cast<std::int64_t>(t.model.stage_dims[1]),
                      static_cast<std::int64_t>(t.model.stage_dims[2]),
                      static_cast<std::int64_t>(t.model.stage_dims[3])});
    cfg.set_int("model.embedding_dim", static_cast<std::int64_t>(t.model.embedding_dim));
    cfg.set_string("model.alignment_tap", model::tap_to_string(t.model.alignment_tap));
    cfg.set_real("train.base_lr", t.base_lr);
    cfg.set_int("train.max_epoch", static_cast<std::int64_t>(t.max_epoch));
    cfg.set_int("train.p", static_cast<std::int64_t>(t.p));
    cfg.set_int("train.k", static_cast<std::int64_t>(t.k));
    cfg.set_int("train.r", static_cast<std::int64_t>(t.r));
    cfg.set_int("train.batches_per_epoch", static_cast<std::int64_t>(t.batches_per_epoch));
    cfg.set_int("train.checkpoint_every", static_cast<std::int64_t>(t.checkpoint_every));
    cfg.set_int("train.seed", static_cast<std::int64_t>(t.seed));
    cfg.set_bool("train.first_order", t.first_order);
    cfg.set_real("train.inner_eta_override", t.inner_eta_override);
    cfg.set_string("train.method", train::method_to_string(t.method));
    cfg.set_real("loss.lambda", t.weights.lambda);
    cfg.set_real("loss.gamma1", t.weights.gamma1);
    cfg.set_real("loss.gamma2", t.weights.gamma2);
    cfg.set_real("loss.gamma3", t.weights.gamma3);
    cfg.set_real("loss.margin", t.weights.margin);
    cfg.set_real("loss.mmd_bandwidth", t.weights.mmd_bandwidth);
    cfg.set_bool("loss.mmd_single_cross_term", t.weights.mmd_single_cross_term);
    cfg.set_bool("loss.mean_reduce", t.weights.mean_reduce);
}

int cmd_generate(const std::string& config_path, const std::string& out,
                 std::int64_t seed_override) {
    config::FlatConfig cfg =
        config_path.empty() ? config::FlatConfig{} : config::FlatConfig::parse_file(config_path);
    cfg.require_known(kGenKeys);
    synth::GeneratorConfig gen = gen_config_from(cfg);
    if (seed_override >= 0) gen.seed = static_cast<std::uint64_t>(seed_override);

    const std::string dir = resolve_out(out);
    ensure_dir(dir);
    synth::SynthOutput data = synth::generate(gen);
    data::save_manifest(data.train, dir + "/train.manifest");
    data::save_manifest(data.query, dir + "/query.manifest");
    data::save_manifest(data.gallery, dir + "/gallery.manifest");

    config::FlatConfig resolved;
    materialize_gen(resolved, gen);
    resolved.write_file(dir + "/resolved.cfg");

    synth::SeparabilityReport sep = synth::ground_truth_separability(data);
    std::cout << "generated " << data.train.size() << " train / " << data.query.size()
              << " query / " << data.gallery.size() << " gallery samples under "
              << gen.num_cameras << " cameras (latent-oracle accuracy "
              << config::format_real(sep.accuracy) << ")\n";
    return 0;
}

int cmd_split(const std::string& manifest, const std::string& mode, std::int64_t seed,
              std::int64_t target_size, const std::string& out) {
    if (mode != "sct" && mode != "cg") throw ContractViolation("split mode must be sct or cg");
    data::Dataset dataset = data::load_manifest(manifest);
    const std::string dir = resolve_out(out);
    ensure_dir(dir);
    const std::uint64_t s = static_cast<std::uint64_t>(seed);

    data::SplitFile split;
    split.mode = mode;
    split.seed = s;
    if (mode == "sct") {
        sampling::SctSplit sct = sampling::build_sct_split(dataset, s);
        split.dropped_identities = sct.dropped_identities;
        for (const data::Sample& smp : sct.dataset.samples()) split.sample_ids.push_back(smp.id);
        std::cout << "sct split: retained " << sct.dataset.size() << " of " << dataset.size()
                  << " images, dropped " << sct.dropped_identities << " identities\n";
    } else {
        std::size_t target = target_size > 0 ? static_cast<std::size_t>(target_size) : 0;
        if (target == 0) {
            // Match the SCT split size of the same manifest and seed.
            target = sampling::build_sct_split(dataset, s).dataset.size();
        }
        data::Dataset cg = sampling::build_cg_split(dataset, target, s);
        for (const data::Sample& smp : cg.samples()) split.sample_ids.push_back(smp.id);
        std::cout << "cg split: retained " << cg.size() << " of " << dataset.size()
                  << " images\n";
    }
    data::save_split(split, dir + "/split." + mode);

    config::FlatConfig resolved;
    resolved.set_string("split.manifest", manifest);
    resolved.set_string("split.mode", mode);
    resolved.set_int("split.seed", seed);
    resolved.set_int("split.target_size", target_size);
    resolved.write_file(dir + "/resolved.cfg");
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, bool resume,
              std::int64_t seed_override) {
    config::FlatConfig cfg = config::FlatConfig::parse_file(config_path);
    cfg.require_known(kTrainKeys);
    train::TrainConfig tc = train_config_from(cfg);
    if (seed_override >= 0) tc.seed = static_cast<std::uint64_t>(seed_override);

    const std::string manifest = cfg.get_string("data.manifest", "");
    if (manifest.empty()) throw IoError("train config needs data.manifest");
    data::Dataset dataset = data::load_manifest(manifest);
    const std::string split_path = cfg.get_string("data.split", "");
    if (!split_path.empty())
        dataset = data::apply_split(dataset, data::load_split(split_path));

    const std::string dir = resolve_out(out);
    ensure_dir(dir);
    config::FlatConfig resolved;
    materialize_train(resolved, tc);
    resolved.set_string("data.manifest", manifest);
    resolved.set_string("data.split", split_path);
    resolved.set_string("eval.query", cfg.get_string("eval.query", ""));
    resolved.set_string("eval.gallery", cfg.get_string("eval.gallery", ""));
    resolved.write_file(dir + "/resolved.cfg");

    train::TrainResult result = train::train(tc, dataset, dir, resume);
    std::cout << "trained " << result.state.epoch << " epochs x " << result.batches_per_epoch
              << " batches (" << train::method_to_string(tc.method) << "); checkpoint at " << dir
              << "/final.ckpt\n";

    const std::string query_path = cfg.get_string("eval.query", "");
    const std::string gallery_path = cfg.get_string("eval.gallery", "");
    if (!query_path.empty() && !gallery_path.empty()) {
        eval::EmbeddedSet q =
            eval::extract_embeddings(result.state, data::load_manifest(query_path));
        eval::EmbeddedSet g =
            eval::extract_embeddings(result.state, data::load_manifest(gallery_path));
        eval::EvalReport report = eval::rank_and_score(q, g, eval::Protocol{});
        write_text(dir + "/report.txt", report.to_table());
        write_text(dir + "/report.records", report.to_records());
        std::cout << report.to_table();
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& query, const std::string& gallery,
             const std::string& out, bool cosine) {
    model::ModelState state = model::load_checkpoint(checkpoint);
    eval::Protocol protocol;
    protocol.cosine = cosine;
    eval::EmbeddedSet q = eval::extract_embeddings(state, data::load_manifest(query));
    eval::EmbeddedSet g = eval::extract_embeddings(state, data::load_manifest(gallery));
    eval::EvalReport report = eval::rank_and_score(q, g, protocol);
    std::cout << report.to_table();
    if (!out.empty()) {
        const std::string dir = resolve_out(out);
        ensure_dir(dir);
        write_text(dir + "/report.txt", report.to_table());
        write_text(dir + "/report.records", report.to_records());
        config::FlatConfig resolved;
        resolved.set_string("eval.checkpoint", checkpoint);
        resolved.set_string("eval.query", query);
        resolved.set_string("eval.gallery", gallery);
        resolved.set_bool("eval.cosine", cosine);
        resolved.write_file(dir + "/resolved.cfg");
    }
    return 0;
}

const std::vector<std::string> kSweepExtraKeys = {"sweep.seeds", "sweep.rhos", "sweep.param",
                                                  "sweep.values"};

int cmd_sweep(const std::string& kind, const std::string& config_path, const std::string& out) {
    config::FlatConfig cfg = config::FlatConfig::parse_file(config_path);
    std::vector<std::string> known = kGenKeys;
    known.insert(known.end(), kTrainKeys.begin(), kTrainKeys.end());
    known.insert(known.end(), kSweepExtraKeys.begin(), kSweepExtraKeys.end());
    cfg.require_known(known);

    synth::GeneratorConfig gen = gen_config_from(cfg);
    train::TrainConfig tc = train_config_from(cfg);
    std::vector<std::int64_t> seed_ints = cfg.get_int_list("sweep.seeds", {1, 2, 3});
    std::vector<std::uint64_t> seeds(seed_ints.begin(), seed_ints.end());

    const std::string dir = resolve_out(out);
    ensure_dir(dir);
    config::FlatConfig resolved;
    materialize_gen(resolved, gen);
    materialize_train(resolved, tc);
    resolved.set_string("sweep.kind", kind);
    std::vector<std::int64_t> seeds_back(seeds.begin(), seeds.end());
    resolved.set_int_list("sweep.seeds", seeds_back);

    if (kind == "stability") {
        std::vector<double> rhos = cfg.get_real_list("sweep.rhos", {0.0, 0.2, 0.4, 0.6, 0.8, 1.0});
        resolved.set_real_list("sweep.rhos", rhos);
        resolved.write_file(dir + "/resolved.cfg");
        std::vector<eval::SweepCell> cells = eval::stability_sweep(gen, tc, seeds, rhos);
        write_text(dir + "/table.csv", eval::sweep_to_csv(cells));
        for (const std::string& method : {std::string("cimn"), std::string("triplet")}) {
            std::vector<double> per_rho;
            for (double rho : rhos) {
                std::vector<double> r1s;
                for (const auto& c : cells)
                    if (c.method == method && c.rho == rho) r1s.push_back(c.rank1);
                per_rho.push_back(eval::median(r1s));
            }
            const auto [mn, mx] = std::minmax_element(per_rho.begin(), per_rho.end());
            std::cout << method << ": rank-1 spread over rho = "
                      << config::format_real(*mx - *mn) << "\n";
        }
    } else if (kind == "ablation") {
        resolved.write_file(dir + "/resolved.cfg");
        std::vector<eval::AblationRow> rows = eval::ablation_grid(gen, tc, seeds);
        write_text(dir + "/table.csv", eval::ablation_to_csv(rows));
        for (const auto& row : rows)
            std::cout << row.name << ": rank-1 " << config::format_real(100.0 * row.median_rank1)
                      << "% mAP " << config::format_real(100.0 * row.median_map) << "%\n";
    } else if (kind == "hyperparam") {
        const std::string param = cfg.get_string("sweep.param", "lambda");
        std::vector<double> values =
            cfg.get_real_list("sweep.values", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
        resolved.set_string("sweep.param", param);
        resolved.set_real_list("sweep.values", values);
        resolved.write_file(dir + "/resolved.cfg");
        std::string csv = "param,value,median_rank1,median_map\n";
        for (double value : values) {
            std::vector<double> r1s, maps;
            for (std::uint64_t seed : seeds) {
                train::TrainConfig cell = tc;
                cell.seed = seed;
                if (param == "lambda") cell.weights.lambda = value;
                else if (param == "gamma1") cell.weights.gamma1 = value;
                else if (param == "gamma2") cell.weights.gamma2 = value;
                else if (param == "gamma3") cell.weights.gamma3 = value;
                else throw ContractViolation("sweep.param must be lambda|gamma1|gamma2|gamma3");
                synth::GeneratorConfig cell_gen = gen;
                cell_gen.seed = seed;
                eval::RunScores scores = eval::run_once(cell_gen, cell, /*apply_sct_split=*/true);
                r1s.push_back(scores.rank1);
                maps.push_back(scores.map_score);
            }
            csv += param + "," + config::format_real(value) + "," +
                   config::format_real(eval::median(r1s)) + "," +
                   config::format_real(eval::median(maps)) + "\n";
            std::cout << param << "=" << config::format_real(value) << ": rank-1 "
                      << config::format_real(100.0 * eval::median(r1s)) << "%\n";
        }
        write_text(dir + "/table.csv", csv);
    } else {
        throw ContractViolation("sweep kind must be stability|ablation|hyperparam");
    }
    return 0;
}

int cmd_gradcheck(std::int64_t seed) {
    const std::uint64_t s = static_cast<std::uint64_t>(seed);
    bool all_pass = true;
    for (const gradcheck::Summary& summary :
         {gradcheck::run_loss_gradient_checks(s), gradcheck::run_meta_gradient_checks(s)}) {
        for (const gradcheck::CheckLine& line : summary.lines) {
            std::cout << (line.pass ? "[PASS] " : "[FAIL] ") << line.name
                      << " max_rel_err=" << config::format_real(line.max_rel_err)
                      << " bound=" << config::format_real(line.bound) << "\n";
        }
        all_pass &= summary.all_pass;
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"camera-invariant meta-learning for single-camera-training re-identification"};
    app.require_subcommand(1);

    std::string config_path, out = ".", manifest, mode = "sct", checkpoint, query, gallery, kind;
    std::int64_t seed = 1, target_size = 0, seed_override = -1;
    bool resume = false, cosine = false;

    CLI::App* generate = app.add_subcommand("generate", "generate a synthetic dataset");
    generate->add_option("--config", config_path, "generator config file");
    generate->add_option("--out", out, "output directory")->required();
    generate->add_option("--seed", seed_override, "override gen.seed");

    CLI::App* split = app.add_subcommand("split", "build an SCT or control-group split");
    split->add_option("--manifest", manifest, "dataset manifest")->required();
    split->add_option("--mode", mode, "sct|cg");
    split->add_option("--seed", seed, "split seed");
    split->add_option("--target-size", target_size, "cg only; 0 matches the sct split size");
    split->add_option("--out", out, "output directory")->required();

    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", config_path, "train config file")->required();
    train_cmd->add_option("--out", out, "output directory")->required();
    train_cmd->add_option("--seed", seed_override, "override train.seed");
    train_cmd->add_flag("--resume", resume, "continue from <out>/final.ckpt");

    CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a query/gallery pair");
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--query", query, "query manifest")->required();
    eval_cmd->add_option("--gallery", gallery, "gallery manifest")->required();
    eval_cmd->add_option("--out", out, "output directory (optional)");
    eval_cmd->add_flag("--cosine", cosine, "rank by cosine distance instead of Euclidean");

    CLI::App* sweep = app.add_subcommand("sweep", "run an experiment grid");
    sweep->add_option("--kind", kind, "stability|ablation|hyperparam")->required();
    sweep->add_option("--config", config_path, "sweep config file")->required();
    sweep->add_option("--out", out, "output directory")->required();

    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "run the gradient correctness suite");
    gradcheck_cmd->add_option("--seed", seed, "base seed");

    try {
        app.parse(argc, argv);
        if (generate->parsed()) return cmd_generate(config_path, out, seed_override);
        if (split->parsed()) return cmd_split(manifest, mode, seed, target_size, out);
        if (train_cmd->parsed()) return cmd_train(config_path, out, resume, seed_override);
        if (eval_cmd->parsed()) return cmd_eval(checkpoint, query, gallery, out, cosine);
        if (sweep->parsed()) return cmd_sweep(kind, config_path, out);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(seed);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace cimn::cli
