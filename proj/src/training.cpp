// SPDX-License-Identifier: Apache-2.0
#include "cimn/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "cimn/rng.hpp"

namespace cimn::train {

namespace {

std::string fmt(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw IoError("metric formatting failed");
    return std::string(buf, ptr);
}

std::string metric_line(std::size_t epoch, std::size_t step, double eta,
                        const LossBreakdown& b) {
    std::string line = "epoch=" + std::to_string(epoch) + " step=" + std::to_string(step) +
                       " eta=" + fmt(eta) + " tri_mtr=" + fmt(b.tri_mtr) +
                       " tri_mte=" + fmt(b.tri_mte) + " smi=" + fmt(b.smi) +
                       " mtri=" + fmt(b.mtri) + " mcl=" + fmt(b.mcl) + " mca=" + fmt(b.mca) +
                       " sigma=" + fmt(b.sigma) + " total=" + fmt(b.total);
    return line;
}

std::size_t default_batches_per_epoch(const data::Dataset& split, std::size_t p, std::size_t k) {
    std::size_t min_usable = std::numeric_limits<std::size_t>::max();
    for (int cam : split.cameras()) {
        std::size_t usable = 0;
        for (int identity : split.identities_on_camera(cam)) {
            const std::size_t count = split.images_of(cam, identity).size();
            if (count >= k) usable += count;
        }
        min_usable = std::min(min_usable, usable);
    }
    if (min_usable == std::numeric_limits<std::size_t>::max()) min_usable = 0;
    return std::max<std::size_t>(1, min_usable / (p * k));
}

// Conventional identity-balanced P*K batch over the whole split, cameras
// mixed freely.
std::vector<std::size_t> sample_baseline_batch(const data::Dataset& split, std::size_t p,
                                               std::size_t k, std::uint64_t draw_seed) {
    Rng rng(draw_seed);
    std::vector<int> eligible;
    for (int identity : split.identities())
        if (split.images_of_identity(identity).size() >= k) eligible.push_back(identity);
    if (eligible.size() < p)
        throw InfeasibleSampling("baseline batch: need " + std::to_string(p) +
                                 " identities with >= " + std::to_string(k) + " images, found " +
                                 std::to_string(eligible.size()));
    std::vector<std::size_t> id_pick = rng.sample_without_replacement(eligible.size(), p);
    std::vector<std::size_t> batch;
    batch.reserve(p * k);
    for (std::size_t pi : id_pick) {
        const std::vector<std::size_t>& images = split.images_of_identity(eligible[pi]);
        std::vector<std::size_t> img_pick = rng.sample_without_replacement(images.size(), k);
        std::sort(img_pick.begin(), img_pick.end());
        for (std::size_t ii : img_pick) batch.push_back(images[ii]);
    }
    return batch;
}

void apply_sgd(ad::ParamSet& params, ad::Tape& tape, std::span<const ad::NodeId> grads,
               double eta) {
    for (std::size_t i = 0; i < params.count(); ++i) {
        Matrix& w = params.value(i);
        const Matrix& g = tape.value(grads[i]);
        for (std::size_t j = 0; j < w.size(); ++j) w.data()[j] -= eta * g.data()[j];
    }
    if (!params.all_finite())
        throw NumericFailure(0, "sgd_update", "parameters left the finite range");
}

// final.ckpt when present, otherwise the highest-epoch periodic snapshot.
std::string latest_checkpoint(const std::string& out_dir) {
    namespace fs = std::filesystem;
    const std::string final_path = out_dir + "/final.ckpt";
    if (fs::exists(final_path)) return final_path;
    std::string best;
    long best_epoch = -1;
    if (fs::is_directory(out_dir)) {
        for (const auto& entry : fs::directory_iterator(out_dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("ckpt_epoch_", 0) != 0) continue;
            const long epoch = std::atol(name.c_str() + std::string("ckpt_epoch_").size());
            if (epoch > best_epoch) {
                best_epoch = epoch;
                best = entry.path().string();
            }
        }
    }
    if (best.empty()) throw IoError("train: no checkpoint to resume from under " + out_dir);
    return best;
}

// Keep only records at or before `epoch` (lines start with "epoch=N ").
void truncate_log(const std::string& path, std::size_t epoch) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return;
    std::string kept, line;
    while (std::getline(is, line)) {
        if (line.rfind("epoch=", 0) == 0) {
            const std::size_t line_epoch =
                static_cast<std::size_t>(std::atol(line.c_str() + 6));
            if (line_epoch > epoch) continue;
        }
        kept += line;
        kept += '\n';
    }
    is.close();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << kept;
}

}  // namespace

Method method_from_string(std::string_view s) {
    if (s == "cimn") return Method::kCimn;
    if (s == "triplet") return Method::kTripletBaseline;
    throw ContractViolation("unknown method '" + std::string(s) + "' (expected cimn|triplet)");
}

std::string method_to_string(Method m) {
    return m == Method::kCimn ? "cimn" : "triplet";
}

void TrainConfig::validate() const {
    weights.validate();
    if (!(base_lr > 0.0)) throw ContractViolation("base_lr must be positive");
    if (max_epoch < 1) throw ContractViolation("max_epoch must be >= 1");
    if (p < 2 || k < 2) throw ContractViolation("need P >= 2 and K >= 2");
    if (r < 1) throw ContractViolation("r must be >= 1");
    if (inner_eta_override < 0.0) throw ContractViolation("inner_eta_override must be >= 0");
}

double lr_schedule(std::size_t epoch, std::size_t max_epoch, double base_lr) {
    if (epoch < 1 || epoch > max_epoch)
        throw ContractViolation("lr_schedule: epoch " + std::to_string(epoch) +
                                " outside [1, " + std::to_string(max_epoch) + "]");
    const double s = static_cast<double>(max_epoch) / 240.0;
    const auto scaled = [s](double breakpoint) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(breakpoint * s)));
    };
    const std::size_t warm = scaled(30.0);
    const std::size_t decay1 = scaled(120.0);
    const std::size_t decay2 = scaled(180.0);
    if (epoch <= warm) return base_lr * static_cast<double>(epoch) / static_cast<double>(warm);
    if (epoch <= decay1) return base_lr;
    if (epoch <= decay2) return base_lr * 0.1;
    return base_lr * 0.01;
}

std::vector<int> class_map(const data::Dataset& split) { return split.identities(); }

losses::LabeledBatch to_labeled(const data::Dataset& split, std::span<const std::size_t> indices,
                                const std::vector<int>& classes) {
    losses::LabeledBatch batch;
    batch.features = split.stack_features(indices);
    batch.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        const int identity = split.samples()[i].identity;
        auto it = std::lower_bound(classes.begin(), classes.end(), identity);
        if (it == classes.end() || *it != identity)
            throw ContractViolation("to_labeled: identity not in class map");
        batch.labels.push_back(static_cast<int>(it - classes.begin()));
    }
    return batch;
}

LossBreakdown meta_step(model::ModelState& state, const losses::LabeledBatch& mtr,
                        const losses::LabeledBatch& mte, const TrainConfig& config, double eta) {
    config.weights.validate();
    if (!state.params.all_finite())
        throw ContractViolation("meta_step: parameters must be finite");

    ad::Tape tape;
    ad::BoundParams theta = ad::bind(tape, state.params);
    const double inner_eta = config.inner_eta_override > 0.0 ? config.inner_eta_override : eta;

    losses::MetaForward mf = losses::cross_camera_forward(
        tape, state.config, theta, mtr, mte, inner_eta, config.weights.margin,
        config.first_order, config.weights.mean_reduce, model::Mode::kTrain, state.running);

    ad::NodeId smi = losses::simulation_loss(tape, mf, config.weights.lambda);
    ad::NodeId mtri = losses::meta_triplet(tape, mf.mtr.embedding, mtr.labels, mf.mte.embedding,
                                           mte.labels, config.weights.margin,
                                           config.weights.mean_reduce);
    ad::NodeId mcl = losses::meta_classification(tape, mf, mtr, mte, config.weights.mean_reduce);

    ad::NodeId tap_mtr = model::tap_node(mf.mtr, state.config.alignment_tap);
    ad::NodeId tap_mte = model::tap_node(mf.mte, state.config.alignment_tap);
    const double sigma = config.weights.mmd_bandwidth > 0.0
                             ? config.weights.mmd_bandwidth
                             : losses::median_pairwise_distance(tape.value(tap_mtr),
                                                                tape.value(tap_mte));
    ad::NodeId mca =
        losses::meta_camera_alignment(tape, tap_mtr, tap_mte, sigma,
                                      config.weights.mmd_single_cross_term);

    ad::NodeId total = losses::total_loss(tape, smi, mtri, mcl, mca, config.weights);

    std::vector<ad::NodeId> grads = tape.backward(total, theta.nodes);
    apply_sgd(state.params, tape, grads, eta);

    LossBreakdown breakdown;
    breakdown.tri_mtr = tape.scalar_value(mf.tri_mtr);
    breakdown.tri_mte = tape.scalar_value(mf.tri_mte);
    breakdown.smi = tape.scalar_value(smi);
    breakdown.mtri = tape.scalar_value(mtri);
    breakdown.mcl = tape.scalar_value(mcl);
    breakdown.mca = tape.scalar_value(mca);
    breakdown.total = tape.scalar_value(total);
    breakdown.sigma = sigma;
    return breakdown;
}

LossBreakdown baseline_step(model::ModelState& state, const losses::LabeledBatch& batch,
                            const TrainConfig& config, double eta) {
    if (!state.params.all_finite())
        throw ContractViolation("baseline_step: parameters must be finite");
    ad::Tape tape;
    ad::BoundParams theta = ad::bind(tape, state.params);
    model::ForwardTaps taps = model::forward(tape, theta, batch.features, model::Mode::kTrain,
                                             state.running, state.config);
    ad::NodeId tri = losses::batch_hard_triplet(tape, taps.embedding, batch.labels,
                                                config.weights.margin,
                                                config.weights.mean_reduce);
    std::vector<ad::NodeId> grads = tape.backward(tri, theta.nodes);
    apply_sgd(state.params, tape, grads, eta);

    LossBreakdown breakdown;
    breakdown.tri_mtr = tape.scalar_value(tri);
    breakdown.total = breakdown.tri_mtr;
    return breakdown;
}

TrainResult train(const TrainConfig& config, const data::Dataset& split,
                  const std::string& out_dir, bool resume, std::size_t stop_after_epoch) {
    config.validate();
    if (split.empty()) throw ContractViolation("train: empty split");
    if (split.cameras().size() < 2 && config.method == Method::kCimn)
        throw ContractViolation("train: CIMN needs >= 2 cameras");

    const std::vector<int> classes = class_map(split);
    TrainConfig effective = config;
    effective.model.input_dim = split.feature_dim();
    effective.model.num_classes = classes.size();
    effective.model.validate();

    const std::size_t bpe = config.batches_per_epoch > 0
                                ? config.batches_per_epoch
                                : default_batches_per_epoch(split, config.p, config.k);

    TrainResult result;
    result.batches_per_epoch = bpe;
    std::size_t start_epoch = 1;
    const std::string final_path = out_dir.empty() ? "" : out_dir + "/final.ckpt";
    if (resume) {
        if (final_path.empty()) throw ContractViolation("train: resume needs an output directory");
        result.state = model::load_checkpoint(latest_checkpoint(out_dir));
        if (result.state.config.input_dim != split.feature_dim())
            throw ContractViolation("train: checkpoint input_dim does not match the split");
        start_epoch = result.state.epoch + 1;
        // An interrupted run may have logged past the checkpoint; drop the
        // orphan tail so the resumed log matches an uninterrupted one.
        truncate_log(out_dir + "/metrics.log", result.state.epoch);
        truncate_log(out_dir + "/timing.log", result.state.epoch);
    } else {
        result.state.config = effective.model;
        result.state.params = model::init_params(effective.model, config.seed);
        result.state.running = model::init_running_stats(effective.model);
        result.state.epoch = 0;
    }

    std::ofstream metrics, timing;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const auto mode = resume ? std::ios::app : std::ios::trunc;
        metrics.open(out_dir + "/metrics.log", std::ios::binary | mode);
        timing.open(out_dir + "/timing.log", std::ios::binary | mode);
        if (!metrics || !timing) throw IoError("train: cannot open logs under " + out_dir);
    }

    const std::size_t last_epoch = stop_after_epoch > 0
                                       ? std::min(stop_after_epoch, config.max_epoch)
                                       : config.max_epoch;
    for (std::size_t epoch = start_epoch; epoch <= last_epoch; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        const double eta = lr_schedule(epoch, config.max_epoch, config.base_lr);
        sampling::CameraPair pair;
        if (config.method == Method::kCimn)
            pair = sampling::camera_pair_schedule(epoch, split.cameras().size(), config.seed);

        for (std::size_t b = 0; b < bpe; ++b) {
            const std::uint64_t draw = sampling::batch_draw_seed(config.seed, epoch, b);
            LossBreakdown breakdown;
            if (config.method == Method::kCimn) {
                sampling::MetaBatch mb =
                    sampling::sample_meta_batch(split, pair, config.p, config.k, config.r, draw);
                losses::LabeledBatch mtr = to_labeled(split, mb.mtr, classes);
                losses::LabeledBatch mte = to_labeled(split, mb.mte, classes);
                breakdown = meta_step(result.state, mtr, mte, effective, eta);
            } else {
                std::vector<std::size_t> indices =
                    sample_baseline_batch(split, config.p, config.k, draw);
                losses::LabeledBatch batch = to_labeled(split, indices, classes);
                breakdown = baseline_step(result.state, batch, effective, eta);
            }
            const std::size_t step = (epoch - 1) * bpe + b + 1;
            std::string line = metric_line(epoch, step, eta, breakdown);
            if (metrics.is_open()) metrics << line << '\n';
            result.metric_lines.push_back(std::move(line));
        }

        result.state.epoch = epoch;
        if (timing.is_open()) {
            const double ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - epoch_start)
                                  .count();
            timing << "epoch=" << epoch << " wall_ms=" << fmt(ms) << '\n';
        }
        if (!out_dir.empty() && config.checkpoint_every > 0 &&
            epoch % config.checkpoint_every == 0) {
            model::save_checkpoint(result.state,
                                   out_dir + "/ckpt_epoch_" + std::to_string(epoch) + ".bin");
        }
    }

    if (!final_path.empty()) model::save_checkpoint(result.state, final_path);
    return result;
}

}  // namespace cimn::train
