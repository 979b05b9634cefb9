// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cimn/losses.hpp"
#include "cimn/sampling.hpp"

namespace cimn::train {

enum class Method : std::uint8_t { kCimn, kTripletBaseline };

Method method_from_string(std::string_view s);
std::string method_to_string(Method m);

// Defaults follow the published recipe (P=8, K=2, 240 epochs, base rate
// 3.5e-4 with warmup and two step decays). Desk-scale runs override
// max_epoch and base_lr explicitly; the schedule breakpoints compress
// proportionally with max_epoch.
struct TrainConfig {
    model::ModelConfig model;  // input_dim / num_classes are filled from the data
    losses::LossWeights weights;
    double base_lr = 3.5e-4;
    std::size_t max_epoch = 240;
    std::size_t p = 8;
    std::size_t k = 2;
    std::size_t r = 1;
    std::size_t batches_per_epoch = 0;  // 0: floor(min usable camera images / (P*K))
    std::size_t checkpoint_every = 0;   // 0: final checkpoint only
    std::uint64_t seed = 1;
    bool first_order = false;
    double inner_eta_override = 0.0;  // 0: inner step shares the schedule eta
    Method method = Method::kCimn;

    void validate() const;
};

// Warmup for the first eighth of the run, then two factor-10 step decays;
// breakpoints are 30/120/180 scaled by max_epoch/240. Epochs are 1-based.
double lr_schedule(std::size_t epoch, std::size_t max_epoch, double base_lr);

struct LossBreakdown {
    double tri_mtr = 0.0;
    double tri_mte = 0.0;
    double smi = 0.0;
    double mtri = 0.0;
    double mcl = 0.0;
    double mca = 0.0;
    double total = 0.0;
    double sigma = 0.0;  // alignment kernel bandwidth actually used
};

// One meta-optimization step: triplet on the meta-train side, differentiable
// inner update, meta-test evaluation, the three relation losses, combined
// objective, and a single SGD update of theta. Mutates params and running
// statistics in `state`.
LossBreakdown meta_step(model::ModelState& state, const losses::LabeledBatch& mtr,
                        const losses::LabeledBatch& mte, const TrainConfig& config, double eta);

// Plain batch-hard triplet SGD step, the conventional baseline.
LossBreakdown baseline_step(model::ModelState& state, const losses::LabeledBatch& batch,
                            const TrainConfig& config, double eta);

struct TrainResult {
    model::ModelState state;
    std::vector<std::string> metric_lines;  // deterministic per-step records
    std::size_t batches_per_epoch = 0;
};

// Full training loop over a camera-indexed split. When out_dir is nonempty,
// writes metrics.log, periodic checkpoints and final.ckpt there; per-epoch
// wall times go to a separate timing.log so metrics.log stays bit-identical
// across reruns. With resume=true, continues from out_dir/final.ckpt.
// stop_after_epoch > 0 interrupts the run after that epoch (the schedule
// still follows config.max_epoch), which a later resume completes exactly.
TrainResult train(const TrainConfig& config, const data::Dataset& split,
                  const std::string& out_dir = "", bool resume = false,
                  std::size_t stop_after_epoch = 0);

// Identity -> class index map over the split (sorted identities).
std::vector<int> class_map(const data::Dataset& split);

losses::LabeledBatch to_labeled(const data::Dataset& split, std::span<const std::size_t> indices,
                                const std::vector<int>& classes);

}  // namespace cimn::train
