// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cimn/synthdata.hpp"
#include "cimn/training.hpp"

namespace cimn::eval {

struct EmbeddedItem {
    int sample_id = 0;
    int identity = 0;
    int camera = 0;
};

struct EmbeddedSet {
    Matrix embeddings;  // rows parallel to items
    std::vector<EmbeddedItem> items;
};

// Eval-mode embeddings for a dataset; deterministic and per-row independent.
EmbeddedSet extract_embeddings(const model::ModelState& state, const data::Dataset& samples);

struct Protocol {
    std::vector<int> ranks = {1, 5, 10};
    bool cosine = false;  // off by default: Euclidean matches the training metric

    std::string descriptor() const;
};

struct EvalReport {
    std::vector<std::pair<int, double>> cmc;  // (rank, accuracy), ascending ranks
    double map_score = 0.0;
    std::size_t num_queries = 0;   // queries actually scored
    std::size_t num_excluded = 0;  // queries with no valid positive
    std::string protocol;

    double cmc_at(int rank) const;
    std::string to_table() const;    // human-readable
    std::string to_records() const;  // line-delimited key=value records
};

// Cross-camera retrieval scoring. Gallery entries sharing both identity and
// camera with the query are excluded; remaining entries are ranked by
// distance with ties broken by ascending sample id, so reports are invariant
// to gallery order. AP is non-interpolated.
EvalReport rank_and_score(const EmbeddedSet& queries, const EmbeddedSet& gallery,
                          const Protocol& protocol);

// One full train + eval cycle on a generated dataset. rho=0 data passes
// through an SCT split first (a content no-op for rho=0 raw output); rho>0
// data trains as generated so the CCSP pairs stay in.
struct RunScores {
    double rank1 = 0.0;
    double map_score = 0.0;
};

RunScores run_once(const synth::GeneratorConfig& gen_config, const train::TrainConfig& train_config,
                   bool apply_sct_split);

struct SweepCell {
    double rho = 0.0;
    std::string method;
    std::uint64_t seed = 0;
    double rank1 = 0.0;
    double map_score = 0.0;
};

// Fig.-5-style grid: every rho for both CIMN and the triplet baseline,
// one row per (rho, method, seed), seeds shared cell to cell. Rows sorted
// by rho, then method, then seed.
std::vector<SweepCell> stability_sweep(const synth::GeneratorConfig& gen_base,
                                       const train::TrainConfig& train_base,
                                       std::span<const std::uint64_t> seeds,
                                       std::span<const double> rhos);

struct AblationRow {
    std::string name;
    double gamma1 = 0.0, gamma2 = 0.0, gamma3 = 0.0;
    std::vector<double> rank1s;  // per seed
    std::vector<double> maps;
    double median_rank1 = 0.0;
    double median_map = 0.0;
};

// Loss components added one at a time on SCT data: simulation only, +meta
// triplet, +meta classification, +camera alignment. Identical seeds per row.
std::vector<AblationRow> ablation_grid(const synth::GeneratorConfig& gen_base,
                                       const train::TrainConfig& train_base,
                                       std::span<const std::uint64_t> seeds);

double median(std::vector<double> values);

std::string sweep_to_csv(std::span<const SweepCell> cells);
std::string ablation_to_csv(std::span<const AblationRow> rows);

}  // namespace cimn::eval
