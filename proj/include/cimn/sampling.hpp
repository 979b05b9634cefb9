// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cimn/data.hpp"

namespace cimn::sampling {

struct SctSplit {
    data::Dataset dataset;
    std::size_t dropped_identities = 0;
};

// Single-camera-training split: for each identity, keep the images of one
// randomly chosen camera (among cameras holding at least `min_images` of
// it). Identities below the threshold on every camera are dropped and
// counted. Sample order follows the source dataset.
SctSplit build_sct_split(const data::Dataset& dataset, std::uint64_t seed,
                         std::size_t min_images = 2);

// Control-group split: a uniform subset of exactly `target_size` images,
// cross-camera pairs permitted. Source order preserved.
data::Dataset build_cg_split(const data::Dataset& dataset, std::size_t target_size,
                             std::uint64_t seed);

struct CameraPair {
    std::size_t mtr_index = 0;  // index into the dataset's sorted camera list
    std::size_t mte_index = 0;
};

// Meta-train camera rotates as epoch mod N; the meta-test camera is drawn
// uniformly from the others, fixed for the whole epoch and deterministic
// given (epoch, seed).
CameraPair camera_pair_schedule(std::size_t epoch, std::size_t num_cameras, std::uint64_t seed);

struct MetaBatch {
    std::vector<std::size_t> mtr;  // sample indices into the split
    std::vector<std::size_t> mte;
    std::size_t p = 0;
    std::size_t k = 0;
    std::vector<int> mtr_cameras;  // camera sets actually drawn from, sorted
    std::vector<int> mte_cameras;
};

// Seed for the batch at (epoch, batch_index); keys every random choice the
// draw makes, which is what lets a resumed run replay the schedule exactly.
std::uint64_t batch_draw_seed(std::uint64_t seed, std::size_t epoch, std::size_t batch_index);

// Draws P identities x K images per side. Side camera sets start from the
// scheduled pair and grow to r cameras each; an identity contributes images
// from exactly one camera, and no identity appears on both sides. Throws
// InfeasibleSampling naming the cameras when the request cannot be met.
MetaBatch sample_meta_batch(const data::Dataset& split, const CameraPair& pair, std::size_t p,
                            std::size_t k, std::size_t r, std::uint64_t draw_seed);

// Type-invariant check used by tests and the training loop's debug path.
void validate_meta_batch(const MetaBatch& batch, const data::Dataset& split);

}  // namespace cimn::sampling
