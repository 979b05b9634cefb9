// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "cimn/autodiff.hpp"

namespace cimn::model {

enum class Tap : std::uint8_t { kStage2 = 2, kStage3 = 3, kStage4 = 4 };

Tap tap_from_string(std::string_view s);
std::string tap_to_string(Tap t);

// Four-stage feedforward extractor over vector observations. Each stage is
// affine -> rectifier -> batch normalization; pooling is the identity for
// vector inputs. The embedding (used by the triplet losses) is taken before
// the normalization neck, logits after it.
struct ModelConfig {
    std::size_t input_dim = 24;
    std::array<std::size_t, 4> stage_dims = {32, 32, 32, 32};
    std::size_t embedding_dim = 16;
    std::size_t num_classes = 2;
    Tap alignment_tap = Tap::kStage2;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

enum class Mode : std::uint8_t { kTrain, kEval };

struct ForwardTaps {
    std::array<ad::NodeId, 4> stage;  // post-normalization activations per stage
    ad::NodeId embedding;             // pooled feature, pre-neck
    ad::NodeId logits;                // classifier output, post-neck
};

// Deterministic initialization: affine weights are fan-in scaled normals,
// biases zero, normalization scale 1 / shift 0.
ad::ParamSet init_params(const ModelConfig& config, std::uint64_t seed);

// Running mean/var entries for every normalization layer, in tape order.
ad::ParamSet init_running_stats(const ModelConfig& config);

// Builds the forward graph for a batch (rows = samples). In train mode the
// normalization layers use batch statistics and update `running` in place
// (momentum 0.1); in eval mode they read `running` as constants and the call
// is pure. Train mode requires at least 2 rows.
ForwardTaps forward(ad::Tape& tape, const ad::BoundParams& params, const Matrix& batch,
                    Mode mode, ad::ParamSet& running, const ModelConfig& config);

ad::NodeId tap_node(const ForwardTaps& taps, Tap tap);

// Config + parameters + running statistics + epoch counter. The unit of
// checkpointing and of evaluation.
struct ModelState {
    ModelConfig config;
    ad::ParamSet params;
    ad::ParamSet running;
    std::uint64_t epoch = 0;
};

// Single-file binary checkpoint, versioned; round trips bit-exactly.
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace cimn::model
