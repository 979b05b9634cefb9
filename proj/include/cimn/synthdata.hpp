// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cimn/data.hpp"

namespace cimn::synth {

// Desk-scale multi-camera identity data. Each identity is a latent unit
// vector; each camera applies a fixed linear map (identity plus a random
// deviation scaled by camera_shift_strength) and adds a bias of norm
// camera_shift_strength. Observations get isotropic Gaussian noise on top.
struct GeneratorConfig {
    std::size_t num_identities = 96;
    std::size_t num_cameras = 4;
    std::size_t obs_dim = 24;
    std::size_t images_per_identity = 4;
    double camera_shift_strength = 0.5;
    double within_identity_noise = 0.05;
    double ccsp_fraction = 0.0;  // fraction of identities photographed by 2 cameras
    std::size_t num_test_identities = 48;
    std::size_t test_images_per_camera = 2;
    std::uint64_t seed = 1;

    void validate() const;
};

struct CameraModel {
    Matrix map;   // obs_dim x obs_dim
    Matrix bias;  // 1 x obs_dim
};

// Train data plus a disjoint-identity test pool observed on every camera:
// queries from camera 0, gallery from the rest. Latents and camera models
// are kept for the separability oracle.
struct SynthOutput {
    data::Dataset train;
    data::Dataset query;
    data::Dataset gallery;
    std::vector<Matrix> train_latents;  // per train identity, 1 x obs_dim
    std::vector<Matrix> test_latents;
    std::vector<CameraModel> cameras;
    GeneratorConfig config;
};

SynthOutput generate(const GeneratorConfig& config);

struct SeparabilityReport {
    double accuracy = 0.0;
    std::size_t num_samples = 0;
};

// Upper reference for retrieval quality: invert each observation through its
// known camera model and classify by nearest latent. Noise-free data scores
// exactly 1.
SeparabilityReport ground_truth_separability(const SynthOutput& output);

}  // namespace cimn::synth
