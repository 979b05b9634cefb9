// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cimn/matrix.hpp"

namespace cimn::data {

// One observation: a feature vector with an identity label and the camera
// that captured it.
struct Sample {
    int id = 0;
    int identity = 0;
    int camera = 0;
    std::vector<double> features;

    bool operator==(const Sample&) const = default;
};

// Samples plus camera and per-camera identity indices. Index iteration is
// always over sorted keys so downstream draws are reproducible.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<Sample> samples);

    const std::vector<Sample>& samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    std::size_t feature_dim() const;

    const std::vector<int>& cameras() const { return cameras_; }
    const std::vector<int>& identities() const { return identities_; }

    // Sample indices on a camera, in manifest order.
    const std::vector<std::size_t>& on_camera(int camera) const;
    // Identities with at least one image on a camera, sorted.
    std::vector<int> identities_on_camera(int camera) const;
    // Images of one identity on one camera, in manifest order.
    const std::vector<std::size_t>& images_of(int camera, int identity) const;
    // Images of one identity anywhere, in manifest order.
    const std::vector<std::size_t>& images_of_identity(int identity) const;

    // True when every identity's images share a single camera.
    bool satisfies_sct() const;

    Matrix stack_features(std::span<const std::size_t> indices) const;

    bool operator==(const Dataset& other) const { return samples_ == other.samples_; }

private:
    std::vector<Sample> samples_;
    std::vector<int> cameras_;
    std::vector<int> identities_;
    std::map<int, std::vector<std::size_t>> by_camera_;
    std::map<std::pair<int, int>, std::vector<std::size_t>> by_camera_identity_;
    std::map<int, std::vector<std::size_t>> by_identity_;
};

// Line-delimited manifest: a header carrying the feature dimension, then one
// record per sample. Doubles are written in shortest round-trip form, so
// save(load(file)) reproduces the file byte for byte.
void save_manifest(const Dataset& dataset, const std::string& path);
Dataset load_manifest(const std::string& path);

// Split file: the retained sample ids of a parent manifest plus the seed
// and mode used to build the split.
struct SplitFile {
    std::string mode;  // "sct" or "cg"
    std::uint64_t seed = 0;
    std::size_t dropped_identities = 0;
    std::vector<int> sample_ids;
};

void save_split(const SplitFile& split, const std::string& path);
SplitFile load_split(const std::string& path);

// Restrict a dataset to the ids listed in a split, preserving manifest order.
Dataset apply_split(const Dataset& dataset, const SplitFile& split);

}  // namespace cimn::data
