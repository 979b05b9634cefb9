// SPDX-License-Identifier: Apache-2.0
#include "cimn/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "cimn/errors.hpp"

namespace cimn::data {

namespace {

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw IoError("double formatting failed");
    return std::string(buf, ptr);
}

double parse_double(std::string_view s, const char* what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw IoError(std::string("bad number in ") + what + ": '" + std::string(s) + "'");
    return v;
}

long parse_long(std::string_view s, const char* what) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw IoError(std::string("bad integer in ") + what + ": '" + std::string(s) + "'");
    return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && line[i] == ' ') ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace

Dataset::Dataset(std::vector<Sample> samples) : samples_(std::move(samples)) {
    std::set<int> camera_set, identity_set;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const Sample& s = samples_[i];
        if (!samples_.empty() && s.features.size() != samples_[0].features.size())
            throw ContractViolation("Dataset: inconsistent feature dimensions");
        camera_set.insert(s.camera);
        identity_set.insert(s.identity);
        by_camera_[s.camera].push_back(i);
        by_camera_identity_[{s.camera, s.identity}].push_back(i);
        by_identity_[s.identity].push_back(i);
    }
    cameras_.assign(camera_set.begin(), camera_set.end());
    identities_.assign(identity_set.begin(), identity_set.end());
}

std::size_t Dataset::feature_dim() const {
    return samples_.empty() ? 0 : samples_[0].features.size();
}

const std::vector<std::size_t>& Dataset::on_camera(int camera) const {
    static const std::vector<std::size_t> kEmpty;
    auto it = by_camera_.find(camera);
    return it == by_camera_.end() ? kEmpty : it->second;
}

std::vector<int> Dataset::identities_on_camera(int camera) const {
    std::set<int> ids;
    for (std::size_t i : on_camera(camera)) ids.insert(samples_[i].identity);
    return {ids.begin(), ids.end()};
}

const std::vector<std::size_t>& Dataset::images_of(int camera, int identity) const {
    static const std::vector<std::size_t> kEmpty;
    auto it = by_camera_identity_.find({camera, identity});
    return it == by_camera_identity_.end() ? kEmpty : it->second;
}

const std::vector<std::size_t>& Dataset::images_of_identity(int identity) const {
    static const std::vector<std::size_t> kEmpty;
    auto it = by_identity_.find(identity);
    return it == by_identity_.end() ? kEmpty : it->second;
}

bool Dataset::satisfies_sct() const {
    for (const auto& [identity, indices] : by_identity_) {
        const int camera = samples_[indices[0]].camera;
        for (std::size_t i : indices)
            if (samples_[i].camera != camera) return false;
    }
    return true;
}

Matrix Dataset::stack_features(std::span<const std::size_t> indices) const {
    const std::size_t d = feature_dim();
    Matrix out(indices.size(), d);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const Sample& s = samples_[indices[r]];
        for (std::size_t c = 0; c < d; ++c) out(r, c) = s.features[c];
    }
    return out;
}

void save_manifest(const Dataset& dataset, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open manifest for writing: " + path);
    os << "#cimn-manifest v1 dim=" << dataset.feature_dim() << "\n";
    for (const Sample& s : dataset.samples()) {
        os << s.id << ' ' << s.identity << ' ' << s.camera;
        for (double v : s.features) os << ' ' << format_double(v);
        os << '\n';
    }
    if (!os) throw IoError("manifest write failed: " + path);
}

Dataset load_manifest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open manifest: " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("#cimn-manifest v1 dim=", 0) != 0)
        throw IoError("not a manifest file: " + path);
    const std::size_t dim = static_cast<std::size_t>(parse_long(
        std::string_view(line).substr(std::string_view("#cimn-manifest v1 dim=").size()),
        "manifest header"));
    std::vector<Sample> samples;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto fields = split_ws(line);
        if (fields.size() != 3 + dim)
            throw IoError("manifest record has " + std::to_string(fields.size()) +
                          " fields, expected " + std::to_string(3 + dim));
        Sample s;
        s.id = static_cast<int>(parse_long(fields[0], "manifest"));
        s.identity = static_cast<int>(parse_long(fields[1], "manifest"));
        s.camera = static_cast<int>(parse_long(fields[2], "manifest"));
        s.features.reserve(dim);
        for (std::size_t i = 0; i < dim; ++i)
            s.features.push_back(parse_double(fields[3 + i], "manifest"));
        samples.push_back(std::move(s));
    }
    return Dataset(std::move(samples));
}

void save_split(const SplitFile& split, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open split for writing: " + path);
    os << "#cimn-split v1 mode=" << split.mode << " seed=" << split.seed
       << " dropped=" << split.dropped_identities << "\n";
    for (int id : split.sample_ids) os << id << '\n';
    if (!os) throw IoError("split write failed: " + path);
}

SplitFile load_split(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open split: " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("#cimn-split v1 ", 0) != 0)
        throw IoError("not a split file: " + path);
    SplitFile split;
    std::istringstream header(line.substr(std::string("#cimn-split v1 ").size()));
    std::string token;
    while (header >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) throw IoError("bad split header token: " + token);
        const std::string key = token.substr(0, eq);
        const std::string value = token.substr(eq + 1);
        if (key == "mode") split.mode = value;
        else if (key == "seed") split.seed = static_cast<std::uint64_t>(parse_long(value, "split"));
        else if (key == "dropped")
            split.dropped_identities = static_cast<std::size_t>(parse_long(value, "split"));
        else throw IoError("unknown split header key: " + key);
    }
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        split.sample_ids.push_back(static_cast<int>(parse_long(line, "split")));
    }
    return split;
}

Dataset apply_split(const Dataset& dataset, const SplitFile& split) {
    std::set<int> keep(split.sample_ids.begin(), split.sample_ids.end());
    std::vector<Sample> retained;
    retained.reserve(keep.size());
    for (const Sample& s : dataset.samples())
        if (keep.count(s.id)) retained.push_back(s);
    if (retained.size() != keep.size())
        throw IoError("split references " + std::to_string(keep.size() - retained.size()) +
                      " sample ids missing from the manifest");
    return Dataset(std::move(retained));
}

}  // namespace cimn::data
