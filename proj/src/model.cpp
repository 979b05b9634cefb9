// SPDX-License-Identifier: Apache-2.0
#include "cimn/model.hpp"

#include <cstring>
#include <fstream>

#include "cimn/rng.hpp"

namespace cimn::model {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kRunningMomentum = 0.1;
constexpr char kCheckpointMagic[8] = {'C', 'I', 'M', 'N', 'C', 'K', 'P', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

Matrix fan_in_normal(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix w(rows, cols);
    const double sigma = 1.0 / std::sqrt(static_cast<double>(rows));
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = sigma * rng.normal();
    return w;
}

struct NormLayer {
    std::string prefix;  // parameter names: <prefix>.gamma/.beta; stats: <prefix>.mean/.var
    std::size_t width;
};

std::vector<NormLayer> norm_layers(const ModelConfig& c) {
    std::vector<NormLayer> layers;
    for (std::size_t s = 0; s < 4; ++s)
        layers.push_back({"stage" + std::to_string(s + 1), c.stage_dims[s]});
    layers.push_back({"neck", c.embedding_dim});
    return layers;
}

// Normalize `x` over the batch dimension. Train mode uses batch statistics
// as graph nodes (gradients flow through mean and variance) and updates the
// running estimates numerically; eval mode reads the running estimates as
// constants, making the result a pure per-row function.
ad::NodeId batch_norm(ad::Tape& tape, ad::NodeId x, ad::NodeId gamma, ad::NodeId beta, Mode mode,
                      ad::ParamSet& running, const std::string& prefix) {
    const std::size_t n = tape.value(x).rows();
    ad::NodeId centered, inv_std;
    if (mode == Mode::kTrain) {
        if (n < 2) throw ContractViolation("forward: train mode needs a batch of >= 2");
        const double inv_n = 1.0 / static_cast<double>(n);
        ad::NodeId mean = tape.scale(tape.col_sum(x), inv_n);
        centered = tape.sub(x, tape.broadcast_rows(mean, n));
        ad::NodeId var = tape.scale(tape.col_sum(tape.mul(centered, centered)), inv_n);
        inv_std = tape.recip(tape.sqrt(tape.add_scalar(var, kNormEps)));

        Matrix& rmean = running.at(prefix + ".mean");
        Matrix& rvar = running.at(prefix + ".var");
        const Matrix& bmean = tape.value(mean);
        const Matrix& bvar = tape.value(var);
        const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
        for (std::size_t j = 0; j < rmean.size(); ++j) {
            rmean.data()[j] = (1.0 - kRunningMomentum) * rmean.data()[j] +
                              kRunningMomentum * bmean.data()[j];
            rvar.data()[j] = (1.0 - kRunningMomentum) * rvar.data()[j] +
                             kRunningMomentum * bvar.data()[j] * unbias;
        }
    } else {
        ad::NodeId mean = tape.constant(running.at(prefix + ".mean"));
        ad::NodeId var = tape.constant(running.at(prefix + ".var"));
        centered = tape.sub(x, tape.broadcast_rows(mean, n));
        inv_std = tape.recip(tape.sqrt(tape.add_scalar(var, kNormEps)));
    }
    ad::NodeId normalized = tape.mul(centered, tape.broadcast_rows(inv_std, n));
    return tape.add(tape.mul(normalized, tape.broadcast_rows(gamma, n)),
                    tape.broadcast_rows(beta, n));
}

ad::NodeId affine(ad::Tape& tape, ad::NodeId x, ad::NodeId w, ad::NodeId b) {
    return tape.add(tape.matmul(x, w), tape.broadcast_rows(b, tape.value(x).rows()));
}

}  // namespace

Tap tap_from_string(std::string_view s) {
    if (s == "stage2") return Tap::kStage2;
    if (s == "stage3") return Tap::kStage3;
    if (s == "stage4") return Tap::kStage4;
    throw ContractViolation("unknown alignment tap '" + std::string(s) + "'");
}

std::string tap_to_string(Tap t) { return "stage" + std::to_string(static_cast<int>(t)); }

void ModelConfig::validate() const {
    if (input_dim < 1 || embedding_dim < 1 || num_classes < 1)
        throw ContractViolation("ModelConfig: dims must be >= 1");
    for (std::size_t d : stage_dims)
        if (d < 1) throw ContractViolation("ModelConfig: stage dims must be >= 1");
}

ad::ParamSet init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(mix_seed(seed, 0x6d6f64656cull));  // "model"
    ad::ParamSet p;
    std::size_t in_dim = config.input_dim;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string prefix = "stage" + std::to_string(s + 1);
        const std::size_t out_dim = config.stage_dims[s];
        p.add(prefix + ".weight", fan_in_normal(rng, in_dim, out_dim));
        p.add(prefix + ".bias", Matrix(1, out_dim, 0.0));
        p.add(prefix + ".gamma", Matrix(1, out_dim, 1.0));
        p.add(prefix + ".beta", Matrix(1, out_dim, 0.0));
        in_dim = out_dim;
    }
    p.add("embed.weight", fan_in_normal(rng, config.stage_dims[3], config.embedding_dim));
    p.add("embed.bias", Matrix(1, config.embedding_dim, 0.0));
    p.add("neck.gamma", Matrix(1, config.embedding_dim, 1.0));
    p.add("neck.beta", Matrix(1, config.embedding_dim, 0.0));
    p.add("classifier.weight", fan_in_normal(rng, config.embedding_dim, config.num_classes));
    p.add("classifier.bias", Matrix(1, config.num_classes, 0.0));
    return p;
}

ad::ParamSet init_running_stats(const ModelConfig& config) {
    ad::ParamSet stats;
    for (const NormLayer& layer : norm_layers(config)) {
        stats.add(layer.prefix + ".mean", Matrix(1, layer.width, 0.0));
        stats.add(layer.prefix + ".var", Matrix(1, layer.width, 1.0));
    }
    return stats;
}

ForwardTaps forward(ad::Tape& tape, const ad::BoundParams& params, const Matrix& batch, Mode mode,
                    ad::ParamSet& running, const ModelConfig& config) {
    if (batch.rows() == 0) throw ContractViolation("forward: empty batch");
    if (batch.cols() != config.input_dim)
        throw ContractViolation("forward: feature dim " + std::to_string(batch.cols()) +
                                " != input_dim " + std::to_string(config.input_dim));

    ForwardTaps taps;
    ad::NodeId x = tape.constant(batch);
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string prefix = "stage" + std::to_string(s + 1);
        ad::NodeId h = tape.relu(
            affine(tape, x, params.at(prefix + ".weight"), params.at(prefix + ".bias")));
        x = batch_norm(tape, h, params.at(prefix + ".gamma"), params.at(prefix + ".beta"), mode,
                       running, prefix);
        taps.stage[s] = x;
    }
    // Pooling is the identity for vector features; the pooled pre-neck
    // feature is the retrieval embedding.
    taps.embedding = affine(tape, x, params.at("embed.weight"), params.at("embed.bias"));
    ad::NodeId neck = batch_norm(tape, taps.embedding, params.at("neck.gamma"),
                                 params.at("neck.beta"), mode, running, "neck");
    taps.logits = affine(tape, neck, params.at("classifier.weight"), params.at("classifier.bias"));
    return taps;
}

ad::NodeId tap_node(const ForwardTaps& taps, Tap tap) {
    return taps.stage[static_cast<std::size_t>(tap) - 1];
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_param_set(std::ostream& os, const ad::ParamSet& set) {
    write_u64(os, set.count());
    for (const auto& e : set) {
        write_u64(os, e.name.size());
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_u64(os, e.value.rows());
        write_u64(os, e.value.cols());
        os.write(reinterpret_cast<const char*>(e.value.data()),
                 static_cast<std::streamsize>(e.value.size() * sizeof(double)));
    }
}

ad::ParamSet read_param_set(std::istream& is) {
    ad::ParamSet set;
    const std::uint64_t count = read_u64(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = read_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t rows = read_u64(is);
        const std::uint64_t cols = read_u64(is);
        Matrix m(rows, cols);
        is.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(double)));
        set.add(std::move(name), std::move(m));
    }
    return set;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_u32(os, kCheckpointVersion);
    write_u64(os, state.config.input_dim);
    for (std::size_t d : state.config.stage_dims) write_u64(os, d);
    write_u64(os, state.config.embedding_dim);
    write_u64(os, state.config.num_classes);
    write_u32(os, static_cast<std::uint32_t>(state.config.alignment_tap));
    write_u64(os, state.epoch);
    write_param_set(os, state.params);
    write_param_set(os, state.running);
    if (!os) throw IoError("write failed: " + path);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    ModelState state;
    state.config.input_dim = read_u64(is);
    for (std::size_t s = 0; s < 4; ++s) state.config.stage_dims[s] = read_u64(is);
    state.config.embedding_dim = read_u64(is);
    state.config.num_classes = read_u64(is);
    state.config.alignment_tap = static_cast<Tap>(read_u32(is));
    state.epoch = read_u64(is);
    state.params = read_param_set(is);
    state.running = read_param_set(is);
    if (!is) throw IoError("truncated checkpoint: " + path);
    return state;
}

}  // namespace cimn::model
