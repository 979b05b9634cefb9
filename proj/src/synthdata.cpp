// SPDX-License-Identifier: Apache-2.0
#include "cimn/synthdata.hpp"

#include <cmath>
#include <limits>

#include "cimn/rng.hpp"

namespace cimn::synth {

namespace {

Matrix unit_vector(Rng& rng, std::size_t dim) {
    Matrix v(1, dim);
    double norm2 = 0.0;
    do {
        norm2 = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            v(0, i) = rng.normal();
            norm2 += v(0, i) * v(0, i);
        }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < dim; ++i) v(0, i) *= inv;
    return v;
}

CameraModel make_camera(Rng& rng, std::size_t dim, double shift) {
    CameraModel cam;
    cam.map = Matrix(dim, dim);
    const double dev = shift / std::sqrt(static_cast<double>(dim));
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j)
            cam.map(i, j) = (i == j ? 1.0 : 0.0) + dev * rng.normal();
    Matrix dir = unit_vector(rng, dim);
    cam.bias = Matrix(1, dim);
    for (std::size_t i = 0; i < dim; ++i) cam.bias(0, i) = shift * dir(0, i);
    return cam;
}

std::vector<double> observe(const Matrix& latent, const CameraModel& cam, double noise, Rng& rng) {
    const std::size_t dim = latent.cols();
    std::vector<double> obs(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
        double acc = cam.bias(0, i);
        for (std::size_t j = 0; j < dim; ++j) acc += cam.map(i, j) * latent(0, j);
        obs[i] = acc + noise * rng.normal();
    }
    return obs;
}

// Solve map * u = rhs by Gaussian elimination with partial pivoting. Camera
// maps are identity plus noise, comfortably conditioned at desk scale.
Matrix solve(const Matrix& map, const Matrix& rhs_row) {
    const std::size_t n = map.rows();
    Matrix a = map;
    Matrix x(1, n);
    std::vector<double> b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = rhs_row(0, i);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a(perm[r], col)) > std::abs(a(perm[pivot], col))) pivot = r;
        std::swap(perm[col], perm[pivot]);
        const double diag = a(perm[col], col);
        if (diag == 0.0) throw NumericFailure(0, "solve", "singular camera map");
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(perm[r], col) / diag;
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a(perm[r], c) -= f * a(perm[col], c);
            b[perm[r]] -= f * b[perm[col]];
        }
    }
    for (std::size_t col = n; col-- > 0;) {
        double acc = b[perm[col]];
        for (std::size_t c = col + 1; c < n; ++c) acc -= a(perm[col], c) * x(0, c);
        x(0, col) = acc / a(perm[col], col);
    }
    return x;
}

}  // namespace

void GeneratorConfig::validate() const {
    if (num_identities < 1) throw ContractViolation("generator: need >= 1 identity");
    if (num_cameras < 2) throw ContractViolation("generator: need >= 2 cameras");
    if (obs_dim < 1) throw ContractViolation("generator: obs_dim must be >= 1");
    if (images_per_identity < 2)
        throw ContractViolation("generator: images_per_identity must be >= 2");
    if (camera_shift_strength < 0.0 || within_identity_noise < 0.0)
        throw ContractViolation("generator: shift and noise must be nonnegative");
    if (ccsp_fraction < 0.0 || ccsp_fraction > 1.0)
        throw ContractViolation("generator: ccsp_fraction must be in [0, 1]");
}

SynthOutput generate(const GeneratorConfig& config) {
    config.validate();
    SynthOutput out;
    out.config = config;

    Rng cam_rng(mix_seed(config.seed, 0x63616d6572617321ull));
    for (std::size_t c = 0; c < config.num_cameras; ++c)
        out.cameras.push_back(make_camera(cam_rng, config.obs_dim, config.camera_shift_strength));

    Rng latent_rng(mix_seed(config.seed, 0x6c6174656e747321ull));
    for (std::size_t i = 0; i < config.num_identities; ++i)
        out.train_latents.push_back(unit_vector(latent_rng, config.obs_dim));
    for (std::size_t i = 0; i < config.num_test_identities; ++i)
        out.test_latents.push_back(unit_vector(latent_rng, config.obs_dim));

    Rng assign_rng(mix_seed(config.seed, 0x61737369676e7321ull));
    Rng noise_rng(mix_seed(config.seed, 0x6e6f697365212121ull));

    const std::size_t num_ccsp =
        static_cast<std::size_t>(std::llround(config.ccsp_fraction *
                                              static_cast<double>(config.num_identities)));
    std::vector<std::size_t> ccsp_pick =
        assign_rng.sample_without_replacement(config.num_identities, num_ccsp);
    std::vector<bool> is_ccsp(config.num_identities, false);
    for (std::size_t i : ccsp_pick) is_ccsp[i] = true;

    int next_sample_id = 0;
    std::vector<data::Sample> train;
    for (std::size_t i = 0; i < config.num_identities; ++i) {
        std::vector<std::size_t> cams;
        if (is_ccsp[i]) {
            cams = assign_rng.sample_without_replacement(config.num_cameras, 2);
        } else {
            cams = {assign_rng.index(config.num_cameras)};
        }
        for (std::size_t img = 0; img < config.images_per_identity; ++img) {
            // CCSP identities split their images across the two cameras.
            const std::size_t cam = cams[cams.size() == 2 && img >= config.images_per_identity / 2
                                             ? 1
                                             : 0];
            data::Sample s;
            s.id = next_sample_id++;
            s.identity = static_cast<int>(i);
            s.camera = static_cast<int>(cam);
            s.features = observe(out.train_latents[i], out.cameras[cam],
                                 config.within_identity_noise, noise_rng);
            train.push_back(std::move(s));
        }
    }
    out.train = data::Dataset(std::move(train));

    // Test identities are disjoint from training and observed on every
    // camera; queries come from camera 0, gallery from the rest.
    std::vector<data::Sample> query, gallery;
    for (std::size_t i = 0; i < config.num_test_identities; ++i) {
        const int identity = static_cast<int>(config.num_identities + i);
        for (std::size_t cam = 0; cam < config.num_cameras; ++cam) {
            for (std::size_t img = 0; img < config.test_images_per_camera; ++img) {
                data::Sample s;
                s.id = next_sample_id++;
                s.identity = identity;
                s.camera = static_cast<int>(cam);
                s.features = observe(out.test_latents[i], out.cameras[cam],
                                     config.within_identity_noise, noise_rng);
                (cam == 0 ? query : gallery).push_back(std::move(s));
            }
        }
    }
    out.query = data::Dataset(std::move(query));
    out.gallery = data::Dataset(std::move(gallery));
    return out;
}

SeparabilityReport ground_truth_separability(const SynthOutput& output) {
    SeparabilityReport report;
    report.num_samples = output.train.size();
    if (report.num_samples == 0) return report;
    std::size_t correct = 0;
    for (const data::Sample& s : output.train.samples()) {
        const CameraModel& cam = output.cameras[static_cast<std::size_t>(s.camera)];
        Matrix rhs(1, s.features.size());
        for (std::size_t i = 0; i < s.features.size(); ++i)
            rhs(0, i) = s.features[i] - cam.bias(0, i);
        Matrix u_est = solve(cam.map, rhs);
        std::size_t best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < output.train_latents.size(); ++i) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < u_est.cols(); ++k) {
                const double diff = u_est(0, k) - output.train_latents[i](0, k);
                d2 += diff * diff;
            }
            if (d2 < best_d2) {
                best_d2 = d2;
                best = i;
            }
        }
        if (static_cast<int>(best) == s.identity) ++correct;
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(report.num_samples);
    return report;
}

}  // namespace cimn::synth
