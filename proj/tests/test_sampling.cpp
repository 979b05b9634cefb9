// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <map>
#include <set>

#include "cimn/rng.hpp"
#include "cimn/sampling.hpp"
#include "cimn/synthdata.hpp"

using namespace cimn;

namespace {

// Hand-built multi-camera dataset: every identity photographed on 2 cameras.
data::Dataset toy_multicam(std::size_t identities, std::size_t cameras,
                           std::size_t images_per_camera, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<data::Sample> samples;
    int id = 0;
    for (std::size_t i = 0; i < identities; ++i) {
        std::vector<std::size_t> cams = rng.sample_without_replacement(cameras, 2);
        for (std::size_t cam : cams) {
            for (std::size_t img = 0; img < images_per_camera; ++img) {
                data::Sample s;
                s.id = id++;
                s.identity = static_cast<int>(i);
                s.camera = static_cast<int>(cam);
                s.features = {rng.normal(), rng.normal()};
                samples.push_back(std::move(s));
            }
        }
    }
    return data::Dataset(std::move(samples));
}

}  // namespace

TEST_CASE("build_sct_split: invariant, determinism, and recount") {
    data::Dataset dataset = toy_multicam(20, 4, 2, 5);
    sampling::SctSplit split = sampling::build_sct_split(dataset, 42);

    CHECK(split.dataset.satisfies_sct());
    CHECK(split.dropped_identities == 0);

    // Deterministic under the same seed.
    sampling::SctSplit again = sampling::build_sct_split(dataset, 42);
    CHECK(again.dataset == split.dataset);

    // Retained count equals the sum over identities of the chosen camera's
    // image count, recomputed from the split itself.
    std::size_t recount = 0;
    for (int identity : split.dataset.identities()) {
        const auto& images = split.dataset.images_of_identity(identity);
        const int camera = split.dataset.samples()[images[0]].camera;
        recount += dataset.images_of(camera, identity).size();
    }
    CHECK(recount == split.dataset.size());
}

TEST_CASE("build_sct_split drops identities below the image threshold") {
    // One identity has a single image everywhere.
    std::vector<data::Sample> samples;
    samples.push_back({0, 0, 0, {0.0}});
    samples.push_back({1, 0, 1, {0.0}});
    samples.push_back({2, 1, 0, {0.0}});
    samples.push_back({3, 1, 0, {0.0}});
    data::Dataset dataset{std::move(samples)};
    sampling::SctSplit split = sampling::build_sct_split(dataset, 1, 2);
    CHECK(split.dropped_identities == 1);
    CHECK(split.dataset.identities() == std::vector<int>{1});
}

TEST_CASE("build_cg_split: size contract and identity subset") {
    data::Dataset dataset = toy_multicam(15, 3, 2, 9);
    SUBCASE("full-size request returns the identical dataset") {
        data::Dataset cg = sampling::build_cg_split(dataset, dataset.size(), 7);
        CHECK(cg == dataset);
    }
    SUBCASE("partial request has exactly the target size") {
        data::Dataset cg = sampling::build_cg_split(dataset, 20, 7);
        CHECK(cg.size() == 20);
    }
    SUBCASE("oversized request is rejected") {
        CHECK_THROWS_AS(sampling::build_cg_split(dataset, dataset.size() + 1, 7),
                        ContractViolation);
    }
}

TEST_CASE("build_cg_split: per-camera proportions approximate the source over seeds") {
    data::Dataset dataset = toy_multicam(30, 3, 2, 13);
    std::map<int, double> source_fraction;
    for (int cam : dataset.cameras())
        source_fraction[cam] =
            static_cast<double>(dataset.on_camera(cam).size()) / dataset.size();

    std::map<int, double> mean_fraction;
    const std::size_t trials = 100;
    const std::size_t target = dataset.size() / 2;
    for (std::uint64_t seed = 0; seed < trials; ++seed) {
        data::Dataset cg = sampling::build_cg_split(dataset, target, seed);
        for (int cam : dataset.cameras())
            mean_fraction[cam] += static_cast<double>(cg.on_camera(cam).size()) /
                                  (static_cast<double>(target) * trials);
    }
    for (int cam : dataset.cameras())
        CHECK(std::abs(mean_fraction[cam] - source_fraction[cam]) < 0.02);
}

TEST_CASE("camera_pair_schedule: rotation, distinctness, determinism") {
    CHECK(sampling::camera_pair_schedule(7, 6, 1).mtr_index == 1);
    CHECK_THROWS_AS(sampling::camera_pair_schedule(1, 1, 1), ContractViolation);

    std::map<std::size_t, int> mtr_counts;
    for (std::size_t epoch = 1; epoch <= 60; ++epoch) {
        sampling::CameraPair pair = sampling::camera_pair_schedule(epoch, 6, 9);
        CHECK(pair.mte_index != pair.mtr_index);
        CHECK(pair.mtr_index == epoch % 6);
        ++mtr_counts[pair.mtr_index];
        // Same (epoch, seed) gives the same mte camera.
        CHECK(sampling::camera_pair_schedule(epoch, 6, 9).mte_index == pair.mte_index);
    }
    for (const auto& [cam, count] : mtr_counts) CHECK(count == 10);
}

TEST_CASE("sample_meta_batch: P/K sizes, camera sets, infeasibility diagnostics") {
    synth::GeneratorConfig gen;
    gen.num_identities = 40;
    gen.num_cameras = 4;
    gen.obs_dim = 4;
    gen.images_per_identity = 4;
    gen.seed = 3;
    data::Dataset split = synth::generate(gen).train;  // rho = 0: SCT by construction
    REQUIRE(split.satisfies_sct());

    sampling::CameraPair pair = sampling::camera_pair_schedule(1, 4, 3);

    SUBCASE("P=4 K=2 r=1 draws singleton camera sets") {
        sampling::MetaBatch batch =
            sampling::sample_meta_batch(split, pair, 4, 2, 1, sampling::batch_draw_seed(3, 1, 0));
        sampling::validate_meta_batch(batch, split);
        CHECK(batch.mtr.size() == 8);
        CHECK(batch.mte.size() == 8);
        CHECK(batch.mtr_cameras.size() == 1);
        CHECK(batch.mte_cameras.size() == 1);
        CHECK(batch.mtr_cameras[0] == split.cameras()[pair.mtr_index]);
    }
    SUBCASE("r = N overlaps cameras by 2r - N while identities stay disjoint") {
        sampling::MetaBatch batch =
            sampling::sample_meta_batch(split, pair, 4, 2, 4, sampling::batch_draw_seed(3, 1, 1));
        sampling::validate_meta_batch(batch, split);
        CHECK(batch.mtr_cameras.size() == 4);
        CHECK(batch.mte_cameras == batch.mtr_cameras);
    }
    SUBCASE("r = 2 on N = 4 keeps the sides disjoint") {
        sampling::MetaBatch batch =
            sampling::sample_meta_batch(split, pair, 4, 2, 2, sampling::batch_draw_seed(3, 1, 2));
        sampling::validate_meta_batch(batch, split);
        std::set<int> mtr_cams(batch.mtr_cameras.begin(), batch.mtr_cameras.end());
        for (int cam : batch.mte_cameras) CHECK(!mtr_cams.count(cam));
    }
    SUBCASE("asking for more identities than a camera holds names the cameras") {
        try {
            sampling::sample_meta_batch(split, pair, 50, 2, 1, 7);
            FAIL("expected InfeasibleSampling");
        } catch (const InfeasibleSampling& e) {
            CHECK(std::string(e.what()).find("cameras {") != std::string::npos);
        }
    }
}

TEST_CASE("meta batches satisfy invariants over 1000 draws and replay by seed") {
    synth::GeneratorConfig gen;
    gen.num_identities = 60;
    gen.num_cameras = 5;
    gen.obs_dim = 4;
    gen.images_per_identity = 4;
    gen.ccsp_fraction = 0.3;  // non-SCT data: invariants must still hold
    gen.seed = 11;
    data::Dataset split = synth::generate(gen).train;

    for (std::size_t draw = 0; draw < 1000; ++draw) {
        const std::size_t epoch = 1 + draw / 20;
        sampling::CameraPair pair = sampling::camera_pair_schedule(epoch, 5, 11);
        sampling::MetaBatch batch = sampling::sample_meta_batch(
            split, pair, 4, 2, 1, sampling::batch_draw_seed(11, epoch, draw % 20));
        sampling::validate_meta_batch(batch, split);
    }

    sampling::CameraPair pair = sampling::camera_pair_schedule(3, 5, 11);
    sampling::MetaBatch a =
        sampling::sample_meta_batch(split, pair, 4, 2, 1, sampling::batch_draw_seed(11, 3, 5));
    sampling::MetaBatch b =
        sampling::sample_meta_batch(split, pair, 4, 2, 1, sampling::batch_draw_seed(11, 3, 5));
    CHECK(a.mtr == b.mtr);
    CHECK(a.mte == b.mte);
}

TEST_CASE("sct split consumed by the sampler preserves the invariant") {
    data::Dataset dataset = toy_multicam(24, 4, 3, 21);
    sampling::SctSplit split = sampling::build_sct_split(dataset, 8);
    sampling::CameraPair pair = sampling::camera_pair_schedule(2, 4, 8);
    sampling::MetaBatch batch = sampling::sample_meta_batch(split.dataset, pair, 3, 2, 1,
                                                            sampling::batch_draw_seed(8, 2, 0));
    sampling::validate_meta_batch(batch, split.dataset);
    CHECK(split.dataset.satisfies_sct());
}

TEST_CASE("split files round-trip and apply in manifest order") {
    data::Dataset dataset = toy_multicam(10, 3, 2, 31);
    sampling::SctSplit sct = sampling::build_sct_split(dataset, 4);
    data::SplitFile file;
    file.mode = "sct";
    file.seed = 4;
    file.dropped_identities = sct.dropped_identities;
    for (const data::Sample& s : sct.dataset.samples()) file.sample_ids.push_back(s.id);

    const std::string path = "test_split_roundtrip.split";
    data::save_split(file, path);
    data::SplitFile loaded = data::load_split(path);
    CHECK(loaded.mode == file.mode);
    CHECK(loaded.seed == file.seed);
    CHECK(loaded.sample_ids == file.sample_ids);

    data::Dataset applied = data::apply_split(dataset, loaded);
    CHECK(applied == sct.dataset);
    std::remove(path.c_str());
}
