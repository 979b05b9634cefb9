// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "cimn/eval.hpp"
#include "cimn/rng.hpp"
#include "oracles.hpp"

using namespace cimn;

namespace {

eval::EmbeddedSet make_set(const Matrix& embeddings,
                           const std::vector<eval::EmbeddedItem>& items) {
    eval::EmbeddedSet set;
    set.embeddings = embeddings;
    set.items = items;
    return set;
}

// Random retrieval instance: identities spread over cameras with clustered
// embeddings plus noise.
struct Instance {
    eval::EmbeddedSet queries;
    eval::EmbeddedSet gallery;
};

Instance random_instance(Rng& rng, std::size_t num_queries, std::size_t num_gallery,
                         std::size_t num_identities, std::size_t num_cameras, std::size_t dim) {
    std::vector<std::vector<double>> centers(num_identities, std::vector<double>(dim));
    for (auto& c : centers)
        for (double& v : c) v = 3.0 * rng.normal();
    int next_id = 0;
    auto draw = [&](std::size_t count, bool is_query) {
        Matrix emb(count, dim);
        std::vector<eval::EmbeddedItem> items;
        for (std::size_t i = 0; i < count; ++i) {
            const int identity = static_cast<int>(rng.index(num_identities));
            const int camera = is_query ? 0 : static_cast<int>(rng.index(num_cameras));
            for (std::size_t k = 0; k < dim; ++k)
                emb(i, k) = centers[static_cast<std::size_t>(identity)][k] + rng.normal();
            items.push_back({next_id++, identity, camera});
        }
        return make_set(emb, items);
    };
    Instance inst;
    inst.queries = draw(num_queries, true);
    inst.gallery = draw(num_gallery, false);
    return inst;
}

}  // namespace

TEST_CASE("rank_and_score: single query with nearest correct match") {
    Matrix qe(1, 2, 0.0);
    Matrix ge(3, 2, 0.0);
    ge(0, 0) = 0.1;           // same identity, different camera
    ge(1, 0) = 5.0;           // other identity
    ge(2, 0) = 6.0;           // other identity
    eval::EmbeddedSet q = make_set(qe, {{0, 1, 0}});
    eval::EmbeddedSet g = make_set(ge, {{1, 1, 1}, {2, 2, 1}, {3, 3, 1}});
    eval::EvalReport report = eval::rank_and_score(q, g, eval::Protocol{{1, 2}, false});
    CHECK(report.cmc_at(1) == 1.0);
    CHECK(report.map_score == 1.0);
    CHECK(report.num_queries == 1);
}

TEST_CASE("rank_and_score: AP with hits at ranks 1 and 3 of 5 is 5/6") {
    Matrix qe(1, 1, 0.0);
    Matrix ge(5, 1, 0.0);
    // Distances: 1, 2, 3, 4, 5; correct items at ranks 1 and 3.
    for (std::size_t i = 0; i < 5; ++i) ge(i, 0) = static_cast<double>(i + 1);
    eval::EmbeddedSet q = make_set(qe, {{0, 7, 0}});
    eval::EmbeddedSet g = make_set(ge, {{1, 7, 1}, {2, 1, 1}, {3, 7, 1}, {4, 2, 1}, {5, 3, 1}});
    eval::EvalReport report = eval::rank_and_score(q, g, eval::Protocol{{1, 5}, false});
    CHECK(report.map_score == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(report.cmc_at(1) == 1.0);
}

TEST_CASE("rank_and_score: same-id same-camera entries are excluded") {
    Matrix qe(1, 1, 0.0);
    Matrix ge(2, 1, 0.0);
    ge(0, 0) = 0.01;  // same id, same camera: filtered out
    ge(1, 0) = 2.0;   // same id, other camera
    eval::EmbeddedSet q = make_set(qe, {{0, 4, 2}});
    eval::EmbeddedSet g = make_set(ge, {{1, 4, 2}, {2, 4, 0}});
    eval::EvalReport report = eval::rank_and_score(q, g, eval::Protocol{{1}, false});
    CHECK(report.cmc_at(1) == 1.0);  // the filtered entry never competes
}

TEST_CASE("rank_and_score: queries without a valid positive are excluded and counted") {
    Matrix qe(2, 1, 0.0);
    Matrix ge(2, 1, 1.0);
    eval::EmbeddedSet q = make_set(qe, {{0, 1, 0}, {1, 9, 0}});  // id 9 absent from gallery
    eval::EmbeddedSet g = make_set(ge, {{2, 1, 1}, {3, 2, 1}});
    eval::EvalReport report = eval::rank_and_score(q, g, eval::Protocol{{1}, false});
    CHECK(report.num_queries == 1);
    CHECK(report.num_excluded == 1);
}

TEST_CASE("rank_and_score: permuting the gallery leaves the report unchanged") {
    Rng rng(17);
    Instance inst = random_instance(rng, 10, 40, 6, 3, 4);
    eval::EvalReport base = eval::rank_and_score(inst.queries, inst.gallery,
                                                 eval::Protocol{{1, 5, 10}, false});

    std::vector<std::size_t> perm(inst.gallery.items.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    eval::EmbeddedSet shuffled;
    shuffled.embeddings = Matrix(inst.gallery.embeddings.rows(), inst.gallery.embeddings.cols());
    for (std::size_t r = 0; r < perm.size(); ++r) {
        shuffled.items.push_back(inst.gallery.items[perm[r]]);
        for (std::size_t c = 0; c < shuffled.embeddings.cols(); ++c)
            shuffled.embeddings(r, c) = inst.gallery.embeddings(perm[r], c);
    }
    eval::EvalReport permuted = eval::rank_and_score(inst.queries, shuffled,
                                                     eval::Protocol{{1, 5, 10}, false});
    CHECK(permuted.map_score == base.map_score);
    for (int rank : {1, 5, 10}) CHECK(permuted.cmc_at(rank) == base.cmc_at(rank));
}

TEST_CASE("rank_and_score equals the definitional oracle on 100 random instances") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        Rng rng(mix_seed(900, s));
        const std::size_t nq = 2 + rng.index(49);   // up to 50 queries
        const std::size_t ng = 10 + rng.index(191); // up to 200 gallery items
        Instance inst = random_instance(rng, nq, ng, 2 + rng.index(10), 2 + rng.index(3), 3);

        const std::size_t max_rank = 10;
        eval::EvalReport got;
        bool got_report = true;
        try {
            got = eval::rank_and_score(inst.queries, inst.gallery,
                                       eval::Protocol{{1, 5, 10}, false});
        } catch (const ContractViolation&) {
            got_report = false;  // every query lost its positives; oracle must agree
        }

        std::vector<oracles::RetrievalItem> qi, gi;
        for (const auto& item : inst.queries.items) qi.push_back({item.sample_id, item.identity, item.camera});
        for (const auto& item : inst.gallery.items) gi.push_back({item.sample_id, item.identity, item.camera});
        oracles::RetrievalScores want = oracles::rank_and_score(inst.queries.embeddings, qi,
                                                                inst.gallery.embeddings, gi,
                                                                max_rank);
        if (!got_report) {
            CHECK(want.queries == 0);
            continue;
        }
        CHECK(got.num_queries == want.queries);
        CHECK(got.num_excluded == want.excluded);
        CHECK(got.map_score == doctest::Approx(want.map).epsilon(1e-12));
        CHECK(got.cmc_at(1) == doctest::Approx(want.cmc[0]).epsilon(1e-12));
        CHECK(got.cmc_at(5) == doctest::Approx(want.cmc[4]).epsilon(1e-12));
        CHECK(got.cmc_at(10) == doctest::Approx(want.cmc[9]).epsilon(1e-12));

        // CMC monotonicity.
        double prev = 0.0;
        for (const auto& [rank, acc] : got.cmc) {
            CHECK(acc >= prev);
            CHECK(acc <= 1.0);
            prev = acc;
        }
    }
}

TEST_CASE("extract_embeddings: determinism, duplicates, dimension checks") {
    synth::GeneratorConfig gen;
    gen.num_identities = 10;
    gen.num_cameras = 3;
    gen.obs_dim = 6;
    gen.images_per_identity = 4;
    gen.num_test_identities = 3;
    gen.seed = 23;
    synth::SynthOutput out = synth::generate(gen);

    model::ModelConfig mc;
    mc.input_dim = gen.obs_dim;
    mc.stage_dims = {8, 8, 8, 8};
    mc.embedding_dim = 4;
    mc.num_classes = 10;
    model::ModelState state;
    state.config = mc;
    state.params = model::init_params(mc, 1);
    state.running = model::init_running_stats(mc);

    eval::EmbeddedSet a = eval::extract_embeddings(state, out.query);
    eval::EmbeddedSet b = eval::extract_embeddings(state, out.query);
    CHECK(a.embeddings.bit_equal(b.embeddings));
    CHECK(a.items.size() == out.query.size());

    // Duplicate sample rows produce duplicate embedding rows.
    std::vector<data::Sample> dup = {out.query.samples()[0], out.query.samples()[0]};
    dup[1].id = 99999;
    eval::EmbeddedSet d = eval::extract_embeddings(state, data::Dataset(dup));
    for (std::size_t c = 0; c < d.embeddings.cols(); ++c)
        CHECK(d.embeddings(0, c) == d.embeddings(1, c));

    // Dimension mismatch against the checkpoint config.
    std::vector<data::Sample> bad = {{1, 0, 0, {1.0, 2.0}}};
    CHECK_THROWS_AS(eval::extract_embeddings(state, data::Dataset(bad)), ContractViolation);

    // Cross-module equality: the embedding equals the model's forward tap.
    ad::Tape tape;
    ad::ParamSet running = state.running;
    ad::BoundParams theta = ad::bind(tape, state.params);
    std::vector<std::size_t> indices(out.query.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    model::ForwardTaps taps = model::forward(tape, theta, out.query.stack_features(indices),
                                             model::Mode::kEval, running, mc);
    CHECK(a.embeddings.bit_equal(tape.value(taps.embedding)));
}

TEST_CASE("median helper") {
    CHECK(eval::median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(eval::median({4.0, 1.0, 3.0, 2.0}) == 2.5);
    CHECK_THROWS_AS(eval::median({}), ContractViolation);
}

namespace {

synth::GeneratorConfig sweep_gen() {
    synth::GeneratorConfig gen;
    gen.num_identities = 20;
    gen.num_cameras = 3;
    gen.obs_dim = 6;
    gen.images_per_identity = 4;
    gen.num_test_identities = 5;
    return gen;
}

train::TrainConfig sweep_train() {
    train::TrainConfig tc;
    tc.model.stage_dims = {8, 8, 8, 8};
    tc.model.embedding_dim = 4;
    tc.p = 3;
    tc.max_epoch = 3;
    tc.base_lr = 0.02;
    return tc;
}

}  // namespace

TEST_CASE("stability_sweep: row count, ordering, and rho=0 re-run equality") {
    const std::vector<std::uint64_t> seeds = {1, 2};
    const std::vector<double> rhos = {0.0, 0.5, 1.0};
    std::vector<eval::SweepCell> cells = eval::stability_sweep(sweep_gen(), sweep_train(), seeds,
                                                               rhos);
    CHECK(cells.size() == rhos.size() * 2 * seeds.size());
    for (std::size_t i = 1; i < cells.size(); ++i) CHECK(cells[i - 1].rho <= cells[i].rho);

    // The rho=0 cell equals a standalone SCT run with the same seed.
    synth::GeneratorConfig gen = sweep_gen();
    gen.ccsp_fraction = 0.0;
    gen.seed = 1;
    train::TrainConfig tc = sweep_train();
    tc.seed = 1;
    tc.method = train::Method::kCimn;
    eval::RunScores standalone = eval::run_once(gen, tc, /*apply_sct_split=*/true);
    bool found = false;
    for (const auto& cell : cells) {
        if (cell.rho == 0.0 && cell.method == "cimn" && cell.seed == 1) {
            CHECK(cell.rank1 == standalone.rank1);
            CHECK(cell.map_score == standalone.map_score);
            found = true;
        }
    }
    CHECK(found);

    const std::string csv = eval::sweep_to_csv(cells);
    CHECK(csv.rfind("rho,method,seed,rank1,map\n", 0) == 0);
}

TEST_CASE("ablation_grid: four rows, flag mapping, full row equals base config") {
    const std::vector<std::uint64_t> seeds = {1};
    std::vector<eval::AblationRow> rows = eval::ablation_grid(sweep_gen(), sweep_train(), seeds);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].name == "ccs");
    CHECK(rows[0].gamma1 == 0.0);
    CHECK(rows[0].gamma2 == 0.0);
    CHECK(rows[0].gamma3 == 0.0);
    CHECK(rows[3].name == "full");
    CHECK(rows[3].gamma3 == doctest::Approx(0.02));

    // Row 1 equals gamma = (0,0,0) training; the full row equals the base
    // config rerun directly.
    synth::GeneratorConfig gen = sweep_gen();
    gen.ccsp_fraction = 0.0;
    gen.seed = 1;

    train::TrainConfig ccs_cfg = sweep_train();
    ccs_cfg.seed = 1;
    ccs_cfg.weights.gamma1 = ccs_cfg.weights.gamma2 = ccs_cfg.weights.gamma3 = 0.0;
    eval::RunScores ccs = eval::run_once(gen, ccs_cfg, /*apply_sct_split=*/true);
    CHECK(rows[0].rank1s[0] == ccs.rank1);

    train::TrainConfig full_cfg = sweep_train();
    full_cfg.seed = 1;
    eval::RunScores full = eval::run_once(gen, full_cfg, /*apply_sct_split=*/true);
    CHECK(rows[3].rank1s[0] == full.rank1);
    CHECK(rows[3].maps[0] == full.map_score);
}

TEST_CASE("report serialization carries the protocol descriptor") {
    Matrix qe(1, 1, 0.0);
    Matrix ge(2, 1, 0.5);
    eval::EmbeddedSet q = make_set(qe, {{0, 1, 0}});
    eval::EmbeddedSet g = make_set(ge, {{1, 1, 1}, {2, 2, 1}});
    eval::EvalReport report = eval::rank_and_score(q, g, eval::Protocol{});
    CHECK(report.protocol.find("euclidean") != std::string::npos);
    CHECK(report.to_records().find("map=") != std::string::npos);
    CHECK(report.to_table().find("mAP") != std::string::npos);
}
