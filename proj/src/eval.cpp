// SPDX-License-Identifier: Apache-2.0
#include "cimn/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace cimn::eval {

namespace {

std::string fmt(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw IoError("number formatting failed");
    return std::string(buf, ptr);
}

double distance(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j, bool cosine) {
    const std::size_t d = a.cols();
    const double* ra = a.data() + i * d;
    const double* rb = b.data() + j * d;
    if (!cosine) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = ra[k] - rb[k];
            s += diff * diff;
        }
        return std::sqrt(s);
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        dot += ra[k] * rb[k];
        na += ra[k] * ra[k];
        nb += rb[k] * rb[k];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    return denom > 0.0 ? 1.0 - dot / denom : 1.0;
}

}  // namespace

EmbeddedSet extract_embeddings(const model::ModelState& state, const data::Dataset& samples) {
    if (samples.feature_dim() != state.config.input_dim)
        throw ContractViolation("extract_embeddings: feature dim " +
                                std::to_string(samples.feature_dim()) + " != checkpoint input_dim " +
                                std::to_string(state.config.input_dim));
    EmbeddedSet set;
    set.embeddings = Matrix(samples.size(), state.config.embedding_dim);
    set.items.reserve(samples.size());

    // Eval-mode rows are independent, so chunking does not change values.
    const std::size_t chunk = 64;
    ad::ParamSet running = state.running;
    for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
        const std::size_t end = std::min(begin + chunk, samples.size());
        std::vector<std::size_t> indices(end - begin);
        for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = begin + i;
        Matrix batch = samples.stack_features(indices);
        ad::Tape tape;
        ad::BoundParams theta = ad::bind(tape, state.params);
        model::ForwardTaps taps =
            model::forward(tape, theta, batch, model::Mode::kEval, running, state.config);
        const Matrix& emb = tape.value(taps.embedding);
        for (std::size_t r = 0; r < emb.rows(); ++r)
            for (std::size_t c = 0; c < emb.cols(); ++c)
                set.embeddings(begin + r, c) = emb(r, c);
    }
    for (const data::Sample& s : samples.samples()) set.items.push_back({s.id, s.identity, s.camera});
    return set;
}

std::string Protocol::descriptor() const {
    std::string d = "cross-camera;";
    d += cosine ? "cosine" : "euclidean";
    d += ";drop-same-id-same-camera;ties=sample-id;ap=non-interpolated";
    return d;
}

double EvalReport::cmc_at(int rank) const {
    for (const auto& [r, v] : cmc)
        if (r == rank) return v;
    throw ContractViolation("EvalReport: rank " + std::to_string(rank) + " not in report");
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    os << "protocol: " << protocol << "\n";
    os << "queries: " << num_queries << " (excluded: " << num_excluded << ")\n";
    for (const auto& [r, v] : cmc) os << "rank-" << r << ": " << fmt(100.0 * v) << "%\n";
    os << "mAP: " << fmt(100.0 * map_score) << "%\n";
    return os.str();
}

std::string EvalReport::to_records() const {
    std::ostringstream os;
    os << "protocol=" << protocol << " num_queries=" << num_queries
       << " num_excluded=" << num_excluded;
    for (const auto& [r, v] : cmc) os << " cmc" << r << "=" << fmt(v);
    os << " map=" << fmt(map_score) << "\n";
    return os.str();
}

EvalReport rank_and_score(const EmbeddedSet& queries, const EmbeddedSet& gallery,
                          const Protocol& protocol) {
    if (queries.embeddings.cols() != gallery.embeddings.cols())
        throw ContractViolation("rank_and_score: embedding dim mismatch");
    if (protocol.ranks.empty()) throw ContractViolation("rank_and_score: no ranks requested");

    std::vector<int> ranks = protocol.ranks;
    std::sort(ranks.begin(), ranks.end());

    const std::size_t nq = queries.items.size();
    EvalReport report;
    report.protocol = protocol.descriptor();

    std::vector<std::size_t> first_hit;  // 1-based rank of the first correct item
    double ap_sum = 0.0;

    struct Entry {
        double dist;
        int sample_id;
        std::size_t index;
    };

    for (std::size_t q = 0; q < nq; ++q) {
        const EmbeddedItem& qi = queries.items[q];
        std::vector<Entry> order;
        order.reserve(gallery.items.size());
        std::size_t positives = 0;
        for (std::size_t g = 0; g < gallery.items.size(); ++g) {
            const EmbeddedItem& gi = gallery.items[g];
            if (gi.identity == qi.identity && gi.camera == qi.camera) continue;
            if (gi.identity == qi.identity) ++positives;
            order.push_back({distance(queries.embeddings, q, gallery.embeddings, g,
                                      protocol.cosine),
                             gi.sample_id, g});
        }
        if (positives == 0) {
            ++report.num_excluded;
            continue;
        }
        std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
            if (a.dist != b.dist) return a.dist < b.dist;
            return a.sample_id < b.sample_id;
        });

        std::size_t hits = 0;
        double ap = 0.0;
        std::size_t first = 0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            if (gallery.items[order[pos].index].identity == qi.identity) {
                ++hits;
                if (hits == 1) first = pos + 1;
                ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
            }
        }
        ap_sum += ap / static_cast<double>(positives);
        first_hit.push_back(first);
        ++report.num_queries;
    }

    if (report.num_queries == 0)
        throw ContractViolation("rank_and_score: no query retained a valid positive");

    report.map_score = ap_sum / static_cast<double>(report.num_queries);
    for (int r : ranks) {
        std::size_t within = 0;
        for (std::size_t fh : first_hit)
            if (fh <= static_cast<std::size_t>(r)) ++within;
        report.cmc.emplace_back(r, static_cast<double>(within) /
                                       static_cast<double>(report.num_queries));
    }
    return report;
}

RunScores run_once(const synth::GeneratorConfig& gen_config,
                   const train::TrainConfig& train_config, bool apply_sct_split) {
    synth::SynthOutput data = synth::generate(gen_config);
    data::Dataset split = data.train;
    if (apply_sct_split)
        split = sampling::build_sct_split(data.train, train_config.seed, train_config.k).dataset;

    train::TrainResult trained = train::train(train_config, split);
    EmbeddedSet q = extract_embeddings(trained.state, data.query);
    EmbeddedSet g = extract_embeddings(trained.state, data.gallery);
    EvalReport report = rank_and_score(q, g, Protocol{});
    return {report.cmc_at(1), report.map_score};
}

std::vector<SweepCell> stability_sweep(const synth::GeneratorConfig& gen_base,
                                       const train::TrainConfig& train_base,
                                       std::span<const std::uint64_t> seeds,
                                       std::span<const double> rhos) {
    std::vector<SweepCell> cells;
    for (double rho : rhos) {
        for (train::Method method : {train::Method::kCimn, train::Method::kTripletBaseline}) {
            for (std::uint64_t seed : seeds) {
                synth::GeneratorConfig gen = gen_base;
                gen.ccsp_fraction = rho;
                gen.seed = seed;
                train::TrainConfig tc = train_base;
                tc.method = method;
                tc.seed = seed;
                // rho > 0 keeps its CCSP pairs: train on the raw output.
                RunScores scores = run_once(gen, tc, /*apply_sct_split=*/rho == 0.0);
                cells.push_back({rho, train::method_to_string(method), seed, scores.rank1,
                                 scores.map_score});
            }
        }
    }
    std::sort(cells.begin(), cells.end(), [](const SweepCell& a, const SweepCell& b) {
        if (a.rho != b.rho) return a.rho < b.rho;
        if (a.method != b.method) return a.method < b.method;
        return a.seed < b.seed;
    });
    return cells;
}

double median(std::vector<double> values) {
    if (values.empty()) throw ContractViolation("median of empty set");
    std::sort(values.begin(), values.end());
    const std::size_t m = values.size();
    return m % 2 == 1 ? values[m / 2] : 0.5 * (values[m / 2 - 1] + values[m / 2]);
}

std::vector<AblationRow> ablation_grid(const synth::GeneratorConfig& gen_base,
                                       const train::TrainConfig& train_base,
                                       std::span<const std::uint64_t> seeds) {
    const double g1 = train_base.weights.gamma1;
    const double g2 = train_base.weights.gamma2;
    const double g3 = train_base.weights.gamma3;
    std::vector<AblationRow> rows = {
        {"ccs", 0.0, 0.0, 0.0, {}, {}, 0.0, 0.0},
        {"ccs+mtri", g1, 0.0, 0.0, {}, {}, 0.0, 0.0},
        {"ccs+mtri+mcl", g1, g2, 0.0, {}, {}, 0.0, 0.0},
        {"full", g1, g2, g3, {}, {}, 0.0, 0.0},
    };
    for (AblationRow& row : rows) {
        for (std::uint64_t seed : seeds) {
            synth::GeneratorConfig gen = gen_base;
            gen.ccsp_fraction = 0.0;
            gen.seed = seed;
            train::TrainConfig tc = train_base;
            tc.method = train::Method::kCimn;
            tc.seed = seed;
            tc.weights.gamma1 = row.gamma1;
            tc.weights.gamma2 = row.gamma2;
            tc.weights.gamma3 = row.gamma3;
            RunScores scores = run_once(gen, tc, /*apply_sct_split=*/true);
            row.rank1s.push_back(scores.rank1);
            row.maps.push_back(scores.map_score);
        }
        row.median_rank1 = median(row.rank1s);
        row.median_map = median(row.maps);
    }
    return rows;
}

std::string sweep_to_csv(std::span<const SweepCell> cells) {
    std::string csv = "rho,method,seed,rank1,map\n";
    for (const SweepCell& c : cells) {
        csv += fmt(c.rho) + "," + c.method + "," + std::to_string(c.seed) + "," + fmt(c.rank1) +
               "," + fmt(c.map_score) + "\n";
    }
    return csv;
}

std::string ablation_to_csv(std::span<const AblationRow> rows) {
    std::string csv = "config,gamma1,gamma2,gamma3,median_rank1,median_map\n";
    for (const AblationRow& r : rows) {
        csv += r.name + "," + fmt(r.gamma1) + "," + fmt(r.gamma2) + "," + fmt(r.gamma3) + "," +
               fmt(r.median_rank1) + "," + fmt(r.median_map) + "\n";
    }
    return csv;
}

}  // namespace cimn::eval
