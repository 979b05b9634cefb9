// SPDX-License-Identifier: Apache-2.0
#include "cimn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace cimn::losses {

namespace {

// Clamped pairwise squared distances between the rows of a and the rows of
// b via the Gram expansion |a|^2 + |b|^2 - 2 a.b. The relu absorbs the tiny
// negatives the expansion can produce.
ad::NodeId pairwise_sqdist(ad::Tape& tape, ad::NodeId a, ad::NodeId b) {
    const std::size_t na = tape.value(a).rows();
    const std::size_t nb = tape.value(b).rows();
    ad::NodeId sa = tape.row_sum(tape.mul(a, a));  // na x 1
    ad::NodeId sb = tape.row_sum(tape.mul(b, b));  // nb x 1
    ad::NodeId gram = tape.matmul(a, tape.transpose(b));
    ad::NodeId d2 = tape.sub(tape.add(tape.broadcast_cols(sa, nb),
                                      tape.broadcast_rows(tape.transpose(sb), na)),
                             tape.scale(gram, 2.0));
    return tape.relu(d2);
}

void check_triplet_labels(std::span<const int> labels, const char* what) {
    std::map<int, int> counts;
    for (int y : labels) ++counts[y];
    if (counts.size() < 2)
        throw ContractViolation(std::string(what) + ": need >= 2 distinct labels");
    for (const auto& [label, count] : counts) {
        if (count < 2)
            throw ContractViolation(std::string(what) + ": label " + std::to_string(label) +
                                    " has a single sample, no positive exists");
    }
}

// Hardest positive (max distance, same label, self excluded) per anchor,
// chosen from the numeric values of a within-set distance matrix.
std::vector<std::int32_t> hardest_positive(const Matrix& d2, std::span<const int> labels) {
    const std::size_t n = d2.rows();
    std::vector<std::int32_t> idx(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        double best = -1.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || labels[j] != labels[i]) continue;
            if (d2(i, j) > best) {
                best = d2(i, j);
                idx[i] = static_cast<std::int32_t>(j);
            }
        }
    }
    return idx;
}

// Hardest negative (min distance, different label) per anchor. `labels_cols`
// labels the columns of d2, which may belong to a different set.
std::vector<std::int32_t> hardest_negative(const Matrix& d2, std::span<const int> labels_rows,
                                           std::span<const int> labels_cols) {
    const std::size_t n = d2.rows();
    std::vector<std::int32_t> idx(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < d2.cols(); ++j) {
            if (labels_cols[j] == labels_rows[i]) continue;
            if (d2(i, j) < best) {
                best = d2(i, j);
                idx[i] = static_cast<std::int32_t>(j);
            }
        }
    }
    return idx;
}

ad::NodeId hinge_sum(ad::Tape& tape, ad::NodeId dp2, ad::NodeId dn2, double margin,
                     bool mean_reduce) {
    ad::NodeId dp = tape.sqrt(dp2);
    ad::NodeId dn = tape.sqrt(dn2);
    ad::NodeId hinge = tape.relu(tape.add_scalar(tape.sub(dp, dn), margin));
    ad::NodeId loss = tape.sum_all(hinge);
    if (mean_reduce) loss = tape.scale(loss, 1.0 / static_cast<double>(tape.value(dp2).rows()));
    return loss;
}

}  // namespace

void LossWeights::validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw ContractViolation("lambda must be in [0, 1]");
    if (gamma1 < 0.0 || gamma2 < 0.0 || gamma3 < 0.0)
        throw ContractViolation("loss weights must be nonnegative");
    if (margin < 0.0) throw ContractViolation("margin must be nonnegative");
}

ad::NodeId batch_hard_triplet(ad::Tape& tape, ad::NodeId embeddings, std::span<const int> labels,
                              double margin, bool mean_reduce) {
    const Matrix& e = tape.value(embeddings);
    if (labels.size() != e.rows()) throw ContractViolation("batch_hard_triplet: label count != rows");
    check_triplet_labels(labels, "batch_hard_triplet");

    ad::NodeId d2 = pairwise_sqdist(tape, embeddings, embeddings);
    const Matrix& d2v = tape.value(d2);
    std::vector<std::int32_t> pos = hardest_positive(d2v, labels);
    std::vector<std::int32_t> neg = hardest_negative(d2v, labels, labels);

    ad::NodeId dp2 = tape.row_gather(d2, std::move(pos));
    ad::NodeId dn2 = tape.row_gather(d2, std::move(neg));
    return hinge_sum(tape, dp2, dn2, margin, mean_reduce);
}

ad::NodeId meta_triplet(ad::Tape& tape, ad::NodeId emb_a, std::span<const int> labels_a,
                        ad::NodeId emb_b, std::span<const int> labels_b, double margin,
                        bool mean_reduce) {
    const Matrix& ea = tape.value(emb_a);
    const Matrix& eb = tape.value(emb_b);
    if (labels_a.size() != ea.rows() || labels_b.size() != eb.rows())
        throw ContractViolation("meta_triplet: label count != rows");
    if (ea.rows() == 0 || eb.rows() == 0) throw ContractViolation("meta_triplet: empty set");
    check_triplet_labels(labels_a, "meta_triplet (first set)");
    check_triplet_labels(labels_b, "meta_triplet (second set)");

    ad::NodeId d2aa = pairwise_sqdist(tape, emb_a, emb_a);
    ad::NodeId d2bb = pairwise_sqdist(tape, emb_b, emb_b);
    ad::NodeId d2ab = pairwise_sqdist(tape, emb_a, emb_b);
    ad::NodeId d2ba = tape.transpose(d2ab);

    std::vector<std::int32_t> pos_a = hardest_positive(tape.value(d2aa), labels_a);
    std::vector<std::int32_t> neg_a = hardest_negative(tape.value(d2ab), labels_a, labels_b);
    std::vector<std::int32_t> pos_b = hardest_positive(tape.value(d2bb), labels_b);
    std::vector<std::int32_t> neg_b = hardest_negative(tape.value(d2ba), labels_b, labels_a);

    for (std::size_t i = 0; i < neg_a.size(); ++i)
        if (neg_a[i] < 0)
            throw ContractViolation("meta_triplet: anchor " + std::to_string(i) +
                                    " has no negative in the other set");
    for (std::size_t i = 0; i < neg_b.size(); ++i)
        if (neg_b[i] < 0)
            throw ContractViolation("meta_triplet: anchor " + std::to_string(i) +
                                    " has no negative in the other set");

    ad::NodeId loss_a = hinge_sum(tape, tape.row_gather(d2aa, std::move(pos_a)),
                                  tape.row_gather(d2ab, std::move(neg_a)), margin, false);
    ad::NodeId loss_b = hinge_sum(tape, tape.row_gather(d2bb, std::move(pos_b)),
                                  tape.row_gather(d2ba, std::move(neg_b)), margin, false);
    ad::NodeId loss = tape.add(loss_a, loss_b);
    if (mean_reduce) loss = tape.scale(loss, 1.0 / static_cast<double>(ea.rows() + eb.rows()));
    return loss;
}

ad::NodeId cross_entropy(ad::Tape& tape, ad::NodeId logits, std::span<const int> labels,
                         bool mean_reduce) {
    const Matrix& l = tape.value(logits);
    if (labels.size() != l.rows()) throw ContractViolation("cross_entropy: label count != rows");
    const std::size_t classes = l.cols();
    std::vector<std::int32_t> label_idx(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw ContractViolation("cross_entropy: label " + std::to_string(labels[i]) +
                                    " out of range for " + std::to_string(classes) + " classes");
        label_idx[i] = labels[i];
    }

    // Max-subtraction for stability; the shift cancels in the value and the
    // gradient alike.
    std::vector<std::int32_t> argmax(l.rows());
    for (std::size_t i = 0; i < l.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < classes; ++j)
            if (l(i, j) > l(i, best)) best = j;
        argmax[i] = static_cast<std::int32_t>(best);
    }
    ad::NodeId row_max = tape.row_gather(logits, std::move(argmax));
    ad::NodeId shifted = tape.sub(logits, tape.broadcast_cols(row_max, classes));
    ad::NodeId lse = tape.log(tape.row_sum(tape.exp(shifted)));
    ad::NodeId picked = tape.row_gather(shifted, std::move(label_idx));
    ad::NodeId loss = tape.sum_all(tape.sub(lse, picked));
    if (mean_reduce) loss = tape.scale(loss, 1.0 / static_cast<double>(l.rows()));
    return loss;
}

ad::NodeId mmd(ad::Tape& tape, ad::NodeId fa, ad::NodeId fb, double sigma, bool single_cross_term) {
    const Matrix& a = tape.value(fa);
    const Matrix& b = tape.value(fb);
    if (a.rows() != b.rows()) throw ContractViolation("mmd: feature sets must be the same size");
    if (a.cols() != b.cols()) throw ContractViolation("mmd: feature dim mismatch");
    if (!(sigma > 0.0)) throw ContractViolation("mmd: sigma must be positive");
    const double n = static_cast<double>(a.rows());
    const double kscale = -1.0 / (2.0 * sigma * sigma);

    ad::NodeId kaa = tape.sum_all(tape.exp(tape.scale(pairwise_sqdist(tape, fa, fa), kscale)));
    ad::NodeId kbb = tape.sum_all(tape.exp(tape.scale(pairwise_sqdist(tape, fb, fb), kscale)));
    ad::NodeId kab = tape.sum_all(tape.exp(tape.scale(pairwise_sqdist(tape, fa, fb), kscale)));

    const double cross_coef = single_cross_term ? 1.0 : 2.0;
    ad::NodeId total = tape.sub(tape.add(kaa, kbb), tape.scale(kab, cross_coef));
    return tape.scale(total, 1.0 / (n * n));
}

ad::NodeId center_distance(ad::Tape& tape, ad::NodeId fa, ad::NodeId fb) {
    const Matrix& a = tape.value(fa);
    const Matrix& b = tape.value(fb);
    if (a.rows() != b.rows())
        throw ContractViolation("center_distance: feature sets must be the same size");
    if (a.cols() != b.cols()) throw ContractViolation("center_distance: feature dim mismatch");
    ad::NodeId mean_a = tape.scale(tape.col_sum(fa), 1.0 / static_cast<double>(a.rows()));
    ad::NodeId mean_b = tape.scale(tape.col_sum(fb), 1.0 / static_cast<double>(b.rows()));
    ad::NodeId diff = tape.sub(mean_a, mean_b);
    return tape.sum_all(tape.mul(diff, diff));
}

ad::NodeId meta_camera_alignment(ad::Tape& tape, ad::NodeId tap_a, ad::NodeId tap_b, double sigma,
                                 bool single_cross_term) {
    return tape.add(mmd(tape, tap_a, tap_b, sigma, single_cross_term),
                    center_distance(tape, tap_a, tap_b));
}

double median_pairwise_distance(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ContractViolation("median_pairwise_distance: dim mismatch");
    const std::size_t n = a.rows() + b.rows();
    const std::size_t d = a.cols();
    auto row = [&](std::size_t i) { return i < a.rows() ? a.data() + i * d : b.data() + (i - a.rows()) * d; };
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double *ri = row(i), *rj = row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = ri[k] - rj[k];
                s += diff * diff;
            }
            dists.push_back(std::sqrt(s));
        }
    }
    if (dists.empty()) return 1.0;
    std::sort(dists.begin(), dists.end());
    const std::size_t m = dists.size();
    const double median = (m % 2 == 1) ? dists[m / 2] : 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
    return median > 1e-12 ? median : 1.0;
}

MetaForward cross_camera_forward(ad::Tape& tape, const model::ModelConfig& config,
                                 const ad::BoundParams& theta, const LabeledBatch& mtr,
                                 const LabeledBatch& mte, double eta, double margin,
                                 bool first_order, bool mean_reduce, model::Mode mode,
                                 ad::ParamSet& running) {
    MetaForward mf;
    mf.mtr = model::forward(tape, theta, mtr.features, mode, running, config);
    mf.tri_mtr = batch_hard_triplet(tape, mf.mtr.embedding, mtr.labels, margin, mean_reduce);

    std::vector<ad::NodeId> grads = tape.backward(mf.tri_mtr, theta.nodes);
    if (first_order) {
        for (ad::NodeId& g : grads) g = tape.constant(tape.value(g));
    }
    mf.theta_prime = ad::inner_step(tape, theta, grads, eta);

    mf.mte = model::forward(tape, mf.theta_prime, mte.features, mode, running, config);
    mf.tri_mte = batch_hard_triplet(tape, mf.mte.embedding, mte.labels, margin, mean_reduce);
    return mf;
}

ad::NodeId simulation_loss(ad::Tape& tape, const MetaForward& mf, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw ContractViolation("simulation_loss: lambda in [0,1]");
    return tape.add(tape.scale(mf.tri_mtr, lambda), tape.scale(mf.tri_mte, 1.0 - lambda));
}

ad::NodeId simulation_loss(ad::Tape& tape, const model::ModelConfig& config,
                           const ad::BoundParams& theta, const LabeledBatch& mtr,
                           const LabeledBatch& mte, double eta, double lambda, double margin,
                           model::Mode mode, ad::ParamSet& running) {
    MetaForward mf = cross_camera_forward(tape, config, theta, mtr, mte, eta, margin,
                                          /*first_order=*/false, /*mean_reduce=*/false, mode,
                                          running);
    return simulation_loss(tape, mf, lambda);
}

ad::NodeId meta_classification(ad::Tape& tape, const MetaForward& mf, const LabeledBatch& mtr,
                               const LabeledBatch& mte, bool mean_reduce) {
    return tape.add(cross_entropy(tape, mf.mtr.logits, mtr.labels, mean_reduce),
                    cross_entropy(tape, mf.mte.logits, mte.labels, mean_reduce));
}

ad::NodeId total_loss(ad::Tape& tape, ad::NodeId smi, ad::NodeId mtri, ad::NodeId mcl,
                      ad::NodeId mca, const LossWeights& weights) {
    weights.validate();
    ad::NodeId total = smi;
    total = tape.add(total, tape.scale(mtri, weights.gamma1));
    total = tape.add(total, tape.scale(mcl, weights.gamma2));
    total = tape.add(total, tape.scale(mca, weights.gamma3));
    return total;
}

}  // namespace cimn::losses
