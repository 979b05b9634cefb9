// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "cimn/model.hpp"

namespace cimn::losses {

// Trade-off and weighting knobs for the combined objective, with the
// published defaults.
struct LossWeights {
    double lambda = 0.6;            // simulation-loss trade-off
    double gamma1 = 1.0;            // meta triplet weight
    double gamma2 = 1.0;            // meta classification weight
    double gamma3 = 0.02;           // meta camera alignment weight
    double margin = 0.3;            // triplet margin
    double mmd_bandwidth = 0.0;     // kernel width; <= 0 selects the per-batch median heuristic
    bool mmd_single_cross_term = false; // -1 cross-term variant instead of the default -2
    bool mean_reduce = false;       // average triplet/classification sums over anchors

    void validate() const;
};

struct LabeledBatch {
    Matrix features;          // rows = samples
    std::vector<int> labels;  // class indices, shared label space across cameras
};

// Batch-hard triplet loss: per anchor, farthest positive within the batch
// (self excluded) and nearest negative, hinged at `margin`, summed over
// anchors. Distances are non-squared Euclidean. Requires >= 2 samples per
// label and >= 2 distinct labels.
ad::NodeId batch_hard_triplet(ad::Tape& tape, ad::NodeId embeddings, std::span<const int> labels,
                              double margin, bool mean_reduce = false);

// Meta triplet loss over a two-set batch: each anchor's hardest positive is
// restricted to its own set, its hardest negative to the other set. Sums
// over all anchors of both sets.
ad::NodeId meta_triplet(ad::Tape& tape, ad::NodeId emb_a, std::span<const int> labels_a,
                        ad::NodeId emb_b, std::span<const int> labels_b, double margin,
                        bool mean_reduce = false);

// Sum over samples of -log softmax(logits)[label], computed with
// max-subtraction.
ad::NodeId cross_entropy(ad::Tape& tape, ad::NodeId logits, std::span<const int> labels,
                         bool mean_reduce = false);

// Biased squared MMD with a Gaussian kernel of width sigma. The cross term
// carries coefficient -2 so that mmd(F, F) == 0; `single_cross_term` keeps a
// -1 coefficient instead, for comparison runs.
ad::NodeId mmd(ad::Tape& tape, ad::NodeId fa, ad::NodeId fb, double sigma,
               bool single_cross_term = false);

// Squared Euclidean distance between the two feature-set means.
ad::NodeId center_distance(ad::Tape& tape, ad::NodeId fa, ad::NodeId fb);

// mmd + center_distance on the configured stage tap.
ad::NodeId meta_camera_alignment(ad::Tape& tape, ad::NodeId tap_a, ad::NodeId tap_b, double sigma,
                                 bool single_cross_term = false);

// Median pairwise Euclidean distance over the pooled rows of two feature
// sets; the default kernel bandwidth. Falls back to 1.0 when the pooled set
// is degenerate. Numeric only, no gradient flows through the bandwidth.
double median_pairwise_distance(const Matrix& a, const Matrix& b);

// Shared forward pass of the cross-camera simulation: triplet loss on the
// meta-train side under theta, one differentiable SGD step to theta', and
// the meta-test side evaluated under theta'. Every downstream loss term
// reuses these taps so theta' is computed exactly once.
struct MetaForward {
    model::ForwardTaps mtr;        // meta-train taps via theta
    model::ForwardTaps mte;        // meta-test taps via theta'
    ad::BoundParams theta_prime;
    ad::NodeId tri_mtr;            // triplet loss on mtr at theta
    ad::NodeId tri_mte;            // triplet loss on mte at theta'
};

MetaForward cross_camera_forward(ad::Tape& tape, const model::ModelConfig& config,
                                 const ad::BoundParams& theta, const LabeledBatch& mtr,
                                 const LabeledBatch& mte, double eta, double margin,
                                 bool first_order, bool mean_reduce, model::Mode mode,
                                 ad::ParamSet& running);

// lambda * L_tri(mtr, theta) + (1 - lambda) * L_tri(mte, theta').
ad::NodeId simulation_loss(ad::Tape& tape, const MetaForward& mf, double lambda);

// Convenience overload matching the operation contract directly: runs the
// cross-camera forward internally and returns only the combined loss.
ad::NodeId simulation_loss(ad::Tape& tape, const model::ModelConfig& config,
                           const ad::BoundParams& theta, const LabeledBatch& mtr,
                           const LabeledBatch& mte, double eta, double lambda, double margin,
                           model::Mode mode, ad::ParamSet& running);

// Cross-entropy on mtr logits (theta) plus cross-entropy on mte logits
// (theta').
ad::NodeId meta_classification(ad::Tape& tape, const MetaForward& mf, const LabeledBatch& mtr,
                               const LabeledBatch& mte, bool mean_reduce = false);

// L_smi + gamma1 * L_mtri + gamma2 * L_mcl + gamma3 * L_mca.
ad::NodeId total_loss(ad::Tape& tape, ad::NodeId smi, ad::NodeId mtri, ad::NodeId mcl,
                      ad::NodeId mca, const LossWeights& weights);

}  // namespace cimn::losses
