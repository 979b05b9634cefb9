// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "cimn/param_set.hpp"
#include "cimn/tape.hpp"

namespace cimn::ad {

// Parameters registered as leaves on a tape. `nodes` is parallel to the
// source ParamSet's entry order. After inner_step the nodes point at the
// updated (still differentiable) parameters while names and shapes persist.
struct BoundParams {
    std::vector<std::string> names;
    std::vector<NodeId> nodes;

    NodeId at(std::string_view name) const;
};

BoundParams bind(Tape& tape, const ParamSet& params);

// A scalar-valued computation over bound parameters.
using LossBuilder = std::function<NodeId(Tape&, const BoundParams&)>;

struct Evaluation {
    Tape tape;
    BoundParams params;
    NodeId loss;
    double value = 0.0;
};

// Runs a computation, returning its scalar value together with the live
// graph. Throws NumericFailure (with the offending node) if any intermediate
// is non-finite.
Evaluation evaluate(const LossBuilder& builder, const ParamSet& params);

// Gradients of an evaluated loss w.r.t. its bound parameters, in the
// parameter set's shape. Parameters the loss never touched get zeros.
ParamSet gradient(Evaluation& ev);

// One SGD step theta' = theta - eta * grad executed as graph ops, so the
// result remains differentiable w.r.t. theta.
BoundParams inner_step(Tape& tape, const BoundParams& params, std::span<const NodeId> grads,
                       double eta);

// Gradient w.r.t. theta of outer(theta - eta * grad inner(theta)).
// With first_order the inner gradient is detached before the update
// (FOMAML-style); default is the exact second-order gradient.
ParamSet meta_gradient(const LossBuilder& inner, const LossBuilder& outer, const ParamSet& params,
                       double eta, bool first_order = false);

// Central finite differences, (f(x+h) - f(x-h)) / 2h per coordinate.
// Test oracle; independent of the tape machinery.
ParamSet finite_diff_gradient(const std::function<double(const ParamSet&)>& loss_fn,
                              const ParamSet& params, double step);

}  // namespace cimn::ad
