// SPDX-License-Identifier: Apache-2.0
#include "cimn/autodiff.hpp"

namespace cimn::ad {

NodeId BoundParams::at(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return nodes[i];
    throw ContractViolation("BoundParams: no parameter named '" + std::string(name) + "'");
}

BoundParams bind(Tape& tape, const ParamSet& params) {
    if (!params.all_finite()) throw ContractViolation("bind: parameters contain non-finite entries");
    BoundParams bound;
    bound.names.reserve(params.count());
    bound.nodes.reserve(params.count());
    for (const auto& e : params) {
        bound.names.push_back(e.name);
        bound.nodes.push_back(tape.leaf(e.value));
    }
    return bound;
}

Evaluation evaluate(const LossBuilder& builder, const ParamSet& params) {
    Evaluation ev;
    ev.params = bind(ev.tape, params);
    ev.loss = builder(ev.tape, ev.params);
    if (!ev.tape.value(ev.loss).is_scalar())
        throw ContractViolation("evaluate: computation must produce a 1x1 loss");
    ev.value = ev.tape.scalar_value(ev.loss);
    return ev;
}

ParamSet gradient(Evaluation& ev) {
    std::vector<NodeId> grads = ev.tape.backward(ev.loss, ev.params.nodes);
    ParamSet out;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        out.add(ev.params.names[i], ev.tape.value(grads[i]));
    }
    return out;
}

BoundParams inner_step(Tape& tape, const BoundParams& params, std::span<const NodeId> grads,
                       double eta) {
    if (eta < 0.0) throw ContractViolation("inner_step: eta must be nonnegative");
    if (grads.size() != params.nodes.size())
        throw ContractViolation("inner_step: gradient count != parameter count");
    BoundParams updated;
    updated.names = params.names;
    updated.nodes.reserve(params.nodes.size());
    for (std::size_t i = 0; i < params.nodes.size(); ++i) {
        if (!tape.value(params.nodes[i]).same_shape(tape.value(grads[i])))
            throw ContractViolation("inner_step: shape mismatch for '" + params.names[i] + "'");
        updated.nodes.push_back(tape.sub(params.nodes[i], tape.scale(grads[i], eta)));
    }
    return updated;
}

ParamSet meta_gradient(const LossBuilder& inner, const LossBuilder& outer, const ParamSet& params,
                       double eta, bool first_order) {
    Tape tape;
    BoundParams theta = bind(tape, params);

    NodeId inner_loss = inner(tape, theta);
    if (!tape.value(inner_loss).is_scalar())
        throw ContractViolation("meta_gradient: inner computation must be scalar");
    std::vector<NodeId> inner_grads = tape.backward(inner_loss, theta.nodes);

    if (first_order) {
        for (NodeId& g : inner_grads) g = tape.constant(tape.value(g));
    }
    BoundParams theta_prime = inner_step(tape, theta, inner_grads, eta);

    NodeId outer_loss = outer(tape, theta_prime);
    if (!tape.value(outer_loss).is_scalar())
        throw ContractViolation("meta_gradient: outer computation must be scalar");

    std::vector<NodeId> grads = tape.backward(outer_loss, theta.nodes);
    ParamSet out;
    for (std::size_t i = 0; i < grads.size(); ++i) out.add(theta.names[i], tape.value(grads[i]));
    return out;
}

ParamSet finite_diff_gradient(const std::function<double(const ParamSet&)>& loss_fn,
                              const ParamSet& params, double step) {
    if (!(step > 0.0)) throw ContractViolation("finite_diff_gradient: step must be positive");
    ParamSet probe = params;
    std::vector<double> flat = probe.flatten();
    std::vector<double> grad(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double saved = flat[i];
        flat[i] = saved + step;
        probe.unflatten(flat);
        const double up = loss_fn(probe);
        flat[i] = saved - step;
        probe.unflatten(flat);
        const double down = loss_fn(probe);
        flat[i] = saved;
        grad[i] = (up - down) / (2.0 * step);
    }
    ParamSet out = params;
    out.unflatten(grad);
    return out;
}

}  // namespace cimn::ad
