// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cimn/matrix.hpp"

namespace cimn::ad {

struct NodeId {
    static constexpr std::uint32_t kInvalid = ~std::uint32_t{0};
    std::uint32_t index = kInvalid;
    bool valid() const { return index != kInvalid; }
    bool operator==(const NodeId&) const = default;
};

enum class OpKind : std::uint8_t {
    kLeaf,
    kConst,
    kAdd,
    kSub,
    kMul,
    kScale,      // c * x
    kAddScalar,  // x + c
    kRecip,
    kRecipOrZero,  // 1/x away from zero, 0 at x == 0; sqrt's kink subgradient
    kSqrt,
    kExp,
    kLog,
    kRelu,
    kMatmul,
    kTranspose,
    kSumAll,         // r x c -> 1 x 1
    kRowSum,         // r x c -> r x 1
    kColSum,         // r x c -> 1 x c
    kBroadcastAll,   // 1 x 1 -> r x c
    kBroadcastRows,  // 1 x c -> r x c
    kBroadcastCols,  // r x 1 -> r x c
    kRowGather,      // r x c + idx[r] -> r x 1, out[i] = in[i, idx[i]]
    kRowScatter,     // r x 1 + idx[r] -> r x c, zeros except out[i, idx[i]]
};

const char* op_name(OpKind op);

struct Node {
    OpKind op = OpKind::kConst;
    NodeId a;
    NodeId b;
    double scalar = 0.0;            // payload for kScale / kAddScalar
    std::size_t target_rows = 0;    // broadcast / scatter output shape
    std::size_t target_cols = 0;
    std::vector<std::int32_t> indices;  // gather / scatter column indices
    Matrix value;
};

// Append-only record of a differentiable computation. Nodes are stored in
// topological order and evaluated eagerly as they are created; every node's
// forward value is kept so the graph can be replayed and checked bit-for-bit.
//
// backward() emits adjoints as new graph nodes rather than raw numbers, so a
// gradient is itself differentiable. That is the entire second-order story:
// an SGD step built from gradient nodes stays inside the graph, and a later
// backward() differentiates through it.
class Tape {
public:
    NodeId leaf(Matrix v);
    NodeId constant(Matrix v);

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId add_scalar(NodeId a, double c);
    NodeId recip(NodeId a);
    NodeId recip_or_zero(NodeId a);
    NodeId sqrt(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId relu(NodeId a);
    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId sum_all(NodeId a);
    NodeId row_sum(NodeId a);
    NodeId col_sum(NodeId a);
    NodeId broadcast_all(NodeId a, std::size_t rows, std::size_t cols);
    NodeId broadcast_rows(NodeId a, std::size_t rows);
    NodeId broadcast_cols(NodeId a, std::size_t cols);
    NodeId row_gather(NodeId a, std::vector<std::int32_t> idx);
    NodeId row_scatter(NodeId a, std::vector<std::int32_t> idx, std::size_t cols);

    const Matrix& value(NodeId id) const;
    double scalar_value(NodeId id) const;
    const Node& node(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss. Returns one gradient node per entry
    // of `wrt`, in order; parameters the loss does not depend on get a
    // constant zero node of the matching shape. The returned nodes are live
    // graph nodes: differentiating through them again is valid.
    std::vector<NodeId> backward(NodeId loss, std::span<const NodeId> wrt);

    // Recompute every node from its recorded inputs and require bitwise
    // equality with the stored values.
    void replay_verify() const;

private:
    NodeId push(Node&& n);
    Matrix compute(const Node& n) const;
    void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) const;

    std::vector<Node> nodes_;
};

}  // namespace cimn::ad
