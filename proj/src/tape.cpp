// SPDX-License-Identifier: Apache-2.0
#include "cimn/tape.hpp"

#include <cmath>
#include <cstdio>

namespace cimn::ad {

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::kLeaf: return "leaf";
        case OpKind::kConst: return "const";
        case OpKind::kAdd: return "add";
        case OpKind::kSub: return "sub";
        case OpKind::kMul: return "mul";
        case OpKind::kScale: return "scale";
        case OpKind::kAddScalar: return "add_scalar";
        case OpKind::kRecip: return "recip";
        case OpKind::kRecipOrZero: return "recip_or_zero";
        case OpKind::kSqrt: return "sqrt";
        case OpKind::kExp: return "exp";
        case OpKind::kLog: return "log";
        case OpKind::kRelu: return "relu";
        case OpKind::kMatmul: return "matmul";
        case OpKind::kTranspose: return "transpose";
        case OpKind::kSumAll: return "sum_all";
        case OpKind::kRowSum: return "row_sum";
        case OpKind::kColSum: return "col_sum";
        case OpKind::kBroadcastAll: return "broadcast_all";
        case OpKind::kBroadcastRows: return "broadcast_rows";
        case OpKind::kBroadcastCols: return "broadcast_cols";
        case OpKind::kRowGather: return "row_gather";
        case OpKind::kRowScatter: return "row_scatter";
    }
    return "?";
}

const Matrix& Tape::value(NodeId id) const {
    if (!id.valid() || id.index >= nodes_.size()) throw ContractViolation("Tape::value: bad node id");
    return nodes_[id.index].value;
}

double Tape::scalar_value(NodeId id) const {
    const Matrix& m = value(id);
    if (!m.is_scalar()) throw ContractViolation("Tape::scalar_value: node is not 1x1");
    return m(0, 0);
}

const Node& Tape::node(NodeId id) const {
    if (!id.valid() || id.index >= nodes_.size()) throw ContractViolation("Tape::node: bad node id");
    return nodes_[id.index];
}

void Tape::expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) const {
    if (m.rows() != rows || m.cols() != cols) {
        throw ContractViolation(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
    }
}

NodeId Tape::push(Node&& n) {
    if (n.op != OpKind::kLeaf && n.op != OpKind::kConst) {
        n.value = compute(n);
    }
    if (!n.value.all_finite()) {
        throw NumericFailure(nodes_.size(), op_name(n.op), "non-finite entry in node value");
    }
    nodes_.push_back(std::move(n));
    return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Matrix Tape::compute(const Node& n) const {
    auto in = [this](NodeId id) -> const Matrix& { return value(id); };
    switch (n.op) {
        case OpKind::kLeaf:
        case OpKind::kConst:
            return n.value;
        case OpKind::kAdd: {
            const Matrix &a = in(n.a), &b = in(n.b);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
            return out;
        }
        case OpKind::kSub: {
            const Matrix &a = in(n.a), &b = in(n.b);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
            return out;
        }
        case OpKind::kMul: {
            const Matrix &a = in(n.a), &b = in(n.b);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
            return out;
        }
        case OpKind::kScale: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = n.scalar * a.data()[i];
            return out;
        }
        case OpKind::kAddScalar: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + n.scalar;
            return out;
        }
        case OpKind::kRecip: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = 1.0 / a.data()[i];
            return out;
        }
        case OpKind::kRecipOrZero: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double v = a.data()[i];
                out.data()[i] = v != 0.0 ? 1.0 / v : 0.0;
            }
            return out;
        }
        case OpKind::kSqrt: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::sqrt(a.data()[i]);
            return out;
        }
        case OpKind::kExp: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::exp(a.data()[i]);
            return out;
        }
        case OpKind::kLog: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::log(a.data()[i]);
            return out;
        }
        case OpKind::kRelu: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), a.cols());
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double v = a.data()[i];
                out.data()[i] = v > 0.0 ? v : 0.0;
            }
            return out;
        }
        case OpKind::kMatmul: {
            const Matrix &a = in(n.a), &b = in(n.b);
            Matrix out(a.rows(), b.cols(), 0.0);
            const std::size_t k_dim = a.cols();
            for (std::size_t i = 0; i < a.rows(); ++i) {
                for (std::size_t k = 0; k < k_dim; ++k) {
                    const double aik = a(i, k);
                    if (aik == 0.0) continue;
                    const double* brow = b.data() + k * b.cols();
                    double* orow = out.data() + i * out.cols();
                    for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
                }
            }
            return out;
        }
        case OpKind::kTranspose: {
            const Matrix& a = in(n.a);
            Matrix out(a.cols(), a.rows());
            for (std::size_t i = 0; i < a.rows(); ++i)
                for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
            return out;
        }
        case OpKind::kSumAll: {
            const Matrix& a = in(n.a);
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
            return Matrix::scalar(s);
        }
        case OpKind::kRowSum: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), 1, 0.0);
            for (std::size_t i = 0; i < a.rows(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
                out(i, 0) = s;
            }
            return out;
        }
        case OpKind::kColSum: {
            const Matrix& a = in(n.a);
            Matrix out(1, a.cols(), 0.0);
            for (std::size_t i = 0; i < a.rows(); ++i)
                for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
            return out;
        }
        case OpKind::kBroadcastAll: {
            const Matrix& a = in(n.a);
            return Matrix(n.target_rows, n.target_cols, a(0, 0));
        }
        case OpKind::kBroadcastRows: {
            const Matrix& a = in(n.a);
            Matrix out(n.target_rows, a.cols());
            for (std::size_t i = 0; i < out.rows(); ++i)
                for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = a(0, j);
            return out;
        }
        case OpKind::kBroadcastCols: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), n.target_cols);
            for (std::size_t i = 0; i < out.rows(); ++i)
                for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = a(i, 0);
            return out;
        }
        case OpKind::kRowGather: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), 1);
            for (std::size_t i = 0; i < a.rows(); ++i)
                out(i, 0) = a(i, static_cast<std::size_t>(n.indices[i]));
            return out;
        }
        case OpKind::kRowScatter: {
            const Matrix& a = in(n.a);
            Matrix out(a.rows(), n.target_cols, 0.0);
            for (std::size_t i = 0; i < a.rows(); ++i)
                out(i, static_cast<std::size_t>(n.indices[i])) = a(i, 0);
            return out;
        }
    }
    throw ContractViolation("Tape::compute: unknown op");
}

NodeId Tape::leaf(Matrix v) {
    Node n;
    n.op = OpKind::kLeaf;
    n.value = std::move(v);
    return push(std::move(n));
}

NodeId Tape::constant(Matrix v) {
    Node n;
    n.op = OpKind::kConst;
    n.value = std::move(v);
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    if (!value(a).same_shape(value(b))) throw ContractViolation("add: shape mismatch");
    Node n;
    n.op = OpKind::kAdd;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    if (!value(a).same_shape(value(b))) throw ContractViolation("sub: shape mismatch");
    Node n;
    n.op = OpKind::kSub;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    if (!value(a).same_shape(value(b))) throw ContractViolation("mul: shape mismatch");
    Node n;
    n.op = OpKind::kMul;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double c) {
    Node n;
    n.op = OpKind::kScale;
    n.a = a;
    n.scalar = c;
    return push(std::move(n));
}

NodeId Tape::add_scalar(NodeId a, double c) {
    Node n;
    n.op = OpKind::kAddScalar;
    n.a = a;
    n.scalar = c;
    return push(std::move(n));
}

NodeId Tape::recip(NodeId a) {
    Node n;
    n.op = OpKind::kRecip;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::recip_or_zero(NodeId a) {
    Node n;
    n.op = OpKind::kRecipOrZero;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::sqrt(NodeId a) {
    Node n;
    n.op = OpKind::kSqrt;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::exp(NodeId a) {
    Node n;
    n.op = OpKind::kExp;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::log(NodeId a) {
    Node n;
    n.op = OpKind::kLog;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
    Node n;
    n.op = OpKind::kRelu;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    if (value(a).cols() != value(b).rows()) throw ContractViolation("matmul: inner dim mismatch");
    Node n;
    n.op = OpKind::kMatmul;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::transpose(NodeId a) {
    Node n;
    n.op = OpKind::kTranspose;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::sum_all(NodeId a) {
    Node n;
    n.op = OpKind::kSumAll;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::row_sum(NodeId a) {
    Node n;
    n.op = OpKind::kRowSum;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::col_sum(NodeId a) {
    Node n;
    n.op = OpKind::kColSum;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::broadcast_all(NodeId a, std::size_t rows, std::size_t cols) {
    expect_shape(value(a), 1, 1, "broadcast_all input");
    Node n;
    n.op = OpKind::kBroadcastAll;
    n.a = a;
    n.target_rows = rows;
    n.target_cols = cols;
    return push(std::move(n));
}

NodeId Tape::broadcast_rows(NodeId a, std::size_t rows) {
    if (value(a).rows() != 1) throw ContractViolation("broadcast_rows: input must be 1 x c");
    Node n;
    n.op = OpKind::kBroadcastRows;
    n.a = a;
    n.target_rows = rows;
    n.target_cols = value(a).cols();
    return push(std::move(n));
}

NodeId Tape::broadcast_cols(NodeId a, std::size_t cols) {
    if (value(a).cols() != 1) throw ContractViolation("broadcast_cols: input must be r x 1");
    Node n;
    n.op = OpKind::kBroadcastCols;
    n.a = a;
    n.target_rows = value(a).rows();
    n.target_cols = cols;
    return push(std::move(n));
}

NodeId Tape::row_gather(NodeId a, std::vector<std::int32_t> idx) {
    const Matrix& m = value(a);
    if (idx.size() != m.rows()) throw ContractViolation("row_gather: index count != rows");
    for (std::int32_t j : idx)
        if (j < 0 || static_cast<std::size_t>(j) >= m.cols())
            throw ContractViolation("row_gather: index out of range");
    Node n;
    n.op = OpKind::kRowGather;
    n.a = a;
    n.indices = std::move(idx);
    return push(std::move(n));
}

NodeId Tape::row_scatter(NodeId a, std::vector<std::int32_t> idx, std::size_t cols) {
    const Matrix& m = value(a);
    if (m.cols() != 1) throw ContractViolation("row_scatter: input must be r x 1");
    if (idx.size() != m.rows()) throw ContractViolation("row_scatter: index count != rows");
    for (std::int32_t j : idx)
        if (j < 0 || static_cast<std::size_t>(j) >= cols)
            throw ContractViolation("row_scatter: index out of range");
    Node n;
    n.op = OpKind::kRowScatter;
    n.a = a;
    n.indices = std::move(idx);
    n.target_rows = m.rows();
    n.target_cols = cols;
    return push(std::move(n));
}

std::vector<NodeId> Tape::backward(NodeId loss, std::span<const NodeId> wrt) {
    if (!value(loss).is_scalar()) throw ContractViolation("backward: loss must be 1x1");
    const std::size_t n = loss.index + 1;
    std::vector<NodeId> adj(n);  // invalid id == zero adjoint

    adj[loss.index] = constant(Matrix::scalar(1.0));

    auto accumulate = [&](NodeId target, NodeId contrib) {
        if (adj[target.index].valid()) {
            adj[target.index] = add(adj[target.index], contrib);
        } else {
            adj[target.index] = contrib;
        }
    };

    for (std::size_t i = n; i-- > 0;) {
        const NodeId out_adj = adj[i];
        if (!out_adj.valid()) continue;
        // Copy metadata: emitting adjoint nodes below may reallocate nodes_.
        const OpKind op = nodes_[i].op;
        const NodeId a = nodes_[i].a;
        const NodeId b = nodes_[i].b;
        const double c = nodes_[i].scalar;
        const std::vector<std::int32_t> indices = nodes_[i].indices;
        const NodeId self{static_cast<std::uint32_t>(i)};

        switch (op) {
            case OpKind::kLeaf:
            case OpKind::kConst:
                break;
            case OpKind::kAdd:
                accumulate(a, out_adj);
                accumulate(b, out_adj);
                break;
            case OpKind::kSub:
                accumulate(a, out_adj);
                accumulate(b, scale(out_adj, -1.0));
                break;
            case OpKind::kMul:
                accumulate(a, mul(out_adj, b));
                accumulate(b, mul(out_adj, a));
                break;
            case OpKind::kScale:
                accumulate(a, scale(out_adj, c));
                break;
            case OpKind::kAddScalar:
                accumulate(a, out_adj);
                break;
            case OpKind::kRecip:
            case OpKind::kRecipOrZero:
                // d(1/x) = -y^2 dx with y = 1/x; the masked variant's zero
                // output makes its subgradient at x == 0 vanish as intended.
                accumulate(a, scale(mul(out_adj, mul(self, self)), -1.0));
                break;
            case OpKind::kSqrt:
                // d(sqrt x) = dx / (2 y); subgradient 0 at the x == 0 kink,
                // matching the relu convention.
                accumulate(a, scale(mul(out_adj, recip_or_zero(self)), 0.5));
                break;
            case OpKind::kExp:
                accumulate(a, mul(out_adj, self));
                break;
            case OpKind::kLog:
                accumulate(a, mul(out_adj, recip(a)));
                break;
            case OpKind::kRelu: {
                // Subgradient 0 at the kink; mask is constant w.r.t. the graph.
                const Matrix& x = value(a);
                Matrix mask(x.rows(), x.cols());
                for (std::size_t k = 0; k < x.size(); ++k)
                    mask.data()[k] = x.data()[k] > 0.0 ? 1.0 : 0.0;
                accumulate(a, mul(out_adj, constant(std::move(mask))));
                break;
            }
            case OpKind::kMatmul:
                accumulate(a, matmul(out_adj, transpose(b)));
                accumulate(b, matmul(transpose(a), out_adj));
                break;
            case OpKind::kTranspose:
                accumulate(a, transpose(out_adj));
                break;
            case OpKind::kSumAll: {
                const Matrix& x = value(a);
                accumulate(a, broadcast_all(out_adj, x.rows(), x.cols()));
                break;
            }
            case OpKind::kRowSum: {
                const Matrix& x = value(a);
                accumulate(a, broadcast_cols(out_adj, x.cols()));
                break;
            }
            case OpKind::kColSum: {
                const Matrix& x = value(a);
                accumulate(a, broadcast_rows(out_adj, x.rows()));
                break;
            }
            case OpKind::kBroadcastAll:
                accumulate(a, sum_all(out_adj));
                break;
            case OpKind::kBroadcastRows:
                accumulate(a, col_sum(out_adj));
                break;
            case OpKind::kBroadcastCols:
                accumulate(a, row_sum(out_adj));
                break;
            case OpKind::kRowGather: {
                const Matrix& x = value(a);
                accumulate(a, row_scatter(out_adj, indices, x.cols()));
                break;
            }
            case OpKind::kRowScatter:
                accumulate(a, row_gather(out_adj, indices));
                break;
        }
    }

    std::vector<NodeId> grads;
    grads.reserve(wrt.size());
    for (NodeId p : wrt) {
        if (!p.valid() || p.index >= nodes_.size())
            throw ContractViolation("backward: wrt node not on this tape");
        if (p.index < n && adj[p.index].valid()) {
            grads.push_back(adj[p.index]);
        } else {
            const Matrix& shape = value(p);
            grads.push_back(constant(Matrix(shape.rows(), shape.cols(), 0.0)));
        }
    }
    return grads;
}

void Tape::replay_verify() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.op == OpKind::kLeaf || n.op == OpKind::kConst) continue;
        Matrix again = compute(n);
        if (!again.bit_equal(n.value)) {
            throw NumericFailure(i, op_name(n.op), "replay mismatch");
        }
    }
}

}  // namespace cimn::ad
