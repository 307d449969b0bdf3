#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "smx/errors.hpp"
#include "smx/param_store.hpp"
#include "smx/tensor.hpp"

namespace smx {

using NodeId = std::uint32_t;

// Define-by-run reverse-mode differentiation tape. A tape is built fresh for
// every loss evaluation: forward values are computed eagerly as ops are
// recorded, and backward() walks the records in reverse creation order
// (which is a reverse topological order by construction), accumulating
// gradients so nodes consumed several times are handled correctly.
class Tape {
  enum class Op {
    Constant,
    Param,
    Matmul,    // a[m,k] * b[k,n]
    MatmulNT,  // a[m,k] * b[n,k]^T
    Add,
    Sub,
    Mul,
    Scale,    // a * c with compile-time constant c
    ScaleBy,  // a * s with s a 1-element node (learnable temperature)
    Relu,
    AddRowwise,  // matrix + broadcast bias row
    ConcatCols,  // [a | b] along the last axis
    L2NormRows,  // row-wise x / ||x||
    CeDiag,      // mean softmax cross-entropy against the diagonal
    EmbedRows,   // weighted sums of table rows (token pooling)
    Sum,         // sum of all entries -> scalar
  };

  struct Node {
    Op op;
    NodeId a = 0, b = 0;
    Tensor value;
    Tensor grad;
    bool touched = false;  // whether any gradient has reached this node
    double c = 0.0;        // Scale factor
    std::size_t split = 0;  // ConcatCols: column count of the left input
    Tensor cache;           // CeDiag: softmax rows; L2NormRows: row norms
    Tensor* pgrad = nullptr;  // Param: destination gradient buffer
    // EmbedRows payload: rows are [offsets[r], offsets[r+1]) slices.
    std::vector<std::uint32_t> ids;
    std::vector<double> weights;
    std::vector<std::size_t> offsets;
  };

 public:
  NodeId constant(Tensor v) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(v);
    return push(std::move(n));
  }

  // Leaf over a stored parameter. The forward value is a snapshot of the
  // parameter; backward() adds the node's gradient into the store's buffer.
  NodeId param(ParamStore& ps, const std::string& name) {
    Node n;
    n.op = Op::Param;
    n.value = ps.value(name);
    n.pgrad = &ps.grad(name);
    return push(std::move(n));
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.cols() != B.rows())
      throw DimensionError("matmul: " + A.shape_str() + " x " + B.shape_str());
    Node n;
    n.op = Op::Matmul;
    n.a = a;
    n.b = b;
    n.value = Tensor::zeros({A.rows(), B.cols()});
    matmul_acc(n.value, A, B);
    return push(std::move(n));
  }

  // Row-against-row products: out[i][j] = a_i . b_j. This is the score
  // matrix builder, so both operands keep their natural row layout.
  NodeId matmul_nt(NodeId a, NodeId b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.cols() != B.cols())
      throw DimensionError("matmul_nt: " + A.shape_str() + " x " +
                           B.shape_str());
    Node n;
    n.op = Op::MatmulNT;
    n.a = a;
    n.b = b;
    n.value = Tensor::zeros({A.rows(), B.rows()});
    matmul_nt_acc(n.value, A, B);
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }

  NodeId scale(NodeId a, double c) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.c = c;
    n.value = val(a);
    for (double& v : n.value.data) v *= c;
    return push(std::move(n));
  }

  NodeId scale_by(NodeId a, NodeId s) {
    if (val(s).numel() != 1)
      throw DimensionError("scale_by: scale operand must hold one value, got " +
                           val(s).shape_str());
    Node n;
    n.op = Op::ScaleBy;
    n.a = a;
    n.b = s;
    const double c = val(s).data[0];
    n.value = val(a);
    for (double& v : n.value.data) v *= c;
    return push(std::move(n));
  }

  NodeId relu(NodeId a) {
    Node n;
    n.op = Op::Relu;
    n.a = a;
    n.value = val(a);
    for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
  }

  NodeId add_rowwise(NodeId a, NodeId bias) {
    const Tensor& A = val(a);
    const Tensor& B = val(bias);
    if (B.numel() != A.cols())
      throw DimensionError("add_rowwise: bias " + B.shape_str() +
                           " does not span the columns of " + A.shape_str());
    Node n;
    n.op = Op::AddRowwise;
    n.a = a;
    n.b = bias;
    n.value = A;
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j)
        n.value.at(i, j) += B.data[j];
    return push(std::move(n));
  }

  NodeId concat_cols(NodeId a, NodeId b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.rows() != B.rows())
      throw DimensionError("concat_cols: row counts differ, " + A.shape_str() +
                           " vs " + B.shape_str());
    Node n;
    n.op = Op::ConcatCols;
    n.a = a;
    n.b = b;
    n.split = A.cols();
    n.value = Tensor::zeros({A.rows(), A.cols() + B.cols()});
    for (std::size_t i = 0; i < A.rows(); ++i) {
      for (std::size_t j = 0; j < A.cols(); ++j)
        n.value.at(i, j) = A.at(i, j);
      for (std::size_t j = 0; j < B.cols(); ++j)
        n.value.at(i, A.cols() + j) = B.at(i, j);
    }
    return push(std::move(n));
  }

  // Row-wise projection onto the unit sphere. A row whose norm falls below
  // eps has no usable direction; that is a modelling failure worth
  // surfacing, not smoothing over.
  NodeId l2_normalize_rows(NodeId a, double eps = 1e-8) {
    const Tensor& A = val(a);
    Node n;
    n.op = Op::L2NormRows;
    n.a = a;
    n.value = A;
    n.cache = Tensor::zeros({A.rows()});
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < A.cols(); ++j) sq += A.at(i, j) * A.at(i, j);
      const double norm = std::sqrt(sq);
      if (norm < eps)
        throw DegenerateEmbeddingError(
            "cannot normalize row " + std::to_string(i) +
            ": norm " + std::to_string(norm) + " is below " +
            std::to_string(eps));
      n.cache.data[i] = norm;
      for (std::size_t j = 0; j < A.cols(); ++j) n.value.at(i, j) /= norm;
    }
    return push(std::move(n));
  }

  // Mean of -log softmax(scores_i)[i] over rows, computed with max-shifted
  // exponentials. The softmax rows are cached for the backward pass.
  NodeId softmax_cross_entropy_diag(NodeId scores) {
    const Tensor& S = val(scores);
    if (S.rank() != 2 || S.rows() != S.cols())
      throw DimensionError("softmax_cross_entropy_diag: need square scores, got " +
                           S.shape_str());
    const std::size_t N = S.rows();
    Node n;
    n.op = Op::CeDiag;
    n.a = scores;
    n.cache = Tensor::zeros({N, N});
    double loss = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double mx = S.at(i, 0);
      for (std::size_t j = 1; j < N; ++j) mx = std::max(mx, S.at(i, j));
      double z = 0.0;
      for (std::size_t j = 0; j < N; ++j) {
        const double e = std::exp(S.at(i, j) - mx);
        n.cache.at(i, j) = e;
        z += e;
      }
      for (std::size_t j = 0; j < N; ++j) n.cache.at(i, j) /= z;
      loss += std::log(z) - (S.at(i, i) - mx);
    }
    n.value = Tensor::scalar(loss / static_cast<double>(N));
    return push(std::move(n));
  }

  // out[r] = sum over the r-th slice of weights[k] * table[ids[k]].
  // This is the pooling primitive for token sequences: one output row per
  // sequence, gradients scattered back into the lookup table.
  NodeId embedding_rows(NodeId table, std::vector<std::uint32_t> ids,
                        std::vector<double> weights,
                        std::vector<std::size_t> offsets) {
    const Tensor& T = val(table);
    require_matrix(T, "embedding_rows");
    if (ids.size() != weights.size() || offsets.empty() ||
        offsets.front() != 0 || offsets.back() != ids.size())
      throw DimensionError("embedding_rows: inconsistent id/weight/offset lists");
    for (std::uint32_t id : ids)
      if (id >= T.rows())
        throw VocabularyError("embedding_rows: id " + std::to_string(id) +
                              " outside table of " + std::to_string(T.rows()) +
                              " rows");
    const std::size_t R = offsets.size() - 1;
    const std::size_t D = T.cols();
    Node n;
    n.op = Op::EmbedRows;
    n.a = table;
    n.value = Tensor::zeros({R, D});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k)
        for (std::size_t j = 0; j < D; ++j)
          n.value.at(r, j) += weights[k] * T.at(ids[k], j);
    n.ids = std::move(ids);
    n.weights = std::move(weights);
    n.offsets = std::move(offsets);
    return push(std::move(n));
  }

  NodeId sum(NodeId a) {
    Node n;
    n.op = Op::Sum;
    n.a = a;
    double acc = 0.0;
    for (double v : val(a).data) acc += v;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
  }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }

  double scalar(NodeId id) const {
    const Tensor& v = nodes_[id].value;
    if (v.numel() != 1)
      throw DimensionError("scalar: node holds " + v.shape_str());
    return v.data[0];
  }

  std::size_t size() const { return nodes_.size(); }

  // Seeds the root with gradient 1 and propagates through every record in
  // reverse creation order. Multiple calls accumulate (unused in practice;
  // tapes are single-shot).
  void backward(NodeId root) {
    if (nodes_[root].value.numel() != 1)
      throw DimensionError("backward: root must hold one value, got " +
                           nodes_[root].value.shape_str());
    touch(root).data[0] += 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.touched) continue;
      step_back(n);
    }
  }

 private:
  NodeId binary(Op op, NodeId a, NodeId b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (!A.same_shape(B))
      throw DimensionError("elementwise op: shapes differ, " + A.shape_str() +
                           " vs " + B.shape_str());
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = A;
    const double* pb = B.data.data();
    double* pv = n.value.data.data();
    const std::size_t sz = n.value.numel();
    switch (op) {
      case Op::Add:
        for (std::size_t i = 0; i < sz; ++i) pv[i] += pb[i];
        break;
      case Op::Sub:
        for (std::size_t i = 0; i < sz; ++i) pv[i] -= pb[i];
        break;
      case Op::Mul:
        for (std::size_t i = 0; i < sz; ++i) pv[i] *= pb[i];
        break;
      default:
        throw NumericError("binary: bad op");
    }
    return push(std::move(n));
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  const Tensor& val(NodeId id) const { return nodes_[id].value; }

  Tensor& touch(NodeId id) {
    Node& n = nodes_[id];
    if (!n.touched) {
      n.grad = Tensor::zeros(n.value.shape);
      n.touched = true;
    }
    return n.grad;
  }

  void step_back(Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Constant:
        break;
      case Op::Param:
        axpy(*n.pgrad, 1.0, g);
        break;
      case Op::Matmul: {
        // dA = dC * B^T ; dB = A^T * dC
        matmul_nt_acc(touch(n.a), g, nodes_[n.b].value);
        matmul_tn_acc(touch(n.b), nodes_[n.a].value, g);
        break;
      }
      case Op::MatmulNT: {
        // C = A * B^T : dA = dC * B ; dB = dC^T * A
        matmul_acc(touch(n.a), g, nodes_[n.b].value);
        matmul_tn_acc(touch(n.b), g, nodes_[n.a].value);
        break;
      }
      case Op::Add:
        axpy(touch(n.a), 1.0, g);
        axpy(touch(n.b), 1.0, g);
        break;
      case Op::Sub:
        axpy(touch(n.a), 1.0, g);
        axpy(touch(n.b), -1.0, g);
        break;
      case Op::Mul: {
        Tensor& da = touch(n.a);
        Tensor& db = touch(n.b);
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          da.data[i] += g.data[i] * B.data[i];
          db.data[i] += g.data[i] * A.data[i];
        }
        break;
      }
      case Op::Scale:
        axpy(touch(n.a), n.c, g);
        break;
      case Op::ScaleBy: {
        const double s = nodes_[n.b].value.data[0];
        axpy(touch(n.a), s, g);
        touch(n.b).data[0] += dot(g, nodes_[n.a].value);
        break;
      }
      case Op::Relu: {
        Tensor& da = touch(n.a);
        const Tensor& A = nodes_[n.a].value;
        for (std::size_t i = 0; i < g.numel(); ++i)
          if (A.data[i] > 0.0) da.data[i] += g.data[i];
        break;
      }
      case Op::AddRowwise: {
        axpy(touch(n.a), 1.0, g);
        Tensor& db = touch(n.b);
        const std::size_t rows = n.value.rows(), cols = n.value.cols();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j)
            db.data[j] += g.at(i, j);
        break;
      }
      case Op::ConcatCols: {
        Tensor& da = touch(n.a);
        Tensor& db = touch(n.b);
        const std::size_t rows = n.value.rows(), cols = n.value.cols();
        const std::size_t p = n.split;
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < p; ++j) da.at(i, j) += g.at(i, j);
          for (std::size_t j = p; j < cols; ++j)
            db.at(i, j - p) += g.at(i, j);
        }
        break;
      }
      case Op::L2NormRows: {
        // y = x / ||x||  =>  dx = (g - (g.y) y) / ||x||
        Tensor& da = touch(n.a);
        const std::size_t rows = n.value.rows(), cols = n.value.cols();
        for (std::size_t i = 0; i < rows; ++i) {
          double gy = 0.0;
          for (std::size_t j = 0; j < cols; ++j)
            gy += g.at(i, j) * n.value.at(i, j);
          const double inv = 1.0 / n.cache.data[i];
          for (std::size_t j = 0; j < cols; ++j)
            da.at(i, j) += (g.at(i, j) - gy * n.value.at(i, j)) * inv;
        }
        break;
      }
      case Op::CeDiag: {
        Tensor& da = touch(n.a);
        const std::size_t N = n.cache.rows();
        const double go = g.data[0] / static_cast<double>(N);
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < N; ++j)
            da.at(i, j) +=
                go * (n.cache.at(i, j) - (i == j ? 1.0 : 0.0));
        break;
      }
      case Op::EmbedRows: {
        Tensor& dt = touch(n.a);
        const std::size_t R = n.offsets.size() - 1;
        const std::size_t D = n.value.cols();
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t k = n.offsets[r]; k < n.offsets[r + 1]; ++k)
            for (std::size_t j = 0; j < D; ++j)
              dt.at(n.ids[k], j) += n.weights[k] * g.at(r, j);
        break;
      }
      case Op::Sum: {
        Tensor& da = touch(n.a);
        const double go = g.data[0];
        for (double& v : da.data) v += go;
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace smx
