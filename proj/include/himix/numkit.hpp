// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dense numeric kernels and a small reverse-mode gradient tape.
// Everything is double precision and deterministic; matrices are
// row-major and immutable once handed to an operation.

#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace himix::numkit {

using Scalar = double;
using Index = std::int64_t;

enum class Activation { Gelu, Silu };

// Sequence-by-feature block: rows = tokens, cols = feature dim.
struct SeqMatrix {
    Index rows = 0;
    Index cols = 0;
    std::vector<Scalar> data;

    SeqMatrix() = default;
    SeqMatrix(Index r, Index c, Scalar fill = 0.0);

    static SeqMatrix identity(Index n);
    static SeqMatrix from_rows(std::initializer_list<std::initializer_list<Scalar>> rows);

    Scalar& at(Index r, Index c) { return data[static_cast<size_t>(r * cols + c)]; }
    Scalar at(Index r, Index c) const { return data[static_cast<size_t>(r * cols + c)]; }
    Index size() const { return rows * cols; }
    bool same_shape(const SeqMatrix& o) const { return rows == o.rows && cols == o.cols; }
    bool all_finite() const;
};

bool exact_equal(const SeqMatrix& a, const SeqMatrix& b);
Scalar max_abs_diff(const SeqMatrix& a, const SeqMatrix& b);

// C = A * B. Throws std::invalid_argument on inner-dimension mismatch.
SeqMatrix matmul(const SeqMatrix& a, const SeqMatrix& b);
// C = A * B^T.
SeqMatrix matmul_nt(const SeqMatrix& a, const SeqMatrix& b);
SeqMatrix transpose(const SeqMatrix& a);
SeqMatrix add(const SeqMatrix& a, const SeqMatrix& b);
SeqMatrix concat_rows(const SeqMatrix& top, const SeqMatrix& bottom);

// Row-wise softmax with per-row max subtraction. Rows sum to 1 within 1e-12
// for any finite input; entries at additive-mask sentinels underflow to 0.
SeqMatrix softmax_rows(const SeqMatrix& s);

Scalar activation_eval(Activation act, Scalar x);
Scalar activation_grad(Activation act, Scalar x);

// Two-layer position-wise block: w2 * Act(w1 * a), applied row-wise.
// Shapes: a is T x d, w1 is d x h, w2 is h x d.
SeqMatrix ffn_forward(const SeqMatrix& a, const SeqMatrix& w1, const SeqMatrix& w2,
                      Activation act = Activation::Gelu);

// Deterministic RNG (splitmix64 core, Box-Muller normals). Identical seeds
// yield identical streams on every platform.
struct Rng {
    std::uint64_t state;

    explicit Rng(std::uint64_t seed) : state(seed) {}
    std::uint64_t next_u64();
    // uniform in [0, 1)
    Scalar uniform();
    Scalar normal(Scalar mean = 0.0, Scalar stddev = 1.0);
    // uniform integer in [lo, hi]
    Index uniform_int(Index lo, Index hi);
};

SeqMatrix random_normal(Index rows, Index cols, Rng& rng, Scalar stddev = 1.0);

// Reverse-mode tape over SeqMatrix-valued nodes. Nodes are appended in
// topological order; backward walks them once in reverse. Node values are
// immutable after creation.
class Tape {
public:
    struct Ref {
        Index id = -1;
        bool valid() const { return id >= 0; }
    };

    Ref leaf(SeqMatrix value, bool requires_grad = false);

    Ref matmul(Ref a, Ref b);
    Ref matmul_nt(Ref a, Ref b);  // a * b^T
    Ref add(Ref a, Ref b);
    Ref sub(Ref a, Ref b);
    Ref hadamard(Ref a, Ref b);
    Ref add_const(Ref a, SeqMatrix c);  // a + constant (mask or positional table)
    Ref scale(Ref a, Scalar s);
    Ref concat_rows(Ref top, Ref bottom);
    Ref slice_rows(Ref a, Index r0, Index r1);
    Ref slice_cols(Ref a, Index c0, Index c1);
    Ref concat_cols(std::span<const Ref> parts);
    Ref softmax_rows(Ref a);
    Ref activation(Ref a, Activation act);
    // Row-wise RMS normalization: y_ij = x_ij * gain_j / rms(x_i).
    // gain is a 1 x cols matrix.
    Ref rms_norm(Ref x, Ref gain, Scalar eps = 1e-6);
    // Per-head rotary map applied to adjacent coordinate pairs within each head.
    Ref rope(Ref x, std::vector<Index> positions, Index n_heads);
    Ref gather_rows(Ref table, std::vector<Index> ids);
    // Scalar (1x1) node: -log softmax(logits_row)[label], stable form.
    Ref cross_entropy_row(Ref logits, Index row, Index label);
    Ref mean_all(Ref a);

    const SeqMatrix& value(Ref r) const;
    // Valid after backward(); zero matrix for nodes the loss does not reach.
    const SeqMatrix& grad(Ref r) const;
    void backward(Ref scalar_loss);
    Index node_count() const { return static_cast<Index>(nodes_.size()); }

private:
    enum class Op {
        Leaf, MatMul, MatMulNT, Add, Sub, Hadamard, AddConst, Scale,
        ConcatRows, SliceRows, SliceCols, ConcatCols, SoftmaxRows,
        Act, RmsNorm, Rope, GatherRows, CrossEntropyRow, MeanAll
    };
    struct Node {
        Op op;
        SeqMatrix value;
        std::vector<Index> inputs;
        // op-specific payloads
        Scalar scalar = 0.0;
        Index i0 = 0, i1 = 0;
        std::vector<Index> indices;
        Activation act = Activation::Gelu;
    };
    // deque keeps value() references stable while nodes are appended
    std::deque<Node> nodes_;
    std::vector<SeqMatrix> adjoints_;

    Ref push(Node n);
    const Node& node(Ref r) const;
    SeqMatrix& adjoint(Index id);
};

// Max relative error between tape gradients and central finite differences,
// sampled over at most max_coords_per_param coordinates of each parameter.
// build_loss must return a 1x1 node and be a pure function of the leaves it
// is given. eps must lie in [1e-7, 1e-3]. Throws if the loss is not finite.
struct GradCheckResult {
    Scalar max_rel_err = 0.0;
    Index coords_checked = 0;
};

GradCheckResult grad_check(
    const std::function<Tape::Ref(Tape&, const std::vector<Tape::Ref>&)>& build_loss,
    const std::vector<SeqMatrix>& params,
    Scalar eps = 1e-5,
    Index max_coords_per_param = 200,
    std::uint64_t seed = 0);

}  // namespace himix::numkit
