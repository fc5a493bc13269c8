// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0

#include "himix/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace himix::numkit {

namespace {

[[noreturn]] void shape_error(const std::string& op, const SeqMatrix& a, const SeqMatrix& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + std::to_string(a.rows) + "x" +
                                std::to_string(a.cols) + " and " + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols));
}

}  // namespace

SeqMatrix::SeqMatrix(Index r, Index c, Scalar fill)
    : rows(r), cols(c), data(static_cast<size_t>(r * c), fill) {
    if (r < 0 || c < 0) {
        throw std::invalid_argument("SeqMatrix: negative shape " + std::to_string(r) + "x" +
                                    std::to_string(c));
    }
}

SeqMatrix SeqMatrix::identity(Index n) {
    SeqMatrix m(n, n);
    for (Index i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

SeqMatrix SeqMatrix::from_rows(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r > 0 ? static_cast<Index>(rows.begin()->size()) : 0;
    SeqMatrix m(r, c);
    Index i = 0;
    for (const auto& row : rows) {
        if (static_cast<Index>(row.size()) != c) {
            throw std::invalid_argument("SeqMatrix::from_rows: ragged rows");
        }
        Index j = 0;
        for (Scalar v : row) m.at(i, j++) = v;
        ++i;
    }
    return m;
}

bool SeqMatrix::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](Scalar v) { return std::isfinite(v); });
}

bool exact_equal(const SeqMatrix& a, const SeqMatrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

Scalar max_abs_diff(const SeqMatrix& a, const SeqMatrix& b) {
    if (!a.same_shape(b)) shape_error("max_abs_diff", a, b);
    Scalar m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

SeqMatrix matmul(const SeqMatrix& a, const SeqMatrix& b) {
    if (a.cols != b.rows) shape_error("matmul", a, b);
    SeqMatrix c(a.rows, b.cols);
    // i-k-j order keeps the inner loop contiguous in both b and c.
    for (Index i = 0; i < a.rows; ++i) {
        const Scalar* arow = a.data.data() + i * a.cols;
        Scalar* crow = c.data.data() + i * c.cols;
        for (Index k = 0; k < a.cols; ++k) {
            const Scalar aik = arow[k];
            const Scalar* brow = b.data.data() + k * b.cols;
            for (Index j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

SeqMatrix matmul_nt(const SeqMatrix& a, const SeqMatrix& b) {
    if (a.cols != b.cols) shape_error("matmul_nt", a, b);
    SeqMatrix c(a.rows, b.rows);
    for (Index i = 0; i < a.rows; ++i) {
        const Scalar* arow = a.data.data() + i * a.cols;
        for (Index j = 0; j < b.rows; ++j) {
            const Scalar* brow = b.data.data() + j * b.cols;
            Scalar s = 0.0;
            for (Index k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c.at(i, j) = s;
        }
    }
    return c;
}

SeqMatrix transpose(const SeqMatrix& a) {
    SeqMatrix t(a.cols, a.rows);
    for (Index i = 0; i < a.rows; ++i)
        for (Index j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

SeqMatrix add(const SeqMatrix& a, const SeqMatrix& b) {
    if (!a.same_shape(b)) shape_error("add", a, b);
    SeqMatrix c = a;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

SeqMatrix concat_rows(const SeqMatrix& top, const SeqMatrix& bottom) {
    if (top.rows > 0 && bottom.rows > 0 && top.cols != bottom.cols) {
        shape_error("concat_rows", top, bottom);
    }
    const Index cols = top.rows > 0 ? top.cols : bottom.cols;
    SeqMatrix c(top.rows + bottom.rows, cols);
    std::copy(top.data.begin(), top.data.end(), c.data.begin());
    std::copy(bottom.data.begin(), bottom.data.end(), c.data.begin() + top.data.size());
    return c;
}

SeqMatrix softmax_rows(const SeqMatrix& s) {
    SeqMatrix p(s.rows, s.cols);
    for (Index i = 0; i < s.rows; ++i) {
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        for (Index j = 0; j < s.cols; ++j) mx = std::max(mx, s.at(i, j));
        Scalar sum = 0.0;
        for (Index j = 0; j < s.cols; ++j) {
            const Scalar e = std::exp(s.at(i, j) - mx);
            p.at(i, j) = e;
            sum += e;
        }
        for (Index j = 0; j < s.cols; ++j) p.at(i, j) /= sum;
    }
    return p;
}

Scalar activation_eval(Activation act, Scalar x) {
    if (act == Activation::Silu) {
        return x / (1.0 + std::exp(-x));
    }
    // tanh-form GELU
    constexpr Scalar k = 0.044715;
    const Scalar c = std::sqrt(2.0 / std::numbers::pi);
    const Scalar t = std::tanh(c * (x + k * x * x * x));
    return 0.5 * x * (1.0 + t);
}

Scalar activation_grad(Activation act, Scalar x) {
    if (act == Activation::Silu) {
        const Scalar sig = 1.0 / (1.0 + std::exp(-x));
        return sig * (1.0 + x * (1.0 - sig));
    }
    constexpr Scalar k = 0.044715;
    const Scalar c = std::sqrt(2.0 / std::numbers::pi);
    const Scalar u = c * (x + k * x * x * x);
    const Scalar t = std::tanh(u);
    const Scalar du = c * (1.0 + 3.0 * k * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

SeqMatrix ffn_forward(const SeqMatrix& a, const SeqMatrix& w1, const SeqMatrix& w2,
                      Activation act) {
    if (a.cols != w1.rows) shape_error("ffn_forward(w1)", a, w1);
    if (w1.cols != w2.rows) shape_error("ffn_forward(w2)", w1, w2);
    if (w2.cols != a.cols) shape_error("ffn_forward(out)", w2, a);
    SeqMatrix h = matmul(a, w1);
    for (Scalar& v : h.data) v = activation_eval(act, v);
    return matmul(h, w2);
}

std::uint64_t Rng::next_u64() {
    // splitmix64
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Scalar Rng::uniform() {
    return static_cast<Scalar>(next_u64() >> 11) * 0x1.0p-53;
}

Scalar Rng::normal(Scalar mean, Scalar stddev) {
    // Box-Muller without caching so the stream is a pure function of state.
    Scalar u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const Scalar u2 = uniform();
    const Scalar r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

Index Rng::uniform_int(Index lo, Index hi) {
    if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<Index>(next_u64() % span);
}

SeqMatrix random_normal(Index rows, Index cols, Rng& rng, Scalar stddev) {
    SeqMatrix m(rows, cols);
    for (Scalar& v : m.data) v = rng.normal(0.0, stddev);
    return m;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Ref Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Ref{static_cast<Index>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Ref r) const {
    if (!r.valid() || r.id >= static_cast<Index>(nodes_.size())) {
        throw std::invalid_argument("Tape: invalid node reference");
    }
    return nodes_[static_cast<size_t>(r.id)];
}

const SeqMatrix& Tape::value(Ref r) const { return node(r).value; }

const SeqMatrix& Tape::grad(Ref r) const {
    node(r);  // bounds check
    if (adjoints_.size() != nodes_.size()) {
        throw std::logic_error("Tape::grad called before backward");
    }
    return adjoints_[static_cast<size_t>(r.id)];
}

SeqMatrix& Tape::adjoint(Index id) { return adjoints_[static_cast<size_t>(id)]; }

Tape::Ref Tape::leaf(SeqMatrix value, bool) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

Tape::Ref Tape::matmul(Ref a, Ref b) {
    Node n;
    n.op = Op::MatMul;
    n.value = numkit::matmul(value(a), value(b));
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Tape::Ref Tape::matmul_nt(Ref a, Ref b) {
    Node n;
    n.op = Op::MatMulNT;
    n.value = numkit::matmul_nt(value(a), value(b));
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Tape::Ref Tape::add(Ref a, Ref b) {
    Node n;
    n.op = Op::Add;
    n.value = numkit::add(value(a), value(b));
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Tape::Ref Tape::sub(Ref a, Ref b) {
    Node n;
    n.op = Op::Sub;
    if (!value(a).same_shape(value(b))) shape_error("Tape::sub", value(a), value(b));
    n.value = value(a);
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= value(b).data[i];
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Tape::Ref Tape::hadamard(Ref a, Ref b) {
    Node n;
    n.op = Op::Hadamard;
    if (!value(a).same_shape(value(b))) shape_error("Tape::hadamard", value(a), value(b));
    n.value = value(a);
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= value(b).data[i];
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Tape::Ref Tape::add_const(Ref a, SeqMatrix c) {
    Node n;
    n.op = Op::AddConst;
    n.value = numkit::add(value(a), c);
    n.inputs = {a.id};
    return push(std::move(n));
}

Tape::Ref Tape::scale(Ref a, Scalar s) {
    Node n;
    n.op = Op::Scale;
    n.value = value(a);
    for (Scalar& v : n.value.data) v *= s;
    n.scalar = s;
    n.inputs = {a.id};
    return push(std::move(n));
}

Tape::Ref Tape::concat_rows(Ref top, Ref bottom) {
    Node n;
    n.op = Op::ConcatRows;
    n.value = numkit::concat_rows(value(top), value(bottom));
    n.inputs = {top.id, bottom.id};
    n.i0 = value(top).rows;
    return push(std::move(n));
}

Tape::Ref Tape::slice_rows(Ref a, Index r0, Index r1) {
    const SeqMatrix& v = value(a);
    if (r0 < 0 || r1 > v.rows || r0 > r1) {
        throw std::invalid_argument("Tape::slice_rows: bad range [" + std::to_string(r0) + ", " +
                                    std::to_string(r1) + ") for " + std::to_string(v.rows) + " rows");
    }
    Node n;
    n.op = Op::SliceRows;
    n.value = SeqMatrix(r1 - r0, v.cols);
    std::copy(v.data.begin() + r0 * v.cols, v.data.begin() + r1 * v.cols, n.value.data.begin());
    n.inputs = {a.id};
    n.i0 = r0;
    n.i1 = r1;
    return push(std::move(n));
}

Tape::Ref Tape::slice_cols(Ref a, Index c0, Index c1) {
    const SeqMatrix& v = value(a);
    if (c0 < 0 || c1 > v.cols || c0 > c1) {
        throw std::invalid_argument("Tape::slice_cols: bad range [" + std::to_string(c0) + ", " +
                                    std::to_string(c1) + ") for " + std::to_string(v.cols) + " cols");
    }
    Node n;
    n.op = Op::SliceCols;
    n.value = SeqMatrix(v.rows, c1 - c0);
    for (Index i = 0; i < v.rows; ++i)
        for (Index j = c0; j < c1; ++j) n.value.at(i, j - c0) = v.at(i, j);
    n.inputs = {a.id};
    n.i0 = c0;
    n.i1 = c1;
    return push(std::move(n));
}

Tape::Ref Tape::concat_cols(std::span<const Ref> parts) {
    if (parts.empty()) throw std::invalid_argument("Tape::concat_cols: empty part list");
    Index cols = 0;
    const Index rows = value(parts[0]).rows;
    for (Ref p : parts) {
        if (value(p).rows != rows) shape_error("Tape::concat_cols", value(parts[0]), value(p));
        cols += value(p).cols;
    }
    Node n;
    n.op = Op::ConcatCols;
    n.value = SeqMatrix(rows, cols);
    Index off = 0;
    for (Ref p : parts) {
        const SeqMatrix& v = value(p);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < v.cols; ++j) n.value.at(i, off + j) = v.at(i, j);
        off += v.cols;
        n.inputs.push_back(p.id);
    }
    return push(std::move(n));
}

Tape::Ref Tape::softmax_rows(Ref a) {
    Node n;
    n.op = Op::SoftmaxRows;
    n.value = numkit::softmax_rows(value(a));
    n.inputs = {a.id};
    return push(std::move(n));
}

Tape::Ref Tape::activation(Ref a, Activation act) {
    Node n;
    n.op = Op::Act;
    n.value = value(a);
    for (Scalar& v : n.value.data) v = activation_eval(act, v);
    n.act = act;
    n.inputs = {a.id};
    return push(std::move(n));
}

Tape::Ref Tape::rms_norm(Ref x, Ref gain, Scalar eps) {
    const SeqMatrix& v = value(x);
    const SeqMatrix& g = value(gain);
    if (g.rows != 1 || g.cols != v.cols) shape_error("Tape::rms_norm", v, g);
    Node n;
    n.op = Op::RmsNorm;
    n.value = SeqMatrix(v.rows, v.cols);
    for (Index i = 0; i < v.rows; ++i) {
        Scalar ms = 0.0;
        for (Index j = 0; j < v.cols; ++j) ms += v.at(i, j) * v.at(i, j);
        ms = ms / static_cast<Scalar>(v.cols) + eps;
        const Scalar inv = 1.0 / std::sqrt(ms);
        for (Index j = 0; j < v.cols; ++j) n.value.at(i, j) = v.at(i, j) * inv * g.at(0, j);
    }
    n.scalar = eps;
    n.inputs = {x.id, gain.id};
    return push(std::move(n));
}

Tape::Ref Tape::rope(Ref x, std::vector<Index> positions, Index n_heads) {
    const SeqMatrix& v = value(x);
    if (static_cast<Index>(positions.size()) != v.rows) {
        throw std::invalid_argument("Tape::rope: position count != rows");
    }
    if (n_heads <= 0 || v.cols % n_heads != 0 || (v.cols / n_heads) % 2 != 0) {
        throw std::invalid_argument("Tape::rope: head dim must be even and divide cols");
    }
    const Index dh = v.cols / n_heads;
    Node n;
    n.op = Op::Rope;
    n.value = SeqMatrix(v.rows, v.cols);
    for (Index i = 0; i < v.rows; ++i) {
        const Scalar pos = static_cast<Scalar>(positions[static_cast<size_t>(i)]);
        for (Index h = 0; h < n_heads; ++h) {
            for (Index p = 0; p < dh / 2; ++p) {
                const Scalar theta = pos * std::pow(10000.0, -2.0 * static_cast<Scalar>(p) /
                                                                 static_cast<Scalar>(dh));
                const Scalar c = std::cos(theta), s = std::sin(theta);
                const Index j = h * dh + 2 * p;
                const Scalar x0 = v.at(i, j), x1 = v.at(i, j + 1);
                n.value.at(i, j) = c * x0 - s * x1;
                n.value.at(i, j + 1) = s * x0 + c * x1;
            }
        }
    }
    n.indices = std::move(positions);
    n.i0 = n_heads;
    n.inputs = {x.id};
    return push(std::move(n));
}

Tape::Ref Tape::gather_rows(Ref table, std::vector<Index> ids) {
    const SeqMatrix& t = value(table);
    Node n;
    n.op = Op::GatherRows;
    n.value = SeqMatrix(static_cast<Index>(ids.size()), t.cols);
    for (size_t i = 0; i < ids.size(); ++i) {
        const Index id = ids[i];
        if (id < 0 || id >= t.rows) {
            throw std::invalid_argument("Tape::gather_rows: id " + std::to_string(id) +
                                        " out of range for " + std::to_string(t.rows) + " rows");
        }
        for (Index j = 0; j < t.cols; ++j) n.value.at(static_cast<Index>(i), j) = t.at(id, j);
    }
    n.indices = std::move(ids);
    n.inputs = {table.id};
    return push(std::move(n));
}

Tape::Ref Tape::cross_entropy_row(Ref logits, Index row, Index label) {
    const SeqMatrix& v = value(logits);
    if (row < 0 || row >= v.rows || label < 0 || label >= v.cols) {
        throw std::invalid_argument("Tape::cross_entropy_row: row/label out of range");
    }
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < v.cols; ++j) mx = std::max(mx, v.at(row, j));
    Scalar sum = 0.0;
    for (Index j = 0; j < v.cols; ++j) sum += std::exp(v.at(row, j) - mx);
    Node n;
    n.op = Op::CrossEntropyRow;
    n.value = SeqMatrix(1, 1);
    n.value.at(0, 0) = std::log(sum) + mx - v.at(row, label);
    n.inputs = {logits.id};
    n.i0 = row;
    n.i1 = label;
    return push(std::move(n));
}

Tape::Ref Tape::mean_all(Ref a) {
    const SeqMatrix& v = value(a);
    if (v.size() == 0) throw std::invalid_argument("Tape::mean_all: empty input");
    Node n;
    n.op = Op::MeanAll;
    n.value = SeqMatrix(1, 1);
    Scalar s = 0.0;
    for (Scalar x : v.data) s += x;
    n.value.at(0, 0) = s / static_cast<Scalar>(v.size());
    n.inputs = {a.id};
    return push(std::move(n));
}

void Tape::backward(Ref scalar_loss) {
    const SeqMatrix& l = value(scalar_loss);
    if (l.rows != 1 || l.cols != 1) {
        throw std::invalid_argument("Tape::backward: loss must be 1x1");
    }
    adjoints_.assign(nodes_.size(), SeqMatrix());
    for (size_t i = 0; i < nodes_.size(); ++i) {
        adjoints_[i] = SeqMatrix(nodes_[i].value.rows, nodes_[i].value.cols);
    }
    adjoint(scalar_loss.id).at(0, 0) = 1.0;

    for (Index id = static_cast<Index>(nodes_.size()) - 1; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        const SeqMatrix& d = adjoint(id);
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatMul: {
                const SeqMatrix& a = nodes_[n.inputs[0]].value;
                const SeqMatrix& b = nodes_[n.inputs[1]].value;
                // dA += dC * B^T ; dB += A^T * dC
                SeqMatrix da = numkit::matmul_nt(d, b);
                SeqMatrix& ga = adjoint(n.inputs[0]);
                for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += da.data[i];
                SeqMatrix db = numkit::matmul(numkit::transpose(a), d);
                SeqMatrix& gb = adjoint(n.inputs[1]);
                for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += db.data[i];
                break;
            }
            case Op::MatMulNT: {
                // C = A * B^T: dA += dC * B ; dB += dC^T * A
                const SeqMatrix& a = nodes_[n.inputs[0]].value;
                const SeqMatrix& b = nodes_[n.inputs[1]].value;
                SeqMatrix da = numkit::matmul(d, b);
                SeqMatrix& ga = adjoint(n.inputs[0]);
                for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += da.data[i];
                SeqMatrix db = numkit::matmul(numkit::transpose(d), a);
                SeqMatrix& gb = adjoint(n.inputs[1]);
                for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += db.data[i];
                break;
            }
            case Op::Add: {
                for (int k = 0; k < 2; ++k) {
                    SeqMatrix& g = adjoint(n.inputs[static_cast<size_t>(k)]);
                    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += d.data[i];
                }
                break;
            }
            case Op::Sub: {
                SeqMatrix& ga = adjoint(n.inputs[0]);
                for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += d.data[i];
                SeqMatrix& gb = adjoint(n.inputs[1]);
                for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= d.data[i];
                break;
            }
            case Op::Hadamard: {
                const SeqMatrix& a = nodes_[n.inputs[0]].value;
                const SeqMatrix& b = nodes_[n.inputs[1]].value;
                SeqMatrix& ga = adjoint(n.inputs[0]);
                SeqMatrix& gb = adjoint(n.inputs[1]);
                for (size_t i = 0; i < d.data.size(); ++i) {
                    ga.data[i] += d.data[i] * b.data[i];
                    gb.data[i] += d.data[i] * a.data[i];
                }
                break;
            }
            case Op::AddConst: {
                SeqMatrix& g = adjoint(n.inputs[0]);
                for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += d.data[i];
                break;
            }
            case Op::Scale: {
                SeqMatrix& g = adjoint(n.inputs[0]);
                for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.scalar * d.data[i];
                break;
            }
            case Op::ConcatRows: {
                SeqMatrix& gt = adjoint(n.inputs[0]);
                SeqMatrix& gb = adjoint(n.inputs[1]);
                const size_t split = gt.data.size();
                for (size_t i = 0; i < split; ++i) gt.data[i] += d.data[i];
                for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += d.data[split + i];
                break;
            }
            case Op::SliceRows: {
                SeqMatrix& g = adjoint(n.inputs[0]);
                const Index cols = g.cols;
                for (Index i = 0; i < d.rows; ++i)
                    for (Index j = 0; j < cols; ++j) g.at(n.i0 + i, j) += d.at(i, j);
                break;
            }
            case Op::SliceCols: {
                SeqMatrix& g = adjoint(n.inputs[0]);
                for (Index i = 0; i < d.rows; ++i)
                    for (Index j = 0; j < d.cols; ++j) g.at(i, n.i0 + j) += d.at(i, j);
                break;
            }
            case Op::ConcatCols: {
                Index off = 0;
                for (Index input : n.inputs) {
                    SeqMatrix& g = adjoint(input);
                    for (Index i = 0; i < g.rows; ++i)
                        for (Index j = 0; j < g.cols; ++j) g.at(i, j) += d.at(i, off + j);
                    off += g.cols;
                }
                break;
            }
            case Op::SoftmaxRows: {
                // dS = P .* (dP - rowsum(dP .* P))
                const SeqMatrix& p = n.value;
                SeqMatrix& g = adjoint(n.inputs[0]);
                for (Index i = 0; i < p.rows; ++i) {
                    Scalar dot = 0.0;
                    for (Index j = 0; j < p.cols; ++j) dot += d.at(i, j) * p.at(i, j);
                    for (Index j = 0; j < p.cols; ++j) {
                        g.at(i, j) += p.at(i, j) * (d.at(i, j) - dot);
                    }
                }
                break;
            }
            case Op::Act: {
                const SeqMatrix& x = nodes_[n.inputs[0]].value;
                SeqMatrix& g = adjoint(n.inputs[0]);
                for (size_t i = 0; i < g.data.size(); ++i) {
                    g.data[i] += d.data[i] * activation_grad(n.act, x.data[i]);
                }
                break;
            }
            case Op::RmsNorm: {
                const SeqMatrix& x = nodes_[n.inputs[0]].value;
                const SeqMatrix& gain = nodes_[n.inputs[1]].value;
                SeqMatrix& gx = adjoint(n.inputs[0]);
                SeqMatrix& gg = adjoint(n.inputs[1]);
                const Scalar cols = static_cast<Scalar>(x.cols);
                for (Index i = 0; i < x.rows; ++i) {
                    Scalar ms = 0.0;
                    for (Index j = 0; j < x.cols; ++j) ms += x.at(i, j) * x.at(i, j);
                    ms = ms / cols + n.scalar;
                    const Scalar inv = 1.0 / std::sqrt(ms);
                    // s = sum_j d_ij * g_j * x_ij
                    Scalar s = 0.0;
                    for (Index j = 0; j < x.cols; ++j) s += d.at(i, j) * gain.at(0, j) * x.at(i, j);
                    for (Index j = 0; j < x.cols; ++j) {
                        gx.at(i, j) += d.at(i, j) * gain.at(0, j) * inv -
                                       x.at(i, j) * s * inv * inv * inv / cols;
                        gg.at(0, j) += d.at(i, j) * x.at(i, j) * inv;
                    }
                }
                break;
            }
            case Op::Rope: {
                // Inverse rotation of the upstream gradient.
                SeqMatrix& g = adjoint(n.inputs[0]);
                const Index n_heads = n.i0;
                const Index dh = g.cols / n_heads;
                for (Index i = 0; i < g.rows; ++i) {
                    const Scalar pos = static_cast<Scalar>(n.indices[static_cast<size_t>(i)]);
                    for (Index h = 0; h < n_heads; ++h) {
                        for (Index p = 0; p < dh / 2; ++p) {
                            const Scalar theta =
                                pos * std::pow(10000.0, -2.0 * static_cast<Scalar>(p) /
                                                            static_cast<Scalar>(dh));
                            const Scalar c = std::cos(theta), s = std::sin(theta);
                            const Index j = h * dh + 2 * p;
                            const Scalar d0 = d.at(i, j), d1 = d.at(i, j + 1);
                            g.at(i, j) += c * d0 + s * d1;
                            g.at(i, j + 1) += -s * d0 + c * d1;
                        }
                    }
                }
                break;
            }
            case Op::GatherRows: {
                SeqMatrix& g = adjoint(n.inputs[0]);
                for (size_t i = 0; i < n.indices.size(); ++i) {
                    const Index id2 = n.indices[i];
                    for (Index j = 0; j < g.cols; ++j) {
                        g.at(id2, j) += d.at(static_cast<Index>(i), j);
                    }
                }
                break;
            }
            case Op::CrossEntropyRow: {
                const SeqMatrix& logits = nodes_[n.inputs[0]].value;
                SeqMatrix& g = adjoint(n.inputs[0]);
                const Scalar up = d.at(0, 0);
                Scalar mx = -std::numeric_limits<Scalar>::infinity();
                for (Index j = 0; j < logits.cols; ++j) mx = std::max(mx, logits.at(n.i0, j));
                Scalar sum = 0.0;
                for (Index j = 0; j < logits.cols; ++j) sum += std::exp(logits.at(n.i0, j) - mx);
                for (Index j = 0; j < logits.cols; ++j) {
                    Scalar p = std::exp(logits.at(n.i0, j) - mx) / sum;
                    if (j == n.i1) p -= 1.0;
                    g.at(n.i0, j) += up * p;
                }
                break;
            }
            case Op::MeanAll: {
                SeqMatrix& g = adjoint(n.inputs[0]);
                const Scalar up = d.at(0, 0) / static_cast<Scalar>(g.size());
                for (Scalar& v : g.data) v += up;
                break;
            }
        }
    }
}

GradCheckResult grad_check(
    const std::function<Tape::Ref(Tape&, const std::vector<Tape::Ref>&)>& build_loss,
    const std::vector<SeqMatrix>& params,
    Scalar eps, Index max_coords_per_param, std::uint64_t seed) {
    if (eps < 1e-7 || eps > 1e-3) {
        throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
    }

    auto eval_loss = [&](const std::vector<SeqMatrix>& p, std::vector<SeqMatrix>* grads) {
        Tape tape;
        std::vector<Tape::Ref> refs;
        refs.reserve(p.size());
        for (const SeqMatrix& m : p) refs.push_back(tape.leaf(m, true));
        Tape::Ref loss = build_loss(tape, refs);
        const Scalar l = tape.value(loss).at(0, 0);
        if (!std::isfinite(l)) {
            throw std::runtime_error("grad_check: non-finite loss " + std::to_string(l));
        }
        if (grads) {
            tape.backward(loss);
            grads->clear();
            for (Tape::Ref r : refs) grads->push_back(tape.grad(r));
        }
        return l;
    };

    std::vector<SeqMatrix> analytic;
    eval_loss(params, &analytic);

    Rng rng(seed);
    GradCheckResult res;
    std::vector<SeqMatrix> work = params;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const Index total = params[pi].size();
        std::vector<Index> coords;
        if (total <= max_coords_per_param) {
            for (Index i = 0; i < total; ++i) coords.push_back(i);
        } else {
            for (Index i = 0; i < max_coords_per_param; ++i) {
                coords.push_back(rng.uniform_int(0, total - 1));
            }
        }
        for (Index c : coords) {
            const Scalar orig = work[pi].data[static_cast<size_t>(c)];
            work[pi].data[static_cast<size_t>(c)] = orig + eps;
            const Scalar lp = eval_loss(work, nullptr);
            work[pi].data[static_cast<size_t>(c)] = orig - eps;
            const Scalar lm = eval_loss(work, nullptr);
            work[pi].data[static_cast<size_t>(c)] = orig;
            const Scalar numeric = (lp - lm) / (2.0 * eps);
            const Scalar exact = analytic[pi].data[static_cast<size_t>(c)];
            const Scalar rel =
                std::abs(exact - numeric) / (std::abs(exact) + std::abs(numeric) + 1e-12);
            res.max_rel_err = std::max(res.max_rel_err, rel);
            ++res.coords_checked;
        }
    }
    return res;
}

}  // namespace himix::numkit
