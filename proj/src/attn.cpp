// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0

#include "himix/attn.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace himix::attn {

MaskSpec build_part_causal_mask(Index n_vision, Index n_language, Scalar sentinel) {
    if (n_language < 1) {
        throw std::invalid_argument("build_part_causal_mask: n_language must be >= 1");
    }
    if (n_vision < 0) {
        throw std::invalid_argument("build_part_causal_mask: negative n_vision");
    }
    MaskSpec m;
    m.kind = MaskKind::PartCausal;
    m.n_vision = n_vision;
    m.n_language = n_language;
    m.sentinel = sentinel;
    m.additive = SeqMatrix(n_language, n_vision + n_language);
    for (Index i = 0; i < n_language; ++i) {
        // vision keys always visible; language keys visible up to own position
        for (Index j = n_vision + i + 1; j < n_vision + n_language; ++j) {
            m.additive.at(i, j) = sentinel;
        }
    }
    return m;
}

MaskSpec build_causal_mask(Index total_len, Scalar sentinel) {
    if (total_len < 1) {
        throw std::invalid_argument("build_causal_mask: total_len must be >= 1");
    }
    MaskSpec m;
    m.kind = MaskKind::CausalConcat;
    m.n_vision = 0;
    m.n_language = total_len;
    m.sentinel = sentinel;
    m.additive = SeqMatrix(total_len, total_len);
    for (Index p = 0; p < total_len; ++p) {
        for (Index q = p + 1; q < total_len; ++q) m.additive.at(p, q) = sentinel;
    }
    return m;
}

SeqMatrix sinusoidal_pe(std::span<const Index> positions, Index dim) {
    if (dim <= 0 || dim % 2 != 0) {
        throw std::invalid_argument("sinusoidal_pe: dim must be positive and even, got " +
                                    std::to_string(dim));
    }
    SeqMatrix pe(static_cast<Index>(positions.size()), dim);
    for (size_t r = 0; r < positions.size(); ++r) {
        const Scalar pos = static_cast<Scalar>(positions[r]);
        for (Index i = 0; i < dim / 2; ++i) {
            const Scalar angle =
                pos * std::pow(10000.0, -2.0 * static_cast<Scalar>(i) / static_cast<Scalar>(dim));
            pe.at(static_cast<Index>(r), 2 * i) = std::sin(angle);
            pe.at(static_cast<Index>(r), 2 * i + 1) = std::cos(angle);
        }
    }
    return pe;
}

PETable PETable::sinusoidal(Index max_len, Index dim) {
    std::vector<Index> pos(static_cast<size_t>(max_len));
    for (Index i = 0; i < max_len; ++i) pos[static_cast<size_t>(i)] = i;
    PETable t;
    t.max_len = max_len;
    t.dim = dim;
    t.entries = sinusoidal_pe(pos, dim);
    return t;
}

SeqMatrix PETable::slice(Index pos0, Index len) const {
    if (pos0 < 0 || pos0 + len > max_len) {
        throw std::invalid_argument("PETable::slice: range out of table");
    }
    SeqMatrix s(len, dim);
    for (Index i = 0; i < len; ++i)
        for (Index j = 0; j < dim; ++j) s.at(i, j) = entries.at(pos0 + i, j);
    return s;
}

namespace {

std::vector<Index> iota_positions(Index offset, Index len) {
    std::vector<Index> p(static_cast<size_t>(len));
    for (Index i = 0; i < len; ++i) p[static_cast<size_t>(i)] = offset + i;
    return p;
}

void check_heads(Index d, Index n_heads) {
    if (n_heads < 1 || d % n_heads != 0) {
        throw std::invalid_argument("attention: n_heads " + std::to_string(n_heads) +
                                    " must divide model dim " + std::to_string(d));
    }
}

}  // namespace

Tape::Ref multihead_attention_graph(Tape& t, Tape::Ref q, Tape::Ref k, Tape::Ref v,
                                    Tape::Ref wo, Index n_heads, const MaskSpec& mask) {
    const Index d = t.value(q).cols;
    check_heads(d, n_heads);
    if (t.value(k).cols != d || t.value(v).cols != d) {
        throw std::invalid_argument("attention: q/k/v width mismatch");
    }
    if (mask.query_rows() != t.value(q).rows || mask.key_rows() != t.value(k).rows) {
        throw std::invalid_argument(
            "attention: mask " + std::to_string(mask.query_rows()) + "x" +
            std::to_string(mask.key_rows()) + " does not match q rows " +
            std::to_string(t.value(q).rows) + " and k rows " + std::to_string(t.value(k).rows));
    }
    const Index dh = d / n_heads;
    const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(dh));
    std::vector<Tape::Ref> heads;
    heads.reserve(static_cast<size_t>(n_heads));
    for (Index h = 0; h < n_heads; ++h) {
        Tape::Ref qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        Tape::Ref kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        Tape::Ref vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        Tape::Ref scores = t.scale(t.matmul_nt(qh, kh), scale);
        Tape::Ref probs = t.softmax_rows(t.add_const(scores, mask.additive));
        heads.push_back(t.matmul(probs, vh));
    }
    Tape::Ref merged = n_heads == 1 ? heads[0] : t.concat_cols(heads);
    return t.matmul(merged, wo);
}

Tape::Ref self_attention_graph(Tape& t, Tape::Ref x, Tape::Ref wq, Tape::Ref wk,
                               Tape::Ref wv, Tape::Ref wo, Index n_heads,
                               const MaskSpec& mask, const PESpec& pe) {
    const Index rows = t.value(x).rows;
    Tape::Ref q = t.matmul(x, wq);
    Tape::Ref k = t.matmul(x, wk);
    Tape::Ref v = t.matmul(x, wv);
    if (pe.kind == PEKind::Sinusoidal) {
        const auto pos = iota_positions(pe.pos_offset, rows);
        SeqMatrix table = sinusoidal_pe(pos, t.value(q).cols);
        q = t.add_const(q, table);
        k = t.add_const(k, table);
    } else if (pe.kind == PEKind::Rotary) {
        const auto pos = iota_positions(pe.pos_offset, rows);
        q = t.rope(q, pos, n_heads);
        k = t.rope(k, pos, n_heads);
    }
    return multihead_attention_graph(t, q, k, v, wo, n_heads, mask);
}

Tape::Ref mixture_attention_graph(Tape& t, Tape::Ref x_v, Tape::Ref wvk, Tape::Ref wvv,
                                  Tape::Ref x_l, Tape::Ref wq, Tape::Ref wk, Tape::Ref wv,
                                  Tape::Ref wo, Index n_heads, const MaskSpec& mask,
                                  const PESpec& pe) {
    const Index n = t.value(x_v).rows;
    const Index m = t.value(x_l).rows;
    if (mask.kind == MaskKind::PartCausal &&
        (mask.n_vision != n || mask.n_language != m)) {
        throw std::invalid_argument("mixture_attention: mask built for N=" +
                                    std::to_string(mask.n_vision) + ", M=" +
                                    std::to_string(mask.n_language) + " but inputs have N=" +
                                    std::to_string(n) + ", M=" + std::to_string(m));
    }
    Tape::Ref kv = t.matmul(x_v, wvk);
    Tape::Ref vv = t.matmul(x_v, wvv);
    Tape::Ref q = t.matmul(x_l, wq);
    Tape::Ref kl = t.matmul(x_l, wk);
    Tape::Ref vl = t.matmul(x_l, wv);
    if (pe.kind == PEKind::Sinusoidal) {
        const auto pos = iota_positions(pe.pos_offset, m);
        SeqMatrix table = sinusoidal_pe(pos, t.value(q).cols);
        q = t.add_const(q, table);
        kl = t.add_const(kl, table);
    } else if (pe.kind == PEKind::Rotary) {
        const auto pos = iota_positions(pe.pos_offset, m);
        q = t.rope(q, pos, n_heads);
        kl = t.rope(kl, pos, n_heads);
    }
    // vision keys carry no positional embedding
    Tape::Ref k_full = t.concat_rows(kv, kl);
    Tape::Ref v_full = t.concat_rows(vv, vl);
    return multihead_attention_graph(t, q, k_full, v_full, wo, n_heads, mask);
}

SeqMatrix self_attention(const SeqMatrix& x, const SeqMatrix& wq, const SeqMatrix& wk,
                         const SeqMatrix& wv, const SeqMatrix& wo, Index n_heads,
                         const MaskSpec& mask, const PESpec& pe) {
    Tape t;
    Tape::Ref out = self_attention_graph(t, t.leaf(x), t.leaf(wq), t.leaf(wk), t.leaf(wv),
                                         t.leaf(wo), n_heads, mask, pe);
    return t.value(out);
}

SeqMatrix mixture_attention(const SeqMatrix& x_v, const SeqMatrix& x_l,
                            const SeqMatrix& wq, const SeqMatrix& wk, const SeqMatrix& wv,
                            const SeqMatrix& wo, const SeqMatrix& wvk, const SeqMatrix& wvv,
                            Index n_heads, const MaskSpec& mask, const PESpec& pe) {
    Tape t;
    Tape::Ref out = mixture_attention_graph(t, t.leaf(x_v), t.leaf(wvk), t.leaf(wvv),
                                            t.leaf(x_l), t.leaf(wq), t.leaf(wk), t.leaf(wv),
                                            t.leaf(wo), n_heads, mask, pe);
    return t.value(out);
}

}  // namespace himix::attn
