// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0
//
// Attention primitives: additive masks (causal and part-causal), positional
// embeddings, vanilla multi-head self-attention and mixture attention where
// language queries attend over concatenated vision and language keys.

#pragma once

#include <span>

#include "himix/numkit.hpp"

namespace himix::attn {

using numkit::Index;
using numkit::Scalar;
using numkit::SeqMatrix;
using numkit::Tape;

// Additive pre-softmax sentinel. Finite, so intermediates stay finite; after
// max subtraction exp(sentinel + bounded) underflows to exactly zero weight.
inline constexpr Scalar kMaskSentinel = -1e9;

enum class MaskKind { CausalConcat, PartCausal };

struct MaskSpec {
    MaskKind kind;
    Index n_vision = 0;
    Index n_language = 0;
    Scalar sentinel = kMaskSentinel;
    SeqMatrix additive;  // query rows x key rows; 0 visible, sentinel blocked

    Index query_rows() const { return additive.rows; }
    Index key_rows() const { return additive.cols; }
};

// Language query i sees all N vision keys and language keys j <= i.
// Shape M x (N+M). n_language must be >= 1.
MaskSpec build_part_causal_mask(Index n_vision, Index n_language,
                                Scalar sentinel = kMaskSentinel);

// Query p over the concatenated sequence sees keys q <= p. Shape T x T.
MaskSpec build_causal_mask(Index total_len, Scalar sentinel = kMaskSentinel);

// Interleaved sin/cos table rows for the given positions; dim must be even.
SeqMatrix sinusoidal_pe(std::span<const Index> positions, Index dim);

struct PETable {
    Index max_len = 0;
    Index dim = 0;
    SeqMatrix entries;

    static PETable sinusoidal(Index max_len, Index dim);
    SeqMatrix slice(Index pos0, Index len) const;
};

enum class PEKind { None, Sinusoidal, Rotary };

struct PESpec {
    PEKind kind = PEKind::None;
    // First language position. Vision keys never consume positions.
    Index pos_offset = 0;
};

// Core multi-head attention over already-projected full-width Q, K, V.
// Positional handling is the caller's job. Returns softmax(QK^T/sqrt(d_head)
// + mask) V per head, heads concatenated, then the output projection.
Tape::Ref multihead_attention_graph(Tape& t, Tape::Ref q, Tape::Ref k, Tape::Ref v,
                                    Tape::Ref wo, Index n_heads, const MaskSpec& mask);

Tape::Ref self_attention_graph(Tape& t, Tape::Ref x, Tape::Ref wq, Tape::Ref wk,
                               Tape::Ref wv, Tape::Ref wo, Index n_heads,
                               const MaskSpec& mask, const PESpec& pe);

// Vision K/V come from x_v through wvk/wvv and receive no positional
// embedding; language Q/K do. Output has x_l's shape.
Tape::Ref mixture_attention_graph(Tape& t, Tape::Ref x_v, Tape::Ref wvk, Tape::Ref wvv,
                                  Tape::Ref x_l, Tape::Ref wq, Tape::Ref wk, Tape::Ref wv,
                                  Tape::Ref wo, Index n_heads, const MaskSpec& mask,
                                  const PESpec& pe);

SeqMatrix self_attention(const SeqMatrix& x, const SeqMatrix& wq, const SeqMatrix& wk,
                         const SeqMatrix& wv, const SeqMatrix& wo, Index n_heads,
                         const MaskSpec& mask, const PESpec& pe = {});

SeqMatrix mixture_attention(const SeqMatrix& x_v, const SeqMatrix& x_l,
                            const SeqMatrix& wq, const SeqMatrix& wk, const SeqMatrix& wv,
                            const SeqMatrix& wo, const SeqMatrix& wvk, const SeqMatrix& wvv,
                            Index n_heads, const MaskSpec& mask, const PESpec& pe = {});

}  // namespace himix::attn
