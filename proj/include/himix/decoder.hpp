// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder stacks. The vanilla path runs full self-attention over the
// concatenated vision+language stream. The himix paths keep only the
// language sequence in the residual stream and re-inject vision keys and
// values at every layer:
//   himix-uniform    one shared connector output, key/value projections
//                    shared with the language side
//   himix-connector  a private two-layer connector per layer, shared KV
//                    projections
//   himix-dedicated  per-layer vision K/V projections straight from the
//                    raw vision features (the final design)

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "himix/attn.hpp"
#include "himix/numkit.hpp"

namespace himix::decoder {

using attn::MaskSpec;
using attn::PEKind;
using numkit::Activation;
using numkit::Index;
using numkit::Scalar;
using numkit::SeqMatrix;
using numkit::Tape;

enum class Variant { Vanilla, HimixUniform, HimixConnector, HimixDedicated };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
std::string to_string(PEKind p);
PEKind parse_pe_kind(const std::string& s);
std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

struct ModelConfig {
    Index n_layers = 2;
    Index d_model = 64;
    Index d_vision = 32;
    Index n_heads = 4;
    Index n_kv_heads = 0;  // 0 means n_heads; grouped-query sizing is priced by the cost model only
    Index d_ffn = 256;
    Index vocab = 16;
    Variant variant = Variant::HimixDedicated;
    PEKind pe_scheme = PEKind::Sinusoidal;
    Activation activation = Activation::Gelu;
    bool use_norms = true;
    bool use_residuals = true;
    Index language_pos_offset = 0;
    bool ffn_gated = false;       // cost model only
    bool tie_embeddings = false;  // cost model only
    std::uint64_t seed = 0;

    Index kv_heads() const { return n_kv_heads == 0 ? n_heads : n_kv_heads; }
    Index head_dim() const { return d_model / n_heads; }
    Index kv_width() const { return kv_heads() * head_dim(); }

    // Structural checks shared by the runnable model and the cost model.
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// Two-layer vision-to-language map: w1 is d_vision x d_model, w2 is
// d_model x d_model, with the configured activation between them.
struct Connector {
    SeqMatrix w1;
    SeqMatrix w2;
};

struct LayerWeights {
    SeqMatrix w_q, w_k, w_v, w_o;  // d x d
    SeqMatrix w_ffn1, w_ffn2;      // d x d_ffn, d_ffn x d
    SeqMatrix norm_attn_gain, norm_ffn_gain;  // 1 x d
    std::optional<SeqMatrix> w_vk, w_vv;      // d_vision x d, himix-dedicated
    std::optional<Connector> connector;       // himix-connector
};

struct Model {
    ModelConfig cfg;
    SeqMatrix embedding;  // vocab x d
    std::optional<Connector> shared_connector;  // vanilla, himix-uniform
    std::vector<LayerWeights> layers;
    SeqMatrix norm_final_gain;  // 1 x d
    SeqMatrix w_head;           // d x vocab

    // Applies the shared connector; requires one to exist.
    SeqMatrix project_vision(const SeqMatrix& x_v) const;
};

// Seeded scaled-normal init (std 0.02; residual output projections scaled by
// 1/sqrt(2 * n_layers)). Deterministic per seed. Rejects cost-model-only
// settings (grouped-query KV, gated FFN, tied embeddings).
Model init_model(const ModelConfig& cfg);

// Stable enumeration of every weight block; defines init draw order and the
// checkpoint block order.
std::vector<std::pair<std::string, SeqMatrix*>> named_params(Model& m);
std::vector<std::pair<std::string, const SeqMatrix*>> named_params(const Model& m);
Index param_count(const Model& m);

struct ForwardTrace {
    Index n_vision = 0;        // vision rows inside each layer output (0 for himix)
    SeqMatrix vision_injected; // what attention consumed: connector output or raw features
    SeqMatrix language_input;
    std::vector<SeqMatrix> layer_outputs;  // one per layer, full residual stream
    SeqMatrix final_hidden;                // after the final norm when enabled
};

ForwardTrace vanilla_forward(const Model& m, const SeqMatrix& x_v, const SeqMatrix& x_l);
ForwardTrace himix_forward(const Model& m, const SeqMatrix& x_v, const SeqMatrix& x_l);

// Correctness oracle: a vanilla-structure forward whose vision rows are
// overwritten with x_v_projected (N x d_model, already aligned) before every
// layer's attention. With positional embeddings off, norms off, and vision
// projections tied to the language K/V maps, its last M rows match
// himix_forward.
ForwardTrace frozen_vision_oracle_forward(const Model& m, const SeqMatrix& x_v_projected,
                                          const SeqMatrix& x_l);

// Literal single-head transcription of the himix layer loop: project, add
// positional table to language q/k, concatenate, scale by sqrt(d_model),
// mask, softmax, weighted sum, two-layer FFN. No norms, residuals, or output
// projection. Requires the himix-dedicated variant.
SeqMatrix algorithm_reference_forward(const Model& m, const SeqMatrix& x_v,
                                      const SeqMatrix& x_l);

SeqMatrix lm_head(const SeqMatrix& y, const SeqMatrix& w_head);

// --- tape plumbing shared with the trainer ---

struct ParamRefs {
    Tape::Ref embedding, norm_final, w_head;
    std::optional<std::pair<Tape::Ref, Tape::Ref>> shared_connector;
    struct Layer {
        Tape::Ref w_q, w_k, w_v, w_o, w_ffn1, w_ffn2, norm_attn, norm_ffn;
        std::optional<Tape::Ref> w_vk, w_vv;
        std::optional<std::pair<Tape::Ref, Tape::Ref>> connector;
    };
    std::vector<Layer> layers;
    std::vector<Tape::Ref> all;  // same order as named_params
};

ParamRefs make_param_refs(Tape& t, const Model& m);

// Wires pre-made leaves (one per named_params entry, same order) into the
// structured view; lets callers own the leaf creation, e.g. for grad checks.
ParamRefs param_refs_from_leaves(const Model& m, const std::vector<Tape::Ref>& leaves);

struct GraphTrace {
    std::vector<Tape::Ref> layer_outputs;
    Tape::Ref final_hidden;
    Tape::Ref vision_injected;
    Index n_vision = 0;
};

// Builds the configured variant's forward graph. x_v carries raw vision
// features (N x d_vision; N may be 0), x_l carries language features
// (M x d_model).
GraphTrace forward_graph(Tape& t, const Model& m, const ParamRefs& refs, Tape::Ref x_v,
                         Tape::Ref x_l);

// Self-describing container: magic, version, config JSON header, then named
// f32 blocks. See docs/checkpoint_format.md. Load/save round-trips are
// byte-exact.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace himix::decoder
