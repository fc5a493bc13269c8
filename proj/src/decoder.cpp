// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0

#include "himix/decoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace himix::decoder {

using json = nlohmann::json;

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Vanilla: return "vanilla";
        case Variant::HimixUniform: return "himix-uniform";
        case Variant::HimixConnector: return "himix-connector";
        case Variant::HimixDedicated: return "himix-dedicated";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    if (s == "vanilla") return Variant::Vanilla;
    if (s == "himix-uniform") return Variant::HimixUniform;
    if (s == "himix-connector") return Variant::HimixConnector;
    if (s == "himix-dedicated") return Variant::HimixDedicated;
    throw std::invalid_argument("unknown variant '" + s +
                                "' (expected vanilla, himix-uniform, himix-connector, "
                                "himix-dedicated)");
}

std::string to_string(PEKind p) {
    switch (p) {
        case PEKind::None: return "none";
        case PEKind::Sinusoidal: return "sinusoidal";
        case PEKind::Rotary: return "rotary";
    }
    return "?";
}

PEKind parse_pe_kind(const std::string& s) {
    if (s == "none") return PEKind::None;
    if (s == "sinusoidal") return PEKind::Sinusoidal;
    if (s == "rotary") return PEKind::Rotary;
    throw std::invalid_argument("unknown pe scheme '" + s + "'");
}

std::string to_string(Activation a) {
    return a == Activation::Gelu ? "gelu" : "silu";
}

Activation parse_activation(const std::string& s) {
    if (s == "gelu") return Activation::Gelu;
    if (s == "silu") return Activation::Silu;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

void ModelConfig::validate() const {
    if (n_layers < 1) throw std::invalid_argument("config: n_layers must be >= 1");
    if (d_model < 1 || d_vision < 1 || vocab < 1) {
        throw std::invalid_argument("config: d_model, d_vision, vocab must be >= 1");
    }
    if (d_ffn < d_model) throw std::invalid_argument("config: d_ffn must be >= d_model");
    if (n_heads < 1 || d_model % n_heads != 0) {
        throw std::invalid_argument("config: n_heads " + std::to_string(n_heads) +
                                    " must divide d_model " + std::to_string(d_model));
    }
    if (kv_heads() < 1 || n_heads % kv_heads() != 0) {
        throw std::invalid_argument("config: n_kv_heads must divide n_heads");
    }
    if (language_pos_offset < 0) throw std::invalid_argument("config: negative pos offset");
    if (pe_scheme == PEKind::Sinusoidal && d_model % 2 != 0) {
        throw std::invalid_argument("config: sinusoidal pe needs even d_model");
    }
    if (pe_scheme == PEKind::Rotary && head_dim() % 2 != 0) {
        throw std::invalid_argument("config: rotary pe needs even head dim");
    }
}

std::string ModelConfig::to_json() const {
    json j;
    j["n_layers"] = n_layers;
    j["d_model"] = d_model;
    j["d_vision"] = d_vision;
    j["n_heads"] = n_heads;
    j["n_kv_heads"] = n_kv_heads;
    j["d_ffn"] = d_ffn;
    j["vocab"] = vocab;
    j["variant"] = decoder::to_string(variant);
    j["pe_scheme"] = decoder::to_string(pe_scheme);
    j["activation"] = decoder::to_string(activation);
    j["use_norms"] = use_norms;
    j["use_residuals"] = use_residuals;
    j["language_pos_offset"] = language_pos_offset;
    j["ffn_gated"] = ffn_gated;
    j["tie_embeddings"] = tie_embeddings;
    j["seed"] = seed;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<Index>();
    c.d_model = j.at("d_model").get<Index>();
    c.d_vision = j.at("d_vision").get<Index>();
    c.n_heads = j.at("n_heads").get<Index>();
    c.n_kv_heads = j.value("n_kv_heads", Index{0});
    c.d_ffn = j.at("d_ffn").get<Index>();
    c.vocab = j.at("vocab").get<Index>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.pe_scheme = parse_pe_kind(j.value("pe_scheme", std::string("sinusoidal")));
    c.activation = parse_activation(j.value("activation", std::string("gelu")));
    c.use_norms = j.value("use_norms", true);
    c.use_residuals = j.value("use_residuals", true);
    c.language_pos_offset = j.value("language_pos_offset", Index{0});
    c.ffn_gated = j.value("ffn_gated", false);
    c.tie_embeddings = j.value("tie_embeddings", false);
    c.seed = j.value("seed", std::uint64_t{0});
    return c;
}

SeqMatrix Model::project_vision(const SeqMatrix& x_v) const {
    if (!shared_connector) {
        throw std::invalid_argument("project_vision: model has no shared connector");
    }
    SeqMatrix h = numkit::matmul(x_v, shared_connector->w1);
    for (Scalar& v : h.data) v = numkit::activation_eval(cfg.activation, v);
    return numkit::matmul(h, shared_connector->w2);
}

namespace {

bool has_shared_connector(Variant v) {
    return v == Variant::Vanilla || v == Variant::HimixUniform;
}

}  // namespace

std::vector<std::pair<std::string, SeqMatrix*>> named_params(Model& m) {
    std::vector<std::pair<std::string, SeqMatrix*>> out;
    out.emplace_back("embedding", &m.embedding);
    for (size_t i = 0; i < m.layers.size(); ++i) {
        LayerWeights& l = m.layers[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        out.emplace_back(p + "w_q", &l.w_q);
        out.emplace_back(p + "w_k", &l.w_k);
        out.emplace_back(p + "w_v", &l.w_v);
        out.emplace_back(p + "w_o", &l.w_o);
        if (l.w_vk) out.emplace_back(p + "w_vk", &*l.w_vk);
        if (l.w_vv) out.emplace_back(p + "w_vv", &*l.w_vv);
        if (l.connector) {
            out.emplace_back(p + "connector.w1", &l.connector->w1);
            out.emplace_back(p + "connector.w2", &l.connector->w2);
        }
        out.emplace_back(p + "w_ffn1", &l.w_ffn1);
        out.emplace_back(p + "w_ffn2", &l.w_ffn2);
        out.emplace_back(p + "norm_attn", &l.norm_attn_gain);
        out.emplace_back(p + "norm_ffn", &l.norm_ffn_gain);
    }
    if (m.shared_connector) {
        out.emplace_back("connector.w1", &m.shared_connector->w1);
        out.emplace_back("connector.w2", &m.shared_connector->w2);
    }
    out.emplace_back("norm_final", &m.norm_final_gain);
    out.emplace_back("w_head", &m.w_head);
    return out;
}

std::vector<std::pair<std::string, const SeqMatrix*>> named_params(const Model& m) {
    auto mut = named_params(const_cast<Model&>(m));
    std::vector<std::pair<std::string, const SeqMatrix*>> out;
    out.reserve(mut.size());
    for (auto& [n, p] : mut) out.emplace_back(n, p);
    return out;
}

Index param_count(const Model& m) {
    Index total = 0;
    for (const auto& [name, p] : named_params(m)) total += p->size();
    return total;
}

Model init_model(const ModelConfig& cfg) {
    cfg.validate();
    if (cfg.kv_heads() != cfg.n_heads) {
        throw std::invalid_argument(
            "init_model: grouped-query attention (n_kv_heads < n_heads) is cost-model-only");
    }
    if (cfg.ffn_gated) {
        throw std::invalid_argument("init_model: gated FFN is cost-model-only");
    }
    if (cfg.tie_embeddings) {
        throw std::invalid_argument("init_model: tied embeddings are cost-model-only");
    }

    Model m;
    m.cfg = cfg;
    m.embedding = SeqMatrix(cfg.vocab, cfg.d_model);
    m.norm_final_gain = SeqMatrix(1, cfg.d_model, 1.0);
    m.w_head = SeqMatrix(cfg.d_model, cfg.vocab);
    if (has_shared_connector(cfg.variant)) {
        m.shared_connector = Connector{SeqMatrix(cfg.d_vision, cfg.d_model),
                                       SeqMatrix(cfg.d_model, cfg.d_model)};
    }
    m.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (LayerWeights& l : m.layers) {
        l.w_q = SeqMatrix(cfg.d_model, cfg.d_model);
        l.w_k = SeqMatrix(cfg.d_model, cfg.d_model);
        l.w_v = SeqMatrix(cfg.d_model, cfg.d_model);
        l.w_o = SeqMatrix(cfg.d_model, cfg.d_model);
        l.w_ffn1 = SeqMatrix(cfg.d_model, cfg.d_ffn);
        l.w_ffn2 = SeqMatrix(cfg.d_ffn, cfg.d_model);
        l.norm_attn_gain = SeqMatrix(1, cfg.d_model, 1.0);
        l.norm_ffn_gain = SeqMatrix(1, cfg.d_model, 1.0);
        if (cfg.variant == Variant::HimixDedicated) {
            l.w_vk = SeqMatrix(cfg.d_vision, cfg.d_model);
            l.w_vv = SeqMatrix(cfg.d_vision, cfg.d_model);
        }
        if (cfg.variant == Variant::HimixConnector) {
            l.connector = Connector{SeqMatrix(cfg.d_vision, cfg.d_model),
                                    SeqMatrix(cfg.d_model, cfg.d_model)};
        }
    }

    // Scaled-normal init in stable name order. Residual output projections
    // get the 1/sqrt(2 * n_layers) damping.
    const Scalar base_std = 0.02;
    const Scalar resid_std = base_std / std::sqrt(2.0 * static_cast<Scalar>(cfg.n_layers));
    numkit::Rng rng(cfg.seed);
    for (auto& [name, p] : named_params(m)) {
        if (name.find("norm") != std::string::npos) continue;  // gains stay at 1
        const bool damped = name.ends_with(".w_o") || name.ends_with(".w_ffn2");
        const Scalar std = damped ? resid_std : base_std;
        for (Scalar& v : p->data) v = rng.normal(0.0, std);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Forward graphs

namespace {

Tape::Ref connector_graph(Tape& t, Tape::Ref x_v, Tape::Ref w1, Tape::Ref w2,
                          Activation act) {
    return t.matmul(t.activation(t.matmul(x_v, w1), act), w2);
}

Tape::Ref ffn_graph(Tape& t, Tape::Ref x, Tape::Ref w1, Tape::Ref w2, Activation act) {
    return t.matmul(t.activation(t.matmul(x, w1), act), w2);
}

// Shared residual/norm wrapper. attn_fn maps the (possibly normed) block
// input to the attention output.
template <typename AttnFn>
Tape::Ref decoder_block(Tape& t, Tape::Ref stream, const ParamRefs::Layer& l,
                        const ModelConfig& cfg, AttnFn&& attn_fn) {
    Tape::Ref attn_in = cfg.use_norms ? t.rms_norm(stream, l.norm_attn) : stream;
    Tape::Ref a = attn_fn(attn_in);
    Tape::Ref s1 = cfg.use_residuals ? t.add(stream, a) : a;
    Tape::Ref ffn_in = cfg.use_norms ? t.rms_norm(s1, l.norm_ffn) : s1;
    Tape::Ref f = ffn_graph(t, ffn_in, l.w_ffn1, l.w_ffn2, cfg.activation);
    return cfg.use_residuals ? t.add(s1, f) : f;
}

GraphTrace vanilla_graph(Tape& t, const Model& m, const ParamRefs& r, Tape::Ref x_v,
                         Tape::Ref x_l) {
    const ModelConfig& cfg = m.cfg;
    const Index n = t.value(x_v).rows;
    const Index total = n + t.value(x_l).rows;
    Tape::Ref xvp = connector_graph(t, x_v, r.shared_connector->first,
                                    r.shared_connector->second, cfg.activation);
    Tape::Ref stream = t.concat_rows(xvp, x_l);
    const MaskSpec mask = attn::build_causal_mask(total);
    const attn::PESpec pe{cfg.pe_scheme, 0};

    GraphTrace trace;
    trace.n_vision = n;
    trace.vision_injected = xvp;
    for (Index i = 0; i < cfg.n_layers; ++i) {
        const ParamRefs::Layer& l = r.layers[static_cast<size_t>(i)];
        stream = decoder_block(t, stream, l, cfg, [&](Tape::Ref in) {
            return attn::self_attention_graph(t, in, l.w_q, l.w_k, l.w_v, l.w_o,
                                              cfg.n_heads, mask, pe);
        });
        trace.layer_outputs.push_back(stream);
    }
    trace.final_hidden = cfg.use_norms ? t.rms_norm(stream, r.norm_final) : stream;
    return trace;
}

GraphTrace himix_graph(Tape& t, const Model& m, const ParamRefs& r, Tape::Ref x_v,
                       Tape::Ref x_l) {
    const ModelConfig& cfg = m.cfg;
    const Index n = t.value(x_v).rows;
    const Index m_rows = t.value(x_l).rows;
    const MaskSpec mask = attn::build_part_causal_mask(n, m_rows);
    const attn::PESpec pe{cfg.pe_scheme, cfg.language_pos_offset};

    // Vision enters attention without passing through the residual stream.
    Tape::Ref shared_feed = x_v;
    if (cfg.variant == Variant::HimixUniform) {
        shared_feed = connector_graph(t, x_v, r.shared_connector->first,
                                      r.shared_connector->second, cfg.activation);
    }

    GraphTrace trace;
    trace.n_vision = 0;
    trace.vision_injected = shared_feed;
    Tape::Ref y = x_l;
    for (Index i = 0; i < cfg.n_layers; ++i) {
        const ParamRefs::Layer& l = r.layers[static_cast<size_t>(i)];
        Tape::Ref feed = shared_feed;
        if (cfg.variant == Variant::HimixConnector) {
            feed = connector_graph(t, x_v, l.connector->first, l.connector->second,
                                   cfg.activation);
        }
        const bool dedicated = cfg.variant == Variant::HimixDedicated;
        Tape::Ref wvk = dedicated ? *l.w_vk : l.w_k;
        Tape::Ref wvv = dedicated ? *l.w_vv : l.w_v;
        y = decoder_block(t, y, l, cfg, [&](Tape::Ref in) {
            return attn::mixture_attention_graph(t, feed, wvk, wvv, in, l.w_q, l.w_k,
                                                 l.w_v, l.w_o, cfg.n_heads, mask, pe);
        });
        trace.layer_outputs.push_back(y);
    }
    trace.final_hidden = cfg.use_norms ? t.rms_norm(y, r.norm_final) : y;
    return trace;
}

}  // namespace

ParamRefs make_param_refs(Tape& t, const Model& m) {
    std::vector<Tape::Ref> leaves;
    for (const auto& [name, p] : named_params(m)) leaves.push_back(t.leaf(*p, true));
    return param_refs_from_leaves(m, leaves);
}

ParamRefs param_refs_from_leaves(const Model& m, const std::vector<Tape::Ref>& leaves) {
    const auto params = named_params(m);
    if (params.size() != leaves.size()) {
        throw std::invalid_argument("param_refs_from_leaves: expected " +
                                    std::to_string(params.size()) + " leaves, got " +
                                    std::to_string(leaves.size()));
    }
    ParamRefs r;
    r.layers.resize(m.layers.size());
    // Wire structured refs by walking the same order as named_params so
    // r.all lines up with it.
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const std::string& name = params[pi].first;
        Tape::Ref ref = leaves[pi];
        r.all.push_back(ref);
        if (name == "embedding") {
            r.embedding = ref;
        } else if (name == "norm_final") {
            r.norm_final = ref;
        } else if (name == "w_head") {
            r.w_head = ref;
        } else if (name == "connector.w1") {
            r.shared_connector.emplace(ref, Tape::Ref{});
        } else if (name == "connector.w2") {
            r.shared_connector->second = ref;
        } else {
            // layers.<i>.<field>
            const size_t dot = name.find('.', 7);
            const size_t idx = std::stoul(name.substr(7, dot - 7));
            const std::string field = name.substr(dot + 1);
            ParamRefs::Layer& l = r.layers[idx];
            if (field == "w_q") l.w_q = ref;
            else if (field == "w_k") l.w_k = ref;
            else if (field == "w_v") l.w_v = ref;
            else if (field == "w_o") l.w_o = ref;
            else if (field == "w_vk") l.w_vk = ref;
            else if (field == "w_vv") l.w_vv = ref;
            else if (field == "connector.w1") l.connector.emplace(ref, Tape::Ref{});
            else if (field == "connector.w2") l.connector->second = ref;
            else if (field == "w_ffn1") l.w_ffn1 = ref;
            else if (field == "w_ffn2") l.w_ffn2 = ref;
            else if (field == "norm_attn") l.norm_attn = ref;
            else if (field == "norm_ffn") l.norm_ffn = ref;
            else throw std::logic_error("param_refs_from_leaves: unknown field " + field);
        }
    }
    return r;
}

GraphTrace forward_graph(Tape& t, const Model& m, const ParamRefs& refs, Tape::Ref x_v,
                         Tape::Ref x_l) {
    if (t.value(x_v).cols != m.cfg.d_vision && t.value(x_v).rows > 0) {
        throw std::invalid_argument("forward: x_v has " + std::to_string(t.value(x_v).cols) +
                                    " cols, expected d_vision " +
                                    std::to_string(m.cfg.d_vision));
    }
    if (t.value(x_l).cols != m.cfg.d_model) {
        throw std::invalid_argument("forward: x_l has " + std::to_string(t.value(x_l).cols) +
                                    " cols, expected d_model " + std::to_string(m.cfg.d_model));
    }
    if (t.value(x_l).rows < 1) {
        throw std::invalid_argument("forward: language sequence must be non-empty");
    }
    if (m.cfg.variant == Variant::Vanilla) return vanilla_graph(t, m, refs, x_v, x_l);
    return himix_graph(t, m, refs, x_v, x_l);
}

namespace {

ForwardTrace extract_trace(const Tape& t, const GraphTrace& g, const SeqMatrix& x_l) {
    ForwardTrace tr;
    tr.n_vision = g.n_vision;
    tr.vision_injected = t.value(g.vision_injected);
    tr.language_input = x_l;
    tr.layer_outputs.reserve(g.layer_outputs.size());
    for (Tape::Ref r : g.layer_outputs) tr.layer_outputs.push_back(t.value(r));
    tr.final_hidden = t.value(g.final_hidden);
    return tr;
}

ForwardTrace run_forward(const Model& m, const SeqMatrix& x_v, const SeqMatrix& x_l) {
    Tape t;
    ParamRefs refs = make_param_refs(t, m);
    GraphTrace g = forward_graph(t, m, refs, t.leaf(x_v), t.leaf(x_l));
    return extract_trace(t, g, x_l);
}

}  // namespace

ForwardTrace vanilla_forward(const Model& m, const SeqMatrix& x_v, const SeqMatrix& x_l) {
    if (m.cfg.variant != Variant::Vanilla) {
        throw std::invalid_argument("vanilla_forward: model variant is " +
                                    to_string(m.cfg.variant));
    }
    return run_forward(m, x_v, x_l);
}

ForwardTrace himix_forward(const Model& m, const SeqMatrix& x_v, const SeqMatrix& x_l) {
    if (m.cfg.variant == Variant::Vanilla) {
        throw std::invalid_argument("himix_forward: model variant is vanilla");
    }
    return run_forward(m, x_v, x_l);
}

ForwardTrace frozen_vision_oracle_forward(const Model& m, const SeqMatrix& x_v_projected,
                                          const SeqMatrix& x_l) {
    const ModelConfig& cfg = m.cfg;
    if (x_v_projected.cols != cfg.d_model) {
        throw std::invalid_argument(
            "frozen_vision_oracle_forward: expects pre-projected vision rows of width " +
            std::to_string(cfg.d_model));
    }
    const Index n = x_v_projected.rows;
    const Index total = n + x_l.rows;
    Tape t;
    ParamRefs refs = make_param_refs(t, m);
    Tape::Ref xvp = t.leaf(x_v_projected);
    Tape::Ref stream = t.concat_rows(xvp, t.leaf(x_l));
    const MaskSpec mask = attn::build_causal_mask(total);
    const attn::PESpec pe{cfg.pe_scheme, 0};

    GraphTrace g;
    g.n_vision = n;
    g.vision_injected = xvp;
    for (Index i = 0; i < cfg.n_layers; ++i) {
        const ParamRefs::Layer& l = refs.layers[static_cast<size_t>(i)];
        // Pin the vision rows back to the injected features before attention;
        // whatever the previous layer wrote there is discarded.
        Tape::Ref pinned = t.concat_rows(xvp, t.slice_rows(stream, n, total));
        stream = decoder_block(t, pinned, l, cfg, [&](Tape::Ref in) {
            return attn::self_attention_graph(t, in, l.w_q, l.w_k, l.w_v, l.w_o,
                                              cfg.n_heads, mask, pe);
        });
        g.layer_outputs.push_back(stream);
    }
    g.final_hidden = cfg.use_norms ? t.rms_norm(stream, refs.norm_final) : stream;
    return extract_trace(t, g, x_l);
}

SeqMatrix algorithm_reference_forward(const Model& m, const SeqMatrix& x_v,
                                      const SeqMatrix& x_l) {
    const ModelConfig& cfg = m.cfg;
    if (cfg.variant != Variant::HimixDedicated) {
        throw std::invalid_argument("algorithm_reference_forward: himix-dedicated only");
    }
    if (cfg.pe_scheme == PEKind::Rotary) {
        throw std::invalid_argument("algorithm_reference_forward: additive or no pe only");
    }
    const Index n = x_v.rows;
    const Index m_rows = x_l.rows;
    const MaskSpec mask = attn::build_part_causal_mask(n, m_rows);
    SeqMatrix pe_table;
    if (cfg.pe_scheme == PEKind::Sinusoidal) {
        std::vector<Index> pos(static_cast<size_t>(m_rows));
        for (Index i = 0; i < m_rows; ++i) pos[static_cast<size_t>(i)] = cfg.language_pos_offset + i;
        pe_table = attn::sinusoidal_pe(pos, cfg.d_model);
    }
    const Scalar inv_scale = 1.0 / std::sqrt(static_cast<Scalar>(cfg.d_model));

    SeqMatrix y = x_l;
    for (const LayerWeights& l : m.layers) {
        SeqMatrix q = numkit::matmul(y, l.w_q);
        SeqMatrix k = numkit::matmul(y, l.w_k);
        SeqMatrix v = numkit::matmul(y, l.w_v);
        SeqMatrix kv = numkit::matmul(x_v, *l.w_vk);
        SeqMatrix vv = numkit::matmul(x_v, *l.w_vv);
        if (cfg.pe_scheme == PEKind::Sinusoidal) {
            q = numkit::add(q, pe_table);
            k = numkit::add(k, pe_table);
        }
        SeqMatrix k_full = numkit::concat_rows(kv, k);
        SeqMatrix v_full = numkit::concat_rows(vv, v);
        SeqMatrix scores = numkit::matmul_nt(q, k_full);
        for (Scalar& s : scores.data) s *= inv_scale;
        SeqMatrix attn_out = numkit::matmul(numkit::softmax_rows(numkit::add(scores, mask.additive)),
                                            v_full);
        y = numkit::ffn_forward(attn_out, l.w_ffn1, l.w_ffn2, cfg.activation);
    }
    return y;
}

SeqMatrix lm_head(const SeqMatrix& y, const SeqMatrix& w_head) {
    return numkit::matmul(y, w_head);
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr char kMagic[8] = {'H', 'M', 'I', 'X', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kMagic, sizeof(kMagic));
    write_u32(f, kVersion);
    const std::string header = m.cfg.to_json();
    write_u32(f, static_cast<std::uint32_t>(header.size()));
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    const auto params = named_params(m);
    write_u32(f, static_cast<std::uint32_t>(params.size()));
    std::vector<float> buf;
    for (const auto& [name, p] : params) {
        write_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(f, static_cast<std::uint32_t>(p->rows));
        write_u32(f, static_cast<std::uint32_t>(p->cols));
        buf.resize(p->data.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p->data[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    }
    if (read_u32(f) != kVersion) throw std::runtime_error("load_checkpoint: bad version");
    const std::uint32_t header_len = read_u32(f);
    std::string header(header_len, '\0');
    f.read(header.data(), header_len);
    Model m = init_model(ModelConfig::from_json(header));

    std::map<std::string, SeqMatrix*> by_name;
    for (auto& [name, p] : named_params(m)) by_name[name] = p;

    const std::uint32_t n_blocks = read_u32(f);
    if (n_blocks != by_name.size()) {
        throw std::runtime_error("load_checkpoint: block count " + std::to_string(n_blocks) +
                                 " does not match config (" + std::to_string(by_name.size()) +
                                 ")");
    }
    std::vector<float> buf;
    for (std::uint32_t b = 0; b < n_blocks; ++b) {
        const std::uint32_t name_len = read_u32(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const Index rows = static_cast<Index>(read_u32(f));
        const Index cols = static_cast<Index>(read_u32(f));
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw std::runtime_error("load_checkpoint: unexpected block '" + name + "'");
        }
        SeqMatrix* dst = it->second;
        if (dst->rows != rows || dst->cols != cols) {
            throw std::runtime_error("load_checkpoint: block '" + name + "' is " +
                                     std::to_string(rows) + "x" + std::to_string(cols) +
                                     ", expected " + std::to_string(dst->rows) + "x" +
                                     std::to_string(dst->cols));
        }
        buf.resize(static_cast<size_t>(rows * cols));
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        for (size_t i = 0; i < buf.size(); ++i) dst->data[i] = static_cast<Scalar>(buf[i]);
    }
    if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
    return m;
}

}  // namespace himix::decoder
