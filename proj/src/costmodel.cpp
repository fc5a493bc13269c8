// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0

#include "himix/costmodel.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "registry_data.hpp"

namespace himix::costmodel {

using json = nlohmann::json;

Count flops_closed_form_vanilla(Index n, Index m, Index d) {
    if (d < 1) throw std::invalid_argument("flops_closed_form_vanilla: d must be >= 1");
    if (n < 0 || m < 0) throw std::invalid_argument("flops_closed_form_vanilla: negative length");
    const Count t = static_cast<Count>(n + m);
    const Count du = static_cast<Count>(d);
    return t * t * du + 8 * t * du * du;
}

Count flops_closed_form_himix(Index n, Index m, Index d) {
    if (d < 1) throw std::invalid_argument("flops_closed_form_himix: d must be >= 1");
    if (n < 0 || m < 0) throw std::invalid_argument("flops_closed_form_himix: negative length");
    const Count t = static_cast<Count>(n + m);
    const Count mu = static_cast<Count>(m);
    const Count du = static_cast<Count>(d);
    return t * mu * du + 8 * mu * du * du;
}

namespace {

// Per-element FLOP constants for pointwise work when it is counted at all.
constexpr Count kNormFlopsPerElem = 4;
constexpr Count kSoftmaxFlopsPerElem = 5;
constexpr Count kActFlopsPerElem = 8;
constexpr Count kResidualFlopsPerElem = 1;

Count u(Index v) { return static_cast<Count>(v); }

}  // namespace

FlopsReport flops_full_accounting(const ModelConfig& cfg, Index n, Index m, Variant variant,
                                  const AccountingOptions& opts,
                                  const std::string& model_name) {
    cfg.validate();
    if (n < 0 || m < 1) {
        throw std::invalid_argument("flops_full_accounting: need n >= 0 and m >= 1");
    }
    const Count layers = u(cfg.n_layers);
    const Count d = u(cfg.d_model);
    const Count dv = u(cfg.d_vision);
    const Count kv = u(cfg.kv_width());
    const Count vocab = u(cfg.vocab);
    const Count t = u(n + m);
    const bool himix = variant != Variant::Vanilla;
    // Query rows and FFN/head rows: the full stream for vanilla, language
    // rows only for himix.
    const Count q_rows = himix ? u(m) : t;
    const Count ffn_mats = (opts.honor_gated_ffn && cfg.ffn_gated) ? 3 : 2;
    const Count d_ffn = opts.honor_gated_ffn ? u(cfg.d_ffn) : 4 * d;

    // multiply-accumulates per layer
    Count attn_macs = 0;
    Count score_macs = 0;
    if (opts.projections) {
        attn_macs += q_rows * d * d * 2;   // Q and output projections
        attn_macs += q_rows * d * kv * 2;  // language K and V (grouped-query width)
        if (himix) {
            const Count vis_in = variant == Variant::HimixDedicated ? dv : d;
            attn_macs += u(n) * vis_in * kv * 2;  // vision K and V, re-done per layer
        }
    }
    score_macs += q_rows * t * d;                       // Q K^T over all query heads
    if (opts.weighted_sum) score_macs += q_rows * t * d;  // softmax(S) V
    attn_macs += score_macs;

    const Count ffn_macs = ffn_mats * q_rows * d * d_ffn;
    const Count head_macs = opts.lm_head ? q_rows * d * vocab : 0;

    Count connector_macs = 0;
    const Count one_connector = u(n) * (dv * d + d * d);
    if (variant == Variant::Vanilla || variant == Variant::HimixUniform) {
        connector_macs = one_connector;
    } else if (variant == Variant::HimixConnector) {
        connector_macs = layers * one_connector;
    }

    FlopsReport r;
    r.model = model_name;
    r.variant = decoder::to_string(variant);
    r.n = n;
    r.m = m;
    r.attn_flops = 2 * attn_macs * layers;
    r.attn_score_flops = 2 * score_macs * layers;
    r.ffn_flops = 2 * ffn_macs * layers;
    r.head_flops = 2 * head_macs;
    r.connector_flops = 2 * connector_macs;

    if (opts.pointwise) {
        // softmax over the score matrix, norms and residual adds on the
        // residual stream, activation on the FFN hidden states
        r.attn_flops += layers * (kSoftmaxFlopsPerElem * q_rows * t +
                                  kNormFlopsPerElem * q_rows * d +
                                  kResidualFlopsPerElem * q_rows * d);
        r.ffn_flops += layers * (kActFlopsPerElem * q_rows * d_ffn +
                                 kNormFlopsPerElem * q_rows * d +
                                 kResidualFlopsPerElem * q_rows * d);
        if (opts.lm_head) r.head_flops += kNormFlopsPerElem * q_rows * d;
    }

    r.total = r.attn_flops + r.ffn_flops + r.head_flops;
    r.params = params_count(cfg, variant);
    return r;
}

Count params_count(const ModelConfig& cfg, Variant variant) {
    cfg.validate();
    const Count layers = u(cfg.n_layers);
    const Count d = u(cfg.d_model);
    const Count dv = u(cfg.d_vision);
    const Count kv = u(cfg.kv_width());
    const Count ffn_mats = cfg.ffn_gated ? 3 : 2;

    Count total = u(cfg.vocab) * d * (cfg.tie_embeddings ? 1 : 2);
    total += layers * (2 * d * d + 2 * d * kv + ffn_mats * d * u(cfg.d_ffn) + 2 * d);
    total += d;  // final norm gain
    switch (variant) {
        case Variant::Vanilla:
        case Variant::HimixUniform:
            total += dv * d + d * d;  // shared two-layer connector
            break;
        case Variant::HimixConnector:
            total += layers * (dv * d + d * d);
            break;
        case Variant::HimixDedicated:
            total += layers * 2 * dv * kv;
            break;
    }
    return total;
}

namespace {

std::vector<RegistryEntry> parse_registry_json(const json& j) {
    std::vector<RegistryEntry> out;
    for (const json& e : j.at("models")) {
        RegistryEntry entry;
        entry.name = e.at("name").get<std::string>();
        ModelConfig c;
        c.n_layers = e.at("layers").get<Index>();
        c.d_model = e.at("d_model").get<Index>();
        c.d_ffn = e.at("d_ffn").get<Index>();
        c.n_heads = e.at("heads").get<Index>();
        c.n_kv_heads = e.at("kv_heads").get<Index>();
        c.vocab = e.at("vocab").get<Index>();
        c.d_vision = e.value("d_vision", Index{1152});
        c.tie_embeddings = e.value("tie_embeddings", false);
        c.ffn_gated = e.value("ffn_gated", true);
        c.validate();
        entry.config = c;
        entry.source = e.value("source", std::string{});
        entry.in_grid = e.value("in_grid", true);
        out.push_back(std::move(entry));
    }
    if (out.empty()) throw std::runtime_error("registry: no models defined");
    return out;
}

}  // namespace

std::vector<RegistryEntry> parse_registry(const std::string& json_text) {
    return parse_registry_json(json::parse(json_text));
}

std::vector<RegistryEntry> load_registry(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("registry: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_registry(ss.str());
}

const std::vector<RegistryEntry>& builtin_registry() {
    static const std::vector<RegistryEntry> reg =
        parse_registry(detail::kBuiltinRegistryJson);
    return reg;
}

const RegistryEntry& find_entry(const std::vector<RegistryEntry>& reg,
                                const std::string& name) {
    for (const RegistryEntry& e : reg) {
        if (e.name == name) return e;
    }
    std::string known;
    for (const RegistryEntry& e : reg) {
        if (!known.empty()) known += ", ";
        known += e.name;
    }
    throw std::invalid_argument("unknown model '" + name + "'; registry has: " + known);
}

std::string emit_report_csv(std::span<const FlopsReport> reports) {
    if (reports.empty()) throw std::invalid_argument("emit_report_csv: empty report list");
    std::ostringstream os;
    os << "model,variant,n,m,attn_flops,ffn_flops,head_flops,total_flops,params,"
          "attn_score_flops,connector_flops\n";
    for (const FlopsReport& r : reports) {
        os << r.model << ',' << r.variant << ',' << r.n << ',' << r.m << ',' << r.attn_flops
           << ',' << r.ffn_flops << ',' << r.head_flops << ',' << r.total << ',' << r.params
           << ',' << r.attn_score_flops << ',' << r.connector_flops << '\n';
    }
    return os.str();
}

namespace {

json report_to_json(const FlopsReport& r) {
    json j;
    j["model"] = r.model;
    j["variant"] = r.variant;
    j["n"] = r.n;
    j["m"] = r.m;
    j["attn_flops"] = r.attn_flops;
    j["ffn_flops"] = r.ffn_flops;
    j["head_flops"] = r.head_flops;
    j["total_flops"] = r.total;
    j["params"] = r.params;
    j["attn_score_flops"] = r.attn_score_flops;
    j["connector_flops"] = r.connector_flops;
    return j;
}

}  // namespace

std::string emit_report_json(std::span<const FlopsReport> reports) {
    if (reports.empty()) throw std::invalid_argument("emit_report_json: empty report list");
    json arr = json::array();
    for (const FlopsReport& r : reports) arr.push_back(report_to_json(r));
    return arr.dump(2);
}

std::vector<FlopsReport> parse_report_json(const std::string& text) {
    json arr = json::parse(text);
    std::vector<FlopsReport> out;
    for (const json& j : arr) {
        FlopsReport r;
        r.model = j.at("model").get<std::string>();
        r.variant = j.at("variant").get<std::string>();
        r.n = j.at("n").get<Index>();
        r.m = j.at("m").get<Index>();
        r.attn_flops = j.at("attn_flops").get<Count>();
        r.ffn_flops = j.at("ffn_flops").get<Count>();
        r.head_flops = j.at("head_flops").get<Count>();
        r.total = j.at("total_flops").get<Count>();
        r.params = j.at("params").get<Count>();
        r.attn_score_flops = j.at("attn_score_flops").get<Count>();
        r.connector_flops = j.at("connector_flops").get<Count>();
        out.push_back(std::move(r));
    }
    return out;
}

double fit_loglog_exponent(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("fit_loglog_exponent: need matching series, length >= 2");
    }
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i] <= 0.0 || y[i] <= 0.0) {
            throw std::invalid_argument("fit_loglog_exponent: values must be positive");
        }
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

const std::vector<std::pair<Index, Index>>& paper_ratio_presets() {
    static const std::vector<std::pair<Index, Index>> presets = {
        {728, 32}, {728, 64}, {728, 200}, {728, 728}, {728, 1000}};
    return presets;
}

}  // namespace himix::costmodel
