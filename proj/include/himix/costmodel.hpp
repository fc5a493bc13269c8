// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0
//
// Analytical FLOPs and parameter accounting for vanilla and himix decoders.
//
// Conventions:
//   - 1 multiply-accumulate = 2 FLOPs.
//   - Reported totals cover the decoder proper (attention + FFN + LM head).
//     Connector cost is computed but reported in its own column, matching
//     the decoder-only convention of the reference tables.
//   - Pointwise work (norms, softmax, activations) is excluded by default
//     and priced at small per-element constants when enabled.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "himix/decoder.hpp"

namespace himix::costmodel {

using decoder::Index;
using decoder::ModelConfig;
using decoder::Variant;
using Count = std::uint64_t;

struct AccountingOptions {
    bool projections = true;   // Q/K/V/O and vision K/V projections
    bool weighted_sum = true;  // softmax(S) * V matmul
    bool lm_head = true;
    bool pointwise = false;    // norms, softmax, activations, residual adds
    bool honor_gated_ffn = true;  // false forces a plain two-matrix FFN at 4d hidden

    static AccountingOptions full() { return {}; }
    // Strips everything Eq-style closed forms ignore; full accounting in this
    // mode equals 2x the closed form per layer.
    static AccountingOptions closed_form_parity() {
        AccountingOptions o;
        o.projections = false;
        o.weighted_sum = false;
        o.lm_head = false;
        o.pointwise = false;
        o.honor_gated_ffn = false;
        return o;
    }
};

struct FlopsReport {
    std::string model;
    std::string variant;
    Index n = 0;
    Index m = 0;
    Count attn_flops = 0;
    Count ffn_flops = 0;
    Count head_flops = 0;
    Count total = 0;  // attn + ffn + head
    Count params = 0;
    Count attn_score_flops = 0;  // score matmul + weighted sum subset of attn_flops
    Count connector_flops = 0;   // outside total
};

// Literal closed forms in operation counts: (N+M)^2 d + 8 (N+M) d^2 and
// (N+M) M d + 8 M d^2.
Count flops_closed_form_vanilla(Index n, Index m, Index d);
Count flops_closed_form_himix(Index n, Index m, Index d);

FlopsReport flops_full_accounting(const ModelConfig& cfg, Index n, Index m, Variant variant,
                                  const AccountingOptions& opts = AccountingOptions::full(),
                                  const std::string& model_name = "");

Count params_count(const ModelConfig& cfg, Variant variant);

struct RegistryEntry {
    std::string name;
    ModelConfig config;
    std::string source;
    bool in_grid = true;  // member of the standard efficiency grid
};

// Architecture registry bundled at build time from data/model_registry.json;
// load_registry parses the same schema from a user-supplied file.
const std::vector<RegistryEntry>& builtin_registry();
std::vector<RegistryEntry> parse_registry(const std::string& json_text);
std::vector<RegistryEntry> load_registry(const std::string& path);
// Throws with the list of known names when absent.
const RegistryEntry& find_entry(const std::vector<RegistryEntry>& reg, const std::string& name);

std::string emit_report_csv(std::span<const FlopsReport> reports);
std::string emit_report_json(std::span<const FlopsReport> reports);
std::vector<FlopsReport> parse_report_json(const std::string& text);

// Least-squares slope of log y against log x.
double fit_loglog_exponent(std::span<const double> x, std::span<const double> y);

// The five standard vision:language length pairs of the efficiency grid.
const std::vector<std::pair<Index, Index>>& paper_ratio_presets();

}  // namespace himix::costmodel
