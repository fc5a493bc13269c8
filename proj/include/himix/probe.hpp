// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0
//
// Layer-wise divergence analysis: mean cosine similarity between a reference
// sequence and each layer's output, tracked per modality.

#pragma once

#include <string>
#include <vector>

#include "himix/decoder.hpp"

namespace himix::probe {

using decoder::ForwardTrace;
using decoder::Index;
using decoder::Scalar;
using decoder::SeqMatrix;

struct LayerStat {
    Index layer = 0;
    Scalar mean_cos = 0.0;   // mean over tokens of per-token cosine
    Index excluded = 0;      // tokens skipped because a row had zero norm
};

struct SimilarityProfile {
    std::vector<LayerStat> vision;    // empty when the trace carries no vision rows
    std::vector<LayerStat> language;
};

// reference_vision may be null only when the trace has no vision rows (himix
// traces, where the vision sequence never propagates). Row counts must match
// the trace's modality blocks. Aggregation is mean-over-tokens of per-token
// cosine, not the cosine of mean vectors.
SimilarityProfile cosine_profile(const ForwardTrace& trace, const SeqMatrix* reference_vision,
                                 const SeqMatrix& reference_language);

// Columns: layer,modality,mean_cos,excluded_tokens
std::string to_csv(const SimilarityProfile& profile);

}  // namespace himix::probe
