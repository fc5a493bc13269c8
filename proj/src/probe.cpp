// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0

#include "himix/probe.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace himix::probe {

namespace {

// Mean per-token cosine between matching rows of ref and rows
// [row0, row0 + ref.rows) of out.
LayerStat block_cosine(const SeqMatrix& ref, const SeqMatrix& out, Index row0, Index layer) {
    if (ref.cols != out.cols) {
        throw std::invalid_argument("cosine_profile: reference width " +
                                    std::to_string(ref.cols) + " != trace width " +
                                    std::to_string(out.cols));
    }
    LayerStat st;
    st.layer = layer;
    Scalar sum = 0.0;
    Index counted = 0;
    for (Index i = 0; i < ref.rows; ++i) {
        Scalar dot = 0.0, na = 0.0, nb = 0.0;
        for (Index j = 0; j < ref.cols; ++j) {
            const Scalar a = ref.at(i, j);
            const Scalar b = out.at(row0 + i, j);
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        if (na == 0.0 || nb == 0.0) {
            ++st.excluded;
            continue;
        }
        sum += dot / (std::sqrt(na) * std::sqrt(nb));
        ++counted;
    }
    st.mean_cos = counted > 0 ? sum / static_cast<Scalar>(counted) : 0.0;
    return st;
}

}  // namespace

SimilarityProfile cosine_profile(const ForwardTrace& trace, const SeqMatrix* reference_vision,
                                 const SeqMatrix& reference_language) {
    const Index n = trace.n_vision;
    if (n > 0 && reference_vision == nullptr) {
        throw std::invalid_argument("cosine_profile: trace has vision rows, reference needed");
    }
    if (n > 0 && reference_vision->rows != n) {
        throw std::invalid_argument("cosine_profile: vision reference has " +
                                    std::to_string(reference_vision->rows) + " rows, trace has " +
                                    std::to_string(n));
    }
    SimilarityProfile p;
    for (size_t li = 0; li < trace.layer_outputs.size(); ++li) {
        const SeqMatrix& out = trace.layer_outputs[li];
        if (out.rows != n + reference_language.rows) {
            throw std::invalid_argument("cosine_profile: layer " + std::to_string(li) +
                                        " has " + std::to_string(out.rows) + " rows, expected " +
                                        std::to_string(n + reference_language.rows));
        }
        const Index layer = static_cast<Index>(li);
        if (n > 0) p.vision.push_back(block_cosine(*reference_vision, out, 0, layer));
        p.language.push_back(block_cosine(reference_language, out, n, layer));
    }
    return p;
}

std::string to_csv(const SimilarityProfile& profile) {
    std::ostringstream os;
    os << "layer,modality,mean_cos,excluded_tokens\n";
    os.precision(17);
    for (const LayerStat& s : profile.vision) {
        os << s.layer << ",vision," << s.mean_cos << ',' << s.excluded << '\n';
    }
    for (const LayerStat& s : profile.language) {
        os << s.layer << ",language," << s.mean_cos << ',' << s.excluded << '\n';
    }
    return os.str();
}

}  // namespace himix::probe
