// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "himix/numkit.hpp"

namespace himix::test {

using numkit::Index;
using numkit::Rng;
using numkit::Scalar;
using numkit::SeqMatrix;

inline SeqMatrix random_matrix(Index rows, Index cols, Rng& rng, Scalar scale = 1.0) {
    SeqMatrix m(rows, cols);
    for (Scalar& v : m.data) v = rng.normal(0.0, scale);
    return m;
}

// Independent brute-force product used as the matmul oracle: plain
// triple loop in i-j-k order, no blocking, no reuse of library code paths.
inline SeqMatrix matmul_oracle(const SeqMatrix& a, const SeqMatrix& b) {
    SeqMatrix c(a.rows, b.cols);
    for (Index i = 0; i < a.rows; ++i) {
        for (Index j = 0; j < b.cols; ++j) {
            Scalar s = 0.0;
            for (Index k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
            c.at(i, j) = s;
        }
    }
    return c;
}

}  // namespace himix::test
