// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic patch-query task and a small training loop. A sample carries N
// random unit patch vectors whose class and index signatures live in reserved
// coordinate blocks, plus a two-token language query naming one patch. The
// model must route attention to that patch and emit its class token.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "himix/decoder.hpp"

namespace himix::trainer {

using decoder::Index;
using decoder::Model;
using decoder::Scalar;
using decoder::SeqMatrix;

// Vocabulary layout: [0, n_query) query tokens, [n_query, n_query + n_class)
// class tokens, then the separator.
struct TaskVocab {
    Index n_query = 0;
    Index n_class = 0;

    Index query_token(Index patch) const { return patch; }
    Index class_token(Index cls) const { return n_query + cls; }
    Index sep_token() const { return n_query + n_class; }
    Index size() const { return n_query + n_class + 1; }
};

struct Sample {
    SeqMatrix patches;          // n_patches x d_vision
    std::vector<Index> tokens;  // [query_token, sep]; answer read at the last position
    Index label_class = 0;
    Index label_token = 0;
};

struct TaskSet {
    TaskVocab vocab;
    Index n_patches = 0;
    Index n_classes = 0;
    Index d_vision = 0;
    std::vector<Sample> samples;
};

// Deterministic per seed; labels are class-balanced within one sample.
// d_vision must hold the class block, the patch-index block, and at least
// one noise coordinate.
TaskSet gen_task(std::uint64_t seed, Index n_patches, Index n_classes, Index n_samples,
                 Index d_vision);

// Ablation copy with every patch vector zeroed.
TaskSet zero_vision_copy(const TaskSet& t);

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
    Index epochs = 12;
    Scalar lr = 1e-3;
    Optimizer optimizer = Optimizer::Adam;
    Index batch_size = 32;
    std::uint64_t shuffle_seed = 1;
};

struct TrainReport {
    std::vector<Scalar> epoch_loss;
    std::vector<Scalar> epoch_accuracy;   // on the training set
    Scalar final_holdout_accuracy = 0.0;
    std::uint64_t model_seed = 0;
    std::string config_json;  // model config snapshot

    std::string to_json() const;
};

// Cross-entropy on the class token at the final language position. Mutates
// the model in place. Throws with the offending step index if the loss ever
// stops being finite.
TrainReport train(Model& model, const TaskSet& train_set, const TaskSet& holdout,
                  const TrainConfig& cfg);

// Exact-match accuracy of the argmax over class-token logits at the answer
// position. Pure; repeated calls agree bitwise.
Scalar evaluate(const Model& model, const TaskSet& t);
std::vector<Index> predict(const Model& model, const TaskSet& t);
Scalar accuracy(std::span<const Index> predictions, std::span<const Index> labels);

}  // namespace himix::trainer
