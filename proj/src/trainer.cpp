// Copyright (C) 2026 himix contributors
// SPDX-License-Identifier: Apache-2.0

#include "himix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace himix::trainer {

using decoder::ForwardTrace;
using decoder::GraphTrace;
using decoder::ParamRefs;
using numkit::Rng;
using numkit::Tape;

TaskSet gen_task(std::uint64_t seed, Index n_patches, Index n_classes, Index n_samples,
                 Index d_vision) {
    if (n_classes < 2) throw std::invalid_argument("gen_task: need at least 2 classes");
    if (n_patches < 1) throw std::invalid_argument("gen_task: need at least 1 patch");
    if (n_samples < 1) throw std::invalid_argument("gen_task: need at least 1 sample");
    if (d_vision < n_classes + n_patches + 1) {
        throw std::invalid_argument("gen_task: d_vision must be >= n_classes + n_patches + 1");
    }
    TaskSet t;
    t.vocab = TaskVocab{n_patches, n_classes};
    t.n_patches = n_patches;
    t.n_classes = n_classes;
    t.d_vision = d_vision;
    t.samples.reserve(static_cast<size_t>(n_samples));

    Rng rng(seed);
    for (Index s = 0; s < n_samples; ++s) {
        Sample sample;
        // cycling the label keeps classes balanced within one sample
        sample.label_class = s % n_classes;
        const Index query_patch = rng.uniform_int(0, n_patches - 1);
        sample.patches = SeqMatrix(n_patches, d_vision);
        for (Index p = 0; p < n_patches; ++p) {
            const Index cls =
                p == query_patch ? sample.label_class : rng.uniform_int(0, n_classes - 1);
            // class signature block, then patch identity block, then noise
            sample.patches.at(p, cls) = 1.0;
            sample.patches.at(p, n_classes + p) = 1.0;
            for (Index j = n_classes + n_patches; j < d_vision; ++j) {
                sample.patches.at(p, j) = rng.normal(0.0, 0.25);
            }
            Scalar norm = 0.0;
            for (Index j = 0; j < d_vision; ++j) {
                norm += sample.patches.at(p, j) * sample.patches.at(p, j);
            }
            norm = std::sqrt(norm);
            for (Index j = 0; j < d_vision; ++j) sample.patches.at(p, j) /= norm;
        }
        sample.tokens = {t.vocab.query_token(query_patch), t.vocab.sep_token()};
        sample.label_token = t.vocab.class_token(sample.label_class);
        t.samples.push_back(std::move(sample));
    }
    return t;
}

TaskSet zero_vision_copy(const TaskSet& t) {
    TaskSet z = t;
    for (Sample& s : z.samples) {
        std::fill(s.patches.data.begin(), s.patches.data.end(), 0.0);
    }
    return z;
}

namespace {

void check_model_task(const Model& model, const TaskSet& t) {
    if (model.cfg.d_vision != t.d_vision) {
        throw std::invalid_argument("task d_vision " + std::to_string(t.d_vision) +
                                    " != model d_vision " + std::to_string(model.cfg.d_vision));
    }
    if (model.cfg.vocab != t.vocab.size()) {
        throw std::invalid_argument("task vocab " + std::to_string(t.vocab.size()) +
                                    " != model vocab " + std::to_string(model.cfg.vocab));
    }
}

// Appends one sample's forward pass to the tape, returning its loss node.
Tape::Ref sample_loss(Tape& tape, const Model& model, const ParamRefs& refs,
                      const Sample& s) {
    Tape::Ref xv = tape.leaf(s.patches);
    Tape::Ref xl = tape.gather_rows(refs.embedding, s.tokens);
    GraphTrace g = decoder::forward_graph(tape, model, refs, xv, xl);
    Tape::Ref logits = tape.matmul(g.final_hidden, refs.w_head);
    const Index answer_row = static_cast<Index>(s.tokens.size()) - 1;
    return tape.cross_entropy_row(logits, answer_row, s.label_token);
}

Index predict_one(const Model& model, const TaskSet& t, const Sample& s) {
    Tape tape;
    ParamRefs refs = decoder::make_param_refs(tape, model);
    Tape::Ref xv = tape.leaf(s.patches);
    Tape::Ref xl = tape.gather_rows(refs.embedding, s.tokens);
    GraphTrace g = decoder::forward_graph(tape, model, refs, xv, xl);
    Tape::Ref logits = tape.matmul(g.final_hidden, refs.w_head);
    const SeqMatrix& lg = tape.value(logits);
    const Index row = static_cast<Index>(s.tokens.size()) - 1;
    // argmax over the class-token slice of the vocabulary
    Index best = 0;
    Scalar best_v = lg.at(row, t.vocab.class_token(0));
    for (Index c = 1; c < t.n_classes; ++c) {
        const Scalar v = lg.at(row, t.vocab.class_token(c));
        if (v > best_v) {
            best_v = v;
            best = c;
        }
    }
    return best;
}

struct AdamState {
    std::vector<SeqMatrix> m, v;
    Index step = 0;
};

}  // namespace

std::vector<Index> predict(const Model& model, const TaskSet& t) {
    check_model_task(model, t);
    std::vector<Index> out;
    out.reserve(t.samples.size());
    for (const Sample& s : t.samples) out.push_back(predict_one(model, t, s));
    return out;
}

Scalar accuracy(std::span<const Index> predictions, std::span<const Index> labels) {
    if (predictions.size() != labels.size() || predictions.empty()) {
        throw std::invalid_argument("accuracy: size mismatch or empty");
    }
    Index hits = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == labels[i]) ++hits;
    }
    return static_cast<Scalar>(hits) / static_cast<Scalar>(predictions.size());
}

Scalar evaluate(const Model& model, const TaskSet& t) {
    check_model_task(model, t);
    std::vector<Index> labels;
    labels.reserve(t.samples.size());
    for (const Sample& s : t.samples) labels.push_back(s.label_class);
    return accuracy(predict(model, t), labels);
}

TrainReport train(Model& model, const TaskSet& train_set, const TaskSet& holdout,
                  const TrainConfig& cfg) {
    check_model_task(model, train_set);
    check_model_task(model, holdout);
    if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.lr < 0.0) {
        throw std::invalid_argument("train: bad epochs, batch size, or lr");
    }

    auto named = decoder::named_params(model);
    AdamState adam;
    if (cfg.optimizer == Optimizer::Adam) {
        for (auto& [name, p] : named) {
            adam.m.emplace_back(p->rows, p->cols);
            adam.v.emplace_back(p->rows, p->cols);
        }
    }
    constexpr Scalar kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

    TrainReport report;
    report.model_seed = model.cfg.seed;
    report.config_json = model.cfg.to_json();

    std::vector<size_t> order(train_set.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(cfg.shuffle_seed);
    Index global_step = 0;

    for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates on the deterministic stream
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(
                shuffle_rng.uniform_int(0, static_cast<Index>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }

        Scalar loss_sum = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            Tape tape;
            ParamRefs refs = decoder::make_param_refs(tape, model);
            Tape::Ref acc{};
            for (size_t i = start; i < end; ++i) {
                Tape::Ref l = sample_loss(tape, model, refs, train_set.samples[order[i]]);
                acc = acc.valid() ? tape.add(acc, l) : l;
            }
            Tape::Ref loss = tape.scale(acc, 1.0 / static_cast<Scalar>(end - start));
            const Scalar loss_val = tape.value(loss).at(0, 0);
            ++global_step;
            if (!std::isfinite(loss_val)) {
                throw std::runtime_error("train: non-finite loss at step " +
                                         std::to_string(global_step));
            }
            loss_sum += loss_val * static_cast<Scalar>(end - start);
            tape.backward(loss);

            if (cfg.optimizer == Optimizer::Adam) ++adam.step;
            for (size_t pi = 0; pi < named.size(); ++pi) {
                const SeqMatrix& g = tape.grad(refs.all[pi]);
                SeqMatrix* p = named[pi].second;
                if (cfg.optimizer == Optimizer::Sgd) {
                    for (size_t k = 0; k < p->data.size(); ++k) {
                        p->data[k] -= cfg.lr * g.data[k];
                    }
                } else {
                    SeqMatrix& mom = adam.m[pi];
                    SeqMatrix& vel = adam.v[pi];
                    const Scalar bc1 = 1.0 - std::pow(kBeta1, static_cast<Scalar>(adam.step));
                    const Scalar bc2 = 1.0 - std::pow(kBeta2, static_cast<Scalar>(adam.step));
                    for (size_t k = 0; k < p->data.size(); ++k) {
                        mom.data[k] = kBeta1 * mom.data[k] + (1.0 - kBeta1) * g.data[k];
                        vel.data[k] = kBeta2 * vel.data[k] + (1.0 - kBeta2) * g.data[k] * g.data[k];
                        const Scalar mh = mom.data[k] / bc1;
                        const Scalar vh = vel.data[k] / bc2;
                        p->data[k] -= cfg.lr * mh / (std::sqrt(vh) + kEps);
                    }
                }
            }
        }
        report.epoch_loss.push_back(loss_sum / static_cast<Scalar>(order.size()));
        report.epoch_accuracy.push_back(evaluate(model, train_set));
    }
    report.final_holdout_accuracy = evaluate(model, holdout);
    return report;
}

std::string TrainReport::to_json() const {
    nlohmann::json j;
    j["epoch_loss"] = epoch_loss;
    j["epoch_accuracy"] = epoch_accuracy;
    j["final_holdout_accuracy"] = final_holdout_accuracy;
    j["model_seed"] = model_seed;
    j["config"] = nlohmann::json::parse(config_json);
    return j.dump(2);
}

}  // namespace himix::trainer
