#include <chrono>
#include <cstdio>
#include "himix/decoder.hpp"
#include "himix/trainer.hpp"
using namespace himix;
using namespace himix::decoder;
using namespace himix::trainer;

int main() {
    TaskSet train_set = gen_task(1, 8, 4, 2000, 32);
    TaskSet holdout = gen_task(2, 8, 4, 500, 32);
    for (PEKind pe : {PEKind::Rotary, PEKind::None}) {
        for (Variant v : {Variant::HimixDedicated, Variant::Vanilla}) {
            for (std::uint64_t seed : {12ULL, 5ULL, 99ULL}) {
                if (v == Variant::Vanilla && seed == 99ULL) continue;
                ModelConfig cfg;
                cfg.n_layers = 2; cfg.d_model = 64; cfg.d_vision = 32; cfg.n_heads = 4;
                cfg.d_ffn = 256; cfg.vocab = train_set.vocab.size();
                cfg.variant = v; cfg.seed = seed; cfg.pe_scheme = pe;
                Model m = init_model(cfg);
                TrainConfig tc; tc.epochs = 16; tc.lr = 3e-3; tc.batch_size = 32; tc.shuffle_seed = 7;
                auto t0 = std::chrono::steady_clock::now();
                TrainReport r = train(m, train_set, holdout, tc);
                auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                double zeroed = evaluate(m, zero_vision_copy(holdout));
                printf("pe=%s %s seed=%llu: holdout=%.3f zeroed=%.3f lossN=%.4f t=%.0fs\n",
                       to_string(pe).c_str(), to_string(v).c_str(), (unsigned long long)seed,
                       r.final_holdout_accuracy, zeroed, r.epoch_loss.back(), dt);
                fflush(stdout);
            }
        }
    }
    return 0;
}
