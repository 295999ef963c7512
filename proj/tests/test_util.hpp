#pragma once

#include "mope/data.hpp"
#include "mope/model.hpp"

namespace mope::testing {

// Small model/dataset pair used across suites; fast enough for exhaustive
// oracles.
inline ModelConfig tiny_model_config(std::uint64_t seed = 42) {
    ModelConfig mc;
    mc.d = 16;
    mc.n_heads = 2;
    mc.d_ff = 16;
    mc.n_layers_v = 2;
    mc.n_layers_t = 2;
    mc.vocab_v = 16;
    mc.vocab_t = 16;
    mc.seq_v = 4;
    mc.seq_t = 4;
    mc.e = 8;
    mc.seed = seed;
    return mc;
}

inline SyntheticSpec tiny_data_spec(std::uint64_t seed = 42) {
    SyntheticSpec ds;
    ds.n_train = 32;
    ds.n_val = 16;
    ds.n_test = 16;
    ds.n_concepts = 64;
    ds.vocab_v = 16;
    ds.vocab_t = 16;
    ds.seq_v = 4;
    ds.seq_t = 4;
    ds.noise_rate = 0.02;
    ds.seed = seed;
    return ds;
}

// The desk-scale teacher configuration used by the end-to-end suites.
inline ModelConfig desk_model_config(std::uint64_t seed = 42) {
    ModelConfig mc;
    mc.d = 64;
    mc.n_heads = 4;
    mc.n_layers_v = 4;
    mc.n_layers_t = 4;
    mc.vocab_v = 64;
    mc.vocab_t = 64;
    mc.seq_v = 8;
    mc.seq_t = 8;
    mc.e = 64;
    mc.seed = seed;
    return mc;
}

inline SyntheticSpec desk_data_spec(std::uint64_t seed = 42) {
    SyntheticSpec ds;
    ds.seed = seed;
    return ds;  // defaults: 256/128/128 pairs, vocab 64, seq 8, noise 0.02
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace mope::testing
