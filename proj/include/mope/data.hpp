#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mope/common.hpp"
#include "mope/evaluation.hpp"
#include "mope/sha256.hpp"

namespace mope {

// Synthetic paired-token retrieval task. Each pair is drawn from a latent
// concept: the concept fixes a vision token template, and the text template
// is the vision template routed through fixed per-position token maps.
// Cross-modal alignment is therefore a per-position token correspondence
// that generalizes to held-out concepts. Splits take disjoint concept
// blocks, so they are disjoint by construction.
struct SyntheticSpec {
    int n_train = 256;
    int n_val = 128;
    int n_test = 128;
    int n_concepts = 512;
    int vocab_v = 64;
    int vocab_t = 64;
    int seq_v = 8;
    int seq_t = 8;
    double noise_rate = 0.02;
    std::uint64_t seed = 42;

    void validate() const {
        if (n_train < 1 || n_val < 1 || n_test < 1)
            throw_error("spec", "dataset spec: split sizes must be >= 1");
        if (noise_rate < 0.0 || noise_rate > 0.5)
            throw_error("spec", "dataset spec: noise_rate must be in [0, 0.5]");
        if (n_concepts < n_train + n_val + n_test)
            throw_error("spec", "dataset spec: need at least one concept per pair across splits");
        if (vocab_t < vocab_v)
            throw_error("spec", "dataset spec: vocab_t must be >= vocab_v for the token maps");
        if (seq_v < 1 || seq_t < 1 || vocab_v < 2 || vocab_t < 2)
            throw_error("spec", "dataset spec: vocab/sequence sizes too small");
        // Template space must be able to hold one distinct template per concept.
        if (static_cast<double>(seq_v) * std::log(static_cast<double>(vocab_v)) <
            std::log(static_cast<double>(n_concepts)))
            throw_error("spec", "dataset spec: vocab smaller than concept demand");
    }
};

struct Pair {
    std::vector<int> v;
    std::vector<int> t;
    int concept_id = 0;
};

struct Split {
    std::vector<Pair> pairs;
    std::string id;  // dataset hash + split name

    PairBatch batch() const {
        PairBatch b;
        b.v_tokens.reserve(pairs.size());
        b.t_tokens.reserve(pairs.size());
        for (const auto& p : pairs) {
            b.v_tokens.push_back(p.v);
            b.t_tokens.push_back(p.t);
        }
        return b;
    }

    PairBatch batch(const std::vector<int>& indices) const {
        PairBatch b;
        b.v_tokens.reserve(indices.size());
        b.t_tokens.reserve(indices.size());
        for (int i : indices) {
            b.v_tokens.push_back(pairs[static_cast<std::size_t>(i)].v);
            b.t_tokens.push_back(pairs[static_cast<std::size_t>(i)].t);
        }
        return b;
    }

    std::size_t size() const { return pairs.size(); }
};

struct Dataset {
    SyntheticSpec spec;
    Split train, val, test;
    std::string hash;
};

namespace detail {

inline void hash_split(Sha256& ctx, const Split& split) {
    for (const auto& p : split.pairs) {
        const auto feed = [&](const std::vector<int>& v) {
            for (int x : v) {
                const std::uint32_t u = static_cast<std::uint32_t>(x);
                ctx.update(&u, sizeof(u));
            }
        };
        feed(p.v);
        feed(p.t);
        const std::uint32_t c = static_cast<std::uint32_t>(p.concept_id);
        ctx.update(&c, sizeof(c));
    }
}

}  // namespace detail

inline std::string dataset_hash(const Dataset& ds) {
    Sha256 ctx;
    const std::string header = std::to_string(ds.spec.seed) + "/" +
                               std::to_string(ds.spec.noise_rate) + "/" +
                               std::to_string(ds.spec.n_concepts);
    ctx.update(header);
    detail::hash_split(ctx, ds.train);
    detail::hash_split(ctx, ds.val);
    detail::hash_split(ctx, ds.test);
    return ctx.hex_digest();
}

inline nlohmann::json spec_to_json(const SyntheticSpec& s) {
    return nlohmann::json{{"n_train", s.n_train},       {"n_val", s.n_val},
                          {"n_test", s.n_test},         {"n_concepts", s.n_concepts},
                          {"vocab_v", s.vocab_v},       {"vocab_t", s.vocab_t},
                          {"seq_v", s.seq_v},           {"seq_t", s.seq_t},
                          {"noise_rate", s.noise_rate}, {"seed", s.seed}};
}

inline SyntheticSpec spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.n_train = j.at("n_train").get<int>();
    s.n_val = j.at("n_val").get<int>();
    s.n_test = j.at("n_test").get<int>();
    s.n_concepts = j.at("n_concepts").get<int>();
    s.vocab_v = j.at("vocab_v").get<int>();
    s.vocab_t = j.at("vocab_t").get<int>();
    s.seq_v = j.at("seq_v").get<int>();
    s.seq_t = j.at("seq_t").get<int>();
    s.noise_rate = j.at("noise_rate").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

inline nlohmann::json dataset_to_json(const Dataset& ds) {
    const auto split_json = [](const Split& split) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : split.pairs)
            arr.push_back(nlohmann::json{{"c", p.concept_id}, {"v", p.v}, {"t", p.t}});
        return arr;
    };
    return nlohmann::json{{"spec", spec_to_json(ds.spec)},
                          {"hash", ds.hash},
                          {"splits",
                           {{"train", split_json(ds.train)},
                            {"val", split_json(ds.val)},
                            {"test", split_json(ds.test)}}}};
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
    Dataset ds;
    ds.spec = spec_from_json(j.at("spec"));
    const auto read_split = [&](const char* name, Split& split) {
        for (const auto& pj : j.at("splits").at(name)) {
            Pair p;
            p.concept_id = pj.at("c").get<int>();
            p.v = pj.at("v").get<std::vector<int>>();
            p.t = pj.at("t").get<std::vector<int>>();
            split.pairs.push_back(std::move(p));
        }
    };
    read_split("train", ds.train);
    read_split("val", ds.val);
    read_split("test", ds.test);
    ds.hash = dataset_hash(ds);
    const std::string declared = j.at("hash").get<std::string>();
    if (declared != ds.hash)
        throw_error("format", "dataset: declared hash does not match content");
    ds.train.id = ds.hash + ":train";
    ds.val.id = ds.hash + ":val";
    ds.test.id = ds.hash + ":test";
    return ds;
}

inline Dataset generate_dataset(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int total = spec.n_train + spec.n_val + spec.n_test;

    // One fixed injection vocab_v -> vocab_t shared by all positions, so the
    // cross-modal correspondence is a vocabulary-level code the encoders can
    // learn from a couple hundred pairs.
    std::vector<int> token_map;
    {
        std::vector<int> perm = rng.permutation(spec.vocab_t);
        token_map.assign(perm.begin(), perm.begin() + spec.vocab_v);
    }

    // Distinct vision template per concept.
    std::set<std::vector<int>> seen;
    std::vector<std::vector<int>> v_templates;
    v_templates.reserve(static_cast<std::size_t>(total));
    for (int c = 0; c < total; ++c) {
        std::vector<int> t(static_cast<std::size_t>(spec.seq_v));
        do {
            for (auto& x : t) x = rng.uniform_int(spec.vocab_v);
        } while (!seen.insert(t).second);
        v_templates.push_back(std::move(t));
    }

    const auto t_template = [&](int c) {
        std::vector<int> t(static_cast<std::size_t>(spec.seq_t));
        for (int p = 0; p < spec.seq_t; ++p) {
            const int vtok = v_templates[static_cast<std::size_t>(c)]
                                        [static_cast<std::size_t>(p % spec.seq_v)];
            t[static_cast<std::size_t>(p)] = token_map[static_cast<std::size_t>(vtok)];
        }
        return t;
    };

    const auto add_noise = [&](std::vector<int>& tokens, int vocab) {
        for (auto& x : tokens)
            if (rng.uniform() < spec.noise_rate) x = rng.uniform_int(vocab);
    };

    Dataset ds;
    ds.spec = spec;
    int concept_idx = 0;
    const auto fill = [&](Split& split, int count, const char* name) {
        split.pairs.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i, ++concept_idx) {
            Pair p;
            p.concept_id = concept_idx;
            p.v = v_templates[static_cast<std::size_t>(concept_idx)];
            p.t = t_template(concept_idx);
            add_noise(p.v, spec.vocab_v);
            add_noise(p.t, spec.vocab_t);
            split.pairs.push_back(std::move(p));
        }
        split.id = name;
    };
    fill(ds.train, spec.n_train, "train");
    fill(ds.val, spec.n_val, "val");
    fill(ds.test, spec.n_test, "test");

    ds.hash = dataset_hash(ds);
    ds.train.id = ds.hash + ":train";
    ds.val.id = ds.hash + ":val";
    ds.test.id = ds.hash + ":test";
    return ds;
}

}  // namespace mope
