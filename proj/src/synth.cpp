// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace moesim {

void SynthParams::validate() const {
    auto prob = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("synth: ") + name + " must be in [0,1]");
    };
    prob(stickiness, "stickiness");
    prob(layer_coupling, "layer_coupling");
    if (!(zipf_s >= 0.0)) throw ConfigError("synth: zipf_s must be >= 0");
    for (const auto& [key, values] : tag_choices)
        if (values.empty()) throw ConfigError("synth: tag '" + key + "' has no values");
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

namespace {

struct LayerModel {
    std::vector<ExpertId> rank_to_expert;
    std::vector<double> weight_by_expert;
    std::vector<double> cdf;  // over ranks
    // successors[e]: experts at this layer favoured after expert e at the previous MoE layer.
    std::vector<std::vector<ExpertId>> successors;
};

class Generator {
   public:
    Generator(const ModelSpec& spec, const SynthParams& p) : spec_(spec), p_(p), rng_(p.seed) {
        const std::uint32_t E = spec.num_experts;
        layers_.resize(spec.num_moe_layers());
        for (auto& lm : layers_) {
            lm.rank_to_expert.resize(E);
            std::iota(lm.rank_to_expert.begin(), lm.rank_to_expert.end(), 0u);
            shuffle(lm.rank_to_expert);
            lm.weight_by_expert.assign(E, 0.0);
            lm.cdf.resize(E);
            double acc = 0.0;
            for (std::uint32_t r = 0; r < E; ++r) {
                const double w = std::pow(static_cast<double>(r + 1), -p.zipf_s);
                lm.weight_by_expert[lm.rank_to_expert[r]] = w;
                acc += w;
                lm.cdf[r] = acc;
            }
            for (auto& c : lm.cdf) c /= acc;
            lm.successors.resize(E);
            const std::uint32_t succ_len = std::min<std::uint32_t>(spec.top_k, E);
            for (auto& s : lm.successors) s = sample_distinct(succ_len, E);
        }
    }

    TraceSet run() {
        TraceSet ts;
        ts.model = spec_;
        ts.requests.reserve(p_.num_requests);
        char id[32];
        for (std::uint32_t i = 0; i < p_.num_requests; ++i) {
            RequestTrace r;
            std::snprintf(id, sizeof(id), "req-%06u", i);
            r.request_id = id;
            for (const auto& [key, values] : p_.tag_choices) r.tags[key] = values[uniform_below(rng_, values.size())];
            const std::uint32_t prefill = p_.prefill_mirrors_decode ? 0 : p_.prefill_tokens;
            const std::uint32_t total = prefill + p_.tokens_per_request;
            r.tokens.reserve(p_.prefill_mirrors_decode ? 2 * total : total);
            const TokenStep* prev = nullptr;
            for (std::uint32_t t = 0; t < total; ++t) {
                r.tokens.push_back(next_token(prev, t < prefill ? Phase::prefill : Phase::decode));
                prev = &r.tokens.back();
            }
            if (p_.prefill_mirrors_decode) {
                std::vector<TokenStep> mirrored = r.tokens;
                for (auto& t : mirrored) t.phase = Phase::prefill;
                r.tokens.insert(r.tokens.begin(), mirrored.begin(), mirrored.end());
            }
            ts.requests.push_back(std::move(r));
        }
        return ts;
    }

   private:
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_below(rng_, i)]);
    }

    std::vector<ExpertId> sample_distinct(std::uint32_t k, std::uint32_t n) {
        std::vector<ExpertId> all(n);
        std::iota(all.begin(), all.end(), 0u);
        for (std::uint32_t i = 0; i < k; ++i) std::swap(all[i], all[i + uniform_below(rng_, n - i)]);
        all.resize(k);
        return all;
    }

    static bool contains(const std::vector<ExpertId>& v, ExpertId e) { return std::find(v.begin(), v.end(), e) != v.end(); }

    ExpertId popular(const LayerModel& lm, const std::vector<ExpertId>& chosen) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            const double u = unit_uniform(rng_);
            const auto it = std::upper_bound(lm.cdf.begin(), lm.cdf.end(), u);
            const std::size_t rank = std::min<std::size_t>(static_cast<std::size_t>(it - lm.cdf.begin()), lm.cdf.size() - 1);
            const ExpertId e = lm.rank_to_expert[rank];
            if (!contains(chosen, e)) return e;
        }
        // Heavy skew with large top_k: draw exactly from the remaining mass.
        double remaining = 0.0;
        for (ExpertId e = 0; e < spec_.num_experts; ++e)
            if (!contains(chosen, e)) remaining += lm.weight_by_expert[e];
        double u = unit_uniform(rng_) * remaining;
        ExpertId last = 0;
        for (ExpertId e = 0; e < spec_.num_experts; ++e) {
            if (contains(chosen, e)) continue;
            last = e;
            u -= lm.weight_by_expert[e];
            if (u < 0.0) return e;
        }
        return last;
    }

    TokenStep next_token(const TokenStep* prev, Phase phase) {
        TokenStep tok;
        tok.phase = phase;
        tok.selections.resize(layers_.size());
        std::vector<ExpertId> pool;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const LayerModel& lm = layers_[l];
            auto& chosen = tok.selections[l];
            chosen.reserve(spec_.top_k);
            while (chosen.size() < spec_.top_k) {
                if (prev && p_.stickiness > 0.0 && unit_uniform(rng_) < p_.stickiness) {
                    pool.clear();
                    for (ExpertId e : prev->selections[l])
                        if (!contains(chosen, e)) pool.push_back(e);
                    if (!pool.empty()) {
                        chosen.push_back(pool[uniform_below(rng_, pool.size())]);
                        continue;
                    }
                }
                if (l > 0 && p_.layer_coupling > 0.0 && unit_uniform(rng_) < p_.layer_coupling) {
                    const auto& below = tok.selections[l - 1];
                    const ExpertId anchor = below[uniform_below(rng_, below.size())];
                    const auto& succ = lm.successors[anchor];
                    const ExpertId e = succ[uniform_below(rng_, succ.size())];
                    if (!contains(chosen, e)) {
                        chosen.push_back(e);
                        continue;
                    }
                }
                chosen.push_back(popular(lm, chosen));
            }
        }
        for (auto& sel : tok.selections) std::sort(sel.begin(), sel.end());
        return tok;
    }

    const ModelSpec& spec_;
    const SynthParams& p_;
    std::mt19937_64 rng_;
    std::vector<LayerModel> layers_;
};

}  // namespace

TraceSet generate_synthetic(const ModelSpec& spec, const SynthParams& p) {
    spec.validate();
    p.validate();
    return Generator(spec, p).run();
}

}  // namespace moesim
