#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "trustsum/common.hpp"
#include "trustsum/model.hpp"

namespace trustsum {

enum class DecodeStrategy { kGreedy, kTopK };

struct DecodeConfig {
    DecodeStrategy strategy = DecodeStrategy::kGreedy;
    int k = 1;            // sampling width when strategy is top-k
    int max_len = 16;     // emitted tokens before forced stop
    std::uint64_t seed = 0;
    int s_mc = 1;         // posterior draws per step for annotation
    bool annotate = true;

    void validate(int vocab_size) const {
        if (k < 1 || k > vocab_size) throw std::invalid_argument("k must be in [1, vocab size]");
        if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
        if (s_mc < 1) throw std::invalid_argument("s_mc must be >= 1");
    }
};

// Keep the k highest-probability ids (ties broken toward the lower id), zero
// the rest, renormalize. k = K is the identity; k = 1 is one-hot argmax.
inline Distribution truncate_top_k(const Distribution& dist, int k) {
    const int K = static_cast<int>(dist.size());
    if (k < 1 || k > K) throw std::invalid_argument("k must be in [1, K]");
    if (k == K) return dist;
    std::vector<int> order(dist.size());
    std::iota(order.begin(), order.end(), 0);
    // stable sort over ascending ids + descending probability = lower-id ties
    std::stable_sort(order.begin(), order.end(),
                     [&dist](int a, int b) { return dist[static_cast<std::size_t>(a)] > dist[static_cast<std::size_t>(b)]; });
    Distribution out(dist.size(), 0.0);
    double kept = 0.0;
    for (int i = 0; i < k; ++i) kept += dist[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    if (kept <= 0.0) throw std::invalid_argument("top-k mass is zero");
    for (int i = 0; i < k; ++i) {
        const auto id = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
        out[id] = dist[id] / kept;
    }
    return out;
}

// First index reaching the maximum, matching truncate_top_k's tie-break.
inline int argmax_token(const Distribution& dist) {
    int best = 0;
    for (int j = 1; j < static_cast<int>(dist.size()); ++j)
        if (dist[static_cast<std::size_t>(j)] > dist[static_cast<std::size_t>(best)]) best = j;
    return best;
}

// Inverse-CDF draw: smallest id whose cumulative mass exceeds u.
inline int sample_from(const Distribution& dist, double u) {
    double cum = 0.0;
    int last_positive = -1;
    for (int j = 0; j < static_cast<int>(dist.size()); ++j) {
        const double p = dist[static_cast<std::size_t>(j)];
        if (p <= 0.0) continue;
        last_positive = j;
        cum += p;
        if (u < cum) return j;
    }
    if (last_positive < 0) throw std::invalid_argument("cannot sample from zero distribution");
    return last_positive;  // guards the u ~ 1, cum < 1 rounding edge
}

struct DecodeOutput {
    std::vector<int> tokens;               // emitted content tokens, EOS stripped
    std::vector<Distribution> step_dists;  // full next-token distribution per emitted token
    bool terminated = false;               // EOS seen before max_len ran out
};

// Ancestral decoding from the point-estimate model (no dropout): greedy
// argmax, or seeded sampling from the top-k-truncated distribution. Greedy
// consumes no randomness, so it coincides with top-k at k = 1 for any seed.
inline DecodeOutput decode_traced(const Params& params, const ModelConfig& config,
                                  std::span<const int> document, const DecodeConfig& decode_config) {
    decode_config.validate(config.vocab_size);
    if (static_cast<int>(document.size()) + 2 + decode_config.max_len > config.ctx_len)
        throw std::runtime_error("context overflow");

    std::vector<int> prefix = build_prefix(document, {});
    Rng rng(decode_config.seed);
    DecodeOutput out;
    for (int step = 0; step < decode_config.max_len; ++step) {
        Distribution dist = forward_last(params, config, prefix);
        int chosen;
        if (decode_config.strategy == DecodeStrategy::kGreedy) {
            chosen = argmax_token(dist);
        } else {
            const Distribution truncated = truncate_top_k(dist, decode_config.k);
            chosen = sample_from(truncated, rng.uniform01());
        }
        if (chosen == kEosId) {
            out.terminated = true;
            break;
        }
        out.tokens.push_back(chosen);
        out.step_dists.push_back(std::move(dist));
        prefix.push_back(chosen);
    }
    return out;
}

inline std::vector<int> decode(const Params& params, const ModelConfig& config,
                               std::span<const int> document, const DecodeConfig& decode_config) {
    return decode_traced(params, config, document, decode_config).tokens;
}

}  // namespace trustsum
