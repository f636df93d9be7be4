#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "trustsum/corpus.hpp"
#include "trustsum/lexicon.hpp"
#include "trustsum/model.hpp"
#include "trustsum/sampling.hpp"

namespace trustsum {

namespace detail {

inline std::unordered_set<std::string> token_set(std::span<const int> ids, const Vocab& vocab) {
    std::unordered_set<std::string> set;
    for (int id : ids) set.insert(vocab.token_of(id));
    return set;
}

}  // namespace detail

// Presence-based severity vector: category c is active at its lexicon
// severity iff any of its terms occurs in the document.
inline RiskContext extract_risk_context(std::span<const int> document, const Vocab& vocab,
                                        const RiskLexicon& lexicon) {
    return context_from_tokens(detail::token_set(document, vocab), lexicon);
}

// Omission penalty R(Y, r): active severities whose categories the summary
// never mentions. Lower is better.
inline double risk_score(std::span<const int> summary, const RiskContext& context,
                         const Vocab& vocab, const RiskLexicon& lexicon) {
    return risk_score_from_tokens(detail::token_set(summary, vocab), context, lexicon);
}

inline std::vector<std::string> uncovered_categories(std::span<const int> summary,
                                                     const RiskContext& context, const Vocab& vocab,
                                                     const RiskLexicon& lexicon) {
    return uncovered_categories_from_tokens(detail::token_set(summary, vocab), context, lexicon);
}

// One Monte-Carlo summary draw. Tokens always carry the terminal EOS; a draw
// truncated at max_len gets EOS appended so that log_prob and the gradient
// path stay well-defined (boundary effect, negligible with a generous
// max_len).
struct RiskSample {
    std::vector<int> tokens;
    double log_prob = 0.0;
    double risk = 0.0;
    double weight = 0.0;  // 1/S for sampled draws; outcome probability in enumeration tests
};

struct ExpectedRisk {
    double estimate = 0.0;
    std::vector<RiskSample> samples;
};

// Monte-Carlo expected-risk estimate: mean R over S top-k ancestral samples from
// the point-estimate model (dropout off). Sample s uses decode seed
// mix_seed(seed, s). The draw length is capped one below the context bound so
// a sample that spends its whole budget can still be scored with its EOS.
inline ExpectedRisk expected_risk(const Params& params, const ModelConfig& config,
                                  std::span<const int> document, const RiskContext& context,
                                  const Vocab& vocab, const RiskLexicon& lexicon, int n_samples,
                                  int k, int max_len, std::uint64_t seed) {
    if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
    const int room = config.ctx_len - 3 - static_cast<int>(document.size());
    if (room < 1) throw std::runtime_error("context overflow");
    ExpectedRisk result;
    result.samples.reserve(static_cast<std::size_t>(n_samples));
    const double weight = 1.0 / n_samples;
    for (int s = 0; s < n_samples; ++s) {
        DecodeConfig decode_config;
        decode_config.strategy = DecodeStrategy::kTopK;
        decode_config.k = k;
        decode_config.max_len = std::min(max_len, room);
        decode_config.seed = mix_seed(seed, static_cast<std::uint64_t>(s));
        RiskSample sample;
        sample.tokens = decode(params, config, document, decode_config);
        sample.tokens.push_back(kEosId);
        sample.risk = risk_score(sample.tokens, context, vocab, lexicon);
        sample.log_prob = sequence_log_prob(params, config, document, sample.tokens);
        sample.weight = weight;
        result.estimate += weight * sample.risk;
        result.samples.push_back(std::move(sample));
    }
    return result;
}

inline double mean_risk_baseline(const std::vector<RiskSample>& samples) {
    if (samples.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& sample : samples) sum += sample.risk;
    return sum / static_cast<double>(samples.size());
}

// Score-function estimator for gamma * grad E[R]: accumulates
// gamma * sum_s weight_s * (R_s - baseline) * grad log P(Y_s | X). The log P
// gradient is the negated NLL gradient, so each sample is one backward pass
// with nll_weight = -gamma * weight_s * (R_s - baseline).
inline void accumulate_risk_gradient(const Params& params, const ModelConfig& config,
                                     std::span<const int> document,
                                     const std::vector<RiskSample>& samples, double baseline,
                                     double gamma, std::vector<double>& grad) {
    if (grad.size() != param_count(config)) throw std::invalid_argument("gradient buffer size mismatch");
    for (const auto& sample : samples) {
        const double coeff = gamma * sample.weight * (sample.risk - baseline);
        if (coeff == 0.0) continue;
        const BackwardResult res =
            backward(params, config, document, sample.tokens, nullptr, -coeff, 0.0);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += res.grad[i];
    }
}

inline std::vector<double> risk_gradient(const Params& params, const ModelConfig& config,
                                         std::span<const int> document,
                                         const std::vector<RiskSample>& samples, double baseline,
                                         double gamma) {
    std::vector<double> grad(param_count(config), 0.0);
    accumulate_risk_gradient(params, config, document, samples, baseline, gamma, grad);
    return grad;
}

}  // namespace trustsum
