#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trustsum/risk.hpp"
#include "trustsum/sampling.hpp"
#include "trustsum/uncertainty.hpp"

namespace trustsum {

// Stream id separating annotation-time posterior draws from every other
// consumer of the decode seed.
constexpr std::uint64_t kAnnotateStream = 3;

struct RiskAnnotatedSummary {
    std::vector<int> tokens;
    std::string text;  // "[RISK:<LEVEL>] <summary tokens>"
    UncertaintyProfile uncertainty;
    RiskLevel level = RiskLevel::kNone;
    std::string risk_prompt;
    std::vector<std::string> uncovered;
    double risk = 0.0;      // equals the sum of severities of `uncovered`
    double log_prob = 0.0;  // log P(Y, EOS | X) under the point-estimate model
};

// Decode, then annotate the realized prefix step by step: per-token entropy
// of the posterior-predictive marginal (s_mc draws, or the exact
// deterministic pass when dropout is off), confidence labels, document risk
// level, and the summary's uncovered risk categories. Step t's marginal uses
// draw seeds starting at mix_seed(mix_seed(seed, annotate stream), t).
inline RiskAnnotatedSummary generate_trustworthy_summary(const Params& params,
                                                         const ModelConfig& config,
                                                         std::span<const int> document,
                                                         const Vocab& vocab,
                                                         const RiskLexicon& lexicon,
                                                         const DecodeConfig& decode_config) {
    RiskAnnotatedSummary out;
    out.tokens = decode(params, config, document, decode_config);

    const RiskContext context = extract_risk_context(document, vocab, lexicon);
    out.level = risk_level(context);
    out.risk_prompt = risk_prompt(out.level);
    out.uncovered = uncovered_categories(out.tokens, context, vocab, lexicon);
    out.risk = risk_score(out.tokens, context, vocab, lexicon);

    std::vector<int> with_eos = out.tokens;
    with_eos.push_back(kEosId);
    out.log_prob = sequence_log_prob(params, config, document, with_eos);

    if (decode_config.annotate) {
        const std::uint64_t annotate_seed = mix_seed(decode_config.seed, kAnnotateStream);
        std::vector<Distribution> marginals;
        marginals.reserve(out.tokens.size());
        std::vector<int> prefix = build_prefix(document, {});
        for (std::size_t t = 0; t < out.tokens.size(); ++t) {
            marginals.push_back(predictive_marginal(params, config, prefix, decode_config.s_mc,
                                                    mix_seed(annotate_seed, t)));
            prefix.push_back(out.tokens[t]);
        }
        out.uncertainty = profile(marginals, out.tokens, default_thresholds(config.vocab_size));
    }

    std::string body;
    for (int id : out.tokens) {
        body += ' ';
        body += vocab.token_of(id);
    }
    out.text = out.risk_prompt + body;
    return out;
}

inline nlohmann::ordered_json annotated_to_json(const RiskAnnotatedSummary& summary) {
    nlohmann::ordered_json root;
    root["text"] = summary.text;
    root["tokens"] = summary.tokens;
    root["entropies"] = summary.uncertainty.per_token_entropy;
    nlohmann::ordered_json labels = nlohmann::ordered_json::array();
    for (ConfidenceLabel label : summary.uncertainty.labels)
        labels.push_back(confidence_label_name(label));
    root["confidence_labels"] = std::move(labels);
    root["risk_level"] = risk_level_name(summary.level);
    root["risk_prompt"] = summary.risk_prompt;
    root["uncovered_categories"] = summary.uncovered;
    root["log_prob"] = summary.log_prob;
    return root;
}

}  // namespace trustsum
