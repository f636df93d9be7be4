#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "trustsum/corpus.hpp"
#include "trustsum/lexicon.hpp"
#include "trustsum/metrics.hpp"
#include "trustsum/model.hpp"
#include "trustsum/risk.hpp"
#include "trustsum/sampling.hpp"
#include "trustsum/uncertainty.hpp"

namespace trustsum {

struct TrainConfig {
    double lambda = 0.01;  // entropy-term coefficient; signed, negative = entropy bonus
    double gamma = 0.1;    // risk-term coefficient
    double lr = 1e-3;
    int epochs = 1;
    int batch_size = 8;
    int s_risk = 4;  // risk samples per document per step
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (s_risk < 1) throw std::invalid_argument("s_risk must be >= 1");
        if (gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw std::invalid_argument("betas must be in [0,1)");
        if (!(eps > 0.0)) throw std::invalid_argument("eps must be > 0");
    }
};

inline TrainConfig train_config_from_json(const nlohmann::json& root, TrainConfig config = {}) {
    static const std::unordered_set<std::string> known = {"lambda", "gamma",  "lr",    "epochs", "batch_size",
                                                          "s_risk", "seed",   "beta1", "beta2",  "eps"};
    if (!root.is_object()) throw std::runtime_error("train config must be a JSON object");
    for (const auto& [key, value] : root.items()) {
        if (!known.count(key)) throw std::runtime_error("unknown train config key: " + key);
        (void)value;
    }
    if (root.contains("lambda")) config.lambda = root["lambda"].get<double>();
    if (root.contains("gamma")) config.gamma = root["gamma"].get<double>();
    if (root.contains("lr")) config.lr = root["lr"].get<double>();
    if (root.contains("epochs")) config.epochs = root["epochs"].get<int>();
    if (root.contains("batch_size")) config.batch_size = root["batch_size"].get<int>();
    if (root.contains("s_risk")) config.s_risk = root["s_risk"].get<int>();
    if (root.contains("seed")) config.seed = root["seed"].get<std::uint64_t>();
    if (root.contains("beta1")) config.beta1 = root["beta1"].get<double>();
    if (root.contains("beta2")) config.beta2 = root["beta2"].get<double>();
    if (root.contains("eps")) config.eps = root["eps"].get<double>();
    config.validate();
    return config;
}

inline TrainConfig load_train_config(const std::string& path, TrainConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open train config: " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed train config JSON in " + path + ": " + e.what());
    }
    return train_config_from_json(root, base);
}

// ---------------------------------------------------------------------------
// objective composition

struct LossBreakdown {
    double nll = 0.0;
    double entropy_term = 0.0;
    double risk_term = 0.0;
    double total = 0.0;
};

// Zero coefficients short-circuit so degenerate compositions are bit-exact
// (0 * inf would otherwise poison them).
inline double total_loss(double nll, double entropy_term, double lambda) {
    return lambda == 0.0 ? nll : nll + lambda * entropy_term;
}

inline double joint_loss(double total, double risk_estimate, double gamma) {
    return gamma == 0.0 ? total : total + gamma * risk_estimate;
}

// Per-pair teacher-forced negative log-likelihood in nats (summed over the
// summary tokens including EOS).
inline double nll_loss(const Params& params, const ModelConfig& config,
                       std::span<const int> document, std::span<const int> summary_with_eos) {
    return -sequence_log_prob(params, config, document, summary_with_eos);
}

// Sum of predictive entropies at the teacher-forced target positions,
// evaluated on gold prefixes.
inline double entropy_term(const Params& params, const ModelConfig& config,
                           std::span<const int> document, std::span<const int> summary_with_eos) {
    if (summary_with_eos.empty() || summary_with_eos.back() != kEosId)
        throw std::invalid_argument("summary must terminate with EOS");
    const std::vector<int> prefix = build_prefix(document, summary_with_eos);
    const std::vector<Distribution> dists = forward(params, config, prefix);
    const std::size_t base = document.size() + 1;
    double sum = 0.0;
    for (std::size_t j = 0; j < summary_with_eos.size(); ++j) sum += token_entropy(dists[base + j]);
    return sum;
}

// ---------------------------------------------------------------------------
// training loop

struct EpochStats {
    LossBreakdown loss;       // per-pair means over the epoch's training passes
    double per_token_nll = 0.0;
    double bleu = 0.0;        // greedy-decode metrics on the training pairs
    double rouge1 = 0.0;
    double rouge2 = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    double wall_seconds = 0.0;
};

inline std::string history_csv(const TrainHistory& history) {
    std::string out = "epoch,nll,entropy_term,risk_term,total,bleu,rouge1,rouge2\n";
    for (std::size_t e = 0; e < history.epochs.size(); ++e) {
        const EpochStats& s = history.epochs[e];
        out += std::to_string(e + 1);
        out += "," + format_fixed(s.loss.nll);
        out += "," + format_fixed(s.loss.entropy_term);
        out += "," + format_fixed(s.loss.risk_term);
        out += "," + format_fixed(s.loss.total);
        out += "," + format_fixed(100.0 * s.bleu);
        out += "," + format_fixed(100.0 * s.rouge1);
        out += "," + format_fixed(100.0 * s.rouge2);
        out += "\n";
    }
    return out;
}

struct TrainResult {
    Params params;
    TrainHistory history;
};

// Named sub-streams of the training seed.
constexpr std::uint64_t kShuffleStream = 11;
constexpr std::uint64_t kDropoutStream = 12;
constexpr std::uint64_t kRiskStream = 13;

constexpr int kRiskSampleCap = 16;  // max tokens per Monte-Carlo risk draw
constexpr int kEvalDecodeCap = 20;  // max tokens per history-eval greedy decode

// Greedy (or seeded top-k) decode of every pair's document; per-pair max_len
// is capped by the remaining context room, which the fit precondition keeps
// >= 1. Sampling decodes derive per-pair seeds from the base seed.
inline std::vector<std::vector<int>> decode_corpus(const Params& params, const ModelConfig& config,
                                                   const std::vector<Pair>& pairs,
                                                   DecodeConfig base, int len_cap) {
    std::vector<std::vector<int>> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        DecodeConfig decode_config = base;
        const int room = config.ctx_len - 2 - static_cast<int>(pairs[i].document.size());
        if (room < 1) throw std::runtime_error("context overflow");
        decode_config.max_len = std::min(len_cap, room);
        if (base.strategy == DecodeStrategy::kTopK) decode_config.seed = mix_seed(base.seed, i);
        out.push_back(decode(params, config, pairs[i].document, decode_config));
    }
    return out;
}

// Adam over seeded-shuffled mini-batches of the joint objective
// nll + lambda * entropy + gamma * expected risk. Per-pair losses are
// averaged within each batch. One fresh dropout draw per example per step
// carries the training-time posterior stochasticity; risk sampling runs on
// the point-estimate model (dropout off) at full vocabulary width. A
// non-finite loss aborts with the epoch/step position. Deterministic given
// (corpus, configs).
inline TrainResult train(const Corpus& corpus, ModelConfig model_config, const TrainConfig& config,
                         const RiskLexicon& lexicon = default_lexicon()) {
    const auto t_start = std::chrono::steady_clock::now();
    config.validate();
    if (corpus.pairs.empty()) throw std::invalid_argument("empty corpus");
    if (model_config.vocab_size == 0) model_config.vocab_size = corpus.vocab.size();
    if (model_config.vocab_size != corpus.vocab.size())
        throw std::invalid_argument("model vocab_size does not match corpus vocabulary");
    model_config.validate();

    const int n_pairs = static_cast<int>(corpus.pairs.size());
    std::vector<std::vector<int>> targets(static_cast<std::size_t>(n_pairs));
    std::vector<RiskContext> contexts(static_cast<std::size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) {
        const Pair& pair = corpus.pairs[static_cast<std::size_t>(i)];
        targets[static_cast<std::size_t>(i)] = pair.summary;
        targets[static_cast<std::size_t>(i)].push_back(kEosId);
        const int need = 3 + static_cast<int>(pair.document.size()) +
                         static_cast<int>(pair.summary.size());
        if (need > model_config.ctx_len)
            throw std::runtime_error("pair " + pair.id + " does not fit context");
        if (config.gamma > 0.0)
            contexts[static_cast<std::size_t>(i)] =
                extract_risk_context(pair.document, corpus.vocab, lexicon);
    }

    Params params = init_params(model_config);
    const std::size_t n_params = params.flat.size();
    std::vector<double> adam_m(n_params, 0.0), adam_v(n_params, 0.0), grad(n_params, 0.0);

    const std::uint64_t shuffle_seed = mix_seed(config.seed, kShuffleStream);
    const std::uint64_t dropout_seed = mix_seed(config.seed, kDropoutStream);
    const std::uint64_t risk_seed = mix_seed(config.seed, kRiskStream);
    std::uint64_t dropout_counter = 0;
    std::uint64_t risk_counter = 0;
    long long adam_t = 0;

    TrainResult result;
    result.history.epochs.reserve(static_cast<std::size_t>(config.epochs));

    std::vector<int> order(static_cast<std::size_t>(n_pairs));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (int i = 0; i < n_pairs; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng shuffle_rng(mix_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double nll_sum = 0.0, entropy_sum = 0.0, risk_sum = 0.0;
        long long token_count = 0;

        for (int start = 0, step = 0; start < n_pairs; start += config.batch_size, ++step) {
            const int end = std::min(start + config.batch_size, n_pairs);
            const int batch_n = end - start;
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            try {
                for (int b = start; b < end; ++b) {
                    const int idx = order[static_cast<std::size_t>(b)];
                    const Pair& pair = corpus.pairs[static_cast<std::size_t>(idx)];
                    const std::vector<int>& y = targets[static_cast<std::size_t>(idx)];

                    DropoutMask mask;
                    const DropoutMask* mask_ptr = nullptr;
                    if (model_config.dropout_rate > 0.0) {
                        mask = sample_posterior_draw(model_config, mix_seed(dropout_seed, ++dropout_counter));
                        mask_ptr = &mask;
                    }
                    const BackwardResult res =
                        backward(params, model_config, pair.document, y, mask_ptr, 1.0, config.lambda);
                    for (std::size_t i = 0; i < n_params; ++i) grad[i] += res.grad[i];
                    nll_sum += res.nll;
                    entropy_sum += res.entropy_sum;
                    token_count += static_cast<long long>(y.size());
                    double pair_loss = total_loss(res.nll, res.entropy_sum, config.lambda);

                    if (config.gamma > 0.0 &&
                        contexts[static_cast<std::size_t>(idx)].max_severity() > 0.0) {
                        const int room = model_config.ctx_len - 2 - static_cast<int>(pair.document.size());
                        const ExpectedRisk er = expected_risk(
                            params, model_config, pair.document, contexts[static_cast<std::size_t>(idx)],
                            corpus.vocab, lexicon, config.s_risk, model_config.vocab_size,
                            std::min(kRiskSampleCap, room), mix_seed(risk_seed, ++risk_counter));
                        accumulate_risk_gradient(params, model_config, pair.document, er.samples,
                                                 mean_risk_baseline(er.samples), config.gamma, grad);
                        risk_sum += er.estimate;
                        pair_loss = joint_loss(pair_loss, er.estimate, config.gamma);
                    }
                    batch_loss += pair_loss;
                }
            } catch (const std::exception& e) {
                throw std::runtime_error("training diverged at epoch " + std::to_string(epoch + 1) +
                                         ", step " + std::to_string(step + 1) + ": " + e.what());
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                         std::to_string(epoch + 1) + ", step " +
                                         std::to_string(step + 1));

            const double inv_batch = 1.0 / batch_n;
            ++adam_t;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam_t));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam_t));
            for (std::size_t i = 0; i < n_params; ++i) {
                const double gi = grad[i] * inv_batch;
                adam_m[i] = config.beta1 * adam_m[i] + (1.0 - config.beta1) * gi;
                adam_v[i] = config.beta2 * adam_v[i] + (1.0 - config.beta2) * gi * gi;
                params.flat[i] -= config.lr * (adam_m[i] / bc1) / (std::sqrt(adam_v[i] / bc2) + config.eps);
            }
        }

        EpochStats stats;
        stats.loss.nll = nll_sum / n_pairs;
        stats.loss.entropy_term = entropy_sum / n_pairs;
        stats.loss.risk_term = risk_sum / n_pairs;
        stats.loss.total = joint_loss(total_loss(stats.loss.nll, stats.loss.entropy_term, config.lambda),
                                      stats.loss.risk_term, config.gamma);
        stats.per_token_nll = nll_sum / static_cast<double>(token_count);

        const std::vector<std::vector<int>> candidates =
            decode_corpus(params, model_config, corpus.pairs, DecodeConfig{}, kEvalDecodeCap);
        std::vector<std::pair<std::vector<int>, std::vector<int>>> scored;
        scored.reserve(corpus.pairs.size());
        for (std::size_t i = 0; i < corpus.pairs.size(); ++i)
            scored.emplace_back(candidates[i], corpus.pairs[i].summary);
        const MetricReport report = evaluate_corpus(scored);
        stats.bleu = report.bleu;
        stats.rouge1 = report.rouge1_f;
        stats.rouge2 = report.rouge2_f;
        result.history.epochs.push_back(stats);
    }

    result.params = std::move(params);
    result.history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

// ---------------------------------------------------------------------------
// gradient checking

struct GradCheckFailure {
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::size_t n_params = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::vector<GradCheckFailure> failures;  // entries above tolerance, capped at 20
    double tolerance = 0.0;

    bool passed() const { return failures.empty(); }
};

inline ModelConfig grad_check_default_config() {
    ModelConfig config;
    config.vocab_size = 12;
    config.d_model = 8;
    config.n_heads = 2;
    config.ffn_dim = 16;
    config.ctx_len = 32;
    config.dropout_rate = 0.1;
    config.seed = 5;
    return config;
}

// Central finite differences (step 1e-5) against backward() for the joint
// objective on a seeded fixture. The dropout mask is drawn once and held
// fixed. The risk term enters through its differentiable surrogate: a frozen
// sample set with fixed risks, scored as gamma * sum_s w_s (R_s - b) log P(Y_s).
inline GradCheckReport grad_check(const ModelConfig& config, double tolerance, double lambda = 0.0,
                                  double gamma = 0.0, std::uint64_t seed = 17) {
    config.validate();
    const std::size_t n_params = param_count(config);
    if (n_params > 5000) throw std::invalid_argument("grad check config too large (> 5000 params)");
    const int K = config.vocab_size;

    Rng fixture_rng(mix_seed(seed, 21));
    std::vector<int> document(6);
    for (int& id : document) id = static_cast<int>(fixture_rng.below(static_cast<std::uint64_t>(K)));
    std::vector<int> summary(3);
    for (int& id : summary) id = static_cast<int>(fixture_rng.below(static_cast<std::uint64_t>(K)));
    summary.push_back(kEosId);

    DropoutMask mask;
    const DropoutMask* mask_ptr = nullptr;
    if (config.dropout_rate > 0.0) {
        mask = sample_posterior_draw(config, mix_seed(seed, 23));
        mask_ptr = &mask;
    }

    std::vector<RiskSample> frozen;
    if (gamma != 0.0) {
        const double risks[3] = {0.7, 0.2, 0.9};
        for (int s = 0; s < 3; ++s) {
            RiskSample sample;
            const int len = 2 + s;
            for (int j = 0; j < len; ++j)
                sample.tokens.push_back(static_cast<int>(fixture_rng.below(static_cast<std::uint64_t>(K))));
            sample.tokens.push_back(kEosId);
            sample.risk = risks[s];
            sample.weight = 1.0 / 3.0;
            frozen.push_back(std::move(sample));
        }
    }
    const double baseline = mean_risk_baseline(frozen);

    Params params = init_params(config);

    // nll + lambda * entropy at the target positions of one masked pass,
    // reproducing backward()'s arithmetic exactly.
    auto pair_objective = [&](const Params& theta, std::span<const int> doc,
                              std::span<const int> target, const DropoutMask* m) {
        const std::vector<int> prefix = build_prefix(doc, target);
        const detail::BlockCache cache = detail::run_forward(theta, config, prefix, m);
        const std::size_t base = doc.size() + 1;
        double nll = 0.0, entropy = 0.0;
        for (std::size_t j = 0; j < target.size(); ++j) {
            const double* probs = cache.probs.data() + (base + j) * static_cast<std::size_t>(K);
            nll -= std::log(std::max(probs[target[j]], 1e-300));
            for (int i = 0; i < K; ++i)
                if (probs[i] > 0.0) entropy -= probs[i] * std::log(probs[i]);
        }
        return std::make_pair(nll, entropy);
    };

    auto objective = [&](const Params& theta) {
        const auto [nll, entropy] = pair_objective(theta, document, summary, mask_ptr);
        double value = total_loss(nll, entropy, lambda);
        for (const RiskSample& sample : frozen) {
            const auto [sample_nll, sample_entropy] = pair_objective(theta, document, sample.tokens, nullptr);
            (void)sample_entropy;
            value += gamma * sample.weight * (sample.risk - baseline) * (-sample_nll);
        }
        return value;
    };

    std::vector<double> analytic = backward(params, config, document, summary, mask_ptr, 1.0, lambda).grad;
    if (gamma != 0.0)
        accumulate_risk_gradient(params, config, document, frozen, baseline, gamma, analytic);

    GradCheckReport report;
    report.n_params = n_params;
    report.tolerance = tolerance;
    const double h = 1e-5;
    for (std::size_t i = 0; i < n_params; ++i) {
        const double saved = params.flat[i];
        params.flat[i] = saved + h;
        const double f_plus = objective(params);
        params.flat[i] = saved - h;
        const double f_minus = objective(params);
        params.flat[i] = saved;
        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double rel =
            std::fabs(analytic[i] - numeric) / std::max(1e-5, std::fabs(analytic[i]) + std::fabs(numeric));
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        if (rel > tolerance && report.failures.size() < 20)
            report.failures.push_back({i, analytic[i], numeric, rel});
    }
    return report;
}

}  // namespace trustsum
