#pragma once

#include <atomic>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "trustsum/annotate.hpp"
#include "trustsum/corpus.hpp"
#include "trustsum/training.hpp"

namespace trustsum {

enum class SweepKind { kLr, kTopK, kNoise };

inline const char* sweep_kind_name(SweepKind kind) {
    switch (kind) {
        case SweepKind::kLr: return "lr";
        case SweepKind::kTopK: return "topk";
        case SweepKind::kNoise: return "noise";
    }
    return "lr";
}

inline SweepKind sweep_kind_from(const std::string& name) {
    if (name == "lr") return SweepKind::kLr;
    if (name == "topk") return SweepKind::kTopK;
    if (name == "noise") return SweepKind::kNoise;
    throw std::runtime_error("unknown sweep kind: " + name);
}

inline std::vector<double> default_sweep_values(SweepKind kind) {
    switch (kind) {
        case SweepKind::kLr: return {1e-5, 3e-5, 5e-5, 1e-4, 3e-4};
        case SweepKind::kTopK: return {10, 20, 30, 40, 50, 60};
        case SweepKind::kNoise: return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    }
    return {};
}

struct CorpusSpec {
    int n_pairs = 48;
    std::uint64_t seed = 7;
    std::string lexicon_path;  // empty = built-in default lexicon
};

// A sweep point derives every stream from (spec, sweep seed): the corpus from
// mix_seed(corpus.seed, s), model init from mix_seed(model.seed, s), training
// from mix_seed(train.seed, s). The first 75% of pairs train, the rest are
// the clean held-out evaluation split.
struct SweepSpec {
    SweepKind kind = SweepKind::kLr;
    std::vector<double> values;             // empty = per-kind defaults
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    CorpusSpec corpus;
    ModelConfig model;
    TrainConfig train;
    DecodeConfig decode;
    NoiseMode noise_mode = NoiseMode::kSummarySwap;

    // The training recipe must reach the fitting regime: underfit models emit
    // template boilerplate whose overlap scores drown the clean/noisy contrast.
    SweepSpec() {
        model.ctx_len = 96;  // synthetic documents need more room than the model default
        train.lambda = 0.01;
        train.gamma = 0.0;
        train.lr = 3e-3;
        train.epochs = 240;
        train.batch_size = 8;
    }
};

struct SweepRow {
    std::string kind;
    double value = 0.0;
    std::uint64_t seed = 0;
    double bleu = 0.0;
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double mean_entropy = 0.0;
    double mean_risk = 0.0;
    double final_nll = 0.0;
    std::string flags;
};

struct SweepResult {
    SweepKind kind = SweepKind::kLr;
    std::vector<SweepRow> rows;  // ordered by (value, seed) in spec order
};

constexpr std::uint64_t kNoiseStream = 31;
constexpr std::uint64_t kDecodeStream = 32;

namespace detail {

inline std::uint64_t params_hash(const Params& params) {
    return fnv1a(params.flat.data(), params.flat.size() * sizeof(double));
}

struct TrainedPoint {
    Params params;
    double final_nll = 0.0;
    std::string error;  // empty on success
};

inline TrainedPoint train_point(const SweepSpec& spec, const Corpus& train_corpus,
                                const RiskLexicon& lexicon, std::uint64_t seed, double lr_value) {
    TrainedPoint point;
    try {
        ModelConfig model = spec.model;
        model.vocab_size = 0;
        model.seed = mix_seed(spec.model.seed, seed);
        TrainConfig train_config = spec.train;
        train_config.seed = mix_seed(spec.train.seed, seed);
        if (lr_value > 0.0) train_config.lr = lr_value;
        TrainResult result = train(train_corpus, model, train_config, lexicon);
        point.params = std::move(result.params);
        point.final_nll = result.history.epochs.back().per_token_nll;
    } catch (const std::exception& e) {
        point.error = std::string(e.what()).find("diverged") != std::string::npos ? "diverged"
                                                                                  : "error:train";
    }
    return point;
}

}  // namespace detail

// One train + evaluate per (value, seed); failures become flagged rows, never
// missing ones. Evaluation decodes greedily except in the top-k sweep, whose
// rows sample at the row's width. mean_entropy is measured on the
// deterministic greedy trajectory using the row's truncation width, so rows
// differing only in k stay comparable; mean_risk scores the evaluation
// decodes against each document's extracted risk context. flags records the
// parameter hash of the row's checkpoint.
inline SweepResult run_sweep(const SweepSpec& spec, int jobs = 1) {
    SweepSpec resolved = spec;
    if (resolved.values.empty()) resolved.values = default_sweep_values(resolved.kind);
    if (resolved.values.empty()) throw std::invalid_argument("sweep needs at least one value");
    if (resolved.seeds.empty()) throw std::invalid_argument("sweep needs at least one seed");
    for (double v : resolved.values) {
        if (resolved.kind == SweepKind::kLr && !(v > 0.0))
            throw std::invalid_argument("lr values must be > 0");
        if (resolved.kind == SweepKind::kTopK && (v < 1.0 || v != static_cast<int>(v)))
            throw std::invalid_argument("topk values must be positive integers");
        if (resolved.kind == SweepKind::kNoise && (v < 0.0 || v > 1.0))
            throw std::invalid_argument("noise values must be in [0,1]");
    }
    const RiskLexicon lexicon = resolved.corpus.lexicon_path.empty()
                                    ? default_lexicon()
                                    : load_lexicon(resolved.corpus.lexicon_path);

    const std::size_t n_values = resolved.values.size();
    const std::size_t n_seeds = resolved.seeds.size();
    SweepResult result;
    result.kind = resolved.kind;
    result.rows.assign(n_values * n_seeds, SweepRow{});

    // Per-seed shared state. The top-k sweep trains once per seed and reuses
    // the checkpoint across widths, isolating the decoding variable.
    struct SeedState {
        Corpus train_corpus;
        std::vector<Pair> eval_pairs;
        Vocab vocab;
        detail::TrainedPoint trained;  // top-k sweep only
    };
    std::vector<SeedState> seed_states(n_seeds);

    auto build_seed_state = [&](std::size_t si) {
        SeedState& state = seed_states[si];
        const std::uint64_t seed = resolved.seeds[si];
        const Corpus corpus = generate_synthetic_corpus(mix_seed(resolved.corpus.seed, seed),
                                                        resolved.corpus.n_pairs, lexicon);
        const int n_train = (3 * static_cast<int>(corpus.pairs.size())) / 4;
        state.train_corpus.vocab = corpus.vocab;
        state.train_corpus.pairs.assign(corpus.pairs.begin(), corpus.pairs.begin() + n_train);
        state.eval_pairs.assign(corpus.pairs.begin() + n_train, corpus.pairs.end());
        state.vocab = corpus.vocab;
        if (resolved.kind == SweepKind::kTopK)
            state.trained = detail::train_point(resolved, state.train_corpus, lexicon, seed, 0.0);
    };

    auto eval_row = [&](const SeedState& state, const detail::TrainedPoint& point, double value,
                        std::uint64_t seed, SweepRow& row) {
        row.kind = sweep_kind_name(resolved.kind);
        row.value = value;
        row.seed = seed;
        if (!point.error.empty()) {
            row.flags = point.error;
            return;
        }
        try {
            ModelConfig model = resolved.model;
            model.vocab_size = state.vocab.size();
            const int K = model.vocab_size;
            const int k_row = resolved.kind == SweepKind::kTopK ? static_cast<int>(value) : K;

            DecodeConfig decode_config = resolved.decode;
            if (resolved.kind == SweepKind::kTopK) {
                decode_config.strategy = DecodeStrategy::kTopK;
                decode_config.k = k_row;
                decode_config.seed = mix_seed(mix_seed(resolved.decode.seed, kDecodeStream), seed);
            } else {
                decode_config.strategy = DecodeStrategy::kGreedy;
            }
            const std::vector<std::vector<int>> candidates =
                decode_corpus(point.params, model, state.eval_pairs, decode_config, kEvalDecodeCap);

            std::vector<std::pair<std::vector<int>, std::vector<int>>> scored;
            double risk_sum = 0.0;
            double entropy_sum = 0.0;
            long long entropy_steps = 0;
            for (std::size_t i = 0; i < state.eval_pairs.size(); ++i) {
                const Pair& pair = state.eval_pairs[i];
                scored.emplace_back(candidates[i], pair.summary);
                const RiskContext context = extract_risk_context(pair.document, state.vocab, lexicon);
                risk_sum += risk_score(candidates[i], context, state.vocab, lexicon);

                DecodeConfig trace_config;  // greedy trajectory, fixed across widths
                const int room = model.ctx_len - 2 - static_cast<int>(pair.document.size());
                trace_config.max_len = std::min(kEvalDecodeCap, room);
                const DecodeOutput traced = decode_traced(point.params, model, pair.document, trace_config);
                for (const Distribution& dist : traced.step_dists) {
                    entropy_sum += token_entropy(truncate_top_k(dist, k_row));
                    ++entropy_steps;
                }
            }
            const MetricReport report = evaluate_corpus(scored);
            row.bleu = report.bleu;
            row.rouge1 = report.rouge1_f;
            row.rouge2 = report.rouge2_f;
            row.mean_entropy = entropy_steps == 0 ? 0.0 : entropy_sum / static_cast<double>(entropy_steps);
            row.mean_risk = risk_sum / static_cast<double>(state.eval_pairs.size());
            row.final_nll = point.final_nll;
            row.flags = "ok;ckpt=" + hex64(detail::params_hash(point.params));
        } catch (const std::invalid_argument&) {
            row.flags = "error:k-exceeds-vocab";
        } catch (const std::exception&) {
            row.flags = "error:decode";
        }
    };

    auto run_task = [&](std::size_t task) {
        const std::size_t vi = task / n_seeds;
        const std::size_t si = task % n_seeds;
        const double value = resolved.values[vi];
        const std::uint64_t seed = resolved.seeds[si];
        SweepRow& row = result.rows[task];
        const SeedState& state = seed_states[si];
        if (resolved.kind == SweepKind::kTopK) {
            eval_row(state, state.trained, value, seed, row);
        } else if (resolved.kind == SweepKind::kNoise) {
            NoiseSpec noise;
            noise.ratio = value;
            noise.mode = resolved.noise_mode;
            noise.seed = mix_seed(mix_seed(resolved.corpus.seed, seed), kNoiseStream);
            Corpus noisy = inject_noise(state.train_corpus, noise);
            const detail::TrainedPoint point = detail::train_point(resolved, noisy, lexicon, seed, 0.0);
            eval_row(state, point, value, seed, row);
        } else {
            const detail::TrainedPoint point =
                detail::train_point(resolved, state.train_corpus, lexicon, seed, value);
            eval_row(state, point, value, seed, row);
        }
    };

    auto parallel_for = [&](std::size_t n, auto&& fn, int workers) {
        if (workers <= 1 || n <= 1) {
            for (std::size_t i = 0; i < n; ++i) fn(i);
            return;
        }
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const int n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int w = 0; w < n_threads; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            });
        for (auto& t : pool) t.join();
    };

    parallel_for(n_seeds, build_seed_state, jobs);
    parallel_for(n_values * n_seeds, run_task, jobs);
    return result;
}

inline SweepResult sweep_lr(SweepSpec spec, int jobs = 1) {
    spec.kind = SweepKind::kLr;
    return run_sweep(spec, jobs);
}

inline SweepResult sweep_topk(SweepSpec spec, int jobs = 1) {
    spec.kind = SweepKind::kTopK;
    return run_sweep(spec, jobs);
}

inline SweepResult sweep_noise(SweepSpec spec, int jobs = 1) {
    spec.kind = SweepKind::kNoise;
    return run_sweep(spec, jobs);
}

// Metric columns as percentages, entropy/risk/NLL raw; value column in %g
// form so learning rates print as 1e-05 and widths as plain integers.
inline std::string sweep_csv(const SweepResult& result) {
    std::string out = "kind,value,seed,bleu,rouge1,rouge2,mean_entropy,mean_risk,final_nll,flags\n";
    for (const SweepRow& row : result.rows) {
        out += row.kind;
        out += "," + format_general(row.value);
        out += "," + std::to_string(row.seed);
        out += "," + format_fixed(100.0 * row.bleu);
        out += "," + format_fixed(100.0 * row.rouge1);
        out += "," + format_fixed(100.0 * row.rouge2);
        out += "," + format_fixed(row.mean_entropy);
        out += "," + format_fixed(row.mean_risk);
        out += "," + format_fixed(row.final_nll);
        out += "," + row.flags;
        out += "\n";
    }
    return out;
}

namespace detail {

inline double seed_median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

// Standalone SVG line chart: one polyline per metric (percent scale),
// x-ticks at the swept values, seed-median aggregation. Bytes depend only on
// the result.
inline std::string render_plot_svg(const SweepResult& result) {
    if (result.rows.empty()) throw std::invalid_argument("empty sweep result");
    std::vector<double> values;
    for (const SweepRow& row : result.rows)
        if (values.empty() || values.back() != row.value) values.push_back(row.value);
    const std::size_t n_values = values.size();

    const char* metric_names[3] = {"bleu", "rouge1", "rouge2"};
    const char* colors[3] = {"#1f6feb", "#d1242f", "#1a7f37"};
    std::vector<std::vector<double>> medians(3, std::vector<double>(n_values, 0.0));
    for (std::size_t vi = 0; vi < n_values; ++vi) {
        std::vector<double> per_metric[3];
        for (const SweepRow& row : result.rows) {
            if (row.value != values[vi]) continue;
            per_metric[0].push_back(100.0 * row.bleu);
            per_metric[1].push_back(100.0 * row.rouge1);
            per_metric[2].push_back(100.0 * row.rouge2);
        }
        for (int m = 0; m < 3; ++m) medians[static_cast<std::size_t>(m)][vi] = detail::seed_median(per_metric[m]);
    }

    const double width = 640.0, height = 400.0;
    const double left = 60.0, right = 610.0, top = 40.0, bottom = 350.0;
    auto x_at = [&](std::size_t vi) {
        return n_values == 1 ? 0.5 * (left + right)
                             : left + (right - left) * static_cast<double>(vi) /
                                          static_cast<double>(n_values - 1);
    };
    auto y_at = [&](double metric_pct) { return bottom - (bottom - top) * metric_pct / 100.0; };

    std::string svg;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                  "viewBox=\"0 0 %.0f %.0f\">\n",
                  width, height, width, height);
    svg += buf;
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof(buf), "<text x=\"%.0f\" y=\"24\" font-family=\"monospace\" font-size=\"16\">%s sweep (seed medians)</text>\n",
                  left, sweep_kind_name(result.kind));
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                  left, bottom, right, bottom);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                  left, top, left, bottom);
    svg += buf;
    for (int tick = 0; tick <= 100; tick += 25) {
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%.1f\" font-family=\"monospace\" font-size=\"10\" "
                      "text-anchor=\"end\">%d</text>\n",
                      left - 6.0, y_at(tick) + 3.0, tick);
        svg += buf;
    }
    for (std::size_t vi = 0; vi < n_values; ++vi) {
        std::snprintf(buf, sizeof(buf),
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                      x_at(vi), bottom, x_at(vi), bottom + 5.0);
        svg += buf;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%.1f\" font-family=\"monospace\" font-size=\"10\" "
                      "text-anchor=\"middle\">%s</text>\n",
                      x_at(vi), bottom + 18.0, format_general(values[vi]).c_str());
        svg += buf;
    }
    for (int m = 0; m < 3; ++m) {
        std::string points;
        for (std::size_t vi = 0; vi < n_values; ++vi) {
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x_at(vi), y_at(medians[static_cast<std::size_t>(m)][vi]));
            points += buf;
        }
        if (!points.empty()) points.pop_back();
        std::snprintf(buf, sizeof(buf),
                      "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"2\" points=\"%s\"/>\n",
                      colors[m], points.c_str());
        svg += buf;
        for (std::size_t vi = 0; vi < n_values; ++vi) {
            std::snprintf(buf, sizeof(buf), "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n",
                          x_at(vi), y_at(medians[static_cast<std::size_t>(m)][vi]), colors[m]);
            svg += buf;
        }
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%.1f\" font-family=\"monospace\" font-size=\"12\" "
                      "fill=\"%s\">%s</text>\n",
                      right - 80.0, top + 16.0 * (m + 1), colors[m], metric_names[m]);
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

inline void render_plot(const SweepResult& result, const std::string& path) {
    const std::string svg = render_plot_svg(result);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write plot: " + path);
    out << svg;
    if (!out) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// sweep spec JSON

inline DecodeConfig decode_config_from_json(const nlohmann::json& root, DecodeConfig config = {}) {
    static const std::unordered_set<std::string> known = {"strategy", "k",        "max_len",
                                                          "seed",     "s_mc",     "annotate"};
    if (!root.is_object()) throw std::runtime_error("decode config must be a JSON object");
    for (const auto& [key, value] : root.items()) {
        if (!known.count(key)) throw std::runtime_error("unknown decode config key: " + key);
        (void)value;
    }
    if (root.contains("strategy")) {
        const std::string s = root["strategy"].get<std::string>();
        if (s == "greedy")
            config.strategy = DecodeStrategy::kGreedy;
        else if (s == "top_k")
            config.strategy = DecodeStrategy::kTopK;
        else
            throw std::runtime_error("unknown decode strategy: " + s);
    }
    if (root.contains("k")) config.k = root["k"].get<int>();
    if (root.contains("max_len")) config.max_len = root["max_len"].get<int>();
    if (root.contains("seed")) config.seed = root["seed"].get<std::uint64_t>();
    if (root.contains("s_mc")) config.s_mc = root["s_mc"].get<int>();
    if (root.contains("annotate")) config.annotate = root["annotate"].get<bool>();
    return config;
}

inline SweepSpec sweep_spec_from_json(const nlohmann::json& root) {
    SweepSpec spec;
    static const std::unordered_set<std::string> known = {"kind",  "values", "seeds",     "corpus",
                                                          "model", "train",  "decode",    "noise_mode"};
    if (!root.is_object()) throw std::runtime_error("sweep spec must be a JSON object");
    for (const auto& [key, value] : root.items()) {
        if (!known.count(key)) throw std::runtime_error("unknown sweep spec key: " + key);
        (void)value;
    }
    if (root.contains("kind")) spec.kind = sweep_kind_from(root["kind"].get<std::string>());
    if (root.contains("values")) spec.values = root["values"].get<std::vector<double>>();
    if (root.contains("seeds")) spec.seeds = root["seeds"].get<std::vector<std::uint64_t>>();
    if (root.contains("corpus")) {
        const auto& c = root["corpus"];
        static const std::unordered_set<std::string> corpus_known = {"n_pairs", "seed", "lexicon"};
        for (const auto& [key, value] : c.items()) {
            if (!corpus_known.count(key)) throw std::runtime_error("unknown corpus spec key: " + key);
            (void)value;
        }
        if (c.contains("n_pairs")) spec.corpus.n_pairs = c["n_pairs"].get<int>();
        if (c.contains("seed")) spec.corpus.seed = c["seed"].get<std::uint64_t>();
        if (c.contains("lexicon")) spec.corpus.lexicon_path = c["lexicon"].get<std::string>();
    }
    if (root.contains("model")) spec.model = model_config_from_json(root["model"], spec.model);
    if (root.contains("train")) spec.train = train_config_from_json(root["train"], spec.train);
    if (root.contains("decode")) spec.decode = decode_config_from_json(root["decode"], spec.decode);
    if (root.contains("noise_mode")) {
        const std::string mode = root["noise_mode"].get<std::string>();
        if (mode == "swap")
            spec.noise_mode = NoiseMode::kSummarySwap;
        else if (mode == "replace")
            spec.noise_mode = NoiseMode::kTokenReplace;
        else
            throw std::runtime_error("unknown noise mode: " + mode);
    }
    return spec;
}

inline SweepSpec load_sweep_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open sweep spec: " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed sweep spec JSON in " + path + ": " + e.what());
    }
    return sweep_spec_from_json(root);
}

}  // namespace trustsum
