#include "trustsum/experiments.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

namespace {

using trustsum::SweepKind;
using trustsum::SweepResult;
using trustsum::SweepSpec;

SweepSpec tiny_spec(SweepKind kind) {
    SweepSpec spec;
    spec.kind = kind;
    spec.corpus.n_pairs = 12;
    spec.corpus.seed = 7;
    spec.model.d_model = 16;
    spec.model.ffn_dim = 32;
    spec.train.epochs = 2;
    spec.seeds = {1};
    return spec;
}

TEST(SweepKinds, NamesAndDefaults) {
    EXPECT_STREQ(trustsum::sweep_kind_name(SweepKind::kLr), "lr");
    EXPECT_STREQ(trustsum::sweep_kind_name(SweepKind::kTopK), "topk");
    EXPECT_STREQ(trustsum::sweep_kind_name(SweepKind::kNoise), "noise");
    EXPECT_EQ(trustsum::sweep_kind_from("topk"), SweepKind::kTopK);
    EXPECT_THROW(trustsum::sweep_kind_from("dropout"), std::runtime_error);
    EXPECT_EQ(trustsum::default_sweep_values(SweepKind::kLr),
              (std::vector<double>{1e-5, 3e-5, 5e-5, 1e-4, 3e-4}));
    EXPECT_EQ(trustsum::default_sweep_values(SweepKind::kTopK),
              (std::vector<double>{10, 20, 30, 40, 50, 60}));
    EXPECT_EQ(trustsum::default_sweep_values(SweepKind::kNoise),
              (std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.4, 0.5}));
}

TEST(SeedMedian, OddAndEvenCounts) {
    EXPECT_DOUBLE_EQ(trustsum::detail::seed_median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_DOUBLE_EQ(trustsum::detail::seed_median({4.0, 1.0, 2.0, 3.0}), 2.5);
    EXPECT_DOUBLE_EQ(trustsum::detail::seed_median({5.0}), 5.0);
}

TEST(RunSweep, RowCardinalityAndOrdering) {
    SweepSpec spec = tiny_spec(SweepKind::kNoise);
    spec.values = {0.0, 0.3};
    spec.seeds = {1, 2};
    SweepResult result = trustsum::run_sweep(spec);
    ASSERT_EQ(result.rows.size(), 4u);
    EXPECT_EQ(result.rows[0].value, 0.0);
    EXPECT_EQ(result.rows[0].seed, 1u);
    EXPECT_EQ(result.rows[1].value, 0.0);
    EXPECT_EQ(result.rows[1].seed, 2u);
    EXPECT_EQ(result.rows[2].value, 0.3);
    EXPECT_EQ(result.rows[2].seed, 1u);
    EXPECT_EQ(result.rows[3].value, 0.3);
    EXPECT_EQ(result.rows[3].seed, 2u);
    for (const auto& row : result.rows) {
        EXPECT_EQ(row.kind, "noise");
        EXPECT_EQ(row.flags.rfind("ok;ckpt=", 0), 0u) << row.flags;
    }
}

TEST(RunSweep, ByteDeterministicAndJobInvariant) {
    SweepSpec spec = tiny_spec(SweepKind::kNoise);
    spec.values = {0.0, 0.4};
    const std::string a = trustsum::sweep_csv(trustsum::run_sweep(spec, 1));
    const std::string b = trustsum::sweep_csv(trustsum::run_sweep(spec, 1));
    const std::string c = trustsum::sweep_csv(trustsum::run_sweep(spec, 2));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
}

TEST(RunSweep, ZeroNoiseRowMatchesDirectPipeline) {
    SweepSpec spec = tiny_spec(SweepKind::kNoise);
    spec.values = {0.0};
    SweepResult result = trustsum::run_sweep(spec);
    ASSERT_EQ(result.rows.size(), 1u);
    const auto& row = result.rows[0];

    // replay the documented derivation: corpus from mix(corpus seed, s),
    // first 75% train, the rest evaluate greedily
    const auto lexicon = trustsum::default_lexicon();
    trustsum::Corpus corpus = trustsum::generate_synthetic_corpus(
        trustsum::mix_seed(spec.corpus.seed, 1), spec.corpus.n_pairs, lexicon);
    const int n_train = (3 * static_cast<int>(corpus.pairs.size())) / 4;
    trustsum::Corpus train_corpus;
    train_corpus.vocab = corpus.vocab;
    train_corpus.pairs.assign(corpus.pairs.begin(), corpus.pairs.begin() + n_train);

    trustsum::ModelConfig model = spec.model;
    model.vocab_size = 0;  // resolved from the corpus, as the sweep does
    model.seed = trustsum::mix_seed(spec.model.seed, 1);
    trustsum::TrainConfig train_config = spec.train;
    train_config.seed = trustsum::mix_seed(spec.train.seed, 1);
    auto trained = trustsum::train(train_corpus, model, train_config, lexicon);

    model.vocab_size = corpus.vocab.size();
    std::vector<trustsum::Pair> eval_pairs(corpus.pairs.begin() + n_train, corpus.pairs.end());
    auto candidates = trustsum::decode_corpus(trained.params, model, eval_pairs,
                                              trustsum::DecodeConfig{}, trustsum::kEvalDecodeCap);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> scored;
    for (std::size_t i = 0; i < eval_pairs.size(); ++i)
        scored.emplace_back(candidates[i], eval_pairs[i].summary);
    auto report = trustsum::evaluate_corpus(scored);

    EXPECT_DOUBLE_EQ(row.bleu, report.bleu);
    EXPECT_DOUBLE_EQ(row.rouge1, report.rouge1_f);
    EXPECT_DOUBLE_EQ(row.rouge2, report.rouge2_f);
    EXPECT_DOUBLE_EQ(row.final_nll, trained.history.epochs.back().per_token_nll);
}

TEST(RunSweep, TopkReusesCheckpointAndEntropyGrowsWithWidth) {
    SweepSpec spec = tiny_spec(SweepKind::kTopK);
    spec.values = {1, 5, 50};
    SweepResult result = trustsum::run_sweep(spec);
    ASSERT_EQ(result.rows.size(), 3u);
    const std::string ckpt0 = result.rows[0].flags;
    for (const auto& row : result.rows) {
        EXPECT_EQ(row.flags, ckpt0);  // same trained model across widths
        EXPECT_EQ(row.flags.rfind("ok;ckpt=", 0), 0u);
    }
    EXPECT_LE(result.rows[0].mean_entropy, result.rows[1].mean_entropy + 1e-12);
    EXPECT_LE(result.rows[1].mean_entropy, result.rows[2].mean_entropy + 1e-12);
    EXPECT_DOUBLE_EQ(result.rows[0].mean_entropy, 0.0);  // width 1 is deterministic
}

TEST(RunSweep, OversizedTopkWidthIsFlaggedNotMissing) {
    SweepSpec spec = tiny_spec(SweepKind::kTopK);
    spec.values = {5, 100000};
    SweepResult result = trustsum::run_sweep(spec);
    ASSERT_EQ(result.rows.size(), 2u);
    EXPECT_EQ(result.rows[0].flags.rfind("ok;ckpt=", 0), 0u);
    EXPECT_EQ(result.rows[1].flags, "error:k-exceeds-vocab");
    EXPECT_DOUBLE_EQ(result.rows[1].bleu, 0.0);
}

TEST(RunSweep, LrKindAppliesTheSweptRate) {
    SweepSpec spec = tiny_spec(SweepKind::kLr);
    spec.values = {1e-4, 3e-2};
    SweepResult result = trustsum::run_sweep(spec);
    ASSERT_EQ(result.rows.size(), 2u);
    EXPECT_EQ(result.rows[0].flags.rfind("ok;ckpt=", 0), 0u);
    EXPECT_EQ(result.rows[1].flags.rfind("ok;ckpt=", 0), 0u);
    EXPECT_NE(result.rows[0].flags, result.rows[1].flags);  // different checkpoints
    EXPECT_NE(result.rows[0].final_nll, result.rows[1].final_nll);
}

TEST(RunSweep, RejectsInvalidValueGrids) {
    SweepSpec spec = tiny_spec(SweepKind::kLr);
    spec.values = {-1e-4};
    EXPECT_THROW(trustsum::run_sweep(spec), std::invalid_argument);
    spec = tiny_spec(SweepKind::kTopK);
    spec.values = {2.5};
    EXPECT_THROW(trustsum::run_sweep(spec), std::invalid_argument);
    spec = tiny_spec(SweepKind::kNoise);
    spec.values = {1.5};
    EXPECT_THROW(trustsum::run_sweep(spec), std::invalid_argument);
    spec = tiny_spec(SweepKind::kNoise);
    spec.seeds = {};
    EXPECT_THROW(trustsum::run_sweep(spec), std::invalid_argument);
}

TEST(SweepCsvFormat, HeaderAndFieldCount) {
    SweepSpec spec = tiny_spec(SweepKind::kNoise);
    spec.values = {0.0, 0.5};
    const std::string csv = trustsum::sweep_csv(trustsum::run_sweep(spec));
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < csv.size()) {
        std::size_t end = csv.find('\n', start);
        lines.push_back(csv.substr(start, end - start));
        start = end + 1;
    }
    ASSERT_EQ(lines.size(), 3u);
    EXPECT_EQ(lines[0], "kind,value,seed,bleu,rouge1,rouge2,mean_entropy,mean_risk,final_nll,flags");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const long commas = std::count(lines[i].begin(), lines[i].end(), ',');
        EXPECT_EQ(commas, 9) << lines[i];
    }
    EXPECT_EQ(lines[1].rfind("noise,0,1,", 0), 0u) << lines[1];
    EXPECT_EQ(lines[2].rfind("noise,0.5,1,", 0), 0u) << lines[2];
}

TEST(RenderPlot, SvgStructureAndDeterminism) {
    SweepSpec spec = tiny_spec(SweepKind::kTopK);
    spec.values = {1, 5, 20};
    SweepResult result = trustsum::run_sweep(spec);
    const std::string svg = trustsum::render_plot_svg(result);
    EXPECT_EQ(svg.rfind("<svg ", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);

    auto count_of = [&svg](const std::string& needle) {
        std::size_t count = 0, pos = 0;
        while ((pos = svg.find(needle, pos)) != std::string::npos) {
            ++count;
            pos += needle.size();
        }
        return count;
    };
    EXPECT_EQ(count_of("<polyline"), 3u);
    EXPECT_EQ(count_of("text-anchor=\"middle\""), 3u);  // one x label per swept value
    EXPECT_EQ(count_of("text-anchor=\"end\""), 5u);     // 0,25,50,75,100 axis labels
    EXPECT_EQ(trustsum::render_plot_svg(result), svg);

    const std::string path = testing::TempDir() + "sweep_plot.svg";
    trustsum::render_plot(result, path);
    std::ifstream in(path, std::ios::binary);
    std::string from_file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(from_file, svg);
}

TEST(RenderPlot, SingletonSweepStillRenders) {
    SweepSpec spec = tiny_spec(SweepKind::kNoise);
    spec.values = {0.2};
    const std::string svg = trustsum::render_plot_svg(trustsum::run_sweep(spec));
    EXPECT_NE(svg.find("<polyline"), std::string::npos);
    EXPECT_THROW(trustsum::render_plot_svg(SweepResult{}), std::invalid_argument);
}

TEST(SweepSpecJson, RecipeDefaultsSurviveOverlay) {
    nlohmann::json root = {
        {"kind", "noise"},
        {"values", {0.0, 0.25}},
        {"seeds", {4, 5}},
        {"corpus", {{"n_pairs", 24}, {"seed", 9}}},
        {"train", {{"gamma", 0.25}}},
        {"noise_mode", "replace"},
    };
    SweepSpec spec = trustsum::sweep_spec_from_json(root);
    EXPECT_EQ(spec.kind, SweepKind::kNoise);
    EXPECT_EQ(spec.values, (std::vector<double>{0.0, 0.25}));
    EXPECT_EQ(spec.seeds, (std::vector<std::uint64_t>{4, 5}));
    EXPECT_EQ(spec.corpus.n_pairs, 24);
    EXPECT_EQ(spec.corpus.seed, 9u);
    EXPECT_DOUBLE_EQ(spec.train.gamma, 0.25);   // overlaid
    EXPECT_EQ(spec.train.epochs, 240);          // recipe default retained
    EXPECT_DOUBLE_EQ(spec.train.lambda, 0.01);  // recipe default retained
    EXPECT_EQ(spec.model.ctx_len, 96);          // recipe default retained
    EXPECT_EQ(spec.noise_mode, trustsum::NoiseMode::kTokenReplace);
}

TEST(SweepSpecJson, RejectsUnknownKeysAtEveryLevel) {
    EXPECT_THROW(trustsum::sweep_spec_from_json({{"kinds", "lr"}}), std::runtime_error);
    EXPECT_THROW(trustsum::sweep_spec_from_json({{"corpus", {{"pairs", 8}}}}), std::runtime_error);
    EXPECT_THROW(trustsum::sweep_spec_from_json({{"model", {{"width", 8}}}}), std::runtime_error);
    EXPECT_THROW(trustsum::sweep_spec_from_json({{"train", {{"momentum", 0.9}}}}), std::runtime_error);
    EXPECT_THROW(trustsum::sweep_spec_from_json({{"noise_mode", "gaussian"}}), std::runtime_error);
    EXPECT_THROW(trustsum::sweep_spec_from_json({{"kind", "dropout"}}), std::runtime_error);
}

}  // namespace
