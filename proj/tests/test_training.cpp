#include "trustsum/training.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using trustsum::Corpus;
using trustsum::ModelConfig;
using trustsum::Pair;
using trustsum::ParamLayout;
using trustsum::Params;
using trustsum::TrainConfig;

ModelConfig tiny_model(int vocab) {
    ModelConfig config;
    config.vocab_size = vocab;
    config.d_model = 8;
    config.n_heads = 2;
    config.ffn_dim = 16;
    config.ctx_len = 16;
    config.dropout_rate = 0.0;
    config.seed = 1;
    return config;
}

Corpus tiny_corpus(bool with_risk_terms = false) {
    Corpus c;
    c.vocab.tokens.assign(trustsum::reserved_tokens().begin(), trustsum::reserved_tokens().end());
    for (const char* t : {"fire", "lawsuit", "alpha", "beta", "gamma", "delta", "epsln", "zeta"})
        c.vocab.tokens.push_back(t);
    c.vocab.rebuild_index();
    const int a = c.vocab.id_of("alpha"), b = c.vocab.id_of("beta"), g = c.vocab.id_of("gamma"),
              d = c.vocab.id_of("delta"), e = c.vocab.id_of("epsln"), z = c.vocab.id_of("zeta"),
              fire = c.vocab.id_of("fire"), law = c.vocab.id_of("lawsuit");
    std::vector<std::vector<int>> docs = {{a, b, g, d}, {b, g, d, e}, {g, d, e, z}, {d, e, z, a},
                                          {e, z, a, b}, {z, a, b, g}, {a, g, e, z}, {b, d, z, a}};
    if (with_risk_terms) {
        docs[0][0] = fire;
        docs[2][1] = law;
        docs[5][3] = fire;
    }
    for (std::size_t i = 0; i < docs.size(); ++i) {
        Pair p;
        p.id = "t" + std::to_string(i);
        p.document = docs[i];
        p.summary = {docs[i][0], docs[i][2]};
        c.pairs.push_back(p);
    }
    return c;
}

TEST(TrainConfigTest, ValidateRejectsBadValues) {
    TrainConfig c;
    c.lr = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.epochs = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.gamma = -0.1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.beta1 = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.lambda = -0.5;  // entropy bonus is a legal setting
    EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfigTest, JsonOverlayAndStrictKeys) {
    TrainConfig base;
    base.gamma = 0.0;
    base.epochs = 40;
    nlohmann::json root = {{"lr", 0.003}, {"lambda", 0.5}};
    TrainConfig merged = trustsum::train_config_from_json(root, base);
    EXPECT_DOUBLE_EQ(merged.lr, 0.003);
    EXPECT_DOUBLE_EQ(merged.lambda, 0.5);
    EXPECT_DOUBLE_EQ(merged.gamma, 0.0);
    EXPECT_EQ(merged.epochs, 40);
    EXPECT_THROW(trustsum::train_config_from_json({{"learning_rate", 0.1}}, base), std::runtime_error);
    EXPECT_THROW(trustsum::train_config_from_json({{"lr", -1.0}}, base), std::invalid_argument);
}

TEST(LossComposition, ZeroCoefficientsAreBitExact) {
    trustsum::Rng rng(31);
    for (int i = 0; i < 1000; ++i) {
        const double nll = rng.uniform(0.0, 50.0);
        const double entropy = rng.uniform(0.0, 20.0);
        const double risk = rng.uniform(0.0, 3.0);
        const double lambda = rng.uniform(-2.0, 2.0);
        const double gamma = rng.uniform(0.0, 2.0);
        EXPECT_EQ(trustsum::total_loss(nll, entropy, 0.0), nll);
        EXPECT_EQ(trustsum::joint_loss(nll, risk, 0.0), nll);
        EXPECT_DOUBLE_EQ(trustsum::total_loss(nll, entropy, lambda), nll + lambda * entropy);
        EXPECT_DOUBLE_EQ(trustsum::joint_loss(nll, risk, gamma), nll + gamma * risk);
    }
}

TEST(LossTerms, MatchDirectEvaluation) {
    ModelConfig mc = tiny_model(13);
    Params params = trustsum::init_params(mc);
    std::vector<int> doc{5, 6, 7};
    std::vector<int> y{8, 9, trustsum::kEosId};
    EXPECT_NEAR(trustsum::nll_loss(params, mc, doc, y),
                -trustsum::sequence_log_prob(params, mc, doc, y), 1e-12);

    // zeroed output layer emits uniform rows: entropy = 3 * ln 13
    const ParamLayout lay = ParamLayout::from(mc);
    Params uniform = params;
    for (std::size_t i = 0; i < 8u * 13u; ++i) uniform.flat[lay.w_out + i] = 0.0;
    for (std::size_t i = 0; i < 13u; ++i) uniform.flat[lay.b_out + i] = 0.0;
    EXPECT_NEAR(trustsum::entropy_term(uniform, mc, doc, y), 3.0 * std::log(13.0), 1e-9);
    EXPECT_THROW(trustsum::entropy_term(params, mc, doc, std::vector<int>{8, 9}),
                 std::invalid_argument);
}

TEST(Train, DeterministicGivenSeeds) {
    Corpus corpus = tiny_corpus();
    ModelConfig mc = tiny_model(corpus.vocab.size());
    TrainConfig tc;
    tc.lambda = 0.0;
    tc.gamma = 0.0;
    tc.lr = 3e-3;
    tc.epochs = 4;
    tc.batch_size = 4;
    tc.seed = 9;
    auto a = trustsum::train(corpus, mc, tc);
    auto b = trustsum::train(corpus, mc, tc);
    EXPECT_EQ(a.params.flat, b.params.flat);
    EXPECT_EQ(trustsum::history_csv(a.history), trustsum::history_csv(b.history));
    tc.seed = 10;
    auto c = trustsum::train(corpus, mc, tc);
    EXPECT_NE(a.params.flat, c.params.flat);
}

TEST(Train, LearnsTinyCorpus) {
    Corpus corpus = tiny_corpus();
    ModelConfig mc = tiny_model(corpus.vocab.size());
    TrainConfig tc;
    tc.lambda = 0.0;
    tc.gamma = 0.0;
    tc.lr = 5e-3;
    tc.epochs = 30;
    tc.batch_size = 4;
    tc.seed = 2;
    auto result = trustsum::train(corpus, mc, tc);
    ASSERT_EQ(result.history.epochs.size(), 30u);
    EXPECT_LT(result.history.epochs.back().loss.nll, result.history.epochs.front().loss.nll);
    EXPECT_LT(result.history.epochs.back().per_token_nll,
              result.history.epochs.front().per_token_nll);
    EXPECT_GT(result.history.wall_seconds, 0.0);
}

TEST(Train, EntropyCoefficientShapesConfidence) {
    Corpus corpus = tiny_corpus();
    ModelConfig mc = tiny_model(corpus.vocab.size());
    TrainConfig tc;
    tc.gamma = 0.0;
    tc.lr = 5e-3;
    tc.epochs = 25;
    tc.batch_size = 4;
    tc.seed = 3;
    tc.lambda = 1.0;  // entropy penalty: sharpen
    const double sharp = trustsum::train(corpus, mc, tc).history.epochs.back().loss.entropy_term;
    tc.lambda = -1.0;  // entropy bonus: flatten
    const double flat = trustsum::train(corpus, mc, tc).history.epochs.back().loss.entropy_term;
    EXPECT_LT(sharp, flat);
}

TEST(Train, DropoutPathIsSeededToo) {
    Corpus corpus = tiny_corpus();
    ModelConfig mc = tiny_model(corpus.vocab.size());
    mc.dropout_rate = 0.1;
    TrainConfig tc;
    tc.lambda = 0.0;
    tc.gamma = 0.0;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 4;
    auto a = trustsum::train(corpus, mc, tc);
    auto b = trustsum::train(corpus, mc, tc);
    EXPECT_EQ(a.params.flat, b.params.flat);
}

TEST(Train, RiskTermRunsOnRiskyPairs) {
    Corpus corpus = tiny_corpus(true);
    ModelConfig mc = tiny_model(corpus.vocab.size());
    TrainConfig tc;
    tc.lambda = 0.0;
    tc.gamma = 0.5;
    tc.s_risk = 2;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 6;
    auto a = trustsum::train(corpus, mc, tc);
    auto b = trustsum::train(corpus, mc, tc);
    EXPECT_EQ(a.params.flat, b.params.flat);
    double risk_seen = 0.0;
    for (const auto& e : a.history.epochs) risk_seen += e.loss.risk_term;
    EXPECT_GT(risk_seen, 0.0);

    tc.gamma = 0.0;
    auto off = trustsum::train(corpus, mc, tc);
    for (const auto& e : off.history.epochs) EXPECT_DOUBLE_EQ(e.loss.risk_term, 0.0);
}

TEST(Train, DivergenceAbortsWithPosition) {
    Corpus corpus = tiny_corpus();
    ModelConfig mc = tiny_model(corpus.vocab.size());
    TrainConfig tc;
    tc.lambda = 0.0;
    tc.gamma = 0.0;
    tc.lr = 1e300;  // one step overflows the weights, the next pass goes NaN
    tc.epochs = 5;
    tc.batch_size = 4;
    try {
        trustsum::train(corpus, mc, tc);
        FAIL() << "expected divergence";
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
    }
}

TEST(Train, RejectsMismatchedVocabAndOversizedPairs) {
    Corpus corpus = tiny_corpus();
    ModelConfig mc = tiny_model(corpus.vocab.size() + 1);
    TrainConfig tc;
    EXPECT_THROW(trustsum::train(corpus, mc, tc), std::invalid_argument);

    mc = tiny_model(corpus.vocab.size());
    mc.ctx_len = 8;  // needs 3 + 4 + 2 = 9
    try {
        trustsum::train(corpus, mc, tc);
        FAIL() << "expected error";
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("does not fit context"), std::string::npos);
    }
}

TEST(HistoryCsv, LayoutAndScaling) {
    trustsum::TrainHistory history;
    trustsum::EpochStats s;
    s.loss.nll = 2.5;
    s.loss.entropy_term = 1.25;
    s.loss.risk_term = 0.5;
    s.loss.total = 3.0;
    s.bleu = 0.25;
    s.rouge1 = 0.5;
    s.rouge2 = 0.125;
    history.epochs.push_back(s);
    EXPECT_EQ(trustsum::history_csv(history),
              "epoch,nll,entropy_term,risk_term,total,bleu,rouge1,rouge2\n"
              "1,2.500000,1.250000,0.500000,3.000000,25.000000,50.000000,12.500000\n");
}

TEST(GradCheck, PassesForPlainAndEntropyWeightedObjectives) {
    const ModelConfig config = trustsum::grad_check_default_config();
    EXPECT_EQ(trustsum::param_count(config), 1028u);
    auto plain = trustsum::grad_check(config, 1e-4, 0.0, 0.0);
    EXPECT_TRUE(plain.passed()) << "max rel error " << plain.max_rel_error;
    EXPECT_EQ(plain.n_params, 1028u);
    EXPECT_LE(plain.max_rel_error, 1e-4);

    auto entropy_weighted = trustsum::grad_check(config, 1e-4, 0.5, 0.0);
    EXPECT_TRUE(entropy_weighted.passed()) << "max rel error " << entropy_weighted.max_rel_error;
}

TEST(GradCheck, PassesWithRiskSurrogate) {
    auto report = trustsum::grad_check(trustsum::grad_check_default_config(), 1e-4, 0.0, 0.5);
    EXPECT_TRUE(report.passed()) << "max rel error " << report.max_rel_error;
}

TEST(GradCheck, RejectsOversizedConfigs) {
    ModelConfig big;
    big.vocab_size = 64;  // default shapes: 14624 parameters
    EXPECT_THROW(trustsum::grad_check(big, 1e-4), std::invalid_argument);
}

TEST(DecodeCorpus, CapsLengthByContextRoom) {
    Corpus corpus = tiny_corpus();
    ModelConfig mc = tiny_model(corpus.vocab.size());
    Params params = trustsum::init_params(mc);
    auto outs = trustsum::decode_corpus(params, mc, corpus.pairs, trustsum::DecodeConfig{}, 20);
    ASSERT_EQ(outs.size(), corpus.pairs.size());
    for (std::size_t i = 0; i < outs.size(); ++i)
        EXPECT_LE(outs[i].size(), static_cast<std::size_t>(mc.ctx_len - 2) - corpus.pairs[i].document.size());
}

}  // namespace
