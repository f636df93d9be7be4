#include "trustsum/metrics.hpp"

#include <gtest/gtest.h>

namespace {

using Ids = std::vector<int>;

TEST(Bleu, IdenticalSequencesScoreOne) {
    Ids s{1, 2, 3, 4};
    EXPECT_NEAR(trustsum::bleu(s, s), 1.0, 1e-9);
    Ids t{7};
    EXPECT_NEAR(trustsum::bleu(t, t), 1.0, 1e-9);
}

TEST(Bleu, DisjointSequencesScoreZero) {
    EXPECT_DOUBLE_EQ(trustsum::bleu(Ids{1, 2, 3}, Ids{4, 5, 6}), 0.0);
}

TEST(Bleu, EmptyCandidateScoresZero) {
    EXPECT_DOUBLE_EQ(trustsum::bleu(Ids{}, Ids{1, 2}), 0.0);
}

TEST(Bleu, ClippedPrecisionTwoSevenths) {
    // "the the the the the the the" vs "the the"
    Ids cand(7, 5);
    Ids ref(2, 5);
    auto p = trustsum::modified_precision(cand, ref, 1);
    EXPECT_EQ(p.clipped, 2);
    EXPECT_EQ(p.total, 7);
    // bigrams: clipped 1 of 6; score = sqrt(2/7 * 1/6) = sqrt(1/21)
    EXPECT_NEAR(trustsum::bleu(cand, ref), 0.21821789023599236, 1e-9);
}

TEST(Bleu, BrevityPenaltyExample) {
    // perfect 2-token prefix of a 4-token reference: BP = exp(1 - 4/2)
    EXPECT_NEAR(trustsum::bleu(Ids{1, 2}, Ids{1, 2, 3, 4}), 0.36787944117144233, 1e-9);
}

TEST(Bleu, SmoothedHigherOrderZeros) {
    // same unigrams, no shared bigram/trigram: (1 * 1/3 * 1/2)^(1/3)
    EXPECT_NEAR(trustsum::bleu(Ids{1, 2, 3}, Ids{1, 3, 2}), 0.5503212081491045, 1e-9);
}

TEST(Bleu, PartialOverlapGolden) {
    // p1 = 2/4, p2 = 1/3, p3 smoothed 1/3 -> (1/18)^(1/3)
    EXPECT_NEAR(trustsum::bleu(Ids{1, 2, 3, 4}, Ids{1, 2, 5}), 0.38157141418444396, 1e-9);
}

TEST(Bleu, EffectiveOrderCappedByLengths) {
    // candidate of length 2 only uses n = 1, 2 even with max_n = 4
    Ids cand{1, 2};
    Ids ref{1, 2};
    EXPECT_NEAR(trustsum::bleu(cand, ref, 4), 1.0, 1e-12);
    EXPECT_THROW(trustsum::bleu(Ids{1}, Ids{}), std::invalid_argument);
    EXPECT_THROW(trustsum::bleu(Ids{1}, Ids{1}, 0), std::invalid_argument);
}

TEST(Rouge, UnigramGoldenFourSevenths) {
    auto r = trustsum::rouge_n(Ids{1, 2, 3, 4}, Ids{1, 2, 5}, 1);
    EXPECT_NEAR(r.recall, 2.0 / 3.0, 1e-9);
    EXPECT_NEAR(r.precision, 0.5, 1e-9);
    EXPECT_NEAR(r.f1, 0.5714285714285714, 1e-9);
}

TEST(Rouge, BigramGoldenOneHalf) {
    auto r = trustsum::rouge_n(Ids{1, 2, 3}, Ids{1, 2, 4}, 2);
    EXPECT_NEAR(r.recall, 0.5, 1e-9);
    EXPECT_NEAR(r.precision, 0.5, 1e-9);
    EXPECT_NEAR(r.f1, 0.5, 1e-9);
}

TEST(Rouge, IdentityAndDisjoint) {
    Ids s{3, 1, 4, 1, 5};
    auto r = trustsum::rouge_n(s, s, 1);
    EXPECT_NEAR(r.f1, 1.0, 1e-12);
    r = trustsum::rouge_n(s, s, 2);
    EXPECT_NEAR(r.f1, 1.0, 1e-12);
    r = trustsum::rouge_n(Ids{1, 2}, Ids{3, 4}, 1);
    EXPECT_DOUBLE_EQ(r.recall, 0.0);
    EXPECT_DOUBLE_EQ(r.precision, 0.0);
    EXPECT_DOUBLE_EQ(r.f1, 0.0);
}

TEST(Rouge, RepeatedTokensAreClipped) {
    auto r = trustsum::rouge_n(Ids{5, 5, 5}, Ids{5, 5}, 1);
    EXPECT_NEAR(r.recall, 1.0, 1e-12);
    EXPECT_NEAR(r.precision, 2.0 / 3.0, 1e-12);
}

TEST(Rouge, EmptyCandidateAndShortReference) {
    auto r = trustsum::rouge_n(Ids{}, Ids{1, 2}, 1);
    EXPECT_DOUBLE_EQ(r.recall, 0.0);
    EXPECT_DOUBLE_EQ(r.f1, 0.0);
    EXPECT_THROW(trustsum::rouge_n(Ids{1, 2}, Ids{1}, 2), std::invalid_argument);
}

TEST(EvaluateCorpus, MacroAverageOverPairs) {
    std::vector<std::pair<Ids, Ids>> outputs = {
        {{1, 2, 3, 4}, {1, 2, 5}},
        {{5, 5, 5, 5, 5, 5, 5}, {5, 5}},
    };
    auto report = trustsum::evaluate_corpus(outputs);
    EXPECT_EQ(report.n_pairs, 2);
    EXPECT_NEAR(report.bleu, 0.29989465221021816, 1e-9);
    EXPECT_NEAR(report.rouge1_f, 0.507936507936508, 1e-9);
    EXPECT_NEAR(report.rouge1_recall, 0.8333333333333333, 1e-9);
    EXPECT_NEAR(report.rouge2_f, 0.34285714285714286, 1e-9);
    EXPECT_NEAR(report.rouge2_recall, 0.75, 1e-9);
    EXPECT_THROW(trustsum::evaluate_corpus({}), std::invalid_argument);
}

TEST(EvaluateCorpus, SingleTokenReferenceSkipsRougeTwo) {
    std::vector<std::pair<Ids, Ids>> outputs = {{{7}, {7}}};
    auto report = trustsum::evaluate_corpus(outputs);
    EXPECT_NEAR(report.bleu, 1.0, 1e-12);
    EXPECT_NEAR(report.rouge1_f, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(report.rouge2_f, 0.0);
}

TEST(ReportCsv, PercentScalingAndLayout) {
    trustsum::MetricReport report;
    report.bleu = 0.304;
    report.rouge1_f = 0.503;
    report.rouge1_recall = 0.55;
    report.rouge2_f = 0.249;
    report.rouge2_recall = 0.26;
    report.n_pairs = 12;
    const std::string csv = trustsum::report_csv(report);
    EXPECT_EQ(csv,
              "metric,value\n"
              "bleu,30.400000\n"
              "rouge1_f,50.300000\n"
              "rouge1_recall,55.000000\n"
              "rouge2_f,24.900000\n"
              "rouge2_recall,26.000000\n"
              "n_pairs,12\n");
}

}  // namespace
