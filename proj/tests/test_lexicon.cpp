#include "trustsum/lexicon.hpp"

#include <gtest/gtest.h>

namespace {

using trustsum::RiskContext;
using trustsum::RiskLevel;
using trustsum::RiskLexicon;

RiskLexicon lex() { return trustsum::default_lexicon(); }

TEST(Lexicon, DefaultValidatesAndHasSixCategories) {
    RiskLexicon l = lex();
    EXPECT_EQ(l.categories.size(), 6u);
    EXPECT_EQ(l.categories[0].name, "safety");
    EXPECT_DOUBLE_EQ(l.categories[0].severity, 1.0);
    EXPECT_EQ(l.categories[5].name, "environment");
    EXPECT_DOUBLE_EQ(l.categories[5].severity, 0.3);
}

TEST(Lexicon, ValidateRejectsBadCategories) {
    RiskLexicon l;
    l.categories = {{"a", 0.5, {"x"}}, {"a", 0.5, {"y"}}};
    EXPECT_THROW(l.validate(), std::invalid_argument);
    l.categories = {{"a", 0.0, {"x"}}};
    EXPECT_THROW(l.validate(), std::invalid_argument);
    l.categories = {{"a", 1.5, {"x"}}};
    EXPECT_THROW(l.validate(), std::invalid_argument);
    l.categories = {{"a", 0.5, {}}};
    EXPECT_THROW(l.validate(), std::invalid_argument);
}

TEST(RiskLevel, ThresholdsOnMaxSeverity) {
    RiskContext c;
    c.severities = {0, 0, 0, 0, 0, 0};
    EXPECT_EQ(trustsum::risk_level(c), RiskLevel::kNone);
    c.severities[5] = 0.3;
    EXPECT_EQ(trustsum::risk_level(c), RiskLevel::kLow);
    c.severities[5] = 1.0 / 3.0;
    EXPECT_EQ(trustsum::risk_level(c), RiskLevel::kLow);
    c.severities[4] = 0.5;
    EXPECT_EQ(trustsum::risk_level(c), RiskLevel::kMedium);
    c.severities[4] = 2.0 / 3.0;
    EXPECT_EQ(trustsum::risk_level(c), RiskLevel::kMedium);
    c.severities[0] = 0.7;
    EXPECT_EQ(trustsum::risk_level(c), RiskLevel::kHigh);
    c.severities[0] = 1.0;
    EXPECT_EQ(trustsum::risk_level(c), RiskLevel::kHigh);
}

TEST(RiskLevel, PromptStrings) {
    EXPECT_STREQ(trustsum::risk_level_name(RiskLevel::kNone), "NONE");
    EXPECT_EQ(trustsum::risk_prompt(RiskLevel::kNone), "[RISK:NONE]");
    EXPECT_EQ(trustsum::risk_prompt(RiskLevel::kLow), "[RISK:LOW]");
    EXPECT_EQ(trustsum::risk_prompt(RiskLevel::kMedium), "[RISK:MEDIUM]");
    EXPECT_EQ(trustsum::risk_prompt(RiskLevel::kHigh), "[RISK:HIGH]");
}

TEST(RiskContext, ExtractionFromDocumentTokens) {
    RiskLexicon l = lex();
    RiskContext c = trustsum::context_from_tokens({"the", "fire", "spread", "lawsuit"}, l);
    ASSERT_EQ(c.severities.size(), 6u);
    EXPECT_DOUBLE_EQ(c.severities[0], 1.0);  // safety via "fire"
    EXPECT_DOUBLE_EQ(c.severities[4], 0.5);  // legal via "lawsuit"
    EXPECT_DOUBLE_EQ(c.severities[1], 0.0);
    EXPECT_DOUBLE_EQ(c.max_severity(), 1.0);
    EXPECT_EQ(trustsum::risk_level(c), RiskLevel::kHigh);

    RiskContext clean = trustsum::context_from_tokens({"the", "quiet", "afternoon"}, l);
    EXPECT_DOUBLE_EQ(clean.max_severity(), 0.0);
    EXPECT_EQ(trustsum::risk_level(clean), RiskLevel::kNone);
}

TEST(RiskScore, SumsSeveritiesOfUncoveredCategories) {
    RiskLexicon l = lex();
    RiskContext c = trustsum::context_from_tokens({"fire", "lawsuit"}, l);
    // neither category surfaced: 1.0 + 0.5
    EXPECT_DOUBLE_EQ(trustsum::risk_score_from_tokens({"calm", "day"}, c, l), 1.5);
    // safety surfaced via a different safety term than the document used
    EXPECT_DOUBLE_EQ(trustsum::risk_score_from_tokens({"toxic", "day"}, c, l), 0.5);
    EXPECT_DOUBLE_EQ(trustsum::risk_score_from_tokens({"fire", "lawsuit"}, c, l), 0.0);
}

TEST(RiskScore, UncoveredCategoryNamesInLexiconOrder) {
    RiskLexicon l = lex();
    RiskContext c = trustsum::context_from_tokens({"fire", "lawsuit", "spill"}, l);
    auto uncovered = trustsum::uncovered_categories_from_tokens({"nothing"}, c, l);
    EXPECT_EQ(uncovered, (std::vector<std::string>{"safety", "legal", "environment"}));
    uncovered = trustsum::uncovered_categories_from_tokens({"violation"}, c, l);
    EXPECT_EQ(uncovered, (std::vector<std::string>{"safety", "environment"}));
}

TEST(LexiconJson, RoundTripPreservesContent) {
    RiskLexicon l = lex();
    auto j = trustsum::lexicon_to_json(l);
    RiskLexicon back = trustsum::lexicon_from_json(j);
    ASSERT_EQ(back.categories.size(), l.categories.size());
    for (std::size_t i = 0; i < l.categories.size(); ++i) {
        EXPECT_EQ(back.categories[i].name, l.categories[i].name);
        EXPECT_DOUBLE_EQ(back.categories[i].severity, l.categories[i].severity);
        EXPECT_EQ(back.categories[i].terms, l.categories[i].terms);
    }
}

TEST(LexiconJson, RejectsMalformedRoot) {
    EXPECT_THROW(trustsum::lexicon_from_json(nlohmann::json::array()), std::runtime_error);
    EXPECT_THROW(trustsum::lexicon_from_json(nlohmann::json::object()), std::runtime_error);
}

TEST(LexiconJson, FileRoundTripAndShippedDefaultMatches) {
    std::string path = testing::TempDir() + "lexicon_roundtrip.json";
    trustsum::save_lexicon(lex(), path);
    RiskLexicon back = trustsum::load_lexicon(path);
    EXPECT_EQ(back.categories.size(), 6u);
    EXPECT_EQ(back.categories[2].terms, lex().categories[2].terms);
    EXPECT_THROW(trustsum::load_lexicon("/nonexistent/lexicon.json"), std::runtime_error);
}

}  // namespace
