#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "trustsum/common.hpp"

namespace trustsum {

struct RiskCategory {
    std::string name;
    double severity = 0.0;  // in (0,1]
    std::vector<std::string> terms;
};

// Category table driving both context extraction and summary scoring.
struct RiskLexicon {
    std::vector<RiskCategory> categories;

    void validate() const {
        std::unordered_set<std::string> names;
        for (const auto& c : categories) {
            if (!names.insert(c.name).second) throw std::invalid_argument("duplicate risk category: " + c.name);
            if (c.severity <= 0.0 || c.severity > 1.0)
                throw std::invalid_argument("severity out of (0,1] for category: " + c.name);
            if (c.terms.empty()) throw std::invalid_argument("empty term list for category: " + c.name);
        }
    }
};

// Per-category severity vector for one document; entry c is the lexicon
// severity of category c when any of its terms occurs, else 0.
struct RiskContext {
    std::vector<double> severities;

    double max_severity() const {
        double m = 0.0;
        for (double s : severities) m = std::max(m, s);
        return m;
    }
};

enum class RiskLevel { kNone, kLow, kMedium, kHigh };

inline const char* risk_level_name(RiskLevel level) {
    switch (level) {
        case RiskLevel::kNone: return "NONE";
        case RiskLevel::kLow: return "LOW";
        case RiskLevel::kMedium: return "MEDIUM";
        case RiskLevel::kHigh: return "HIGH";
    }
    return "NONE";
}

// Grading: none at 0, low up to 1/3, medium up to 2/3, high above.
inline RiskLevel risk_level(const RiskContext& context) {
    const double m = context.max_severity();
    if (m == 0.0) return RiskLevel::kNone;
    if (m <= 1.0 / 3.0) return RiskLevel::kLow;
    if (m <= 2.0 / 3.0) return RiskLevel::kMedium;
    return RiskLevel::kHigh;
}

inline std::string risk_prompt(RiskLevel level) {
    return std::string("[RISK:") + risk_level_name(level) + "]";
}

inline RiskContext context_from_tokens(const std::unordered_set<std::string>& document_tokens,
                                       const RiskLexicon& lexicon) {
    RiskContext context;
    context.severities.reserve(lexicon.categories.size());
    for (const auto& category : lexicon.categories) {
        bool hit = false;
        for (const auto& term : category.terms) {
            if (document_tokens.count(term)) {
                hit = true;
                break;
            }
        }
        context.severities.push_back(hit ? category.severity : 0.0);
    }
    return context;
}

// Omission penalty: sum of active severities whose categories the summary
// fails to mention. Zero context means zero risk for any summary.
inline double risk_score_from_tokens(const std::unordered_set<std::string>& summary_tokens,
                                     const RiskContext& context, const RiskLexicon& lexicon) {
    double score = 0.0;
    for (std::size_t c = 0; c < lexicon.categories.size(); ++c) {
        if (context.severities[c] == 0.0) continue;
        bool covered = false;
        for (const auto& term : lexicon.categories[c].terms) {
            if (summary_tokens.count(term)) {
                covered = true;
                break;
            }
        }
        if (!covered) score += context.severities[c];
    }
    return score;
}

inline std::vector<std::string> uncovered_categories_from_tokens(
    const std::unordered_set<std::string>& summary_tokens, const RiskContext& context,
    const RiskLexicon& lexicon) {
    std::vector<std::string> uncovered;
    for (std::size_t c = 0; c < lexicon.categories.size(); ++c) {
        if (context.severities[c] == 0.0) continue;
        bool covered = false;
        for (const auto& term : lexicon.categories[c].terms) {
            if (summary_tokens.count(term)) {
                covered = true;
                break;
            }
        }
        if (!covered) uncovered.push_back(lexicon.categories[c].name);
    }
    return uncovered;
}

inline nlohmann::ordered_json lexicon_to_json(const RiskLexicon& lexicon) {
    nlohmann::ordered_json root;
    root["categories"] = nlohmann::ordered_json::array();
    for (const auto& c : lexicon.categories) {
        nlohmann::ordered_json cat;
        cat["name"] = c.name;
        cat["severity"] = c.severity;
        cat["terms"] = c.terms;
        root["categories"].push_back(cat);
    }
    return root;
}

inline RiskLexicon lexicon_from_json(const nlohmann::json& root) {
    RiskLexicon lexicon;
    if (!root.is_object() || !root.contains("categories") || !root["categories"].is_array())
        throw std::runtime_error("lexicon JSON must be an object with a \"categories\" array");
    for (const auto& cat : root["categories"]) {
        RiskCategory c;
        c.name = cat.at("name").get<std::string>();
        c.severity = cat.at("severity").get<double>();
        for (const auto& t : cat.at("terms")) c.terms.push_back(t.get<std::string>());
        lexicon.categories.push_back(std::move(c));
    }
    lexicon.validate();
    return lexicon;
}

inline RiskLexicon load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open lexicon file: " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed lexicon JSON in " + path + ": " + e.what());
    }
    return lexicon_from_json(root);
}

inline void save_lexicon(const RiskLexicon& lexicon, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write lexicon file: " + path);
    out << lexicon_to_json(lexicon).dump(2) << "\n";
}

// Six-category lexicon shipped with the toolkit (mirrored in data/default_lexicon.json).
inline RiskLexicon default_lexicon() {
    RiskLexicon lexicon;
    lexicon.categories = {
        {"safety", 1.0, {"explosion", "fire", "collapse", "toxic"}},
        {"medical", 0.9, {"overdose", "sepsis", "hemorrhage", "contamination"}},
        {"security", 0.8, {"breach", "intrusion", "ransomware", "tampering"}},
        {"finance", 0.7, {"insolvency", "default", "writedown", "downgrade"}},
        {"legal", 0.5, {"lawsuit", "violation", "noncompliance", "subpoena"}},
        {"environment", 0.3, {"spill", "contaminants", "emissions", "runoff"}},
    };
    lexicon.validate();
    return lexicon;
}

}  // namespace trustsum
