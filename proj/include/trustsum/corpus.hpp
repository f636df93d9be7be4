#pragma once

#include <array>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "trustsum/common.hpp"
#include "trustsum/lexicon.hpp"

namespace trustsum {

// Reserved ids. UNK is part of the reserved block, so content types start at 5.
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kSepId = 2;
constexpr int kEosId = 3;
constexpr int kUnkId = 4;
constexpr int kNumReserved = 5;

inline const std::array<std::string, 5>& reserved_tokens() {
    static const std::array<std::string, 5> r = {"<pad>", "<bos>", "<sep>", "<eos>", "<unk>"};
    return r;
}

struct Vocab {
    std::vector<std::string> tokens;             // id -> token, dense 0..K-1
    std::unordered_map<std::string, int> ids;    // token -> id

    int size() const { return static_cast<int>(tokens.size()); }

    int id_of(const std::string& token) const {
        auto it = ids.find(token);
        return it == ids.end() ? kUnkId : it->second;
    }

    const std::string& token_of(int id) const {
        if (id < 0 || id >= size()) return tokens[kUnkId];
        return tokens[static_cast<std::size_t>(id)];
    }

    bool operator==(const Vocab& other) const { return tokens == other.tokens; }

    void rebuild_index() {
        ids.clear();
        for (int i = 0; i < size(); ++i) ids[tokens[static_cast<std::size_t>(i)]] = i;
    }
};

struct Pair {
    std::string id;
    std::vector<int> document;
    std::vector<int> summary;
    std::vector<std::string> risk_tags;

    bool operator==(const Pair&) const = default;
};

struct Corpus {
    std::vector<Pair> pairs;
    Vocab vocab;

    bool operator==(const Corpus&) const = default;
};

enum class NoiseMode { kSummarySwap, kTokenReplace };

struct NoiseSpec {
    double ratio = 0.0;  // fraction of pairs to corrupt, in [0,1]
    NoiseMode mode = NoiseMode::kSummarySwap;
    std::uint64_t seed = 0;
};

// Frequency-ranked whitespace vocabulary; ties broken lexicographically.
// Content types fill ids 5..max_size-1 after the reserved block.
inline Vocab build_vocab(const std::vector<std::pair<std::string, std::string>>& raw_pairs,
                         int max_size) {
    if (raw_pairs.empty()) throw std::runtime_error("empty corpus");
    if (max_size < kNumReserved) throw std::invalid_argument("max_size must be at least 5");

    std::map<std::string, std::int64_t> freq;  // ordered map gives the lexicographic tie-break
    for (const auto& [document, summary] : raw_pairs) {
        for (const auto& t : split_whitespace(lowercase(document))) ++freq[t];
        for (const auto& t : split_whitespace(lowercase(summary))) ++freq[t];
    }

    std::vector<std::pair<std::string, std::int64_t>> types(freq.begin(), freq.end());
    std::stable_sort(types.begin(), types.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab vocab;
    for (const auto& r : reserved_tokens()) vocab.tokens.push_back(r);
    const std::size_t budget = static_cast<std::size_t>(max_size - kNumReserved);
    for (std::size_t i = 0; i < types.size() && i < budget; ++i) vocab.tokens.push_back(types[i].first);
    vocab.rebuild_index();
    return vocab;
}

inline std::vector<int> encode(const std::string& text, const Vocab& vocab) {
    std::vector<int> ids;
    for (const auto& t : split_whitespace(lowercase(text))) ids.push_back(vocab.id_of(t));
    return ids;
}

inline std::string decode_text(const std::vector<int>& ids, const Vocab& vocab) {
    std::vector<std::string> parts;
    parts.reserve(ids.size());
    for (int id : ids) parts.push_back(vocab.token_of(id));
    return join(parts);
}

namespace synth {

// Slot banks for the incident-report templates. Banks are mutually disjoint
// and contain no lexicon term, so category presence is controlled entirely by
// the embedded risk-note sentence.
inline const std::vector<std::string>& units() {
    static const std::vector<std::string> v = {"crew",       "team",       "operator",   "inspector",
                                               "technician", "contractor", "supervisor", "analyst"};
    return v;
}
inline const std::vector<std::string>& sites() {
    static const std::vector<std::string> v = {"northside", "harbor",   "depot",      "refinery",
                                               "laboratory", "warehouse", "terminal",  "plant",
                                               "substation", "pipeline"};
    return v;
}
inline const std::vector<std::string>& events() {
    static const std::vector<std::string> v = {"outage", "stoppage", "delay",       "fault",
                                               "alarm",  "shutdown", "jam",         "malfunction",
                                               "slowdown", "backlog"};
    return v;
}
inline const std::vector<std::string>& shifts() {
    static const std::vector<std::string> v = {"day", "night", "morning", "evening"};
    return v;
}
inline const std::vector<std::string>& severities() {
    static const std::vector<std::string> v = {"minor", "moderate", "severe", "critical"};
    return v;
}
inline const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> v = {"routine",  "checks",    "continued", "without",
                                               "interruption", "staff", "reviewed",  "procedures",
                                               "equipment", "remained", "stable",    "throughout",
                                               "monitoring", "systems", "normal",    "operations"};
    return v;
}

}  // namespace synth

// Stream id for the risk-embedding coin; pair i embeds risk terms iff the
// i-th uniform01 draw of Rng(mix_seed(seed, kRiskSelectStream)) is < 0.5.
constexpr std::uint64_t kRiskSelectStream = 1;
constexpr std::uint64_t kContentStream = 2;

// Templated incident reports with deterministic extractive summaries.
//
// Document:  "incident report : <unit> at <site> reported <event> during
//            <shift> shift . status <sev> ."
//            + optional risk note "risk note : <term> [<term2>] ."
//            + 1..8 filler sentences "<w> <w> <w> <w> ." (20..60 tokens total).
// Summary:   "<sev> <event> at <site> ; <unit> notified"
//            + for half of the risk pairs "; <term> risk"
//            (7 or 10 tokens; one more counting the EOS training target).
//
// Per pair the content stream draws, in order: unit, site, event, shift, sev,
// filler count; for risk pairs the category-count coin, category and term
// picks; then filler words and, for risk pairs, the summary-extension coin.
inline Corpus generate_synthetic_corpus(std::uint64_t seed, int n_pairs, const RiskLexicon& lexicon) {
    if (n_pairs < 1) throw std::invalid_argument("n_pairs must be >= 1");
    if (lexicon.categories.empty()) throw std::invalid_argument("lexicon needs at least one category");
    lexicon.validate();

    Rng risk_rng(mix_seed(seed, kRiskSelectStream));
    Rng rng(mix_seed(seed, kContentStream));

    auto pick = [&rng](const std::vector<std::string>& bank) -> const std::string& {
        return bank[rng.below(bank.size())];
    };

    std::vector<std::pair<std::string, std::string>> raw;
    std::vector<std::vector<std::string>> tags(static_cast<std::size_t>(n_pairs));
    raw.reserve(static_cast<std::size_t>(n_pairs));

    for (int i = 0; i < n_pairs; ++i) {
        const bool embed_risk = risk_rng.uniform01() < 0.5;

        const std::string& unit = pick(synth::units());
        const std::string& site = pick(synth::sites());
        const std::string& event = pick(synth::events());
        const std::string& shift = pick(synth::shifts());
        const std::string& sev = pick(synth::severities());

        int filler_count = 1 + static_cast<int>(rng.below(8));
        if (embed_risk && filler_count == 8) filler_count = 7;  // keeps length <= 60

        std::string document = "incident report : " + unit + " at " + site + " reported " + event +
                               " during " + shift + " shift . status " + sev + " .";

        std::string risk_term;
        if (embed_risk) {
            const bool two_categories = rng.uniform01() < 0.3;
            const std::size_t n_cats = two_categories ? 2 : 1;
            std::size_t first = rng.below(lexicon.categories.size());
            std::vector<std::size_t> cats = {first};
            if (n_cats == 2 && lexicon.categories.size() > 1) {
                std::size_t second = rng.below(lexicon.categories.size() - 1);
                if (second >= first) ++second;
                cats.push_back(second);
            }
            document += " risk note :";
            for (std::size_t c : cats) {
                const auto& category = lexicon.categories[c];
                const std::string& term = category.terms[rng.below(category.terms.size())];
                document += " " + term;
                if (risk_term.empty()) risk_term = term;
                tags[static_cast<std::size_t>(i)].push_back(category.name);
            }
            document += " .";
        }

        for (int f = 0; f < filler_count; ++f) {
            for (int w = 0; w < 4; ++w) document += " " + pick(synth::filler_words());
            document += " .";
        }

        std::string summary = sev + " " + event + " at " + site + " ; " + unit + " notified";
        if (embed_risk && rng.uniform01() < 0.5) summary += " ; " + risk_term + " risk";

        raw.emplace_back(std::move(document), std::move(summary));
    }

    Corpus corpus;
    corpus.vocab = build_vocab(raw, 512);
    for (int i = 0; i < n_pairs; ++i) {
        Pair pair;
        char id[32];
        std::snprintf(id, sizeof(id), "synth-%04d", i);
        pair.id = id;
        pair.document = encode(raw[static_cast<std::size_t>(i)].first, corpus.vocab);
        pair.summary = encode(raw[static_cast<std::size_t>(i)].second, corpus.vocab);
        pair.risk_tags = tags[static_cast<std::size_t>(i)];
        corpus.pairs.push_back(std::move(pair));
    }
    return corpus;
}

// Corrupts exactly lround(ratio * N) pairs, chosen as the first entries of a
// seeded index shuffle. Summary-swap deranges the selected pairs' summaries
// (Sattolo cycle, no fixed points); token-replace resamples 30% of summary
// positions from non-reserved ids, never keeping the original token.
inline Corpus inject_noise(const Corpus& corpus, const NoiseSpec& spec) {
    if (spec.ratio < 0.0 || spec.ratio > 1.0) throw std::invalid_argument("noise ratio must be in [0,1]");
    const std::size_t n = corpus.pairs.size();
    const std::size_t m = static_cast<std::size_t>(std::lround(spec.ratio * static_cast<double>(n)));

    Corpus out = corpus;
    if (m == 0) return out;
    if (spec.mode == NoiseMode::kSummarySwap && n < 2)
        throw std::invalid_argument("summary-swap needs at least 2 pairs");

    Rng rng(spec.seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::size_t> selected(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));

    if (spec.mode == NoiseMode::kSummarySwap) {
        if (m == 1) {
            // lone selection borrows the summary of a random non-selected pair
            std::size_t j = rng.below(n - 1);
            std::size_t donor = order[1 + j];
            out.pairs[selected[0]].summary = corpus.pairs[donor].summary;
            return out;
        }
        std::vector<std::size_t> perm(m);
        for (std::size_t i = 0; i < m; ++i) perm[i] = i;
        for (std::size_t i = m - 1; i > 0; --i) {  // Sattolo: j strictly below i
            std::size_t j = rng.below(i);
            std::swap(perm[i], perm[j]);
        }
        for (std::size_t i = 0; i < m; ++i)
            out.pairs[selected[i]].summary = corpus.pairs[selected[perm[i]]].summary;
        return out;
    }

    const int k = corpus.vocab.size();
    if (k - kNumReserved < 2)
        throw std::invalid_argument("token-replace needs at least 2 non-reserved vocab entries");
    for (std::size_t idx : selected) {
        auto& summary = out.pairs[idx].summary;
        if (summary.empty()) continue;
        const std::size_t len = summary.size();
        const std::size_t n_rep =
            std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.3 * static_cast<double>(len))));
        std::vector<std::size_t> positions(len);
        for (std::size_t i = 0; i < len; ++i) positions[i] = i;
        rng.shuffle(positions);
        for (std::size_t r = 0; r < n_rep; ++r) {
            const int original = summary[positions[r]];
            int replacement = original;
            while (replacement == original)
                replacement = kNumReserved + static_cast<int>(rng.below(static_cast<std::uint64_t>(k - kNumReserved)));
            summary[positions[r]] = replacement;
        }
    }
    return out;
}

// JSONL adapter: one object per line with fields id, document, summary and
// optional risk_tags. The vocabulary is rebuilt from the file's text.
inline Corpus load_jsonl(const std::string& path, int max_vocab = 512) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);

    struct RawPair {
        std::string id, document, summary;
        std::vector<std::string> risk_tags;
    };
    std::vector<RawPair> rows;
    std::unordered_set<std::string> seen_ids;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
            RawPair row;
            row.id = obj.at("id").get<std::string>();
            row.document = obj.at("document").get<std::string>();
            row.summary = obj.at("summary").get<std::string>();
            if (obj.contains("risk_tags"))
                for (const auto& t : obj["risk_tags"]) row.risk_tags.push_back(t.get<std::string>());
            if (row.document.empty() || row.summary.empty())
                throw std::runtime_error("document and summary must be non-empty");
            rows.push_back(std::move(row));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": parse error at line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
        if (!seen_ids.insert(rows.back().id).second)
            throw std::runtime_error(path + ": duplicate pair id at line " + std::to_string(line_no) +
                                     ": " + rows.back().id);
    }
    if (rows.empty()) throw std::runtime_error("empty corpus");

    std::vector<std::pair<std::string, std::string>> raw;
    raw.reserve(rows.size());
    for (const auto& r : rows) raw.emplace_back(r.document, r.summary);

    Corpus corpus;
    corpus.vocab = build_vocab(raw, max_vocab);
    for (auto& r : rows) {
        Pair pair;
        pair.id = std::move(r.id);
        pair.document = encode(r.document, corpus.vocab);
        pair.summary = encode(r.summary, corpus.vocab);
        pair.risk_tags = std::move(r.risk_tags);
        corpus.pairs.push_back(std::move(pair));
    }
    return corpus;
}

inline void save_jsonl(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    for (const auto& pair : corpus.pairs) {
        nlohmann::ordered_json obj;
        obj["id"] = pair.id;
        obj["document"] = decode_text(pair.document, corpus.vocab);
        obj["summary"] = decode_text(pair.summary, corpus.vocab);
        if (!pair.risk_tags.empty()) obj["risk_tags"] = pair.risk_tags;
        out << obj.dump() << "\n";
    }
}

// Plain-text vocab file: one token per line, line number = id.
inline void save_vocab_file(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocab file: " + path);
    for (const auto& t : vocab.tokens) out << t << "\n";
}

inline Vocab load_vocab_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocab file: " + path);
    Vocab vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        vocab.tokens.push_back(line);
    }
    if (vocab.size() < kNumReserved) throw std::runtime_error("vocab file too small: " + path);
    for (int i = 0; i < kNumReserved; ++i)
        if (vocab.tokens[static_cast<std::size_t>(i)] != reserved_tokens()[static_cast<std::size_t>(i)])
            throw std::runtime_error("vocab file missing reserved tokens: " + path);
    vocab.rebuild_index();
    return vocab;
}

}  // namespace trustsum
