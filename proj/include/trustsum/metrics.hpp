#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trustsum/common.hpp"

namespace trustsum {

namespace detail {

inline std::map<std::vector<int>, int> ngram_counts(std::span<const int> tokens, int n) {
    std::map<std::vector<int>, int> counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
        ++counts[std::vector<int>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                  tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    return counts;
}

}  // namespace detail

struct NgramPrecision {
    long long clipped = 0;  // candidate n-gram count clipped by reference occurrences
    long long total = 0;    // candidate n-gram count
};

inline NgramPrecision modified_precision(std::span<const int> candidate,
                                         std::span<const int> reference, int n) {
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(reference, n);
    NgramPrecision p;
    for (const auto& [gram, count] : cand) {
        p.total += count;
        auto it = ref.find(gram);
        if (it != ref.end()) p.clipped += std::min(count, it->second);
    }
    return p;
}

// Sentence BLEU with one reference: geometric mean of clipped n-gram
// precisions for n = 1..min(max_n, cand_len, ref_len), brevity penalty
// exp(1 - ref_len/cand_len) for short candidates. Zero counts at n >= 2 are
// smoothed to 1/(total+1); a zero unigram overlap scores 0 outright, as does
// an empty candidate. The smoothing choice is frozen by golden tests; scores
// are comparable only within this implementation.
inline double bleu(std::span<const int> candidate, std::span<const int> reference, int max_n = 4) {
    if (reference.empty()) throw std::invalid_argument("reference must be non-empty");
    if (max_n < 1) throw std::invalid_argument("max_n must be >= 1");
    const auto cand_len = static_cast<long long>(candidate.size());
    const auto ref_len = static_cast<long long>(reference.size());
    if (cand_len == 0) return 0.0;

    const int effective_n =
        std::min<long long>({static_cast<long long>(max_n), cand_len, ref_len});
    double log_sum = 0.0;
    for (int n = 1; n <= effective_n; ++n) {
        const NgramPrecision p = modified_precision(candidate, reference, n);
        double precision;
        if (p.clipped == 0) {
            if (n == 1) return 0.0;
            precision = 1.0 / static_cast<double>(p.total + 1);
        } else {
            precision = static_cast<double>(p.clipped) / static_cast<double>(p.total);
        }
        log_sum += std::log(precision);
    }
    double score = std::exp(log_sum / effective_n);
    if (cand_len < ref_len)
        score *= std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return score;
}

struct RougeScore {
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
};

// ROUGE-n: overlap = sum over n-grams of min(candidate count, reference
// count); recall over reference n-grams, precision over candidate n-grams,
// harmonic-mean F1 (0 when both vanish).
inline RougeScore rouge_n(std::span<const int> candidate, std::span<const int> reference, int n) {
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    if (static_cast<int>(reference.size()) < n)
        throw std::invalid_argument("reference shorter than n");
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(reference, n);
    long long overlap = 0;
    long long ref_total = 0;
    for (const auto& [gram, count] : ref) {
        ref_total += count;
        auto it = cand.find(gram);
        if (it != cand.end()) overlap += std::min(count, it->second);
    }
    long long cand_total = 0;
    for (const auto& [gram, count] : cand) cand_total += count;

    RougeScore score;
    score.recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
    score.precision =
        cand_total == 0 ? 0.0 : static_cast<double>(overlap) / static_cast<double>(cand_total);
    if (score.recall + score.precision > 0.0)
        score.f1 = 2.0 * score.recall * score.precision / (score.recall + score.precision);
    return score;
}

struct MetricReport {
    double bleu = 0.0;
    double rouge1_f = 0.0;
    double rouge1_recall = 0.0;
    double rouge2_f = 0.0;
    double rouge2_recall = 0.0;
    int n_pairs = 0;
};

// Macro-average of per-pair scores. Pairs whose reference is shorter than 2
// tokens contribute 0 to the ROUGE-2 columns instead of erroring.
inline MetricReport evaluate_corpus(
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& outputs) {
    if (outputs.empty()) throw std::invalid_argument("no scored pairs");
    MetricReport report;
    report.n_pairs = static_cast<int>(outputs.size());
    for (const auto& [candidate, reference] : outputs) {
        report.bleu += bleu(candidate, reference);
        const RougeScore r1 = rouge_n(candidate, reference, 1);
        report.rouge1_f += r1.f1;
        report.rouge1_recall += r1.recall;
        if (reference.size() >= 2) {
            const RougeScore r2 = rouge_n(candidate, reference, 2);
            report.rouge2_f += r2.f1;
            report.rouge2_recall += r2.recall;
        }
    }
    const double inv = 1.0 / report.n_pairs;
    report.bleu *= inv;
    report.rouge1_f *= inv;
    report.rouge1_recall *= inv;
    report.rouge2_f *= inv;
    report.rouge2_recall *= inv;
    return report;
}

// `metric,value` rows; metric fractions scaled to percentages for
// readability, mirroring how such tables are usually printed.
inline std::string report_csv(const MetricReport& report) {
    std::string out = "metric,value\n";
    out += "bleu," + format_fixed(100.0 * report.bleu) + "\n";
    out += "rouge1_f," + format_fixed(100.0 * report.rouge1_f) + "\n";
    out += "rouge1_recall," + format_fixed(100.0 * report.rouge1_recall) + "\n";
    out += "rouge2_f," + format_fixed(100.0 * report.rouge2_f) + "\n";
    out += "rouge2_recall," + format_fixed(100.0 * report.rouge2_recall) + "\n";
    out += "n_pairs," + std::to_string(report.n_pairs) + "\n";
    return out;
}

}  // namespace trustsum
