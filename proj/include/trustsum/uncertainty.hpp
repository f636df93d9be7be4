#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "trustsum/model.hpp"

namespace trustsum {

// Shannon entropy of a next-token distribution, in nats, with 0*ln 0 = 0.
inline double token_entropy(const Distribution& dist) {
    if (!is_valid_distribution(dist)) throw std::invalid_argument("not a probability distribution");
    double entropy = 0.0;
    for (double p : dist)
        if (p > 0.0) entropy -= p * std::log(p);
    return entropy;
}

enum class ConfidenceLabel { kHigh, kMedium, kLow };

inline const char* confidence_label_name(ConfidenceLabel label) {
    switch (label) {
        case ConfidenceLabel::kHigh: return "high";
        case ConfidenceLabel::kMedium: return "medium";
        case ConfidenceLabel::kLow: return "low";
    }
    return "medium";
}

struct UncertaintyThresholds {
    double t_lo = 0.0;
    double t_hi = 0.0;
};

// Default label boundaries at 33% / 66% of the maximum possible entropy ln K.
inline UncertaintyThresholds default_thresholds(int vocab_size) {
    const double max_entropy = std::log(static_cast<double>(vocab_size));
    return {0.33 * max_entropy, 0.66 * max_entropy};
}

struct UncertaintyProfile {
    std::vector<double> per_token_entropy;
    double mean = 0.0;
    double sum = 0.0;
    double max = 0.0;
    std::vector<ConfidenceLabel> labels;
};

// Per-step entropies and confidence labels for a generated sequence. The
// entropy is a property of each step's full distribution; the chosen tokens
// only fix the profile length. Below t_lo the step is labelled
// high-confidence, above t_hi low-confidence, medium between.
inline UncertaintyProfile profile(const std::vector<Distribution>& dists,
                                  const std::vector<int>& chosen,
                                  UncertaintyThresholds thresholds) {
    if (dists.size() != chosen.size())
        throw std::invalid_argument("distribution count does not match chosen token count");
    if (!(thresholds.t_lo >= 0.0) || !(thresholds.t_lo < thresholds.t_hi))
        throw std::invalid_argument("thresholds must satisfy 0 <= t_lo < t_hi");
    UncertaintyProfile result;
    result.per_token_entropy.reserve(dists.size());
    result.labels.reserve(dists.size());
    for (const auto& dist : dists) {
        const double h = token_entropy(dist);
        result.per_token_entropy.push_back(h);
        result.sum += h;
        result.max = std::max(result.max, h);
        if (h < thresholds.t_lo)
            result.labels.push_back(ConfidenceLabel::kHigh);
        else if (h > thresholds.t_hi)
            result.labels.push_back(ConfidenceLabel::kLow);
        else
            result.labels.push_back(ConfidenceLabel::kMedium);
    }
    if (!dists.empty()) result.mean = result.sum / static_cast<double>(dists.size());
    return result;
}

}  // namespace trustsum
