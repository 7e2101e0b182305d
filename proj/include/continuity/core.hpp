#pragma once

// Attention-weighted nonlinear Naive Bayes scoring.
//
// A candidate sentence is scored against a vector of pairwise log-probabilities
// log P(on-topic | chunk_i, candidate), one per history chunk, plus two
// out-of-distribution log-probabilities of the candidate: under the topic
// corpus, log P(S|y), and under the background corpus, log P(S).
//
//   log p_nlu = min(0, F(v) + alpha(F) * d)
//
// F interpolates between the max and the mean of v through tanh(max), alpha is
// a sine-shaped coefficient peaking where exp(F) = 0.5, and d is the clamped
// log-probability difference between the two OOD estimates.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "continuity/errors.hpp"

namespace continuity {

enum class ResidualSign : int {
    // d = log P(S|y) - log P(S): topic-specific sentences raise p_nlu.
    topic_affinity = 1,
    // d = log P(S) - log P(S|y): the sign as written in the log-linear expansion.
    literal = -1,
};

struct Hyperparams {
    double epsilon = 0.001;
    double eta = 0.2;
    ResidualSign residual_sign = ResidualSign::topic_affinity;
    double decision_threshold = 0.5;
    std::size_t window = 4;
    std::size_t stride = 2;

    double log_epsilon() const { return std::log(epsilon); }

    void validate() const {
        if (!(epsilon > 0.0 && epsilon < 0.5))
            throw InputDomainError("epsilon must lie in (0, 0.5), got " + std::to_string(epsilon));
        if (!(eta > 0.0) || !std::isfinite(eta))
            throw InputDomainError("eta must be positive and finite, got " + std::to_string(eta));
        if (!(decision_threshold > 0.0 && decision_threshold < 1.0))
            throw InputDomainError("decision_threshold must lie in (0, 1), got " +
                                   std::to_string(decision_threshold));
        if (window < 1) throw InputDomainError("window must be at least 1");
        if (stride < 1 || stride > window)
            throw InputDomainError("stride must lie in [1, window], got " + std::to_string(stride));
    }

    // Non-fatal problems. p -> p + beta*sin(pi*p) is monotone only for |beta| < 1/pi.
    std::vector<std::string> warnings() const {
        std::vector<std::string> out;
        if (eta >= std::numbers::inv_pi)
            out.push_back("eta = " + std::to_string(eta) +
                          " >= 1/pi; p_nlu may no longer be monotone in p_att");
        return out;
    }
};

// A probability that has been clamped to [epsilon, 1 - epsilon] and can
// therefore always be logged.
class Probability {
public:
    double value() const { return value_; }
    double log() const { return std::log(value_); }

    friend bool operator==(const Probability&, const Probability&) = default;

private:
    explicit Probability(double v) : value_(v) {}
    friend Probability clamp_probability(double p, const Hyperparams& hp);

    double value_;
};

inline Probability clamp_probability(double p, const Hyperparams& hp) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0)
        throw InputDomainError("probability outside [0, 1]: " + std::to_string(p));
    return Probability(std::clamp(p, hp.epsilon, 1.0 - hp.epsilon));
}

enum class Verdict { on_topic, off_topic };

inline std::string_view to_string(Verdict v) {
    return v == Verdict::on_topic ? "on_topic" : "off_topic";
}

struct NluScore {
    double log_p_max = 0.0;
    double log_p_avg = 0.0;
    double attention_term = 0.0;  // F
    Probability p_att;            // clamp(exp(F))
    double alpha = 0.0;
    double log_diff = 0.0;        // oriented by residual_sign
    double residual_term = 0.0;
    double log_p_raw = 0.0;       // F + residual before the ceiling
    double log_p_nlu = 0.0;       // min(0, log_p_raw)
    Probability p_nlu;
    Verdict verdict = Verdict::off_topic;
};

namespace detail {

inline void check_log_prob(double x, const Hyperparams& hp, std::string_view what) {
    if (!std::isfinite(x) || x > 0.0 || x < hp.log_epsilon() - 1e-12)
        throw InputDomainError(std::string(what) + " is not a clamped log-probability: " +
                               std::to_string(x));
}

inline void check_attention_vector(std::span<const double> v) {
    if (v.empty()) throw InputDomainError("attention vector is empty");
    for (double x : v) {
        if (!std::isfinite(x) || x > 0.0)
            throw InputDomainError("attention entry is not a log-probability: " + std::to_string(x));
    }
}

}  // namespace detail

// F = [1 + tanh(M)] M - tanh(M) A, with M = max(v) and A = mean(v).
// Evaluated as M + tanh(M) (M - A) so that M == A yields M exactly.
namespace detail {

// Mean distance below the maximum, M - A. Summing the gaps rather than the
// entries makes it exactly zero when all entries are equal.
inline double mean_gap(std::span<const double> v, double max) {
    double gap = 0.0;
    for (double x : v) gap += max - x;
    return gap / static_cast<double>(v.size());
}

}  // namespace detail

inline double attention_functional(std::span<const double> v) {
    detail::check_attention_vector(v);
    const double max = *std::max_element(v.begin(), v.end());
    return max + std::tanh(max) * detail::mean_gap(v, max);
}

// alpha = sin(pi e^F) / e^F * eta / |ln eps|
inline double residual_coefficient(double attention_term, const Hyperparams& hp) {
    if (!std::isfinite(attention_term) || attention_term > 0.0)
        throw InputDomainError("attention term must be a finite log-probability, got " +
                               std::to_string(attention_term));
    const double p = std::exp(attention_term);
    // sin(pi p) / p never exceeds pi; rounding can push it a hair above for tiny p.
    // Reflecting around 1 keeps the root at p = 1 exact.
    const double sin_pi_p = p >= 0.5 ? std::sin(std::numbers::pi * (1.0 - p)) : std::sin(std::numbers::pi * p);
    const double shape = p > 0.0 ? sin_pi_p / p : std::numbers::pi;
    return std::clamp(shape, 0.0, std::numbers::pi) * hp.eta / std::abs(hp.log_epsilon());
}

inline double oriented_log_diff(double log_p_sn, double log_p_sn_given_y, const Hyperparams& hp) {
    return hp.residual_sign == ResidualSign::topic_affinity ? log_p_sn_given_y - log_p_sn
                                                            : log_p_sn - log_p_sn_given_y;
}

inline double residual_term(double log_p_sn, double log_p_sn_given_y, double alpha,
                            const Hyperparams& hp) {
    detail::check_log_prob(log_p_sn, hp, "log P(S)");
    detail::check_log_prob(log_p_sn_given_y, hp, "log P(S|y)");
    if (!std::isfinite(alpha) || alpha < 0.0)
        throw InputDomainError("residual coefficient must be nonnegative, got " +
                               std::to_string(alpha));
    return alpha * oriented_log_diff(log_p_sn, log_p_sn_given_y, hp);
}

// Fills the attention, residual and output fields; max/avg/alpha/log_diff are
// left for score_nlu to populate.
inline NluScore combine(double attention_term, double residual, const Hyperparams& hp) {
    const double raw = attention_term + residual;
    const double capped = std::min(0.0, raw);
    const Probability p_nlu = clamp_probability(std::exp(capped), hp);
    return NluScore{
        .attention_term = attention_term,
        .p_att = clamp_probability(std::exp(std::min(0.0, attention_term)), hp),
        .residual_term = residual,
        .log_p_raw = raw,
        .log_p_nlu = capped,
        .p_nlu = p_nlu,
        .verdict = p_nlu.value() >= hp.decision_threshold ? Verdict::on_topic : Verdict::off_topic,
    };
}

// Sum of v plus |v| (log P(S) - log P(S|y)). Unnormalized; a comparator only.
inline double linear_naive_bayes(std::span<const double> v, double log_p_sn,
                                 double log_p_sn_given_y) {
    detail::check_attention_vector(v);
    const double sum = std::accumulate(v.begin(), v.end(), 0.0);
    return sum + static_cast<double>(v.size()) * (log_p_sn - log_p_sn_given_y);
}

inline NluScore score_nlu(std::span<const double> pair_log_probs, double log_p_sn,
                          double log_p_sn_given_y, const Hyperparams& hp) {
    const double f = attention_functional(pair_log_probs);
    const double alpha = residual_coefficient(f, hp);
    NluScore score = combine(f, residual_term(log_p_sn, log_p_sn_given_y, alpha, hp), hp);
    score.log_p_max = *std::max_element(pair_log_probs.begin(), pair_log_probs.end());
    score.log_p_avg = score.log_p_max - detail::mean_gap(pair_log_probs, score.log_p_max);
    score.alpha = alpha;
    score.log_diff = oriented_log_diff(log_p_sn, log_p_sn_given_y, hp);
    return score;
}

}  // namespace continuity
