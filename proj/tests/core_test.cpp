#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "continuity/core.hpp"

namespace continuity {
namespace {

const Hyperparams kDefaults{};

Hyperparams literal_sign() {
    Hyperparams hp;
    hp.residual_sign = ResidualSign::literal;
    return hp;
}

// (1 + tanh M) M - tanh(M) A, written out directly rather than rearranged.
double attention_oracle(const std::vector<double>& v) {
    double max = v[0], sum = 0.0;
    for (double x : v) {
        max = std::max(max, x);
        sum += x;
    }
    const double avg = sum / static_cast<double>(v.size());
    return (1.0 + std::tanh(max)) * max - std::tanh(max) * avg;
}

std::vector<double> random_log_vector(std::mt19937_64& rng, double log_eps) {
    std::uniform_int_distribution<int> len(1, 50);
    std::uniform_real_distribution<double> entry(log_eps, 0.0);
    std::vector<double> v(static_cast<std::size_t>(len(rng)));
    for (double& x : v) x = entry(rng);
    return v;
}

TEST(ClampProbability, LowerUpperAndInterior) {
    EXPECT_DOUBLE_EQ(clamp_probability(0.0003, kDefaults).value(), 0.001);
    EXPECT_DOUBLE_EQ(clamp_probability(0.5, kDefaults).value(), 0.5);
    EXPECT_DOUBLE_EQ(clamp_probability(1.0, kDefaults).value(), 0.999);
    EXPECT_DOUBLE_EQ(clamp_probability(0.0, kDefaults).value(), 0.001);
}

TEST(ClampProbability, RejectsOutOfDomain) {
    EXPECT_THROW(clamp_probability(-0.1, kDefaults), InputDomainError);
    EXPECT_THROW(clamp_probability(1.5, kDefaults), InputDomainError);
    EXPECT_THROW(clamp_probability(std::nan(""), kDefaults), InputDomainError);
    EXPECT_THROW(clamp_probability(INFINITY, kDefaults), InputDomainError);
}

TEST(AttentionFunctional, FrozenValues) {
    const std::vector<double> half(5, std::log(0.5));
    EXPECT_NEAR(attention_functional(half), -0.693147, 1e-6);

    // Vectors with prescribed max and mean.
    EXPECT_NEAR(attention_functional(std::vector<double>{-1e-6, -10.0 + 1e-6}), -1e-6, 1e-5);
    EXPECT_NEAR(attention_functional(std::vector<double>{-1e-6, -10.0 + 1e-6}), -5.999999e-06, 1e-9);
    EXPECT_NEAR(attention_functional(std::vector<double>{-20.0, -24.0}), -22.0, 1e-6);
    EXPECT_NEAR(attention_functional(std::vector<double>{-0.01, -5.99}), -0.039899, 1e-6);
}

TEST(AttentionFunctional, EmptyAndPositiveEntriesRejected) {
    EXPECT_THROW(attention_functional(std::vector<double>{}), InputDomainError);
    EXPECT_THROW(attention_functional(std::vector<double>{-1.0, 0.5}), InputDomainError);
}

TEST(AttentionFunctional, SandwichAndOracleAgreementOnRandomVectors) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 10000; ++trial) {
        const std::vector<double> v = random_log_vector(rng, kDefaults.log_epsilon());
        const double f = attention_functional(v);
        const double max = *std::max_element(v.begin(), v.end());
        double avg = 0.0;
        for (double x : v) avg += x;
        avg /= static_cast<double>(v.size());
        ASSERT_LE(avg, f + 1e-12);
        ASSERT_LE(f, max + 1e-12);
        ASSERT_LE(max, 0.0);
        ASSERT_NEAR(f, attention_oracle(v), 1e-12);
    }
}

TEST(AttentionFunctional, CollapseIdentityIsExact) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> entry(kDefaults.log_epsilon(), 0.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double x = entry(rng);
        const std::vector<double> v(1 + static_cast<std::size_t>(trial % 30), x);
        ASSERT_EQ(attention_functional(v), x);
    }
}

TEST(AttentionFunctional, LimitBounds) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::vector<double> v = random_log_vector(rng, kDefaults.log_epsilon());
        const double f = attention_functional(v);
        const double m = *std::max_element(v.begin(), v.end());
        double a = 0.0;
        for (double x : v) a += x;
        a /= static_cast<double>(v.size());
        ASSERT_LE(std::abs(f - m), 2.0 * std::abs(std::tanh(m)) * (m - a) + 1e-12);
        ASSERT_NEAR(std::abs(f - a), (1.0 + std::tanh(m)) * (m - a), 1e-12);
    }
}

TEST(ResidualCoefficient, FrozenValues) {
    EXPECT_NEAR(residual_coefficient(std::log(0.5), kDefaults), 0.057906, 1e-6);
    EXPECT_NEAR(residual_coefficient(0.0, kDefaults), 0.0, 1e-15);
    EXPECT_NEAR(residual_coefficient(std::log(0.001), kDefaults), 0.090954, 1e-3);
    EXPECT_NEAR(residual_coefficient(std::log(0.001), kDefaults), 0.0909582739689203, 1e-12);
}

TEST(ResidualCoefficient, BoundedAndRejectsPositive) {
    const double bound = std::numbers::pi * kDefaults.eta / std::abs(kDefaults.log_epsilon());
    for (int i = 0; i <= 2000; ++i) {
        const double f = -20.0 * i / 2000.0;
        const double a = residual_coefficient(f, kDefaults);
        ASSERT_GE(a, 0.0);
        ASSERT_LE(a, bound + 1e-15);
    }
    EXPECT_THROW(residual_coefficient(0.1, kDefaults), InputDomainError);
}

TEST(ResidualTerm, FrozenValuesBothSigns) {
    const double alpha = 0.057906;
    EXPECT_NEAR(residual_term(std::log(0.001), std::log(0.999), alpha, kDefaults), 0.39994, 1e-5);
    EXPECT_NEAR(residual_term(std::log(0.001), std::log(0.999), alpha, literal_sign()), -0.39994, 1e-5);
    EXPECT_EQ(residual_term(std::log(0.3), std::log(0.3), alpha, kDefaults), 0.0);
}

TEST(ResidualTerm, DomainChecks) {
    EXPECT_THROW(residual_term(0.1, -1.0, 0.05, kDefaults), InputDomainError);
    EXPECT_THROW(residual_term(-1.0, -8.0, 0.05, kDefaults), InputDomainError);
    EXPECT_THROW(residual_term(-1.0, -1.0, -0.05, kDefaults), InputDomainError);
}

TEST(Combine, FrozenValues) {
    const NluScore s = combine(std::log(0.5), 0.3999420650967977, kDefaults);
    EXPECT_NEAR(s.log_p_nlu, -0.293205, 1e-5);
    EXPECT_NEAR(s.p_nlu.value(), 0.745869, 1e-5);
    EXPECT_EQ(s.verdict, Verdict::on_topic);

    const NluScore flat = combine(std::log(0.5), 0.0, kDefaults);
    EXPECT_DOUBLE_EQ(flat.p_nlu.value(), 0.5);
    EXPECT_EQ(flat.p_nlu, flat.p_att);

    const NluScore ceiling = combine(-1e-9, 0.01, kDefaults);
    EXPECT_EQ(ceiling.log_p_nlu, 0.0);
    EXPECT_DOUBLE_EQ(ceiling.p_nlu.value(), 0.999);
}

TEST(Combine, VerdictFollowsThreshold) {
    Hyperparams hp;
    hp.decision_threshold = 0.7;
    EXPECT_EQ(combine(std::log(0.69), 0.0, hp).verdict, Verdict::off_topic);
    EXPECT_EQ(combine(std::log(0.71), 0.0, hp).verdict, Verdict::on_topic);
}

TEST(LinearNaiveBayes, FrozenValues) {
    const std::vector<double> v{std::log(0.5), std::log(0.5)};
    EXPECT_NEAR(linear_naive_bayes(v, std::log(0.1), std::log(0.2)), -2.772589, 1e-6);
    EXPECT_DOUBLE_EQ(linear_naive_bayes(std::vector<double>{-0.7}, -2.0, -2.0), -0.7);
    EXPECT_THROW(linear_naive_bayes(std::vector<double>{}, -1.0, -1.0), InputDomainError);
}

TEST(LinearNaiveBayes, NonlinearFormDegeneratesToIt) {
    std::mt19937_64 rng(5);
    const Hyperparams hp = literal_sign();
    std::uniform_real_distribution<double> lp(hp.log_epsilon(), 0.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::vector<double> v = random_log_vector(rng, hp.log_epsilon());
        const double lsn = lp(rng), lgy = lp(rng);
        double sum = 0.0;
        for (double x : v) sum += x;
        const NluScore s =
            combine(sum, residual_term(lsn, lgy, static_cast<double>(v.size()), hp), hp);
        const double expected = linear_naive_bayes(v, lsn, lgy);
        ASSERT_NEAR(s.log_p_raw, expected, 1e-12);
        ASSERT_NEAR(s.log_p_nlu, std::min(0.0, expected), 1e-12);
    }
}

TEST(ScoreNlu, PopulatesEveryFieldAndHoldsInvariants) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> lp(kDefaults.log_epsilon(), 0.0);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::vector<double> v = random_log_vector(rng, kDefaults.log_epsilon());
        const double lsn = lp(rng), lgy = lp(rng);
        const NluScore s = score_nlu(v, lsn, lgy, kDefaults);
        ASSERT_LE(s.log_p_avg, s.attention_term + 1e-12);
        ASSERT_LE(s.attention_term, s.log_p_max + 1e-12);
        ASSERT_DOUBLE_EQ(s.log_diff, lgy - lsn);
        ASSERT_DOUBLE_EQ(s.residual_term, s.alpha * s.log_diff);
        ASSERT_LE(std::abs(s.residual_term), std::numbers::pi * kDefaults.eta + 1e-12);
        ASSERT_EQ(s.log_p_nlu, std::min(0.0, s.attention_term + s.residual_term));
        ASSERT_LE(s.log_p_nlu, 0.0);
        ASSERT_EQ(s.verdict == Verdict::on_topic, s.p_nlu.value() >= kDefaults.decision_threshold);
    }
}

TEST(Monotonicity, NondecreasingInAttentionProbability) {
    const double log_eps = kDefaults.log_epsilon();
    for (int k = 0; k <= 20; ++k) {
        const double d = log_eps + (-2.0 * log_eps) * k / 20.0;  // spans [ln eps, -ln eps]
        const double lsn = d >= 0 ? log_eps : log_eps - d;
        const double lgy = d >= 0 ? log_eps + d : log_eps;
        double previous = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const double p = kDefaults.epsilon + (1.0 - 2.0 * kDefaults.epsilon) * i / 999.0;
            const double f = std::log(p);
            const NluScore s =
                combine(f, residual_term(lsn, lgy, residual_coefficient(f, kDefaults), kDefaults), kDefaults);
            if (i > 0) {
                ASSERT_GE(s.p_nlu.value(), previous) << "d=" << d << " p=" << p;
            }
            previous = s.p_nlu.value();
        }
    }
}

TEST(Hyperparams, ValidationAndWarnings) {
    EXPECT_NO_THROW(kDefaults.validate());
    EXPECT_TRUE(kDefaults.warnings().empty());
    Hyperparams hp;
    hp.eta = 0.4;
    EXPECT_NO_THROW(hp.validate());
    EXPECT_EQ(hp.warnings().size(), 1u);
    hp = {};
    hp.epsilon = 0.6;
    EXPECT_THROW(hp.validate(), InputDomainError);
    hp = {};
    hp.stride = 5;
    EXPECT_THROW(hp.validate(), InputDomainError);
    hp = {};
    hp.window = 0;
    EXPECT_THROW(hp.validate(), InputDomainError);
    hp = {};
    hp.eta = 0.0;
    EXPECT_THROW(hp.validate(), InputDomainError);
}

}  // namespace
}  // namespace continuity
