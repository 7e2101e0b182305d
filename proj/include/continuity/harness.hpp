#pragma once

// Metrics and the experiment protocols run over labeled datasets.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "continuity/dataset.hpp"
#include "continuity/engine.hpp"
#include "continuity/errors.hpp"

namespace continuity {

// One scored example; truth and verdict are "on topic" flags.
struct Prediction {
    bool truth = false;
    bool verdict = false;
    double score = 0.0;
};

struct MetricsReport {
    double precision = 0.0;
    double recall = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
    std::optional<double> auc;  // undefined when truth has a single class
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::map<std::string, std::size_t> label_counts;
    std::string bucket;

    std::size_t count() const { return tp + fp + tn + fn; }
};

// Rank-statistic AUC with averaged ranks for ties.
inline std::optional<double> rank_auc(const std::vector<Prediction>& preds) {
    std::vector<std::size_t> order(preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return preds[a].score < preds[b].score; });
    double positive_rank_sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && preds[order[j]].score == preds[order[i]].score) ++j;
        const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (preds[order[k]].truth) {
                positive_rank_sum += rank;
                ++positives;
            }
        }
        i = j;
    }
    const std::size_t negatives = preds.size() - positives;
    if (positives == 0 || negatives == 0) return std::nullopt;
    const double p = static_cast<double>(positives);
    return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

inline MetricsReport compute_metrics(const std::vector<Prediction>& preds) {
    if (preds.empty()) throw InputDomainError("cannot compute metrics on no predictions");
    MetricsReport m;
    for (const Prediction& p : preds) {
        if (p.truth && p.verdict) ++m.tp;
        else if (!p.truth && p.verdict) ++m.fp;
        else if (!p.truth && !p.verdict) ++m.tn;
        else ++m.fn;
    }
    auto ratio = [](std::size_t a, std::size_t b) {
        return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
    };
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.accuracy = ratio(m.tp + m.tn, preds.size());
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.auc = rank_auc(preds);
    return m;
}

using SessionFactory = std::function<Session(const std::string& topic)>;

struct ExperimentOptions {
    std::vector<std::size_t> bucket_edges{300, 512};
    std::optional<std::size_t> token_budget = Session::kDefaultTokenBudget;
    TokenCounter token_counter = [](std::string_view t) { return count_tokens(t); };
};

// A session holding everything before the labeled sentence, plus that sentence.
inline std::pair<Session, std::string> replay(const ConversationRecord& record,
                                              const SessionFactory& factory) {
    Session session = factory(record.topic);
    const std::size_t labeled = record.labeled_index();
    for (std::size_t i = 0; i < labeled; ++i)
        session.accept(record.sentences[i].text, record.sentences[i].speaker);
    return {std::move(session), record.sentences[labeled].text};
}

// ---------------------------------------------------------------------------
// Token-gap experiment: full model vs. truncated single-pair baseline.

struct TokenBucket {
    std::size_t lo = 0;
    std::optional<std::size_t> hi;  // nullopt = unbounded

    // The first bucket is closed at lo; later ones are (lo, hi].
    bool contains(std::size_t key, bool first) const {
        const bool above = first ? key >= lo : key > lo;
        return above && (!hi || key <= *hi);
    }

    std::string name() const {
        std::string out = (lo == 0 ? "[" : "(") + std::to_string(lo) + ", ";
        return out + (hi ? std::to_string(*hi) + "]" : std::string("inf)"));
    }
};

inline std::vector<TokenBucket> buckets_from_edges(const std::vector<std::size_t>& edges) {
    if (!std::is_sorted(edges.begin(), edges.end()) ||
        std::adjacent_find(edges.begin(), edges.end()) != edges.end())
        throw ConfigError("bucket edges must be strictly increasing");
    std::vector<TokenBucket> out;
    std::size_t lo = 0;
    for (std::size_t e : edges) {
        out.push_back({lo, e});
        lo = e;
    }
    out.push_back({lo, std::nullopt});
    return out;
}

// Leaps are bucketed by their token gap, normal sentences sit at gap 0, and
// shifts (which answer nothing) by the length of their history.
inline std::size_t gap_bucket_key(const ConversationRecord& r, const TokenCounter& count) {
    switch (r.label()) {
        case Label::leap: return token_gap(r, count);
        case Label::normal: return 0;
        case Label::ood_shift:
        case Label::id_shift: break;
    }
    return history_tokens(r, count);
}

struct GapBucketResult {
    TokenBucket bucket;
    std::optional<MetricsReport> model;  // nullopt: bucket is empty
    std::optional<MetricsReport> baseline;
};

struct GapReport {
    std::vector<GapBucketResult> buckets;
};

inline GapReport run_gap_experiment(const std::vector<ConversationRecord>& records,
                                    const SessionFactory& factory, const ExperimentOptions& options = {}) {
    const std::vector<TokenBucket> buckets = buckets_from_edges(options.bucket_edges);
    std::vector<std::vector<Prediction>> model(buckets.size()), baseline(buckets.size());
    std::vector<std::map<std::string, std::size_t>> labels(buckets.size());
    for (const ConversationRecord& r : records) {
        const std::size_t key = gap_bucket_key(r, options.token_counter);
        std::size_t b = 0;
        while (b < buckets.size() && !buckets[b].contains(key, b == 0)) ++b;
        if (b == buckets.size()) continue;
        auto [session, candidate] = replay(r, factory);
        const bool truth = is_on_topic(r.label());
        const EvaluationTrace trace = session.evaluate_next(candidate);
        model[b].push_back({truth, trace.score.verdict == Verdict::on_topic, trace.score.p_nlu.value()});
        const double p = session.baseline_nsp(candidate, options.token_budget).value();
        baseline[b].push_back({truth, p >= session.hyperparams().decision_threshold, p});
        ++labels[b][std::string(to_string(r.label()))];
    }
    GapReport report;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        GapBucketResult result{buckets[b], std::nullopt, std::nullopt};
        if (!model[b].empty()) {
            result.model = compute_metrics(model[b]);
            result.baseline = compute_metrics(baseline[b]);
            for (auto* m : {&*result.model, &*result.baseline}) {
                m->label_counts = labels[b];
                m->bucket = buckets[b].name();
            }
        }
        report.buckets.push_back(std::move(result));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Length experiment: mean probability on out-of-domain shifts per history length.

struct LengthRow {
    std::size_t lo = 0;
    std::size_t hi = 0;  // exclusive
    std::size_t count = 0;
    double model_mean_p = 0.0;
    double baseline_mean_p = 0.0;
    bool baseline_truncated = false;
};

struct LengthReport {
    std::size_t segment_width = 0;
    std::vector<LengthRow> rows;  // empty segments are omitted
};

inline LengthReport run_length_experiment(const std::vector<ConversationRecord>& records,
                                          const SessionFactory& factory, std::size_t segment_width,
                                          const ExperimentOptions& options = {}) {
    if (segment_width == 0) throw ConfigError("segment width must be positive");
    std::map<std::size_t, LengthRow> rows;
    for (const ConversationRecord& r : records) {
        if (r.label() != Label::ood_shift) continue;
        const std::size_t length = history_tokens(r, options.token_counter);
        const std::size_t segment = length / segment_width;
        LengthRow& row = rows[segment];
        row.lo = segment * segment_width;
        row.hi = row.lo + segment_width;
        auto [session, candidate] = replay(r, factory);
        row.model_mean_p += session.evaluate_next(candidate).score.p_nlu.value();
        const BaselineResult base = session.baseline_nsp_detail(candidate, options.token_budget);
        row.baseline_mean_p += base.p.value();
        row.baseline_truncated = row.baseline_truncated || base.truncated;
        ++row.count;
    }
    LengthReport report{segment_width, {}};
    for (auto& [segment, row] : rows) {
        row.model_mean_p /= static_cast<double>(row.count);
        row.baseline_mean_p /= static_cast<double>(row.count);
        report.rows.push_back(row);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Residual experiment: records whose attention-only probability is uncertain.

struct ResidualEntry {
    std::string id;
    bool truth = false;
    double p_att = 0.0;
    double p_nlu = 0.0;
};

struct ResidualReport {
    double band_lo = 0.4;
    double band_hi = 0.6;
    std::vector<ResidualEntry> entries;
    MetricsReport without_residual;
    MetricsReport with_residual;
    double p_att_stddev = 0.0;
    double p_nlu_stddev = 0.0;
    std::vector<std::size_t> p_att_histogram;  // 20 bins over [0, 1]
    std::vector<std::size_t> p_nlu_histogram;
    std::optional<std::string> warning;
};

namespace detail {

inline double stddev(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

inline std::vector<std::size_t> histogram(const std::vector<double>& xs, std::size_t bins) {
    std::vector<std::size_t> out(bins, 0);
    for (double x : xs) {
        const auto b = static_cast<std::size_t>(std::clamp(x, 0.0, 1.0) * static_cast<double>(bins));
        ++out[std::min(b, bins - 1)];
    }
    return out;
}

}  // namespace detail

inline constexpr std::size_t kMinResidualRecords = 50;

inline ResidualReport run_residual_experiment(const std::vector<ConversationRecord>& records,
                                              const SessionFactory& factory, double band_lo = 0.4,
                                              double band_hi = 0.6) {
    if (!(band_lo <= band_hi)) throw ConfigError("residual band must satisfy lo <= hi");
    ResidualReport report;
    report.band_lo = band_lo;
    report.band_hi = band_hi;
    std::vector<Prediction> without, with;
    std::vector<double> p_att, p_nlu;
    for (const ConversationRecord& r : records) {
        auto [session, candidate] = replay(r, factory);
        const EvaluationTrace trace = session.evaluate_next(candidate);
        // The band applies to exp(F) itself, before probability clamping.
        const double att = std::exp(trace.score.attention_term);
        if (att < band_lo || att > band_hi) continue;
        const bool truth = is_on_topic(r.label());
        const double threshold = session.hyperparams().decision_threshold;
        const double nlu = trace.score.p_nlu.value();
        without.push_back({truth, att >= threshold, att});
        with.push_back({truth, trace.score.verdict == Verdict::on_topic, nlu});
        p_att.push_back(att);
        p_nlu.push_back(nlu);
        report.entries.push_back({r.id, truth, att, nlu});
    }
    if (report.entries.empty())
        throw EmptyResultError("no record has an attention-only probability in [" +
                               std::to_string(band_lo) + ", " + std::to_string(band_hi) + "]");
    if (report.entries.size() < kMinResidualRecords)
        report.warning = "only " + std::to_string(report.entries.size()) + " records fall in the band";
    report.without_residual = compute_metrics(without);
    report.with_residual = compute_metrics(with);
    report.p_att_stddev = detail::stddev(p_att);
    report.p_nlu_stddev = detail::stddev(p_nlu);
    report.p_att_histogram = detail::histogram(p_att, 20);
    report.p_nlu_histogram = detail::histogram(p_nlu, 20);
    return report;
}

// ---------------------------------------------------------------------------
// Report emission: machine-readable JSON plus plain-text tables.

inline nlohmann::json to_json(const MetricsReport& m) {
    return {{"precision", m.precision},
            {"recall", m.recall},
            {"accuracy", m.accuracy},
            {"f1", m.f1},
            {"auc", m.auc ? nlohmann::json(*m.auc) : nlohmann::json(nullptr)},
            {"count", m.count()},
            {"confusion", {{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}}},
            {"label_counts", m.label_counts},
            {"bucket", m.bucket}};
}

struct ReportHeader {
    std::uint64_t seed = 0;
    std::string config_digest;
};

inline std::string digest_hex(std::string_view bytes) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(bytes);
    return out.str();
}

inline nlohmann::json to_json(const GapReport& r, const ReportHeader& h) {
    nlohmann::json buckets = nlohmann::json::array();
    for (const GapBucketResult& b : r.buckets) {
        nlohmann::json range = {b.bucket.lo, b.bucket.hi ? nlohmann::json(*b.bucket.hi) : nlohmann::json(nullptr)};
        buckets.push_back({{"range", range},
                           {"empty", !b.model.has_value()},
                           {"model", b.model ? to_json(*b.model) : nlohmann::json(nullptr)},
                           {"baseline", b.baseline ? to_json(*b.baseline) : nlohmann::json(nullptr)}});
    }
    return {{"experiment", "gap"}, {"buckets", buckets}, {"seed", h.seed}, {"config_digest", h.config_digest}};
}

inline nlohmann::json to_json(const LengthReport& r, const ReportHeader& h) {
    nlohmann::json buckets = nlohmann::json::array();
    for (const LengthRow& row : r.rows) {
        buckets.push_back({{"range", {row.lo, row.hi}},
                           {"model", {{"mean_p", row.model_mean_p}, {"count", row.count}}},
                           {"baseline",
                            {{"mean_p", row.baseline_mean_p},
                             {"count", row.count},
                             {"truncated", row.baseline_truncated}}}});
    }
    return {{"experiment", "length"},
            {"segment_width", r.segment_width},
            {"buckets", buckets},
            {"seed", h.seed},
            {"config_digest", h.config_digest}};
}

inline nlohmann::json to_json(const ResidualReport& r, const ReportHeader& h) {
    nlohmann::json bucket = {{"range", {r.band_lo, r.band_hi}},
                             {"model", to_json(r.with_residual)},
                             {"baseline", to_json(r.without_residual)}};
    return {{"experiment", "residual"},
            {"buckets", nlohmann::json::array({bucket})},
            {"selected", r.entries.size()},
            {"p_att_stddev", r.p_att_stddev},
            {"p_nlu_stddev", r.p_nlu_stddev},
            {"histogram", {{"bins", 20}, {"p_att", r.p_att_histogram}, {"p_nlu", r.p_nlu_histogram}}},
            {"warning", r.warning ? nlohmann::json(*r.warning) : nlohmann::json(nullptr)},
            {"seed", h.seed},
            {"config_digest", h.config_digest}};
}

namespace detail {

inline std::string fixed(double x, int digits = 3) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

inline std::string metrics_row(const std::string& name, const MetricsReport& m) {
    std::ostringstream out;
    out << std::left << std::setw(10) << name << std::right << std::setw(7) << m.count()
        << std::setw(11) << fixed(m.precision) << std::setw(8) << fixed(m.recall) << std::setw(10)
        << fixed(m.accuracy) << std::setw(8) << fixed(m.f1) << std::setw(8)
        << (m.auc ? fixed(*m.auc) : std::string("n/a")) << '\n';
    return out.str();
}

inline std::string metrics_header() {
    return "model           n  precision  recall  accuracy      f1     auc\n";
}

}  // namespace detail

inline std::string format_table(const GapReport& r) {
    std::ostringstream out;
    for (const GapBucketResult& b : r.buckets) {
        out << "token gap " << b.bucket.name() << '\n';
        if (!b.model) {
            out << "  (empty)\n";
            continue;
        }
        out << detail::metrics_header() << detail::metrics_row("full", *b.model)
            << detail::metrics_row("baseline", *b.baseline);
    }
    return out.str();
}

inline std::string format_table(const LengthReport& r) {
    std::ostringstream out;
    out << "tokens          n  full_mean_p  baseline_mean_p  truncated\n";
    for (const LengthRow& row : r.rows) {
        std::ostringstream range;
        range << "[" << row.lo << ", " << row.hi << ")";
        out << std::left << std::setw(14) << range.str() << std::right << std::setw(3) << row.count
            << std::setw(13) << detail::fixed(row.model_mean_p) << std::setw(17)
            << detail::fixed(row.baseline_mean_p) << std::setw(11) << (row.baseline_truncated ? "yes" : "no")
            << '\n';
    }
    return out.str();
}

inline std::string format_table(const ResidualReport& r) {
    std::ostringstream out;
    out << "p_att band [" << detail::fixed(r.band_lo, 2) << ", " << detail::fixed(r.band_hi, 2) << "]: "
        << r.entries.size() << " records\n"
        << detail::metrics_header() << detail::metrics_row("attention", r.without_residual)
        << detail::metrics_row("+residual", r.with_residual) << "stddev p_att "
        << detail::fixed(r.p_att_stddev, 4) << ", p_nlu " << detail::fixed(r.p_nlu_stddev, 4) << '\n';
    if (r.warning) out << "warning: " << *r.warning << '\n';
    return out.str();
}

}  // namespace continuity
