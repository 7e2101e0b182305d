#pragma once

// HTTP client for an external inference sidecar.
//
//   POST /v1/score_pairs  {"pairs":[{"context":s,"current":s}]} -> {"probabilities":[x]}
//   POST /v1/encode       {"texts":[s]}                         -> {"dim":n,"embeddings":[[x]]}
//   GET  /healthz                                               -> {"status":"ok","model_ids":[s]}

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "continuity/backends.hpp"
#include "continuity/core.hpp"
#include "continuity/errors.hpp"

namespace continuity {

namespace protocol {

inline nlohmann::json score_pairs_request(const std::vector<TextPair>& pairs) {
    nlohmann::json list = nlohmann::json::array();
    for (const TextPair& p : pairs) list.push_back({{"context", p.context}, {"current", p.current}});
    return {{"pairs", std::move(list)}};
}

inline std::vector<TextPair> parse_score_pairs_request(const std::string& body) {
    const nlohmann::json doc = nlohmann::json::parse(body);  // throws on malformed input
    std::vector<TextPair> out;
    for (const auto& p : doc.at("pairs")) {
        out.push_back({p.at("context").get<std::string>(), p.at("current").get<std::string>()});
    }
    return out;
}

inline nlohmann::json score_pairs_response(const std::vector<double>& probabilities) {
    return {{"probabilities", probabilities}};
}

inline std::vector<double> parse_score_pairs_response(const std::string& body,
                                                      std::size_t expected) {
    try {
        const nlohmann::json doc = nlohmann::json::parse(body);
        const auto& values = doc.at("probabilities");
        if (!values.is_array()) throw ProtocolError("probabilities is not an array");
        if (values.size() != expected)
            throw ProtocolError("expected " + std::to_string(expected) + " probabilities, got " +
                                std::to_string(values.size()));
        std::vector<double> out;
        out.reserve(expected);
        for (const auto& v : values) {
            if (!v.is_number()) throw ProtocolError("probability is not a number");
            const double p = v.get<double>();
            if (!std::isfinite(p) || p < 0.0 || p > 1.0)
                throw ProtocolError("probability outside [0, 1]: " + v.dump());
            out.push_back(p);
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("malformed score_pairs response: ") + e.what());
    }
}

inline nlohmann::json encode_request(const std::vector<std::string>& texts) {
    return {{"texts", texts}};
}

inline nlohmann::json encode_response(std::size_t dim, const std::vector<Embedding>& embeddings) {
    return {{"dim", dim}, {"embeddings", embeddings}};
}

inline std::pair<std::size_t, std::vector<Embedding>> parse_encode_response(
    const std::string& body, std::size_t expected) {
    try {
        const nlohmann::json doc = nlohmann::json::parse(body);
        const auto dim = doc.at("dim").get<std::size_t>();
        const auto& list = doc.at("embeddings");
        if (dim == 0) throw ProtocolError("encoder reported dim 0");
        if (!list.is_array() || list.size() != expected)
            throw ProtocolError("expected " + std::to_string(expected) + " embeddings");
        std::vector<Embedding> out;
        for (const auto& row : list) {
            Embedding e = row.get<Embedding>();
            if (e.size() != dim) throw ProtocolError("embedding length does not match dim");
            for (double x : e)
                if (!std::isfinite(x)) throw ProtocolError("embedding has a non-finite entry");
            out.push_back(std::move(e));
        }
        return {dim, std::move(out)};
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("malformed encode response: ") + e.what());
    }
}

inline nlohmann::json healthz_response(const std::vector<std::string>& model_ids) {
    return {{"status", "ok"}, {"model_ids", model_ids}};
}

}  // namespace protocol

struct RemoteOptions {
    std::string endpoint;  // e.g. "http://127.0.0.1:8500"
    std::chrono::milliseconds timeout{5000};
    int retries = 3;
    std::chrono::milliseconds backoff{100};
    std::size_t max_batch = 64;
    std::ptrdiff_t max_in_flight = 8;
};

// POSTs JSON with bounded concurrency and exponential backoff. Connection
// failures, timeouts and 5xx replies are retried; 4xx replies are not.
class RemoteClient {
public:
    static constexpr std::ptrdiff_t kMaxInFlight = 1024;

    explicit RemoteClient(RemoteOptions options)
        : options_(std::move(options)),
          slots_(std::clamp<std::ptrdiff_t>(options_.max_in_flight, 1, kMaxInFlight)) {
        if (options_.endpoint.empty()) throw ConfigError("remote endpoint is not configured");
        if (options_.max_batch == 0) throw ConfigError("max_batch must be positive");
        if (options_.retries < 0) throw ConfigError("retries must be nonnegative");
    }

    const RemoteOptions& options() const { return options_; }

    std::string post(const std::string& path, const std::string& body) const {
        slots_.acquire();
        struct Release {
            std::counting_semaphore<kMaxInFlight>& s;
            ~Release() { s.release(); }
        } release{slots_};

        std::chrono::milliseconds delay = options_.backoff;
        std::string last_error;
        for (int attempt = 0; attempt <= options_.retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(delay);
                delay *= 2;
            }
            httplib::Client client(options_.endpoint);
            client.set_connection_timeout(options_.timeout);
            client.set_read_timeout(options_.timeout);
            client.set_write_timeout(options_.timeout);
            const httplib::Result res = client.Post(path, body, "application/json");
            if (!res) {
                last_error = httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw ProtocolError(options_.endpoint + path + " rejected the request with HTTP " +
                                    std::to_string(res->status) + ": " + res->body);
            return res->body;
        }
        throw BackendUnavailableError(options_.endpoint + path + " unavailable after " +
                                      std::to_string(options_.retries + 1) +
                                      " attempts: " + last_error);
    }

    nlohmann::json health() const {
        httplib::Client client(options_.endpoint);
        client.set_connection_timeout(options_.timeout);
        client.set_read_timeout(options_.timeout);
        const httplib::Result res = client.Get("/healthz");
        if (!res || res->status != 200)
            throw BackendUnavailableError(options_.endpoint + "/healthz did not answer 200");
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("malformed healthz response: ") + e.what());
        }
    }

private:
    RemoteOptions options_;
    mutable std::counting_semaphore<kMaxInFlight> slots_;
};

class RemoteScorer final : public PairwiseScorer {
public:
    RemoteScorer(RemoteOptions options, Hyperparams hp = {}) : client_(std::move(options)), hp_(hp) {}

    Probability score_pair(std::string_view context, std::string_view current) const override {
        return score_batch({TextPair{std::string(context), std::string(current)}}).front();
    }

    std::vector<Probability> score_batch(const std::vector<TextPair>& pairs) const override {
        std::vector<Probability> out;
        out.reserve(pairs.size());
        const std::size_t step = client_.options().max_batch;
        for (std::size_t begin = 0; begin < pairs.size(); begin += step) {
            const std::vector<TextPair> batch(
                pairs.begin() + static_cast<std::ptrdiff_t>(begin),
                pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), begin + step)));
            const std::string body =
                client_.post("/v1/score_pairs", protocol::score_pairs_request(batch).dump());
            for (double p : protocol::parse_score_pairs_response(body, batch.size()))
                out.push_back(clamp_probability(p, hp_));
        }
        return out;
    }

private:
    RemoteClient client_;
    Hyperparams hp_;
};

class RemoteEncoder final : public SentenceEncoder {
public:
    // dim = 0 discovers the dimension with a probe request on first use.
    explicit RemoteEncoder(RemoteOptions options, std::size_t dim = 0)
        : client_(std::move(options)), dim_(dim) {}

    Embedding encode(std::string_view text) const override {
        return std::move(encode_batch({std::string(text)}).front());
    }

    std::vector<Embedding> encode_batch(const std::vector<std::string>& texts) const override {
        std::vector<Embedding> out;
        out.reserve(texts.size());
        const std::size_t step = client_.options().max_batch;
        for (std::size_t begin = 0; begin < texts.size(); begin += step) {
            const std::vector<std::string> batch(
                texts.begin() + static_cast<std::ptrdiff_t>(begin),
                texts.begin() + static_cast<std::ptrdiff_t>(std::min(texts.size(), begin + step)));
            auto [dim, rows] = protocol::parse_encode_response(
                client_.post("/v1/encode", protocol::encode_request(batch).dump()), batch.size());
            note_dim(dim);
            for (Embedding& e : rows) out.push_back(std::move(e));
        }
        return out;
    }

    std::size_t dim() const override {
        {
            std::lock_guard lock(mutex_);
            if (dim_ != 0) return dim_;
        }
        encode("dimension probe");
        std::lock_guard lock(mutex_);
        return dim_;
    }

private:
    void note_dim(std::size_t dim) const {
        std::lock_guard lock(mutex_);
        if (dim_ == 0) dim_ = dim;
        else if (dim_ != dim)
            throw ProtocolError("encoder dimension changed from " + std::to_string(dim_) + " to " +
                                std::to_string(dim));
    }

    RemoteClient client_;
    mutable std::mutex mutex_;
    mutable std::size_t dim_;
};

}  // namespace continuity
