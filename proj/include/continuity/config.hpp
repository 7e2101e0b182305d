#pragma once

// Runtime configuration: a JSON file, then environment overrides, then
// command-line flags (applied by the caller), in increasing precedence.
//
//   {
//     "hyperparams": {"epsilon": 0.001, "eta": 0.2, "residual_sign": "topic_affinity",
//                     "decision_threshold": 0.5, "window": 4, "stride": 2},
//     "backend": "stub" | "recorded:<path>" | "remote:<url>",
//     "recorded_fallback": null | <probability>,
//     "encoder": "stub" | "remote:<url>",
//     "topic_ood": null | "<path>" | {"<topic>": "<path>", ...},
//     "background_ood": null | "<path>",
//     "token_budget": 512 | null,
//     "bucket_edges": [300, 512],
//     "remote": {"timeout_ms": 5000, "retries": 3, "backoff_ms": 100,
//                "max_batch": 64, "max_in_flight": 8},
//     "service": {"bind": "127.0.0.1", "port": 8080, "max_concurrent": 8},
//     "seed": 0
//   }

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "continuity/backends.hpp"
#include "continuity/core.hpp"
#include "continuity/engine.hpp"
#include "continuity/errors.hpp"
#include "continuity/harness.hpp"
#include "continuity/ood.hpp"
#include "continuity/remote.hpp"

namespace continuity {

struct ServiceConfig {
    std::string bind = "127.0.0.1";
    int port = 8080;
    std::size_t max_concurrent = 8;
};

struct Config {
    Hyperparams hp;
    std::string backend = "stub";
    std::optional<double> recorded_fallback;
    std::string encoder = "stub";
    std::optional<std::string> topic_ood;             // model for every topic
    std::map<std::string, std::string> topic_oods;  // per-topic models
    std::optional<std::string> background_ood;
    std::optional<std::size_t> token_budget = Session::kDefaultTokenBudget;
    std::vector<std::size_t> bucket_edges{300, 512};
    std::int64_t timeout_ms = 5000;
    int retries = 3;
    std::int64_t backoff_ms = 100;
    std::size_t max_batch = 64;
    std::ptrdiff_t max_in_flight = 8;
    ServiceConfig service;
    std::uint64_t seed = 0;
};

// "kind" or "kind:target".
struct BackendSpec {
    std::string kind;
    std::string target;

    static BackendSpec parse(const std::string& s) {
        const auto colon = s.find(':');
        if (colon == std::string::npos) return {s, ""};
        return {s.substr(0, colon), s.substr(colon + 1)};
    }
};

inline ResidualSign parse_residual_sign(const nlohmann::json& j) {
    if (j.is_number_integer()) {
        const int v = j.get<int>();
        if (v == 1) return ResidualSign::topic_affinity;
        if (v == -1) return ResidualSign::literal;
    } else if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "topic_affinity" || s == "+1") return ResidualSign::topic_affinity;
        if (s == "literal" || s == "-1") return ResidualSign::literal;
    }
    throw ConfigError("residual_sign must be +1/\"topic_affinity\" or -1/\"literal\", got " + j.dump());
}

inline void apply_json(Config& c, const nlohmann::json& j) {
    try {
        if (j.contains("hyperparams")) {
            const auto& h = j.at("hyperparams");
            if (h.contains("epsilon")) c.hp.epsilon = h.at("epsilon").get<double>();
            if (h.contains("eta")) c.hp.eta = h.at("eta").get<double>();
            if (h.contains("residual_sign")) c.hp.residual_sign = parse_residual_sign(h.at("residual_sign"));
            if (h.contains("decision_threshold"))
                c.hp.decision_threshold = h.at("decision_threshold").get<double>();
            if (h.contains("window")) c.hp.window = h.at("window").get<std::size_t>();
            if (h.contains("stride")) c.hp.stride = h.at("stride").get<std::size_t>();
        }
        if (j.contains("backend")) c.backend = j.at("backend").get<std::string>();
        if (j.contains("recorded_fallback") && !j.at("recorded_fallback").is_null())
            c.recorded_fallback = j.at("recorded_fallback").get<double>();
        if (j.contains("encoder")) c.encoder = j.at("encoder").get<std::string>();
        if (j.contains("topic_ood")) {
            const auto& t = j.at("topic_ood");
            if (t.is_string()) c.topic_ood = t.get<std::string>();
            else if (t.is_object()) c.topic_oods = t.get<std::map<std::string, std::string>>();
            else if (!t.is_null()) throw ConfigError("topic_ood must be a path or a topic->path object");
        }
        if (j.contains("background_ood") && !j.at("background_ood").is_null())
            c.background_ood = j.at("background_ood").get<std::string>();
        if (j.contains("token_budget")) {
            c.token_budget = j.at("token_budget").is_null()
                                 ? std::nullopt
                                 : std::optional<std::size_t>(j.at("token_budget").get<std::size_t>());
        }
        if (j.contains("bucket_edges")) c.bucket_edges = j.at("bucket_edges").get<std::vector<std::size_t>>();
        if (j.contains("remote")) {
            const auto& r = j.at("remote");
            c.timeout_ms = r.value("timeout_ms", c.timeout_ms);
            c.retries = r.value("retries", c.retries);
            c.backoff_ms = r.value("backoff_ms", c.backoff_ms);
            c.max_batch = r.value("max_batch", c.max_batch);
            c.max_in_flight = r.value("max_in_flight", c.max_in_flight);
        }
        if (j.contains("service")) {
            const auto& s = j.at("service");
            c.service.bind = s.value("bind", c.service.bind);
            c.service.port = s.value("port", c.service.port);
            c.service.max_concurrent = s.value("max_concurrent", c.service.max_concurrent);
        }
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
}

inline Config load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    Config c;
    try {
        apply_json(c, nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return c;
}

// CONTINUITY_SCORER_ENDPOINT, CONTINUITY_ENCODER_ENDPOINT and CONTINUITY_BIND
// ("host" or "host:port").
inline void apply_environment(Config& c) {
    if (const char* v = std::getenv("CONTINUITY_SCORER_ENDPOINT"); v && *v)
        c.backend = std::string("remote:") + v;
    if (const char* v = std::getenv("CONTINUITY_ENCODER_ENDPOINT"); v && *v)
        c.encoder = std::string("remote:") + v;
    if (const char* v = std::getenv("CONTINUITY_BIND"); v && *v) {
        const std::string bind = v;
        const auto colon = bind.rfind(':');
        if (colon == std::string::npos) {
            c.service.bind = bind;
        } else {
            c.service.bind = bind.substr(0, colon);
            try {
                c.service.port = std::stoi(bind.substr(colon + 1));
            } catch (const std::exception&) {
                throw ConfigError("CONTINUITY_BIND has a bad port: " + bind);
            }
        }
    }
}

inline void validate(const Config& c) {
    c.hp.validate();
    const BackendSpec backend = BackendSpec::parse(c.backend);
    if (backend.kind == "recorded" || backend.kind == "remote") {
        if (backend.target.empty()) throw ConfigError("backend \"" + c.backend + "\" needs a target");
    } else if (backend.kind != "stub" || !backend.target.empty()) {
        throw ConfigError("backend must be stub, recorded:<path> or remote:<url>, got \"" + c.backend + "\"");
    }
    const BackendSpec encoder = BackendSpec::parse(c.encoder);
    if (!((encoder.kind == "stub" && encoder.target.empty()) ||
          (encoder.kind == "remote" && !encoder.target.empty())))
        throw ConfigError("encoder must be stub or remote:<url>, got \"" + c.encoder + "\"");
    const bool any_topic = c.topic_ood || !c.topic_oods.empty();
    if (any_topic != c.background_ood.has_value())
        throw ConfigError("topic_ood and background_ood must be configured together");

    std::vector<std::string> files;
    if (backend.kind == "recorded") files.push_back(backend.target);
    if (c.topic_ood) files.push_back(*c.topic_ood);
    for (const auto& [topic, path] : c.topic_oods) files.push_back(path);
    if (c.background_ood) files.push_back(*c.background_ood);
    for (const std::string& f : files)
        if (!std::filesystem::exists(f)) throw ConfigError("referenced file does not exist: " + f);
    if (c.recorded_fallback) clamp_probability(*c.recorded_fallback, c.hp);
    buckets_from_edges(c.bucket_edges);
    if (c.service.max_concurrent == 0) throw ConfigError("service.max_concurrent must be positive");
}

// Canonical JSON of the settings that influence scores.
inline nlohmann::json scoring_json(const Config& c) {
    nlohmann::json topic = c.topic_ood ? nlohmann::json(*c.topic_ood)
                                       : c.topic_oods.empty() ? nlohmann::json(nullptr)
                                                              : nlohmann::json(c.topic_oods);
    return {{"hyperparams",
             {{"epsilon", c.hp.epsilon},
              {"eta", c.hp.eta},
              {"residual_sign", static_cast<int>(c.hp.residual_sign)},
              {"decision_threshold", c.hp.decision_threshold},
              {"window", c.hp.window},
              {"stride", c.hp.stride}}},
            {"backend", c.backend},
            {"recorded_fallback", c.recorded_fallback ? nlohmann::json(*c.recorded_fallback) : nlohmann::json(nullptr)},
            {"encoder", c.encoder},
            {"topic_ood", topic},
            {"background_ood", c.background_ood ? nlohmann::json(*c.background_ood) : nlohmann::json(nullptr)},
            {"token_budget", c.token_budget ? nlohmann::json(*c.token_budget) : nlohmann::json(nullptr)},
            {"bucket_edges", c.bucket_edges},
            {"seed", c.seed}};
}

inline std::string config_digest(const Config& c) { return digest_hex(scoring_json(c).dump()); }

// Loaded backends and models shared, read-only, by every session.
class Runtime {
public:
    explicit Runtime(Config config) : config_(std::move(config)) {
        validate(config_);
        RemoteOptions remote;
        remote.timeout = std::chrono::milliseconds(config_.timeout_ms);
        remote.retries = config_.retries;
        remote.backoff = std::chrono::milliseconds(config_.backoff_ms);
        remote.max_batch = config_.max_batch;
        remote.max_in_flight = config_.max_in_flight;

        const BackendSpec backend = BackendSpec::parse(config_.backend);
        if (backend.kind == "stub") {
            scorer_ = std::make_shared<StubScorer>(config_.hp);
        } else if (backend.kind == "recorded") {
            scorer_ = std::make_shared<RecordedScorer>(
                RecordedScorer::from_file(backend.target, config_.recorded_fallback, config_.hp));
        } else {
            RemoteOptions o = remote;
            o.endpoint = backend.target;
            scorer_ = std::make_shared<RemoteScorer>(o, config_.hp);
        }

        const BackendSpec encoder = BackendSpec::parse(config_.encoder);
        if (encoder.kind == "stub") {
            encoder_ = std::make_shared<StubEncoder>();
        } else {
            RemoteOptions o = remote;
            o.endpoint = encoder.target;
            encoder_ = std::make_shared<RemoteEncoder>(o);
        }

        if (config_.background_ood)
            background_ = std::make_shared<const OodModel>(load_model_file(*config_.background_ood));
        if (config_.topic_ood)
            default_topic_ = std::make_shared<const OodModel>(load_model_file(*config_.topic_ood));
        for (const auto& [topic, path] : config_.topic_oods)
            topics_[topic] = std::make_shared<const OodModel>(load_model_file(path));
    }

    const Config& config() const { return config_; }
    const SentenceEncoder& encoder() const { return *encoder_; }

    Session make_session(const std::string& topic) const {
        SessionBackends b{scorer_, encoder_, nullptr, nullptr};
        if (background_) {
            if (auto it = topics_.find(topic); it != topics_.end()) b.topic_ood = it->second;
            else if (default_topic_) b.topic_ood = default_topic_;
            else throw InputDomainError("no OOD model is configured for topic \"" + topic + "\"");
            b.background_ood = background_;
        }
        return Session(topic, config_.hp, std::move(b));
    }

    SessionFactory factory() const {
        return [this](const std::string& topic) { return make_session(topic); };
    }

    ExperimentOptions experiment_options() const {
        ExperimentOptions o;
        o.bucket_edges = config_.bucket_edges;
        o.token_budget = config_.token_budget;
        return o;
    }

private:
    Config config_;
    std::shared_ptr<const PairwiseScorer> scorer_;
    std::shared_ptr<const SentenceEncoder> encoder_;
    std::shared_ptr<const OodModel> background_;
    std::shared_ptr<const OodModel> default_topic_;
    std::map<std::string, std::shared_ptr<const OodModel>> topics_;
};

}  // namespace continuity
