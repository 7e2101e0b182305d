#pragma once

// Stateless HTTP adapter over the engine.
//
//   POST /v1/evaluate {"topic": s, "context": [s], "current": s}
//     200 {"p_nlu", "attention_term", "residual_term", "verdict", "chunk_count"}
//     400 invalid request, 502 backend failure
//   GET /healthz -> 200 {"status": "ok"}

#include <string>
#include <utility>

#include "httplib.h"
#include "json.hpp"

#include "continuity/config.hpp"
#include "continuity/engine.hpp"
#include "continuity/errors.hpp"

namespace continuity {

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

class EvaluateService {
public:
    explicit EvaluateService(const Runtime& runtime) : runtime_(runtime) {}

    ServiceResponse evaluate(const std::string& request_body) const {
        nlohmann::json request;
        try {
            request = nlohmann::json::parse(request_body);
        } catch (const nlohmann::json::parse_error& e) {
            return bad_request(std::string("request is not valid JSON: ") + e.what());
        }
        if (!request.is_object()) return bad_request("request must be a JSON object");
        std::string topic;
        if (request.contains("topic")) {
            if (!request["topic"].is_string()) return bad_request("topic must be a string");
            topic = request["topic"].get<std::string>();
        }
        if (!request.contains("context") || !request["context"].is_array())
            return bad_request("context must be an array of strings");
        if (request["context"].empty()) return bad_request("context must not be empty");
        if (!request.contains("current") || !request["current"].is_string())
            return bad_request("current must be a string");
        const std::string current = request["current"].get<std::string>();
        if (trim(current).empty()) return bad_request("current must not be empty");

        try {
            Session session = runtime_.make_session(topic);
            for (const auto& sentence : request["context"]) {
                if (!sentence.is_string()) return bad_request("context entries must be strings");
                session.accept(sentence.get<std::string>());
            }
            const EvaluationTrace trace = session.evaluate_next(current);
            return {200,
                    {{"p_nlu", trace.score.p_nlu.value()},
                     {"attention_term", trace.score.attention_term},
                     {"residual_term", trace.score.residual_term},
                     {"verdict", std::string(to_string(trace.score.verdict))},
                     {"chunk_count", trace.chunks.size()}}};
        } catch (const BackendUnavailableError& e) {
            return {502, {{"error", e.what()}}};
        } catch (const ProtocolError& e) {
            return {502, {{"error", e.what()}}};
        } catch (const RecordNotFoundError& e) {
            return {502, {{"error", e.what()}}};
        } catch (const InputDomainError& e) {
            return bad_request(e.what());
        } catch (const PreconditionError& e) {
            return bad_request(e.what());
        }
    }

    void install(httplib::Server& server) const {
        server.Post("/v1/evaluate", [this](const httplib::Request& req, httplib::Response& res) {
            ServiceResponse out;
            try {
                out = evaluate(req.body);
            } catch (const std::exception& e) {
                out = {500, {{"error", e.what()}}};
            }
            res.status = out.status;
            res.set_content(out.body.dump(), "application/json");
        });
        server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(nlohmann::json{{"status", "ok"}}.dump(), "application/json");
        });
    }

private:
    static ServiceResponse bad_request(std::string message) {
        return {400, {{"error", std::move(message)}}};
    }

    const Runtime& runtime_;
};

// Configures the worker pool size to the concurrency limit and installs routes.
inline void configure_server(httplib::Server& server, const EvaluateService& service,
                             std::size_t max_concurrent) {
    server.new_task_queue = [max_concurrent] { return new httplib::ThreadPool(max_concurrent); };
    service.install(server);
}

}  // namespace continuity
