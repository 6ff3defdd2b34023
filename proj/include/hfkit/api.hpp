#pragma once

// Request/response layer over FeedbackService. Bodies are JSON; errors are
// {"error": {"code", "message", "field"?}}.
//
//   POST /api/experiments                              config -> {experiment_id}             201
//   GET  /api/experiments                              -> {experiments: [id]}
//   GET  /api/experiments/{id}                         -> config
//   POST /api/experiments/{id}/sessions                {user_id?} -> session                 201
//   POST /api/experiments/{id}/train                   -> training outcome
//   GET  /api/experiments/{id}/metrics                 -> metrics
//   GET  /api/experiments/{id}/log                     -> log text (application/x-ndjson)
//   GET  /api/experiments/{id}/render?episode={key}    -> render payload
//   GET  /api/sessions/{sid}                           -> session
//   POST /api/sessions/{sid}/next                      {k} -> {items: [{id, key, source, render}]}
//   POST /api/sessions/{sid}/feedback                  {events: [event]} -> {results: [...], accepted}
//   GET  /api/sessions/{sid}/quality                   -> quality estimate
//
// Status codes: 400 validation and parse errors, 404 unknown experiment,
// session or episode, 409 Conflict and ModelRequired, 410 Exhausted, 422
// EmptyDataset, InsufficientData and DisabledFeedbackType, 500 otherwise.

#include <map>
#include <memory>
#include <string>

#include <json.hpp>

#include "hfkit/service.hpp"

namespace hfkit {

struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;

    nlohmann::json json() const { return nlohmann::json::parse(body); }
};

using QueryParams = std::map<std::string, std::string>;

int http_status_for(const std::string& error_code);
ApiResponse error_response(const Error& e);

class ApiRouter {
public:
    explicit ApiRouter(FeedbackService& service) : service_(service) {}

    ApiResponse handle(const std::string& method, const std::string& path, const QueryParams& query,
                       const std::string& body) const;

private:
    FeedbackService& service_;
};

/// Minimal client interface used by simulated sessions.
class ApiClient {
public:
    virtual ~ApiClient() = default;
    virtual ApiResponse call(const std::string& method, const std::string& path, const QueryParams& query,
                             const std::string& body) = 0;

    /// Parsed body of a successful call; throws the mapped error otherwise.
    nlohmann::json request(const std::string& method, const std::string& path, const nlohmann::json& body = nullptr,
                           const QueryParams& query = {});
};

class InProcessClient : public ApiClient {
public:
    explicit InProcessClient(const ApiRouter& router) : router_(router) {}
    ApiResponse call(const std::string& method, const std::string& path, const QueryParams& query,
                     const std::string& body) override;

private:
    const ApiRouter& router_;
};

/// Rethrows an error body as the library error of the same code.
[[noreturn]] void throw_error_body(int status, const nlohmann::json& body);

}  // namespace hfkit
