#include "hfkit/api.hpp"

#include <sstream>

namespace hfkit {

using nlohmann::json;

namespace {

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> out;
    std::string part;
    std::istringstream ss(path);
    while (std::getline(ss, part, '/'))
        if (!part.empty()) out.push_back(part);
    return out;
}

ApiResponse json_response(const json& body, int status = 200) {
    return {status, "application/json", body.dump()};
}

json parse_body(const std::string& body) {
    if (body.empty()) return json::object();
    try {
        return json::parse(body);
    } catch (const json::parse_error& e) {
        throw ParseError(e.byte, e.what());
    }
}

json served_json(const ServedSample& s) {
    return {{"id", to_json(s.id)}, {"key", s.id.key()}, {"source", to_string(s.source)}, {"render", s.render}};
}

ApiResponse not_found(const std::string& method, const std::string& path) {
    return json_response({{"error", {{"code", "NotFound"}, {"message", "no route " + method + " " + path}}}}, 404);
}

}  // namespace

int http_status_for(const std::string& code) {
    if (code == "ValidationError" || code == "ParseError" || code == "ConfigError" || code == "UnknownTargets" ||
        code == "ScaleError" || code == "EmptyRanking" || code == "ReplayError" || code == "RangeError" ||
        code == "SchemaVersionError" || code == "InvariantViolation")
        return 400;
    if (code == "NotFound" || code == "SessionNotFound") return 404;
    if (code == "Conflict" || code == "ModelRequired" || code == "StoreLocked") return 409;
    if (code == "Exhausted") return 410;
    if (code == "EmptyDataset" || code == "InsufficientData" || code == "DisabledFeedbackType" ||
        code == "NoCalibrationData")
        return 422;
    return 500;
}

ApiResponse error_response(const Error& e) {
    json err = {{"code", e.code()}, {"message", e.what()}};
    if (const auto* v = dynamic_cast<const ValidationError*>(&e)) err["field"] = v->field();
    return json_response({{"error", err}}, http_status_for(e.code()));
}

ApiResponse ApiRouter::handle(const std::string& method, const std::string& path, const QueryParams& query,
                              const std::string& body) const {
    try {
        const auto p = split_path(path);
        if (p.size() < 2 || p[0] != "api") return not_found(method, path);

        if (p[1] == "experiments") {
            if (p.size() == 2 && method == "POST") {
                ExperimentConfig config;
                try {
                    config = config_from_json(parse_body(body));
                } catch (const json::exception& e) {
                    throw ValidationError("config", e.what());
                }
                return json_response({{"experiment_id", service_.create_experiment(config)}}, 201);
            }
            if (p.size() == 2 && method == "GET") return json_response({{"experiments", service_.experiments()}});
            if (p.size() < 3) return not_found(method, path);
            const auto& id = p[2];
            if (p.size() == 3 && method == "GET") return json_response(to_json(service_.experiment(id)));
            if (p.size() == 4 && p[3] == "sessions" && method == "POST") {
                const auto req = parse_body(body);
                return json_response(to_json(service_.create_session(id, req.value("user_id", std::string()))), 201);
            }
            if (p.size() == 4 && p[3] == "train" && method == "POST") return json_response(to_json(service_.run_training(id)));
            if (p.size() == 4 && p[3] == "metrics" && method == "GET") return json_response(service_.metrics(id));
            if (p.size() == 4 && p[3] == "log" && method == "GET")
                return {200, "application/x-ndjson", service_.export_log(id)};
            if (p.size() == 4 && p[3] == "render" && method == "GET") {
                auto it = query.find("episode");
                if (it == query.end()) throw ValidationError("episode", "query parameter is required");
                const auto ep = EpisodeId::from_key(it->second);
                if (!ep) throw ValidationError("episode", "malformed episode key");
                return json_response(service_.render_episode(id, *ep));
            }
            return not_found(method, path);
        }

        if (p[1] == "sessions" && p.size() >= 3) {
            const auto& sid = p[2];
            if (p.size() == 3 && method == "GET") return json_response(to_json(service_.session(sid)));
            if (p.size() == 4 && p[3] == "next" && method == "POST") {
                const auto req = parse_body(body);
                const auto k_json = req.value("k", json(1));
                if (!k_json.is_number_integer()) throw ValidationError("k", "must be an integer");
                json items = json::array();
                for (const auto& s : service_.next_samples(sid, k_json.get<int>())) items.push_back(served_json(s));
                return json_response({{"items", items}});
            }
            if (p.size() == 4 && p[3] == "feedback" && method == "POST") {
                const auto req = parse_body(body);
                if (!req.contains("events") || !req.at("events").is_array())
                    throw ValidationError("events", "must be an array");
                // Malformed events are reported in place, like any other per-event error.
                std::vector<RawFeedbackEvent> events;
                std::vector<std::optional<SubmitOutcome>> early;
                for (const auto& e : req.at("events")) {
                    try {
                        events.push_back(raw_event_from_json(e));
                        early.emplace_back();
                    } catch (const Error& err) {
                        SubmitOutcome bad;
                        bad.error_code = err.code();
                        bad.error_message = err.what();
                        early.emplace_back(bad);
                    }
                }
                const auto outcomes = service_.submit_feedback(sid, events);
                json results = json::array();
                std::size_t next = 0, accepted = 0;
                for (const auto& slot : early) {
                    const auto& o = slot ? *slot : outcomes[next++];
                    accepted += o.ok();
                    results.push_back(to_json(o));
                }
                return json_response({{"results", results}, {"accepted", accepted}});
            }
            if (p.size() == 4 && p[3] == "quality" && method == "GET")
                return json_response(to_json(service_.quality_estimate(sid)));
            return not_found(method, path);
        }
        return not_found(method, path);
    } catch (const Error& e) {
        return error_response(e);
    } catch (const std::exception& e) {
        return json_response({{"error", {{"code", "InternalError"}, {"message", e.what()}}}}, 500);
    }
}

json ApiClient::request(const std::string& method, const std::string& path, const json& body, const QueryParams& query) {
    const auto res = call(method, path, query, body.is_null() ? std::string() : body.dump());
    if (res.status >= 400) {
        json parsed;
        try {
            parsed = json::parse(res.body);
        } catch (const json::exception&) {
            parsed = {{"error", {{"code", "InternalError"}, {"message", res.body}}}};
        }
        throw_error_body(res.status, parsed);
    }
    if (res.content_type != "application/json") return res.body;
    return json::parse(res.body);
}

ApiResponse InProcessClient::call(const std::string& method, const std::string& path, const QueryParams& query,
                                  const std::string& body) {
    return router_.handle(method, path, query, body);
}

void throw_error_body(int status, const json& body) {
    const auto err = body.value("error", json::object());
    const auto code = err.value("code", std::string("InternalError"));
    const auto message = err.value("message", "request failed with status " + std::to_string(status));
#define HFKIT_RETHROW(Name) \
    if (code == #Name) throw Name(message);
    HFKIT_RETHROW(NotFound)
    HFKIT_RETHROW(SessionNotFound)
    HFKIT_RETHROW(Conflict)
    HFKIT_RETHROW(Exhausted)
    HFKIT_RETHROW(ModelRequired)
    HFKIT_RETHROW(EmptyDataset)
    HFKIT_RETHROW(InsufficientData)
    HFKIT_RETHROW(DisabledFeedbackType)
    HFKIT_RETHROW(NoCalibrationData)
    HFKIT_RETHROW(UnknownTargets)
    HFKIT_RETHROW(ScaleError)
    HFKIT_RETHROW(EmptyRanking)
    HFKIT_RETHROW(ReplayError)
    HFKIT_RETHROW(RangeError)
    HFKIT_RETHROW(ConfigError)
    HFKIT_RETHROW(StoreLocked)
#undef HFKIT_RETHROW
    if (code == "ValidationError") {
        const auto field = err.value("field", std::string());
        const auto prefix = field + ": ";
        throw ValidationError(field, message.rfind(prefix, 0) == 0 ? message.substr(prefix.size()) : message);
    }
    if (code == "ParseError") throw ParseError(0, message);
    throw InvalidState(code + ": " + message);
}

}  // namespace hfkit
