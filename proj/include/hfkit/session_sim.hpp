#pragma once

// Simulated annotation sessions driven through the request API, so the same
// driver runs in process or against a remote server.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfkit/annotator.hpp"
#include "hfkit/api.hpp"

namespace hfkit {

struct SessionPlan {
    AnnotatorProfile profile;
    std::int64_t events = 100;        // events to submit
    int events_per_request = 10;
    std::vector<FeedbackKind> kinds;  // rotation; empty uses every enabled type
};

struct SessionRunSummary {
    std::string session_id;
    std::string user_id;
    std::int64_t submitted = 0;
    std::int64_t accepted = 0;
    std::int64_t records = 0;
    std::int64_t samples = 0;
    std::map<std::string, std::int64_t> accepted_by_type;
    std::map<std::string, std::int64_t> errors;  // error code -> count
    bool exhausted = false;
};

nlohmann::json to_json(const SessionRunSummary& s);

/// Episode rebuilt from a render payload by replaying its actions. Throws
/// ParseError or ReplayError.
EpisodeRecord episode_from_render(const nlohmann::json& render, const GridSpec& spec);

/// Opens a session in `experiment_id` and annotates served samples until
/// `plan.events` events are submitted, the sampler is exhausted or a sample
/// request fails; the failure code is counted in `errors`.
SessionRunSummary run_simulated_session(ApiClient& client, const std::string& experiment_id, const SessionPlan& plan);

}  // namespace hfkit
