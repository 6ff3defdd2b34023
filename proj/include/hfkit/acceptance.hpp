#pragma once

// Headless acceptance suite. Each criterion runs end to end from a scratch
// directory and reports pass/fail with a one-line detail.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace hfkit {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
    double budget_seconds = 0.0;  // 0 when untimed
};

nlohmann::json to_json(const CriterionResult& r);
/// "PASS [n] name (t s, budget b s): detail".
std::string format_result(const CriterionResult& r);

struct AcceptanceOptions {
    std::filesystem::path work_dir;  // each criterion uses and removes its own subdirectory
    std::vector<int> only;           // criterion ids; empty runs all
};

struct CriterionInfo {
    int id;
    std::string name;
    double budget_seconds;
};

const std::vector<CriterionInfo>& acceptance_criteria();

/// Runs one criterion; errors become a failed result. Throws RangeError on an
/// unknown id.
CriterionResult run_criterion(int id, const AcceptanceOptions& options);

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options,
                                            const std::function<void(const CriterionResult&)>& on_result = {});

}  // namespace hfkit
