#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyqe/backend.hpp"
#include "hyqe/exec_relational.hpp"
#include "hyqe/plan.hpp"
#include "hyqe/relation.hpp"
#include "hyqe/semantic_exec.hpp"

namespace hyqe {

struct ExecutionOptions {
    SemanticOptions semantic;
    /// When set, every step's result is written there as <plan>_<step>.csv.
    std::optional<std::filesystem::path> trace_dir;
};

struct ExecutionReport {
    std::string plan;
    std::string sink;
    Relation result;
    TokenAccounting accounting;
    /// Output row count per step id.
    std::map<std::string, std::size_t> step_rows;
    std::vector<std::string> diagnostics;
};

nlohmann::ordered_json to_json(const ExecutionReport& r, bool include_rows = true);

/// Runs one compiled plan. Steps of a layer run concurrently (bounded by the
/// semantic parallelism) and are materialized in plan order. `backend` may be
/// null for purely relational plans. Throws ExecutionError wrapping the first
/// failing step's error.
ExecutionReport execute_plan(const PlanDag& dag, const Database& db, SemanticBackend* backend,
                             const ExecutionOptions& opts = {});

/// Evaluates one compiled semantic step over materialized inputs.
Relation eval_semantic(const PlanStep& step, const ExecEnv& env, const SemanticContext& ctx);

}  // namespace hyqe
