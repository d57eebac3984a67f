#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyqe/backend.hpp"
#include "hyqe/consolidation.hpp"
#include "hyqe/cost.hpp"
#include "hyqe/error.hpp"
#include "hyqe/plan.hpp"
#include "hyqe/relation.hpp"
#include "hyqe/semantic_exec.hpp"

namespace hyqe {

enum class ConsolidationMode { Vote, Judge, Delegate, AccAtK };

std::string_view to_string(ConsolidationMode m);
ConsolidationMode consolidation_mode_from_string(std::string_view s);

struct RunConfig {
    std::size_t k = 6;
    SemanticOptions semantic;
    CostModelParams cost;
    std::size_t k1 = 5;
    std::size_t k2 = 5;
    std::size_t compile_attempts = 3;
    ConsolidationMode mode = ConsolidationMode::Vote;
    EqualityMode equality = EqualityMode::Exact;
    /// "mock:<rulebook.json>" or "http://host:port/path".
    std::string backend;
    std::uint64_t seed = 7;
    bool optimize = true;
    bool diversify = true;
    bool allow_cross_products = false;
    /// Few-shot text for the judge prompt.
    std::optional<std::filesystem::path> judge_examples;
    std::optional<std::filesystem::path> trace_dir;

    /// Throws ContractViolation when a bound is broken.
    void check() const;
};

/// Reads any subset of the fields; the rest keep `base` values.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
nlohmann::ordered_json to_json(const RunConfig& c);

/// Builds the backend a RunConfig names. Throws BackendError for an
/// unknown scheme.
std::unique_ptr<SemanticBackend> make_backend(const std::string& spec);

enum class Stage { Plan, Execute, Consolidate };

/// A pipeline failure tagged with the stage it came from.
class StageError : public Error {
public:
    StageError(Stage stage, const std::string& what) : Error(what), stage_(stage) {}
    Stage stage() const noexcept { return stage_; }

private:
    Stage stage_;
};

/// Question to answer: prune and preview, plan (or take `plans`), compile,
/// optimize, execute every plan, consolidate. The report is a pure function
/// of the inputs when the backend is deterministic.
nlohmann::ordered_json run_question(const Database& db, const std::string& question, const RunConfig& cfg,
                                    SemanticBackend& backend, const std::vector<PlanDag>* plans = nullptr);

}  // namespace hyqe
