#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hyqe/backend.hpp"
#include "hyqe/plan.hpp"
#include "hyqe/relation.hpp"
#include "hyqe/schema.hpp"
#include "hyqe/semantic_exec.hpp"

namespace hyqe {

enum class DiversityDimension { SchemaMapping, RiskProfile, OperatorSubstitution, SemanticIntent };

std::string_view to_string(DiversityDimension d);

struct DiversificationStrategy {
    std::vector<DiversityDimension> dimensions{DiversityDimension::SchemaMapping, DiversityDimension::RiskProfile,
                                               DiversityDimension::OperatorSubstitution,
                                               DiversityDimension::SemanticIntent};
    std::size_t k = 6;
    /// Strategy-free prompt: no dimension text, any k.
    bool naive = false;

    static DiversificationStrategy none(std::size_t k);

    /// Throws ContractViolation when k is 0, or when k > 1 with no
    /// dimensions on a non-naive strategy.
    void check() const;
    /// Text for the strategy slot of the decomposition prompt; empty when naive.
    std::string text() const;
};

struct PlannerOptions {
    std::size_t k1 = 5;
    std::size_t k2 = 5;
    std::uint64_t seed = 7;
    /// Extra attempts after a failed or malformed planning call.
    std::size_t retries = 2;
    /// Total compile attempts per relational step.
    std::size_t compile_attempts = 3;
    std::size_t parallelism = 8;
    /// Preview cells longer than this are cut in prompts.
    std::size_t cell_chars = 80;
};

/// Everything planning knows about the question and the data.
struct QueryContext {
    std::string question;
    /// Retained columns per relation, in schema order.
    std::map<std::string, std::vector<std::string>> pruned_schema;
    /// Preview rows per relation, projected onto the retained columns.
    std::map<std::string, Relation> preview;
    std::size_t k1 = 5;
    std::size_t k2 = 5;
    Database refined_db;
    std::vector<std::string> diagnostics;
};

/// Planner calls are logged into `accounting` (when set) under the operator
/// names PRUNE, PLAN and COMPILE.
struct PlannerEnv {
    SemanticBackend* backend = nullptr;
    PlannerOptions options;
    TokenAccounting* accounting = nullptr;
};

/// Columns of `r` that are keys: its own primary and foreign keys plus the
/// columns other relations reference through foreign keys.
std::vector<std::string> key_columns(const Relation& r, const Database& db);

/// One pruning call per relation. Key columns are always kept; names the
/// backend invents are dropped with a diagnostic. An empty answer keeps
/// every column.
std::map<std::string, std::vector<std::string>> semantic_prune_schema(const Database& db, const std::string& question,
                                                                      const PlannerEnv& env,
                                                                      std::vector<std::string>* diagnostics = nullptr);

/// Projects every relation onto its retained columns; relations absent from
/// `keep` are unchanged.
Database apply_pruning(const Database& db, const std::map<std::string, std::vector<std::string>>& keep);

/// Row text handed to the embedder.
std::string row_text(const Relation& r, std::size_t row);

/// Indices of the preview rows: the k1 rows closest to the question by
/// embedding cosine (ties by row order), then up to k2 rows drawn with
/// `seed`, minus any already chosen. The whole relation when it has at most
/// k1 + k2 rows. An embedding failure falls back to 2·k2 random rows.
std::vector<std::size_t> preview_indices(const Relation& r, const std::string& question, std::size_t k1, std::size_t k2,
                                         std::uint64_t seed, SemanticBackend& backend,
                                         std::vector<std::string>* diagnostics = nullptr);

Relation build_preview(const Relation& r, const std::string& question, std::size_t k1, std::size_t k2,
                       std::uint64_t seed, SemanticBackend& backend, std::vector<std::string>* diagnostics = nullptr);

/// Pruning, refined instance and previews for one question.
QueryContext prepare_context(const Database& db, const std::string& question, const PlannerEnv& env);

/// Markdown-ish schema and preview text for the decomposition prompt.
std::string render_data_preview(const QueryContext& ctx, std::size_t cell_chars = 80);

/// One planning call; returns up to k valid plans in reply order. Throws
/// PlanningError when no valid plan survives.
std::vector<PlanDag> ground_and_decompose(const QueryContext& ctx, const DiversificationStrategy& strategy,
                                          const PlannerEnv& env, std::vector<std::string>* diagnostics = nullptr);

/// A step's inputs: step id (or base table for a SCAN) and schema.
struct StepInput {
    std::string name;
    const Schema* schema = nullptr;
};

/// Problems with compiled params against the step's inputs: wrong params
/// kind, unknown columns, kind mismatches, compound conditions. Empty when
/// the params are usable.
std::vector<std::string> check_compiled(const PlanStep& step, const std::vector<StepInput>& inputs, const Database& db);

/// Fills in the params of one step. Relational steps go through the
/// backend, with the errors of each rejected attempt fed back, for at most
/// options.compile_attempts attempts; semantic steps are read from their
/// template locally. Throws PlanningError carrying every attempt's error.
PlanStep compile_instruction(const PlanStep& step, const std::vector<StepInput>& inputs, const Database& db,
                             const std::map<std::string, Relation>& previews, const PlannerEnv& env,
                             std::vector<std::string>* diagnostics = nullptr);

/// Compiles every uncompiled step in topological order.
PlanDag compile_plan(const PlanDag& dag, const Database& db, const std::map<std::string, Relation>& previews,
                     const PlannerEnv& env, std::vector<std::string>* diagnostics = nullptr);

}  // namespace hyqe
