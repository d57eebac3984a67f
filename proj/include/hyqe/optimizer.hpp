#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyqe/cost.hpp"
#include "hyqe/plan.hpp"
#include "hyqe/relation.hpp"

namespace hyqe {

struct RewriteEntry {
    /// PushSelections, PruneProjections, ReorderJoins, Elevate or Defer.
    std::string rule;
    std::vector<std::string> steps;
    Rational cost_before;
    Rational cost_after;
    std::string detail;
};

enum class Placement { Elevate, Defer, Pinned };

std::string_view to_string(Placement p);

struct PlacementDecision {
    std::string step;
    std::string expander;
    Rational delta_gamma;
    Placement decision = Placement::Defer;
    bool moved = false;
    std::string note;
};

struct RewriteTrace {
    std::vector<RewriteEntry> applied;
    std::vector<PlacementDecision> decisions;
    std::vector<std::string> notes;
};

nlohmann::ordered_json to_json(const RewriteTrace& t);

/// Elevate exactly when gamma_out / gamma_in > epsilon. A zero input defers.
Placement decide_placement(const Rational& gamma_in, const Rational& gamma_out, const Rational& epsilon);

struct OptimizerOptions {
    bool allow_cross_products = false;
};

/// Each rewrite below works on a compiled plan and leaves the result set
/// unchanged. When `guarded` is set, a local rewrite is kept only if it
/// strictly lowers plan_cost; optimize() runs them guarded.
PlanDag push_selections(const PlanDag& dag, const Database& db, const CostModelParams& p, RewriteTrace* trace = nullptr,
                        bool guarded = false);
PlanDag prune_projections(const PlanDag& dag, const Database& db, const CostModelParams& p, RewriteTrace* trace = nullptr,
                          bool guarded = false);
PlanDag reorder_joins(const PlanDag& dag, const Database& db, const CostModelParams& p, RewriteTrace* trace = nullptr,
                      bool guarded = false, const OptimizerOptions& opts = {});
/// Decisions use `stats`, which must cover every step of `dag`.
PlanDag place_semantic(const PlanDag& dag, const Database& db, const PlanEstimates& stats, const CostModelParams& p,
                       RewriteTrace* trace = nullptr, bool guarded = false);

struct OptimizeResult {
    PlanDag plan;
    RewriteTrace trace;
    Rational cost_before;
    Rational cost_after;
};

/// PushSelections, PruneProjections, ReorderJoins, then semantic placement.
/// Falls back to the input plan, with a note, on any internal inconsistency.
OptimizeResult optimize(const PlanDag& dag, const Database& db, const CostModelParams& p, const OptimizerOptions& opts = {});

/// Inserts a PROJECT under `id` restoring the given column order when the
/// step's output holds the same names in a different order. Returns false
/// when the name sets differ.
bool restore_column_order(PlanDag& dag, const std::string& id, const std::vector<std::string>& names, const Database& db);

/// Columns of `schema` named as whole words in the text, case-insensitively.
std::vector<std::string> mentioned_columns(std::string_view text, const std::vector<Column>& schema);

}  // namespace hyqe
