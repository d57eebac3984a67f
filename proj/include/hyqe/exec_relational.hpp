#pragma once

#include <map>
#include <string>
#include <string_view>

#include "hyqe/plan.hpp"
#include "hyqe/relation.hpp"

namespace hyqe {

/// Base relations plus the intermediates materialized so far, by step id.
struct ExecEnv {
    const Database* base = nullptr;
    std::map<std::string, Relation, std::less<>> materialized;

    const Relation& input(std::string_view id) const;
};

/// Evaluates one compiled relational step over materialized inputs.
/// Throws SchemaError for unknown columns, type mismatches and
/// incompatible set-operation inputs.
Relation eval_relational(const PlanStep& step, const ExecEnv& env);

/// Stores a step result under its id, reprofiled. Throws ExecutionError
/// when the id is already taken.
void materialize(ExecEnv& env, const std::string& id, Relation relation);

/// Full-row key consistent with values_equal per cell; nulls get their own key.
std::string row_key(const Row& row);

}  // namespace hyqe
