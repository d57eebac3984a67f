#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hyqe/plan.hpp"
#include "hyqe/relation.hpp"

namespace hyqe {

using Schema = std::vector<Column>;

/// Exact name first, then "table.column" against column origins.
std::optional<std::size_t> resolve_column(const Schema& schema, std::string_view name);
/// As resolve_column; throws SchemaError naming the missing column.
std::size_t require_column(const Schema& schema, std::string_view name);

/// Output layout of a join: all left columns, then the right columns that are
/// kept. A right column whose name collides is renamed "<origin>.<name>"; the
/// right copy of a same-named equi-join key is dropped.
struct JoinLayout {
    Schema columns;
    std::vector<std::size_t> right_kept;
    std::optional<std::size_t> left_key;
    std::optional<std::size_t> right_key;
};

/// `params` is null for semantic joins, which keep every column.
JoinLayout join_layout(const Schema& left, const Schema& right, std::string_view right_name, const JoinParams* params);

/// Name given to a semantic aggregate's value column.
std::string semantic_output_column(const SemanticParams& p);

/// Output schema of one compiled step given its input schemas. SCAN reads
/// from `db`. Throws SchemaError for unknown columns or incompatible inputs.
Schema output_schema(const PlanStep& step, const std::vector<const Schema*>& inputs, const Database& db);

/// Output schema of every step, keyed by id. Steps must be compiled.
std::map<std::string, Schema> infer_schemas(const PlanDag& dag, const Database& db);

}  // namespace hyqe
