#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyqe/backend.hpp"
#include "hyqe/relation.hpp"

namespace hyqe {

struct BatchConfig {
    std::size_t b = 100;
    std::uint64_t b_max = 32000;
    /// Tokens per row; 0 means estimate it from the relation's profiles.
    std::uint64_t t_row = 0;
};

/// min(b, floor(b_max / t_row)). Throws ContractViolation when b or t_row is
/// 0, and ExecutionError when not even one row fits the budget.
std::size_t compute_batch_size(const BatchConfig& cfg);

/// Per-row token estimate from column profiles: for each column the larger of
/// its expected token length and avg_bytes/4 (at least 1), plus the key name
/// and one token of JSON punctuation.
std::uint64_t estimate_row_tokens(const std::vector<Column>& columns);

struct SemanticOptions {
    BatchConfig batch;
    /// Extra attempts after a failed or malformed call.
    std::size_t retries = 2;
    /// Backend calls in flight at once.
    std::size_t parallelism = 8;
    std::size_t max_depth = 8;
    /// Summary rows a partial aggregation may return per chunk.
    std::size_t partial_cap = 1;
};

struct CallRecord {
    std::string step;
    std::string op;
    /// Aggregation group and reduce level; 0 for the other operators.
    std::size_t group = 0;
    std::size_t depth = 0;
    std::size_t chunk = 0;
    std::size_t attempt = 0;
    std::size_t rows = 0;
    /// Right-hand block size of a join call.
    std::size_t rows_b = 0;
    std::uint64_t t_row = 0;
    std::uint64_t budget = 0;
    /// Final aggregation forced past max_depth, which may exceed the budget.
    bool forced = false;
    Usage usage;

    bool within_budget() const { return std::max(rows, rows_b) * t_row <= budget; }
};

/// Thread-safe log of backend calls.
class TokenAccounting {
public:
    TokenAccounting() = default;
    TokenAccounting(const TokenAccounting& other);
    TokenAccounting& operator=(const TokenAccounting& other);

    void record(CallRecord r);
    void merge(const TokenAccounting& other);

    /// Records ordered by (step, op, group, depth, chunk, attempt), so the log
    /// does not depend on thread scheduling.
    std::vector<CallRecord> records() const;
    std::size_t calls() const;
    Usage totals() const;
    std::map<std::string, Usage> by_operator() const;
    std::map<std::string, Usage> by_step() const;

private:
    mutable std::mutex mu_;
    std::vector<CallRecord> records_;
};

nlohmann::ordered_json to_json(const TokenAccounting& a);

/// What a semantic operator needs besides its inputs.
struct SemanticContext {
    SemanticBackend* backend = nullptr;
    SemanticOptions options;
    TokenAccounting* accounting = nullptr;
    std::vector<std::string>* diagnostics = nullptr;
    /// Step id stamped on the call records.
    std::string step;
};

nlohmann::json row_to_json(const std::vector<Column>& columns, const Row& row);
nlohmann::json rows_to_json(const std::vector<Column>& columns, const std::vector<Row>& rows);

/// Converts a backend cell to the column's kind. Throws ContractViolation
/// when it cannot be read as that kind.
Value coerce_cell(const nlohmann::json& cell, AttributeKind kind);

/// Runs fn(0..n-1) on at most `parallelism` threads. If any call throws, the
/// exception of the lowest index is rethrown after all threads finish.
void parallel_for(std::size_t n, std::size_t parallelism, const std::function<void(std::size_t)>& fn);

/// Appends `new_column` (Textual) derived per row by the backend. Throws
/// SchemaError when the column already exists.
Relation exec_map(const std::string& instruction, const std::string& new_column, const Relation& r,
                  const SemanticContext& ctx);

Relation exec_filter(const std::string& instruction, const Relation& r, const SemanticContext& ctx);

/// Block nested loop over β-row blocks of both inputs. Output columns follow
/// join_layout with no key dropped; `name_b` prefixes conflicting right-hand
/// columns.
Relation exec_join(const std::string& instruction, const Relation& a, const Relation& b, const std::string& name_b,
                   const SemanticContext& ctx);

/// Recursive reduce per group. Output: the group columns then `output`
/// (Textual). An ungrouped empty input yields one null row and a diagnostic.
Relation exec_aggregate(const std::string& instruction, const Relation& r, const std::vector<std::string>& group_by,
                        const std::string& output, const SemanticContext& ctx);

}  // namespace hyqe
