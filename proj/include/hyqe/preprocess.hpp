#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hyqe/relation.hpp"

namespace hyqe {

/// Lowercases, maps non-alphanumeric runs to '_', trims underscores.
std::string normalize_identifier(std::string_view name);

struct CleanResult {
    Relation relation;
    /// Original column name -> cleaned name, in column order.
    std::vector<std::pair<std::string, std::string>> renames;
};

/// Identifier-safe, de-duplicated column names; whitespace-only text cells
/// become null. Row count and all other cells are unchanged.
CleanResult clean_normalize(const Relation& r);

/// Cleans every relation and rewrites foreign-key references to the new names.
Database clean_database(const Database& db);

enum class PruneRule { NullDominated, ConstantDominated, NonInformative };

std::string_view to_string(PruneRule rule);

struct PruneConfig {
    double null_threshold = 0.95;
    double dominant_value_threshold = 0.95;
    double non_informative_hit_ratio = 0.5;
    std::size_t sample_size = 100;
};

struct PrunedColumn {
    std::string column;
    PruneRule rule;
};

struct PruneReport {
    std::vector<PrunedColumn> dropped;
};

/// Which detector (if any) flags a single cell as non-informative content:
/// hex or Base64 blobs of at least 32 characters, password hashes, code fences.
bool is_non_informative(std::string_view cell);

struct PruneOutcome {
    Relation relation;
    PruneReport report;
};

/// Drops null-dominated, single-value-dominated and non-informative columns.
/// Primary and foreign key columns are always kept.
PruneOutcome heuristic_prune(const Relation& r, const PruneConfig& cfg = {});

}  // namespace hyqe
