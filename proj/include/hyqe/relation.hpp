#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hyqe/value.hpp"

namespace hyqe {

struct ProfileOptions;

enum class AttributeKind { Numeric, Categorical, Textual, Temporal, Boolean };

std::string_view to_string(AttributeKind k);
AttributeKind attribute_kind_from_string(std::string_view s);

/// Textual columns hold unstructured content; everything else is structured.
inline bool is_unstructured(AttributeKind k) { return k == AttributeKind::Textual; }

enum class Granularity { Second, Day, Month, Year };

std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view s);

struct AttributeProfile {
    std::size_t row_count = 0;
    double null_fraction = 0.0;
    std::size_t distinct_count = 0;
    /// Mean rendered width in bytes of non-null cells; feeds page estimates.
    double avg_bytes = 0.0;

    // Numeric
    std::optional<double> min;
    std::optional<double> max;
    std::optional<double> avg;
    std::optional<double> variance;

    // Categorical (and Boolean)
    std::size_t cardinality = 0;
    std::vector<std::pair<std::string, std::size_t>> top_k_values;

    // Textual
    std::size_t min_len = 0;
    std::size_t max_len = 0;
    std::size_t unique_count = 0;
    std::vector<std::string> sample_snippets;
    double expected_token_len = 0.0;

    // Temporal
    std::optional<Timestamp> range_start;
    std::optional<Timestamp> range_end;
    std::optional<Granularity> granularity;

    bool operator==(const AttributeProfile&) const = default;
};

struct Column {
    std::string name;
    AttributeKind kind = AttributeKind::Textual;
    AttributeProfile profile;
    /// Base relation/column this attribute was read from; empty when computed.
    std::string origin_table;
    std::string origin_column;
};

struct ForeignKey {
    std::string column;
    std::string ref_relation;
    std::string ref_column;
    bool operator==(const ForeignKey&) const = default;
};

using Row = std::vector<Value>;

/// Immutable-after-construction typed relation. Rows are stored row-major;
/// every row has one cell per column.
class Relation {
public:
    Relation() = default;
    Relation(std::string name, std::vector<Column> columns, std::vector<Row> rows);

    const std::string& name() const noexcept { return name_; }
    const std::vector<Column>& columns() const noexcept { return columns_; }
    const std::vector<Row>& rows() const noexcept { return rows_; }
    std::size_t size() const noexcept { return rows_.size(); }
    std::size_t arity() const noexcept { return columns_.size(); }
    bool empty() const noexcept { return rows_.empty(); }

    std::optional<std::size_t> find_column(std::string_view name) const;
    /// Throws SchemaError for unknown columns.
    std::size_t column_index(std::string_view name) const;
    const Column& column(std::string_view name) const { return columns_[column_index(name)]; }
    std::vector<std::string> column_names() const;

    const std::vector<std::string>& primary_key() const noexcept { return primary_key_; }
    const std::vector<ForeignKey>& foreign_keys() const noexcept { return foreign_keys_; }
    bool is_key_column(std::string_view name) const;

    Relation& set_keys(std::vector<std::string> primary_key, std::vector<ForeignKey> foreign_keys);
    Relation& rename(std::string name);

    /// Recomputes every column profile from the rows.
    Relation& reprofile();
    Relation& reprofile(const ProfileOptions& opts);

private:
    std::string name_;
    std::vector<Column> columns_;
    std::vector<Row> rows_;
    std::vector<std::string> primary_key_;
    std::vector<ForeignKey> foreign_keys_;
};

/// Checks arity and cell/kind agreement; throws SchemaError.
void check_relation(const Relation& r);

bool cell_matches_kind(const Value& v, AttributeKind k);

/// A database instance: relations keyed by name.
class Database {
public:
    void add(Relation r);
    const Relation& at(std::string_view name) const;
    const Relation* find(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }
    const std::map<std::string, Relation, std::less<>>& relations() const noexcept { return relations_; }
    std::size_t size() const noexcept { return relations_.size(); }

    /// Throws SchemaError when a foreign key names a missing relation/column.
    void check_foreign_keys() const;

private:
    std::map<std::string, Relation, std::less<>> relations_;
};

}  // namespace hyqe
