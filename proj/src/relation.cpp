#include "hyqe/relation.hpp"

#include <algorithm>

#include "hyqe/error.hpp"
#include "hyqe/profile.hpp"

namespace hyqe {

std::string_view to_string(AttributeKind k)
{
    switch (k) {
    case AttributeKind::Numeric:
        return "numeric";
    case AttributeKind::Categorical:
        return "categorical";
    case AttributeKind::Textual:
        return "textual";
    case AttributeKind::Temporal:
        return "temporal";
    case AttributeKind::Boolean:
        return "boolean";
    }
    return "textual";
}

AttributeKind attribute_kind_from_string(std::string_view s)
{
    const std::string l = to_lower(s);
    if (l == "numeric") {
        return AttributeKind::Numeric;
    }
    if (l == "categorical") {
        return AttributeKind::Categorical;
    }
    if (l == "textual") {
        return AttributeKind::Textual;
    }
    if (l == "temporal") {
        return AttributeKind::Temporal;
    }
    if (l == "boolean") {
        return AttributeKind::Boolean;
    }
    throw SchemaError("unknown attribute kind '" + std::string(s) + "'");
}

std::string_view to_string(Granularity g)
{
    switch (g) {
    case Granularity::Second:
        return "second";
    case Granularity::Day:
        return "day";
    case Granularity::Month:
        return "month";
    case Granularity::Year:
        return "year";
    }
    return "second";
}

Granularity granularity_from_string(std::string_view s)
{
    if (s == "day") {
        return Granularity::Day;
    }
    if (s == "month") {
        return Granularity::Month;
    }
    if (s == "year") {
        return Granularity::Year;
    }
    return Granularity::Second;
}

bool cell_matches_kind(const Value& v, AttributeKind k)
{
    if (is_null(v)) {
        return true;
    }
    switch (k) {
    case AttributeKind::Numeric:
        return std::holds_alternative<double>(v);
    case AttributeKind::Categorical:
    case AttributeKind::Textual:
        return std::holds_alternative<std::string>(v);
    case AttributeKind::Temporal:
        return std::holds_alternative<Timestamp>(v);
    case AttributeKind::Boolean:
        return std::holds_alternative<bool>(v);
    }
    return false;
}

Relation::Relation(std::string name, std::vector<Column> columns, std::vector<Row> rows)
    : name_(std::move(name)), columns_(std::move(columns)), rows_(std::move(rows))
{
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (rows_[i].size() != columns_.size()) {
            throw SchemaError("relation '" + name_ + "': row " + std::to_string(i) + " has arity " +
                              std::to_string(rows_[i].size()) + ", expected " + std::to_string(columns_.size()));
        }
    }
}

std::optional<std::size_t> Relation::find_column(std::string_view name) const
{
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        if (columns_[i].name == name) {
            return i;
        }
    }
    return std::nullopt;
}

std::size_t Relation::column_index(std::string_view name) const
{
    if (auto i = find_column(name)) {
        return *i;
    }
    throw SchemaError("unknown column '" + std::string(name) + "' in relation '" + name_ + "'");
}

std::vector<std::string> Relation::column_names() const
{
    std::vector<std::string> out;
    out.reserve(columns_.size());
    for (const auto& c : columns_) {
        out.push_back(c.name);
    }
    return out;
}

bool Relation::is_key_column(std::string_view name) const
{
    if (std::find(primary_key_.begin(), primary_key_.end(), name) != primary_key_.end()) {
        return true;
    }
    return std::any_of(foreign_keys_.begin(), foreign_keys_.end(), [&](const ForeignKey& fk) { return fk.column == name; });
}

Relation& Relation::set_keys(std::vector<std::string> primary_key, std::vector<ForeignKey> foreign_keys)
{
    for (const auto& k : primary_key) {
        column_index(k);
    }
    for (const auto& fk : foreign_keys) {
        column_index(fk.column);
    }
    primary_key_ = std::move(primary_key);
    foreign_keys_ = std::move(foreign_keys);
    return *this;
}

Relation& Relation::rename(std::string name)
{
    name_ = std::move(name);
    return *this;
}

Relation& Relation::reprofile()
{
    return reprofile(ProfileOptions{});
}

Relation& Relation::reprofile(const ProfileOptions& opts)
{
    std::vector<Value> cells;
    for (std::size_t c = 0; c < columns_.size(); ++c) {
        cells.clear();
        cells.reserve(rows_.size());
        for (const auto& row : rows_) {
            cells.push_back(row[c]);
        }
        columns_[c].profile = profile_cells(cells, columns_[c].kind, opts);
    }
    return *this;
}

void check_relation(const Relation& r)
{
    for (std::size_t i = 0; i < r.rows().size(); ++i) {
        const auto& row = r.rows()[i];
        if (row.size() != r.arity()) {
            throw SchemaError("relation '" + r.name() + "': arity mismatch at row " + std::to_string(i));
        }
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (!cell_matches_kind(row[c], r.columns()[c].kind)) {
                throw SchemaError("relation '" + r.name() + "': cell (" + std::to_string(i) + ", " +
                                  r.columns()[c].name + ") does not match kind " +
                                  std::string(to_string(r.columns()[c].kind)));
            }
        }
    }
}

void Database::add(Relation r)
{
    std::string name = r.name();
    relations_.insert_or_assign(std::move(name), std::move(r));
}

const Relation& Database::at(std::string_view name) const
{
    if (const auto* r = find(name)) {
        return *r;
    }
    throw SchemaError("unknown relation '" + std::string(name) + "'");
}

const Relation* Database::find(std::string_view name) const
{
    auto it = relations_.find(name);
    return it == relations_.end() ? nullptr : &it->second;
}

void Database::check_foreign_keys() const
{
    for (const auto& [name, rel] : relations_) {
        for (const auto& fk : rel.foreign_keys()) {
            const auto* target = find(fk.ref_relation);
            if (target == nullptr || !target->find_column(fk.ref_column)) {
                throw SchemaError("relation '" + name + "': foreign key " + fk.column + " references missing " +
                                  fk.ref_relation + "." + fk.ref_column);
            }
        }
    }
}

}  // namespace hyqe
