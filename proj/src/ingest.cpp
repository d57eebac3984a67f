#include "hyqe/ingest.hpp"

#include <algorithm>
#include <optional>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "hyqe/error.hpp"

namespace hyqe {

InputFormat input_format_from_string(std::string_view s)
{
    const std::string l = to_lower(s);
    if (l == "csv") {
        return InputFormat::Csv;
    }
    if (l == "jsonl" || l == "jsonlines" || l == "ndjson") {
        return InputFormat::JsonLines;
    }
    throw ParseError("unknown input format '" + std::string(s) + "'");
}

std::vector<std::vector<std::string>> parse_csv_records(std::istream& in, std::vector<std::size_t>* record_lines)
{
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    std::size_t line = 1;
    std::size_t record_start = 1;
    bool in_quotes = false;
    bool after_quote = false;
    bool field_started = false;
    bool any = false;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        after_quote = false;
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        // A bare blank line is skipped rather than read as a one-field record.
        if (!(record.size() == 1 && record[0].empty())) {
            records.push_back(std::move(record));
            if (record_lines != nullptr) {
                record_lines->push_back(record_start);
            }
        }
        record.clear();
    };

    char c = 0;
    while (in.get(c)) {
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                    after_quote = true;
                }
            } else {
                if (c == '\n') {
                    ++line;
                }
                field.push_back(c);
            }
            continue;
        }
        if (c == ',') {
            end_field();
        } else if (c == '\r') {
            if (in.peek() == '\n') {
                continue;
            }
            end_record();
            ++line;
            record_start = line;
        } else if (c == '\n') {
            end_record();
            ++line;
            record_start = line;
        } else if (c == '"') {
            if (field_started || after_quote) {
                throw ParseError("unexpected quote inside unquoted field", line);
            }
            in_quotes = true;
            field_started = true;
        } else {
            if (after_quote) {
                throw ParseError("unexpected character after closing quote", line);
            }
            field.push_back(c);
            field_started = true;
        }
    }
    if (in_quotes) {
        throw ParseError("unterminated quoted field", record_start);
    }
    if (any && (field_started || !record.empty() || after_quote)) {
        end_record();
    }
    return records;
}

namespace {

struct RawTable {
    std::vector<std::string> names;
    std::vector<std::vector<std::optional<std::string>>> rows;
    std::vector<std::size_t> lines;
};

RawTable read_csv(std::istream& in)
{
    std::vector<std::size_t> lines;
    auto records = parse_csv_records(in, &lines);
    if (records.empty()) {
        throw ParseError("missing header row", 1);
    }
    RawTable t;
    t.names = records.front();
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].size() != t.names.size()) {
            throw ParseError("arity mismatch: expected " + std::to_string(t.names.size()) + " fields, got " +
                                 std::to_string(records[i].size()),
                             lines[i]);
        }
        std::vector<std::optional<std::string>> row;
        row.reserve(records[i].size());
        for (auto& f : records[i]) {
            if (f.empty()) {
                row.emplace_back(std::nullopt);
            } else {
                row.emplace_back(std::move(f));
            }
        }
        t.rows.push_back(std::move(row));
        t.lines.push_back(lines[i]);
    }
    return t;
}

RawTable read_json_lines(std::istream& in)
{
    RawTable t;
    std::vector<nlohmann::json> objects;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (trim(text).empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), line);
        }
        if (!j.is_object()) {
            throw ParseError("expected a JSON object per line", line);
        }
        for (const auto& [key, _] : j.items()) {
            if (std::find(t.names.begin(), t.names.end(), key) == t.names.end()) {
                t.names.push_back(key);
            }
        }
        objects.push_back(std::move(j));
        t.lines.push_back(line);
    }
    if (objects.empty()) {
        throw ParseError("no records", 1);
    }
    for (const auto& j : objects) {
        std::vector<std::optional<std::string>> row;
        for (const auto& name : t.names) {
            auto it = j.find(name);
            if (it == j.end() || it->is_null()) {
                row.emplace_back(std::nullopt);
            } else if (it->is_string()) {
                auto s = it->get<std::string>();
                row.emplace_back(s.empty() ? std::nullopt : std::optional<std::string>(std::move(s)));
            } else {
                row.emplace_back(it->dump());
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

bool blank(const std::optional<std::string>& s) { return !s || trim(*s).empty(); }

AttributeKind infer_kind(const RawTable& t, std::size_t col, const IngestOptions& opts)
{
    std::size_t non_null = 0;
    bool numeric = true;
    bool boolean = true;
    bool temporal = true;
    std::size_t max_len = 0;
    std::unordered_set<std::string> distinct;
    for (const auto& row : t.rows) {
        const auto& cell = row[col];
        if (blank(cell)) {
            continue;
        }
        ++non_null;
        numeric = numeric && parse_number(*cell).has_value();
        boolean = boolean && parse_boolean(*cell).has_value();
        temporal = temporal && parse_timestamp(*cell, opts.date_formats).has_value();
        max_len = std::max(max_len, cell->size());
        distinct.insert(*cell);
    }
    if (non_null == 0) {
        return AttributeKind::Textual;
    }
    if (numeric) {
        return AttributeKind::Numeric;
    }
    if (boolean) {
        return AttributeKind::Boolean;
    }
    if (temporal) {
        return AttributeKind::Temporal;
    }
    const double ratio = static_cast<double>(distinct.size()) / static_cast<double>(t.rows.size());
    if (ratio <= opts.categorical_ratio && max_len <= opts.categorical_max_len) {
        return AttributeKind::Categorical;
    }
    return AttributeKind::Textual;
}

Value convert_cell(const std::optional<std::string>& cell, AttributeKind kind, const IngestOptions& opts,
                   std::size_t line, const std::string& column)
{
    if (!cell) {
        return std::monostate{};
    }
    if (kind == AttributeKind::Categorical || kind == AttributeKind::Textual) {
        return *cell;
    }
    if (trim(*cell).empty()) {
        return std::monostate{};
    }
    auto fail = [&](const char* what) -> Value {
        throw ParseError("column '" + column + "': '" + *cell + "' is not " + what, line);
    };
    switch (kind) {
    case AttributeKind::Numeric:
        if (auto d = parse_number(*cell)) {
            return *d;
        }
        return fail("numeric");
    case AttributeKind::Boolean:
        if (auto b = parse_boolean(*cell)) {
            return *b;
        }
        return fail("boolean");
    case AttributeKind::Temporal:
        if (auto ts = parse_timestamp(*cell, opts.date_formats)) {
            return *ts;
        }
        return fail("a timestamp under the configured formats");
    default:
        return *cell;
    }
}

Relation build_relation(RawTable t, const std::string& name, const IngestOptions& opts)
{
    if (t.names.empty()) {
        throw ParseError("no field names", 1);
    }
    std::vector<Column> columns;
    for (std::size_t c = 0; c < t.names.size(); ++c) {
        Column col;
        col.name = t.names[c];
        auto hint = opts.type_hints.find(col.name);
        col.kind = hint != opts.type_hints.end() ? hint->second : infer_kind(t, c, opts);
        col.origin_table = name;
        col.origin_column = col.name;
        columns.push_back(std::move(col));
    }
    std::vector<Row> rows;
    rows.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        Row row;
        row.reserve(columns.size());
        for (std::size_t c = 0; c < columns.size(); ++c) {
            row.push_back(convert_cell(t.rows[r][c], columns[c].kind, opts, t.lines[r], columns[c].name));
        }
        rows.push_back(std::move(row));
    }
    Relation rel(name, std::move(columns), std::move(rows));
    rel.set_keys(opts.primary_key, opts.foreign_keys);
    rel.reprofile(opts.profile);
    return rel;
}

}  // namespace

Relation ingest_table(std::istream& source, InputFormat format, const std::string& name, const IngestOptions& opts)
{
    RawTable t = format == InputFormat::Csv ? read_csv(source) : read_json_lines(source);
    return build_relation(std::move(t), name, opts);
}

Relation ingest_table(std::string_view source, InputFormat format, const std::string& name, const IngestOptions& opts)
{
    std::istringstream in{std::string(source)};
    return ingest_table(in, format, name, opts);
}

namespace {

std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += "\"\"";
        } else {
            out.push_back(c);
        }
    }
    out.push_back('"');
    return out;
}

}  // namespace

void write_csv(std::ostream& out, const Relation& r)
{
    for (std::size_t c = 0; c < r.arity(); ++c) {
        out << (c ? "," : "") << csv_escape(r.columns()[c].name);
    }
    out << '\n';
    for (const auto& row : r.rows()) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out << (c ? "," : "") << csv_escape(render(row[c]));
        }
        out << '\n';
    }
}

}  // namespace hyqe
