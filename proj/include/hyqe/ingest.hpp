#pragma once

#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hyqe/profile.hpp"
#include "hyqe/relation.hpp"

namespace hyqe {

enum class InputFormat { Csv, JsonLines };

InputFormat input_format_from_string(std::string_view s);

struct IngestOptions {
    std::map<std::string, AttributeKind, std::less<>> type_hints;
    std::vector<std::string> date_formats{"%Y-%m-%d", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y/%m/%d"};
    /// A string column is categorical when distinct/rows is at most this ratio
    /// and no cell exceeds categorical_max_len characters.
    double categorical_ratio = 0.2;
    std::size_t categorical_max_len = 64;
    std::vector<std::string> primary_key;
    std::vector<ForeignKey> foreign_keys;
    ProfileOptions profile;
};

/// Parses CSV (RFC 4180 quoting, header row required) or JSON Lines into a
/// typed, profiled relation. Throws ParseError with the offending line.
Relation ingest_table(std::istream& source, InputFormat format, const std::string& name, const IngestOptions& opts = {});

Relation ingest_table(std::string_view source, InputFormat format, const std::string& name, const IngestOptions& opts = {});

/// Splits CSV text into records. Exposed for the CLI's bundle writer and tests.
std::vector<std::vector<std::string>> parse_csv_records(std::istream& in, std::vector<std::size_t>* record_lines = nullptr);

/// Writes a relation as RFC 4180 CSV with a header row; nulls are empty fields.
void write_csv(std::ostream& out, const Relation& r);

}  // namespace hyqe
