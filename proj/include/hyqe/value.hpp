#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace hyqe {

/// Seconds since the Unix epoch, UTC.
struct Timestamp {
    std::int64_t seconds = 0;
    auto operator<=>(const Timestamp&) const = default;
};

/// A typed cell. Numbers are doubles; integers up to 2^53 are exact.
using Value = std::variant<std::monostate, double, std::string, bool, Timestamp>;

inline bool is_null(const Value& v) { return std::holds_alternative<std::monostate>(v); }

/// Canonical text: integral numbers without a fraction, shortest round-trip
/// otherwise, booleans as true/false, timestamps as ISO dates. Null renders "".
std::string render(const Value& v);

std::string render_number(double d);
std::string render_timestamp(Timestamp t);

std::optional<double> parse_number(std::string_view text);
std::optional<bool> parse_boolean(std::string_view text);
std::optional<Timestamp> parse_timestamp(std::string_view text, const std::vector<std::string>& formats);

/// Three-way comparison with numeric coercion of numeric-looking strings.
/// Other mixed kinds compare by canonical text. Returns nullopt when either
/// side is null.
std::optional<std::weak_ordering> compare_values(const Value& a, const Value& b);

/// Equality used by joins and set operations: null never equals anything.
bool values_equal(const Value& a, const Value& b);

/// Hashable key consistent with values_equal for non-null values.
std::string value_key(const Value& v);

nlohmann::json to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

}  // namespace hyqe
