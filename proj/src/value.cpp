#include "hyqe/value.hpp"

#include <charconv>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <sstream>

namespace hyqe {

std::string to_lower(std::string_view s)
{
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
    }
    return out;
}

std::string trim(std::string_view s)
{
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) {
        ++b;
    }
    while (e > b && is_space(s[e - 1])) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

std::string render_number(double d)
{
    if (std::isnan(d)) {
        return "nan";
    }
    if (std::isinf(d)) {
        return d > 0 ? "inf" : "-inf";
    }
    if (d == 0.0) {
        return "0";
    }
    if (std::trunc(d) == d && std::fabs(d) < 1e15) {
        return std::to_string(static_cast<long long>(d));
    }
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), d);
    return std::string(buf, res.ptr);
}

std::string render_timestamp(Timestamp t)
{
    std::time_t tt = static_cast<std::time_t>(t.seconds);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::ostringstream os;
    if (tm.tm_hour == 0 && tm.tm_min == 0 && tm.tm_sec == 0) {
        os << std::put_time(&tm, "%Y-%m-%d");
    } else {
        os << std::put_time(&tm, "%Y-%m-%d %H:%M:%S");
    }
    return os.str();
}

std::string render(const Value& v)
{
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, std::monostate>) {
                return "";
            } else if constexpr (std::is_same_v<T, double>) {
                return render_number(x);
            } else if constexpr (std::is_same_v<T, std::string>) {
                return x;
            } else if constexpr (std::is_same_v<T, bool>) {
                return x ? "true" : "false";
            } else {
                return render_timestamp(x);
            }
        },
        v);
}

std::optional<double> parse_number(std::string_view text)
{
    std::string t = trim(text);
    if (t.empty()) {
        return std::nullopt;
    }
    std::string_view sv = t;
    if (sv.front() == '+') {
        sv.remove_prefix(1);
    }
    double d = 0;
    auto res = std::from_chars(sv.data(), sv.data() + sv.size(), d);
    if (res.ec != std::errc{} || res.ptr != sv.data() + sv.size()) {
        return std::nullopt;
    }
    if (!std::isfinite(d)) {
        return std::nullopt;
    }
    return d;
}

std::optional<bool> parse_boolean(std::string_view text)
{
    const std::string t = to_lower(trim(text));
    if (t == "true" || t == "yes" || t == "t" || t == "y") {
        return true;
    }
    if (t == "false" || t == "no" || t == "f" || t == "n") {
        return false;
    }
    return std::nullopt;
}

std::optional<Timestamp> parse_timestamp(std::string_view text, const std::vector<std::string>& formats)
{
    const std::string t = trim(text);
    if (t.empty()) {
        return std::nullopt;
    }
    for (const auto& fmt : formats) {
        std::tm tm{};
        std::istringstream is(t);
        is >> std::get_time(&tm, fmt.c_str());
        if (is.fail()) {
            continue;
        }
        is >> std::ws;
        if (!is.eof()) {
            continue;
        }
        return Timestamp{static_cast<std::int64_t>(timegm(&tm))};
    }
    return std::nullopt;
}

namespace {

std::optional<double> as_number(const Value& v)
{
    if (const auto* d = std::get_if<double>(&v)) {
        return *d;
    }
    if (const auto* s = std::get_if<std::string>(&v)) {
        return parse_number(*s);
    }
    return std::nullopt;
}

}  // namespace

std::optional<std::weak_ordering> compare_values(const Value& a, const Value& b)
{
    if (is_null(a) || is_null(b)) {
        return std::nullopt;
    }
    if (std::holds_alternative<std::string>(a) && std::holds_alternative<std::string>(b)) {
        // Numeric-looking text compares by value, matching value_key.
        auto x = parse_number(std::get<std::string>(a));
        auto y = parse_number(std::get<std::string>(b));
        if (x && y) {
            return *x < *y ? std::weak_ordering::less
                           : (*y < *x ? std::weak_ordering::greater : std::weak_ordering::equivalent);
        }
    }
    if (a.index() == b.index()) {
        return std::visit(
            [&](const auto& x) -> std::optional<std::weak_ordering> {
                using T = std::decay_t<decltype(x)>;
                const auto& y = std::get<T>(b);
                if constexpr (std::is_same_v<T, std::monostate>) {
                    return std::nullopt;
                } else if constexpr (std::is_same_v<T, double>) {
                    if (x < y) {
                        return std::weak_ordering::less;
                    }
                    if (y < x) {
                        return std::weak_ordering::greater;
                    }
                    return std::weak_ordering::equivalent;
                } else if constexpr (std::is_same_v<T, bool>) {
                    return static_cast<int>(x) <=> static_cast<int>(y);
                } else {
                    return std::weak_ordering(x <=> y);
                }
            },
            a);
    }
    if (std::holds_alternative<double>(a) || std::holds_alternative<double>(b)) {
        auto x = as_number(a);
        auto y = as_number(b);
        if (x && y) {
            if (*x < *y) {
                return std::weak_ordering::less;
            }
            if (*y < *x) {
                return std::weak_ordering::greater;
            }
            return std::weak_ordering::equivalent;
        }
    }
    // Mixed kinds fall back to their canonical text.
    return std::weak_ordering(render(a) <=> render(b));
}

bool values_equal(const Value& a, const Value& b)
{
    auto c = compare_values(a, b);
    return c && *c == std::weak_ordering::equivalent;
}

std::string value_key(const Value& v)
{
    if (const auto* s = std::get_if<std::string>(&v)) {
        if (auto d = parse_number(*s)) {
            return render_number(*d);
        }
    }
    return render(v);
}

nlohmann::json to_json(const Value& v)
{
    return std::visit(
        [](const auto& x) -> nlohmann::json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, std::monostate>) {
                return nullptr;
            } else if constexpr (std::is_same_v<T, double>) {
                if (std::trunc(x) == x && std::fabs(x) < 9e15) {
                    return static_cast<std::int64_t>(x);
                }
                return x;
            } else if constexpr (std::is_same_v<T, Timestamp>) {
                return render_timestamp(x);
            } else {
                return x;
            }
        },
        v);
}

Value value_from_json(const nlohmann::json& j)
{
    if (j.is_null()) {
        return std::monostate{};
    }
    if (j.is_boolean()) {
        return j.get<bool>();
    }
    if (j.is_number()) {
        return j.get<double>();
    }
    if (j.is_string()) {
        return j.get<std::string>();
    }
    return j.dump();
}

}  // namespace hyqe
