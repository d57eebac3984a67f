#include "hyqe/profile.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace hyqe {

double estimate_tokens(std::string_view text, double token_factor)
{
    std::size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (!space && !in_word) {
            ++words;
        }
        in_word = !space;
    }
    return static_cast<double>(words) * token_factor;
}

namespace {

Granularity detect_granularity(const std::vector<Timestamp>& ts)
{
    bool midnight = true;
    bool first_of_month = true;
    bool first_of_year = true;
    for (auto t : ts) {
        std::time_t tt = static_cast<std::time_t>(t.seconds);
        std::tm tm{};
        gmtime_r(&tt, &tm);
        if (tm.tm_hour != 0 || tm.tm_min != 0 || tm.tm_sec != 0) {
            midnight = false;
        }
        if (tm.tm_mday != 1) {
            first_of_month = false;
        }
        if (tm.tm_mday != 1 || tm.tm_mon != 0) {
            first_of_year = false;
        }
    }
    if (!midnight) {
        return Granularity::Second;
    }
    if (first_of_year && ts.size() > 1) {
        return Granularity::Year;
    }
    if (first_of_month && ts.size() > 1) {
        return Granularity::Month;
    }
    return Granularity::Day;
}

}  // namespace

AttributeProfile profile_cells(std::span<const Value> cells, AttributeKind kind, const ProfileOptions& opts)
{
    AttributeProfile p;
    p.row_count = cells.size();
    if (cells.empty()) {
        p.null_fraction = 1.0;
        return p;
    }

    std::size_t nulls = 0;
    std::unordered_map<std::string, std::size_t> freq;
    std::vector<std::string> first_seen;
    double bytes = 0.0;
    for (const auto& v : cells) {
        if (is_null(v)) {
            ++nulls;
            continue;
        }
        std::string key = value_key(v);
        bytes += static_cast<double>(render(v).size());
        auto [it, inserted] = freq.try_emplace(key, 0);
        if (inserted) {
            first_seen.push_back(key);
        }
        ++it->second;
    }
    const std::size_t non_null = cells.size() - nulls;
    p.null_fraction = static_cast<double>(nulls) / static_cast<double>(cells.size());
    p.distinct_count = freq.size();
    p.avg_bytes = non_null == 0 ? 0.0 : bytes / static_cast<double>(non_null);
    if (non_null == 0) {
        return p;
    }

    switch (kind) {
    case AttributeKind::Numeric: {
        double sum = 0.0;
        double lo = 0.0;
        double hi = 0.0;
        bool first = true;
        for (const auto& v : cells) {
            if (const auto* d = std::get_if<double>(&v)) {
                sum += *d;
                lo = first ? *d : std::min(lo, *d);
                hi = first ? *d : std::max(hi, *d);
                first = false;
            }
        }
        const double n = static_cast<double>(non_null);
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& v : cells) {
            if (const auto* d = std::get_if<double>(&v)) {
                ss += (*d - mean) * (*d - mean);
            }
        }
        p.min = lo;
        p.max = hi;
        p.avg = mean;
        p.variance = ss / n;
        break;
    }
    case AttributeKind::Categorical:
    case AttributeKind::Boolean: {
        p.cardinality = freq.size();
        std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            return a.second != b.second ? a.second > b.second : a.first < b.first;
        });
        if (items.size() > opts.top_k) {
            items.resize(opts.top_k);
        }
        p.top_k_values = std::move(items);
        break;
    }
    case AttributeKind::Textual: {
        bool first = true;
        double tokens = 0.0;
        for (const auto& v : cells) {
            if (is_null(v)) {
                continue;
            }
            const std::string s = render(v);
            p.min_len = first ? s.size() : std::min(p.min_len, s.size());
            p.max_len = first ? s.size() : std::max(p.max_len, s.size());
            first = false;
            tokens += std::max(1.0, estimate_tokens(s, 1.0)) * opts.token_factor;
        }
        p.unique_count = freq.size();
        p.expected_token_len = tokens / static_cast<double>(non_null);
        for (const auto& key : first_seen) {
            if (p.sample_snippets.size() >= opts.snippet_count) {
                break;
            }
            p.sample_snippets.push_back(key.size() > opts.snippet_chars ? key.substr(0, opts.snippet_chars) : key);
        }
        break;
    }
    case AttributeKind::Temporal: {
        std::vector<Timestamp> ts;
        for (const auto& v : cells) {
            if (const auto* t = std::get_if<Timestamp>(&v)) {
                ts.push_back(*t);
            }
        }
        if (!ts.empty()) {
            auto [lo, hi] = std::minmax_element(ts.begin(), ts.end());
            p.range_start = *lo;
            p.range_end = *hi;
            p.granularity = detect_granularity(ts);
        }
        break;
    }
    }
    return p;
}

AttributeProfile profile_attribute(const Relation& r, std::string_view column, const ProfileOptions& opts)
{
    const std::size_t idx = r.column_index(column);
    std::vector<Value> cells;
    cells.reserve(r.size());
    for (const auto& row : r.rows()) {
        cells.push_back(row[idx]);
    }
    return profile_cells(cells, r.columns()[idx].kind, opts);
}

std::size_t distinct_count(const Relation& r, std::string_view column)
{
    const std::size_t idx = r.column_index(column);
    std::unordered_set<std::string> seen;
    for (const auto& row : r.rows()) {
        if (!is_null(row[idx])) {
            seen.insert(value_key(row[idx]));
        }
    }
    return seen.size();
}

}  // namespace hyqe
