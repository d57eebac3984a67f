#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "hyqe/relation.hpp"

namespace hyqe {

struct ProfileOptions {
    std::size_t top_k = 10;
    std::size_t snippet_count = 3;
    std::size_t snippet_chars = 80;
    /// Tokens per whitespace-delimited word.
    double token_factor = 1.3;
};

/// Whitespace word count times the token factor.
double estimate_tokens(std::string_view text, double token_factor = 1.3);

/// Profile of one column's cells. Distinct counts are exact.
AttributeProfile profile_cells(std::span<const Value> cells, AttributeKind kind, const ProfileOptions& opts = {});

AttributeProfile profile_attribute(const Relation& r, std::string_view column, const ProfileOptions& opts = {});

/// Exact number of distinct non-null values in the column.
std::size_t distinct_count(const Relation& r, std::string_view column);

}  // namespace hyqe
