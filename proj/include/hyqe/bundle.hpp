#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "hyqe/relation.hpp"

namespace hyqe {

/// Database bundle: one JSON document with every relation's columns, keys,
/// rows and profiles. Relations are written in name order, so the same
/// database always serializes to the same bytes.
nlohmann::ordered_json bundle_to_json(const Database& db);
nlohmann::ordered_json profile_to_json(const AttributeProfile& p);

/// Cells are read back by column kind; profiles are recomputed from the rows.
/// Throws ParseError for a malformed bundle.
Database bundle_from_json(const nlohmann::json& j);

void save_bundle(const std::filesystem::path& path, const Database& db);
Database load_bundle(const std::filesystem::path& path);

}  // namespace hyqe
