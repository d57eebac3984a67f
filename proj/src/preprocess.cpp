#include "hyqe/preprocess.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "hyqe/profile.hpp"

namespace hyqe {

std::string normalize_identifier(std::string_view name)
{
    std::string out;
    bool pending_sep = false;
    for (char c : to_lower(trim(name))) {
        const bool alnum = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
        if (alnum) {
            if (pending_sep && !out.empty()) {
                out.push_back('_');
            }
            pending_sep = false;
            out.push_back(c);
        } else if (c == '_') {
            if (!out.empty()) {
                pending_sep = true;
            }
        } else {
            pending_sep = true;
        }
    }
    if (out.empty()) {
        out = "col";
    }
    if (out.front() >= '0' && out.front() <= '9') {
        out = "c_" + out;
    }
    return out;
}

CleanResult clean_normalize(const Relation& r)
{
    std::vector<Column> columns = r.columns();
    std::set<std::string> used;
    CleanResult result;
    for (auto& col : columns) {
        std::string base = normalize_identifier(col.name);
        std::string candidate = base;
        for (int n = 2; used.count(candidate) != 0; ++n) {
            candidate = base + "_" + std::to_string(n);
        }
        used.insert(candidate);
        result.renames.emplace_back(col.name, candidate);
        if (col.origin_column == col.name) {
            col.origin_column = candidate;
        }
        col.name = candidate;
    }

    std::vector<Row> rows = r.rows();
    for (auto& row : rows) {
        for (auto& cell : row) {
            if (const auto* s = std::get_if<std::string>(&cell); s != nullptr && trim(*s).empty()) {
                cell = std::monostate{};
            }
        }
    }

    auto renamed = [&](const std::string& old) {
        for (const auto& [from, to] : result.renames) {
            if (from == old) {
                return to;
            }
        }
        return old;
    };
    std::vector<std::string> pk;
    for (const auto& k : r.primary_key()) {
        pk.push_back(renamed(k));
    }
    std::vector<ForeignKey> fks;
    for (auto fk : r.foreign_keys()) {
        fk.column = renamed(fk.column);
        fks.push_back(std::move(fk));
    }
    result.relation = Relation(r.name(), std::move(columns), std::move(rows));
    result.relation.set_keys(std::move(pk), std::move(fks));
    result.relation.reprofile();
    return result;
}

Database clean_database(const Database& db)
{
    std::map<std::string, CleanResult> cleaned;
    for (const auto& [name, rel] : db.relations()) {
        cleaned.emplace(name, clean_normalize(rel));
    }
    Database out;
    for (auto& [name, res] : cleaned) {
        std::vector<ForeignKey> fks;
        for (auto fk : res.relation.foreign_keys()) {
            auto target = cleaned.find(fk.ref_relation);
            if (target != cleaned.end()) {
                for (const auto& [from, to] : target->second.renames) {
                    if (from == fk.ref_column) {
                        fk.ref_column = to;
                        break;
                    }
                }
            }
            fks.push_back(std::move(fk));
        }
        Relation rel = res.relation;
        rel.set_keys(rel.primary_key(), std::move(fks));
        out.add(std::move(rel));
    }
    return out;
}

std::string_view to_string(PruneRule rule)
{
    switch (rule) {
    case PruneRule::NullDominated:
        return "null_dominated";
    case PruneRule::ConstantDominated:
        return "constant_dominated";
    case PruneRule::NonInformative:
        return "non_informative";
    }
    return "unknown";
}

bool is_non_informative(std::string_view cell)
{
    static const std::regex hex("^[0-9a-fA-F]{32,}$");
    static const std::regex base64("^[A-Za-z0-9+/]{32,}={0,2}$");
    static const std::regex crypt_hash(R"(^\$(2[abxy]?|5|6|argon2(id|i|d)?)\$\S{20,}$)");
    const std::string s = trim(cell);
    if (s.find("```") != std::string::npos) {
        return true;
    }
    if (std::regex_match(s, hex) || std::regex_match(s, crypt_hash)) {
        return true;
    }
    // Plain words are not Base64 blobs: require a digit or symbol, or mixed case.
    if (std::regex_match(s, base64)) {
        const bool digit_or_symbol = std::any_of(s.begin(), s.end(), [](char c) {
            return (c >= '0' && c <= '9') || c == '+' || c == '/' || c == '=';
        });
        const bool upper = std::any_of(s.begin(), s.end(), [](char c) { return c >= 'A' && c <= 'Z'; });
        const bool lower = std::any_of(s.begin(), s.end(), [](char c) { return c >= 'a' && c <= 'z'; });
        return digit_or_symbol || (upper && lower);
    }
    return false;
}

PruneOutcome heuristic_prune(const Relation& r, const PruneConfig& cfg)
{
    PruneOutcome out;
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < r.arity(); ++c) {
        const Column& col = r.columns()[c];
        if (r.is_key_column(col.name)) {
            keep.push_back(c);
            continue;
        }
        const AttributeProfile& p = col.profile;
        std::optional<PruneRule> rule;
        if (p.null_fraction > cfg.null_threshold) {
            rule = PruneRule::NullDominated;
        }
        if (!rule) {
            std::map<std::string, std::size_t> freq;
            std::size_t non_null = 0;
            for (const auto& row : r.rows()) {
                if (!is_null(row[c])) {
                    ++non_null;
                    ++freq[value_key(row[c])];
                }
            }
            std::size_t top = 0;
            for (const auto& [_, n] : freq) {
                top = std::max(top, n);
            }
            if (non_null > 1 && static_cast<double>(top) / static_cast<double>(non_null) > cfg.dominant_value_threshold) {
                rule = PruneRule::ConstantDominated;
            }
        }
        if (!rule && (col.kind == AttributeKind::Textual || col.kind == AttributeKind::Categorical)) {
            std::size_t sampled = 0;
            std::size_t hits = 0;
            for (const auto& row : r.rows()) {
                if (sampled >= cfg.sample_size) {
                    break;
                }
                if (const auto* s = std::get_if<std::string>(&row[c])) {
                    ++sampled;
                    hits += is_non_informative(*s) ? 1 : 0;
                }
            }
            if (sampled > 0 && static_cast<double>(hits) >= cfg.non_informative_hit_ratio * static_cast<double>(sampled)) {
                rule = PruneRule::NonInformative;
            }
        }
        if (rule) {
            out.report.dropped.push_back({col.name, *rule});
        } else {
            keep.push_back(c);
        }
    }

    std::vector<Column> columns;
    for (auto c : keep) {
        columns.push_back(r.columns()[c]);
    }
    std::vector<Row> rows;
    rows.reserve(r.size());
    for (const auto& row : r.rows()) {
        Row nr;
        nr.reserve(keep.size());
        for (auto c : keep) {
            nr.push_back(row[c]);
        }
        rows.push_back(std::move(nr));
    }
    out.relation = Relation(r.name(), std::move(columns), std::move(rows));
    out.relation.set_keys(r.primary_key(), r.foreign_keys());
    return out;
}

}  // namespace hyqe
