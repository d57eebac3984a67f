#include "hyqe/bundle.hpp"

#include <fstream>

#include "hyqe/error.hpp"
#include "hyqe/semantic_exec.hpp"

namespace hyqe {

nlohmann::ordered_json profile_to_json(const AttributeProfile& p)
{
    nlohmann::ordered_json j;
    j["row_count"] = p.row_count;
    j["null_fraction"] = p.null_fraction;
    j["distinct_count"] = p.distinct_count;
    j["avg_bytes"] = p.avg_bytes;
    if (p.min) {
        j["min"] = *p.min;
        j["max"] = *p.max;
    }
    if (p.avg) {
        j["avg"] = *p.avg;
    }
    if (p.variance) {
        j["variance"] = *p.variance;
    }
    if (p.cardinality != 0) {
        j["cardinality"] = p.cardinality;
    }
    if (!p.top_k_values.empty()) {
        nlohmann::ordered_json top = nlohmann::ordered_json::array();
        for (const auto& [v, n] : p.top_k_values) {
            top.push_back({v, n});
        }
        j["top_k_values"] = std::move(top);
    }
    if (p.max_len != 0) {
        j["min_len"] = p.min_len;
        j["max_len"] = p.max_len;
        j["unique_count"] = p.unique_count;
        j["sample_snippets"] = p.sample_snippets;
        j["expected_token_len"] = p.expected_token_len;
    }
    if (p.range_start) {
        j["range_start"] = render_timestamp(*p.range_start);
        j["range_end"] = render_timestamp(*p.range_end);
    }
    if (p.granularity) {
        j["granularity"] = std::string(to_string(*p.granularity));
    }
    return j;
}

nlohmann::ordered_json bundle_to_json(const Database& db)
{
    nlohmann::ordered_json rels = nlohmann::ordered_json::array();
    for (const auto& [name, r] : db.relations()) {
        nlohmann::ordered_json rj;
        rj["name"] = name;
        nlohmann::ordered_json cols = nlohmann::ordered_json::array();
        for (const auto& c : r.columns()) {
            nlohmann::ordered_json cj;
            cj["name"] = c.name;
            cj["kind"] = std::string(to_string(c.kind));
            if (!c.origin_table.empty()) {
                cj["origin_table"] = c.origin_table;
                cj["origin_column"] = c.origin_column;
            }
            cj["profile"] = profile_to_json(c.profile);
            cols.push_back(std::move(cj));
        }
        rj["columns"] = std::move(cols);
        rj["primary_key"] = r.primary_key();
        nlohmann::ordered_json fks = nlohmann::ordered_json::array();
        for (const auto& fk : r.foreign_keys()) {
            fks.push_back({{"column", fk.column}, {"ref_relation", fk.ref_relation}, {"ref_column", fk.ref_column}});
        }
        rj["foreign_keys"] = std::move(fks);
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (const auto& row : r.rows()) {
            nlohmann::ordered_json cells = nlohmann::ordered_json::array();
            for (const auto& v : row) {
                cells.push_back(nlohmann::ordered_json(to_json(v)));
            }
            rows.push_back(std::move(cells));
        }
        rj["rows"] = std::move(rows);
        rels.push_back(std::move(rj));
    }
    nlohmann::ordered_json out;
    out["format"] = "hyqe-bundle";
    out["version"] = 1;
    out["relations"] = std::move(rels);
    return out;
}

Database bundle_from_json(const nlohmann::json& j)
{
    if (!j.is_object() || j.value("format", std::string()) != "hyqe-bundle") {
        throw ParseError("not a database bundle");
    }
    Database db;
    try {
        for (const auto& rj : j.at("relations")) {
            const std::string name = rj.at("name").get<std::string>();
            std::vector<Column> cols;
            for (const auto& cj : rj.at("columns")) {
                Column c;
                c.name = cj.at("name").get<std::string>();
                c.kind = attribute_kind_from_string(cj.at("kind").get<std::string>());
                c.origin_table = cj.value("origin_table", name);
                c.origin_column = cj.value("origin_column", c.name);
                cols.push_back(std::move(c));
            }
            std::vector<Row> rows;
            std::size_t line = 0;
            for (const auto& cells : rj.at("rows")) {
                ++line;
                if (!cells.is_array() || cells.size() != cols.size()) {
                    throw ParseError(name + " row " + std::to_string(line) + " has the wrong width");
                }
                Row row;
                for (std::size_t i = 0; i < cols.size(); ++i) {
                    try {
                        row.push_back(coerce_cell(cells[i], cols[i].kind));
                    } catch (const ContractViolation& e) {
                        throw ParseError(name + " row " + std::to_string(line) + ": " + e.what());
                    }
                }
                rows.push_back(std::move(row));
            }
            Relation r(name, std::move(cols), std::move(rows));
            std::vector<ForeignKey> fks;
            for (const auto& fk : rj.value("foreign_keys", nlohmann::json::array())) {
                fks.push_back({fk.at("column").get<std::string>(), fk.at("ref_relation").get<std::string>(),
                               fk.at("ref_column").get<std::string>()});
            }
            r.set_keys(rj.value("primary_key", std::vector<std::string>{}), std::move(fks));
            r.reprofile();
            db.add(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed bundle: ") + e.what());
    } catch (const SchemaError& e) {
        throw ParseError(std::string("malformed bundle: ") + e.what());
    }
    db.check_foreign_keys();
    return db;
}

void save_bundle(const std::filesystem::path& path, const Database& db)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << bundle_to_json(db).dump(1) << "\n";
}

Database load_bundle(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open bundle " + path.string());
    }
    try {
        return bundle_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("bundle " + path.string() + ": " + e.what());
    }
}

}  // namespace hyqe
