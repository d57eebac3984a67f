#include "hyqe/backend.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "hyqe/error.hpp"
#include "hyqe/instruction.hpp"
#include "hyqe/prompts.hpp"
#include "hyqe/value.hpp"

namespace hyqe {

std::uint64_t approx_tokens(std::string_view text) { return (text.size() + 3) / 4; }

std::vector<double> term_frequency_embedding(std::string_view text, std::size_t dims)
{
    std::vector<double> v(dims, 0.0);
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            v[std::hash<std::string>{}(word) % dims] += 1.0;
            word.clear();
        }
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)) != 0) {
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            flush();
        }
    }
    flush();
    return v;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size()) {
        throw ContractViolation("embedding dimensions differ");
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string normalize_answer_text(std::string_view text)
{
    std::string s = to_lower(trim(text));
    if (auto n = parse_number(s)) {
        return render_number(*n);
    }
    return s;
}

namespace {

std::string cell_text(const nlohmann::json& v)
{
    if (v.is_null()) {
        return "";
    }
    if (v.is_string()) {
        return v.get<std::string>();
    }
    return v.dump();
}

std::optional<double> cell_number(const nlohmann::json& v)
{
    if (v.is_number()) {
        return v.get<double>();
    }
    if (v.is_string()) {
        return parse_number(trim(v.get<std::string>()));
    }
    return std::nullopt;
}

std::string normalize_key(const std::string& s)
{
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)) != 0) {
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    return out;
}

const nlohmann::json& field(const nlohmann::json& row, const std::string& col)
{
    static const nlohmann::json null_value;
    if (!row.is_object()) {
        return null_value;
    }
    auto it = row.find(col);
    return it == row.end() ? null_value : *it;
}

bool filter_matches(const nlohmann::json& rule, const nlohmann::json& row)
{
    if (rule.contains("any")) {
        for (const auto& r : rule.at("any")) {
            if (filter_matches(r, row)) {
                return !rule.value("negate", false);
            }
        }
        return rule.value("negate", false);
    }
    if (rule.contains("all")) {
        bool ok = true;
        for (const auto& r : rule.at("all")) {
            ok = ok && filter_matches(r, row);
        }
        return ok != rule.value("negate", false);
    }
    const auto& cell = field(row, rule.at("column").get<std::string>());
    bool ok = false;
    if (cell.is_null()) {
        ok = false;
    } else if (rule.contains("pattern")) {
        const std::regex re(rule.at("pattern").get<std::string>(), std::regex::icase | std::regex::ECMAScript);
        ok = std::regex_search(cell_text(cell), re);
    } else {
        const std::string op = rule.at("op").get<std::string>();
        const auto& want = rule.at("value");
        const auto a = cell_number(cell);
        const auto b = cell_number(want);
        int cmp = 0;
        if (a && b) {
            cmp = *a < *b ? -1 : (*a > *b ? 1 : 0);
        } else {
            const std::string x = to_lower(cell_text(cell));
            const std::string y = to_lower(cell_text(want));
            if (op == "contains") {
                ok = x.find(y) != std::string::npos;
                return ok != rule.value("negate", false);
            }
            cmp = x.compare(y) < 0 ? -1 : (x.compare(y) > 0 ? 1 : 0);
        }
        if (op == "=" || op == "==") {
            ok = cmp == 0;
        } else if (op == "!=") {
            ok = cmp != 0;
        } else if (op == "<") {
            ok = cmp < 0;
        } else if (op == ">") {
            ok = cmp > 0;
        } else if (op == "<=") {
            ok = cmp <= 0;
        } else if (op == ">=") {
            ok = cmp >= 0;
        } else if (op == "contains") {
            ok = to_lower(cell_text(cell)).find(to_lower(cell_text(want))) != std::string::npos;
        } else {
            throw BackendError("mock filter: unknown op " + op);
        }
    }
    return ok != rule.value("negate", false);
}

nlohmann::json map_value(const nlohmann::json& rule, const nlohmann::json& row)
{
    const std::string text = cell_text(field(row, rule.at("source").get<std::string>()));
    const nlohmann::json fallback = rule.value("default", nlohmann::json());
    if (rule.contains("cases")) {
        for (const auto& c : rule.at("cases")) {
            const std::regex re(c.at("pattern").get<std::string>(), std::regex::icase | std::regex::ECMAScript);
            if (std::regex_search(text, re)) {
                return c.at("value");
            }
        }
        return fallback;
    }
    if (rule.contains("extract")) {
        const std::regex re(rule.at("extract").get<std::string>(), std::regex::ECMAScript);
        std::smatch m;
        if (std::regex_search(text, m, re) && m.size() > 1 && m[1].matched) {
            const std::string got = trim(m[1].str());
            if (rule.value("type", "string") == "number") {
                if (auto n = parse_number(got)) {
                    return to_json(Value(*n));
                }
                return fallback;
            }
            return got;
        }
        return fallback;
    }
    if (rule.contains("lookup")) {
        const auto& table = rule.at("lookup");
        const std::string key = normalize_key(text);
        for (const auto& [k, v] : table.items()) {
            if (normalize_key(k) == key) {
                return v;
            }
        }
        return fallback;
    }
    throw BackendError("mock map rule needs cases, extract or lookup");
}

struct Summary {
    double sum = 0.0;
    std::uint64_t count = 0;
    std::optional<double> min;
    std::optional<double> max;

    void add(double x)
    {
        sum += x;
        ++count;
        min = min ? std::min(*min, x) : x;
        max = max ? std::max(*max, x) : x;
    }
    void merge(const nlohmann::json& partial)
    {
        sum += partial.value("sum", 0.0);
        count += partial.value("count", std::uint64_t{0});
        for (const char* k : {"min", "max"}) {
            if (partial.contains(k) && partial.at(k).is_number()) {
                const double v = partial.at(k).get<double>();
                auto& slot = std::string(k) == "min" ? min : max;
                slot = slot ? (std::string(k) == "min" ? std::min(*slot, v) : std::max(*slot, v)) : v;
            }
        }
    }
};

bool is_partial(const nlohmann::json& row)
{
    return row.is_object() && row.contains("count") && row.contains("sum") && row.value("partial", false);
}

nlohmann::json number_json(double d) { return to_json(Value(d)); }

Usage usage_of(const std::string& prompt, const nlohmann::json& body)
{
    return Usage{approx_tokens(prompt), approx_tokens(body.dump())};
}

std::set<std::string> tokens_of(const std::string& text)
{
    std::set<std::string> out;
    std::string word;
    auto flush = [&] {
        if (word.size() >= 3) {
            out.insert(word);
        }
        word.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        const bool upper_break = i > 0 && std::isupper(static_cast<unsigned char>(c)) != 0 &&
                                 std::islower(static_cast<unsigned char>(text[i - 1])) != 0;
        if (upper_break) {
            flush();
        }
        if (std::isalnum(static_cast<unsigned char>(c)) != 0) {
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

}  // namespace

MockBackend::MockBackend(nlohmann::json rulebook) : rules_(std::move(rulebook))
{
    if (!rules_.is_object()) {
        throw ParseError("mock rulebook must be a JSON object");
    }
}

MockBackend MockBackend::from_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw BackendError("cannot open mock rulebook " + path.string());
    }
    try {
        return MockBackend(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("mock rulebook " + path.string() + ": " + e.what());
    }
}

const nlohmann::json& MockBackend::rule(const char* section, const std::string& key) const
{
    auto s = rules_.find(section);
    if (s != rules_.end()) {
        auto r = s->find(key);
        if (r != s->end()) {
            return *r;
        }
    }
    throw BackendError(std::string("mock backend has no ") + section + " rule for '" + key + "'");
}

BackendReply MockBackend::map(const std::string& instruction, const std::string& new_column, const Rows& rows)
{
    const auto& r = rule("map", instruction);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json copy = row;
        copy[new_column] = map_value(r, row);
        out.push_back(std::move(copy));
    }
    nlohmann::json body{{"rows", std::move(out)}};
    return {body, usage_of(map_prompt(instruction, new_column, rows).text(), body)};
}

BackendReply MockBackend::filter(const std::string& instruction, const Rows& rows)
{
    const auto& r = rule("filter", instruction);
    nlohmann::json body = nlohmann::json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (filter_matches(r, rows[i])) {
            body.push_back(i);
        }
    }
    return {body, usage_of(filter_prompt(instruction, rows).text(), body)};
}

BackendReply MockBackend::join(const std::string& instruction, const std::string& name_a, const Rows& rows_a,
                               const std::string& name_b, const Rows& rows_b)
{
    (void)name_a;
    const auto& r = rule("join", instruction);
    const std::string left = r.at("left").get<std::string>();
    const std::string right = r.at("right").get<std::string>();
    const bool contains = r.value("mode", "equal") == "contains";
    nlohmann::json out = nlohmann::json::array();
    for (const auto& a : rows_a) {
        const std::string ka = normalize_key(cell_text(field(a, left)));
        for (const auto& b : rows_b) {
            const std::string kb = normalize_key(cell_text(field(b, right)));
            const bool match = !ka.empty() && !kb.empty() && (contains ? kb.find(ka) != std::string::npos : ka == kb);
            if (!match) {
                continue;
            }
            nlohmann::json merged = a;
            for (const auto& [k, v] : b.items()) {
                merged[a.contains(k) ? name_b + "." + k : k] = v;
            }
            out.push_back(std::move(merged));
        }
    }
    nlohmann::json body{{"rows", std::move(out)}};
    return {body, usage_of(join_prompt(instruction, rows_a, rows_b).text(), body)};
}

BackendReply MockBackend::aggregate(const std::string& instruction, const Rows& rows, AggregatePhase phase)
{
    const auto& r = rule("aggregate", instruction);
    const std::string column = r.value("column", "*");
    const std::string fn = r.at("function").get<std::string>();
    Summary s;
    for (const auto& row : rows) {
        if (is_partial(row)) {
            s.merge(row);
            continue;
        }
        if (column == "*") {
            s.add(0.0);
            continue;
        }
        const auto& cell = field(row, column);
        if (cell.is_null()) {
            continue;
        }
        if (fn == "count") {
            s.add(0.0);
        } else if (auto n = cell_number(cell)) {
            s.add(*n);
        }
    }
    nlohmann::json body;
    if (phase == AggregatePhase::Partial) {
        body = {{"partial", true}, {"sum", number_json(s.sum)}, {"count", s.count}};
        if (s.min) {
            body["min"] = number_json(*s.min);
            body["max"] = number_json(*s.max);
        }
        if (s.count > 0) {
            body["average"] = number_json(s.sum / static_cast<double>(s.count));
        }
        return {body, usage_of(aggregate_prompt(instruction, rows, true).text(), body)};
    }
    nlohmann::json result;
    if (fn == "sum") {
        result = number_json(s.sum);
    } else if (fn == "count") {
        result = s.count;
    } else if (fn == "avg" || fn == "average") {
        result = s.count == 0 ? nlohmann::json() : number_json(s.sum / static_cast<double>(s.count));
    } else if (fn == "min") {
        result = s.min ? number_json(*s.min) : nlohmann::json();
    } else if (fn == "max") {
        result = s.max ? number_json(*s.max) : nlohmann::json();
    } else {
        throw BackendError("mock aggregate: unknown function " + fn);
    }
    body = {{"result", result}};
    return {body, usage_of(aggregate_prompt(instruction, rows, false).text(), body)};
}

BackendReply MockBackend::plan(const std::string& question, const std::string& system_prompt, const std::string& user_prompt,
                               std::size_t k)
{
    (void)k;
    const nlohmann::json* doc = nullptr;
    auto s = rules_.find("plans");
    if (s != rules_.end()) {
        auto it = s->find(question);
        if (it == s->end()) {
            it = s->find("*");
        }
        if (it != s->end()) {
            doc = &*it;
        }
    }
    if (doc == nullptr) {
        throw BackendError("mock backend has no plans for '" + question + "'");
    }
    nlohmann::json body = doc->is_string() ? doc->get<std::string>() : doc->dump();
    return {body, Usage{approx_tokens(system_prompt) + approx_tokens(user_prompt), approx_tokens(body.get<std::string>())}};
}

BackendReply MockBackend::prune_columns(const std::string& table, const std::string& question, const nlohmann::json& columns,
                                        const std::string& prompt)
{
    nlohmann::json body = nlohmann::json::array();
    auto s = rules_.find("prune");
    if (s != rules_.end() && s->contains(table)) {
        body = s->at(table);
    } else {
        const auto wanted = tokens_of(question);
        for (const auto& c : columns) {
            const std::string name = c.at("name").get<std::string>();
            const auto have = tokens_of(name);
            if (std::any_of(have.begin(), have.end(), [&](const std::string& t) { return wanted.count(t) != 0; })) {
                body.push_back(name);
            }
        }
    }
    return {body, usage_of(prompt, body)};
}

BackendReply MockBackend::compile_step(const std::string& operator_name, const std::string& instruction,
                                       const std::string& prompt, const nlohmann::json& context,
                                       const std::vector<std::string>& feedback)
{
    nlohmann::json body;
    auto s = rules_.find("compile");
    if (s != rules_.end() && s->contains(instruction)) {
        const auto& attempts = s->at(instruction);
        if (!attempts.is_array() || attempts.empty()) {
            throw BackendError("mock compile script for '" + instruction + "' must be a nonempty list");
        }
        body = attempts.at(std::min(feedback.size(), attempts.size() - 1));
    } else {
        const auto tag = parse_operator_name(operator_name);
        if (!tag) {
            throw BackendError("mock compile: unknown operator " + operator_name);
        }
        std::vector<std::string> parents = context.value("parents", std::vector<std::string>{});
        std::vector<Column> input;
        for (const auto& name : context.value("columns", std::vector<std::string>{})) {
            input.push_back(Column{name, AttributeKind::Textual, {}, {}, {}});
        }
        try {
            body = params_to_json(parse_instruction(*tag, instruction, parents, &input));
        } catch (const ParseError& e) {
            body = {{"error", e.what()}};
        }
    }
    return {body, usage_of(prompt, body)};
}

BackendReply MockBackend::judge(const std::string& question, const nlohmann::json& candidates, const std::string& prompt)
{
    nlohmann::json choice = "plurality";
    auto s = rules_.find("judge");
    if (s != rules_.end()) {
        if (s->contains(question)) {
            choice = s->at(question);
        } else if (s->contains("*")) {
            choice = s->at("*");
        }
    }
    nlohmann::json body;
    if (choice.is_number_integer()) {
        body = choice;
    } else {
        std::map<std::string, std::pair<std::size_t, std::size_t>> groups;  // answer -> (count, first index)
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const std::string a = candidates[i].value("answer", "");
            auto [it, fresh] = groups.emplace(a, std::make_pair(0, i));
            it->second.first += 1;
        }
        std::size_t best = 0;
        std::size_t best_count = 0;
        for (const auto& [a, g] : groups) {
            if (g.first > best_count || (g.first == best_count && g.second < best)) {
                best_count = g.first;
                best = g.second;
            }
        }
        body = best;
    }
    return {body, usage_of(prompt, body)};
}

BackendReply MockBackend::equal(const std::string& answer_a, const std::string& answer_b)
{
    nlohmann::json body = normalize_answer_text(answer_a) == normalize_answer_text(answer_b);
    return {body, Usage{approx_tokens(answer_a) + approx_tokens(answer_b), 1}};
}

std::vector<double> MockBackend::embed(const std::string& text) { return term_frequency_embedding(text); }

}  // namespace hyqe
