#include "hyqe/plan.hpp"

#include <algorithm>
#include <regex>
#include <set>
#include <sstream>

#include "hyqe/error.hpp"

namespace hyqe {

namespace {

struct OperatorSpelling {
    const char* name;
    OperatorTag tag;
};

constexpr OperatorTag rel(OpKind k) { return OperatorTag{OpClass::Relational, k}; }
constexpr OperatorTag sem(OpKind k) { return OperatorTag{OpClass::Semantic, k}; }

const std::vector<OperatorSpelling>& spellings()
{
    // The first spelling of each tag is canonical.
    static const std::vector<OperatorSpelling> table{
        {"SCAN", rel(OpKind::Scan)},
        {"FILTER", rel(OpKind::Filter)},
        {"PROJECT", rel(OpKind::Project)},
        {"AGGREGATE", rel(OpKind::Aggregate)},
        {"JOIN", rel(OpKind::Join)},
        {"SORT", rel(OpKind::Sort)},
        {"LIMIT", rel(OpKind::Limit)},
        {"SET_OP", rel(OpKind::SetOp)},
        {"DISTINCT", rel(OpKind::Distinct)},
        {"LLM_DERIVE", sem(OpKind::Map)},
        {"LLM_FILTER", sem(OpKind::Filter)},
        {"LLM_JOIN", sem(OpKind::Join)},
        {"LLM_AGGREGATE", sem(OpKind::Aggregate)},
        {"LLM_MAP", sem(OpKind::Map)},
        {"MAP", sem(OpKind::Map)},
        {"SEMANTIC_MAP", sem(OpKind::Map)},
        {"SEMANTIC_FILTER", sem(OpKind::Filter)},
        {"SEMANTIC_JOIN", sem(OpKind::Join)},
        {"SEMANTIC_AGGREGATE", sem(OpKind::Aggregate)},
        {"SETOP", rel(OpKind::SetOp)},
    };
    return table;
}

std::string upper(std::string_view s)
{
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'a' && c <= 'z') {
            c = static_cast<char>(c - 'a' + 'A');
        }
    }
    return out;
}

}  // namespace

std::string operator_name(OperatorTag tag)
{
    for (const auto& s : spellings()) {
        if (s.tag == tag) {
            return s.name;
        }
    }
    return "UNKNOWN";
}

std::optional<OperatorTag> parse_operator_name(std::string_view name)
{
    std::string u = upper(trim(name));
    std::replace(u.begin(), u.end(), ' ', '_');
    std::replace(u.begin(), u.end(), '-', '_');
    for (const auto& s : spellings()) {
        if (u == s.name) {
            return s.tag;
        }
    }
    return std::nullopt;
}

std::vector<OperatorTag> all_operators()
{
    std::vector<OperatorTag> out;
    for (const auto& s : spellings()) {
        if (std::find(out.begin(), out.end(), s.tag) == out.end()) {
            out.push_back(s.tag);
        }
    }
    return out;
}

std::string_view to_string(CmpOp op)
{
    switch (op) {
    case CmpOp::Eq:
        return "=";
    case CmpOp::Ne:
        return "!=";
    case CmpOp::Lt:
        return "<";
    case CmpOp::Gt:
        return ">";
    case CmpOp::Le:
        return "<=";
    case CmpOp::Ge:
        return ">=";
    case CmpOp::Contains:
        return "contains";
    case CmpOp::In:
        return "in";
    case CmpOp::NotIn:
        return "not in";
    case CmpOp::IsNull:
        return "is null";
    case CmpOp::IsNotNull:
        return "is not null";
    }
    return "=";
}

std::optional<CmpOp> parse_cmp_op(std::string_view s)
{
    std::string l = to_lower(trim(s));
    static const std::vector<std::pair<std::string, CmpOp>> ops{
        {"=", CmpOp::Eq},          {"==", CmpOp::Eq},        {"!=", CmpOp::Ne},   {"<>", CmpOp::Ne},
        {"<", CmpOp::Lt},          {">", CmpOp::Gt},         {"<=", CmpOp::Le},   {">=", CmpOp::Ge},
        {"contains", CmpOp::Contains}, {"in", CmpOp::In},    {"not in", CmpOp::NotIn},
        {"is null", CmpOp::IsNull}, {"is not null", CmpOp::IsNotNull},
    };
    for (const auto& [text, op] : ops) {
        if (l == text) {
            return op;
        }
    }
    return std::nullopt;
}

std::string_view to_string(AggFunc f)
{
    switch (f) {
    case AggFunc::Max:
        return "max";
    case AggFunc::Min:
        return "min";
    case AggFunc::Count:
        return "count";
    case AggFunc::Sum:
        return "sum";
    case AggFunc::Avg:
        return "avg";
    }
    return "count";
}

std::optional<AggFunc> parse_agg_func(std::string_view s)
{
    const std::string l = to_lower(trim(s));
    if (l == "max" || l == "maximum") {
        return AggFunc::Max;
    }
    if (l == "min" || l == "minimum") {
        return AggFunc::Min;
    }
    if (l == "count") {
        return AggFunc::Count;
    }
    if (l == "sum" || l == "total") {
        return AggFunc::Sum;
    }
    if (l == "avg" || l == "average" || l == "mean") {
        return AggFunc::Avg;
    }
    return std::nullopt;
}

std::string_view to_string(SetOpKind k)
{
    switch (k) {
    case SetOpKind::Union:
        return "union";
    case SetOpKind::Intersection:
        return "intersection";
    case SetOpKind::Difference:
        return "difference";
    }
    return "union";
}

std::optional<SetOpKind> parse_set_op_kind(std::string_view s)
{
    const std::string l = to_lower(trim(s));
    if (l == "union") {
        return SetOpKind::Union;
    }
    if (l == "intersection" || l == "intersect") {
        return SetOpKind::Intersection;
    }
    if (l == "difference" || l == "except" || l == "minus") {
        return SetOpKind::Difference;
    }
    return std::nullopt;
}

bool params_match_operator(const StepParams& params, OperatorTag tag)
{
    if (tag.semantic()) {
        return std::holds_alternative<SemanticParams>(params);
    }
    switch (tag.kind) {
    case OpKind::Scan:
        return std::holds_alternative<ScanParams>(params);
    case OpKind::Filter:
        return std::holds_alternative<FilterParams>(params);
    case OpKind::Project:
        return std::holds_alternative<ProjectParams>(params);
    case OpKind::Aggregate:
        return std::holds_alternative<AggregateParams>(params);
    case OpKind::Join:
        return std::holds_alternative<JoinParams>(params);
    case OpKind::Sort:
        return std::holds_alternative<SortParams>(params);
    case OpKind::Limit:
        return std::holds_alternative<LimitParams>(params);
    case OpKind::SetOp:
        return std::holds_alternative<SetOpParams>(params);
    case OpKind::Distinct:
        return std::holds_alternative<DistinctParams>(params);
    case OpKind::Map:
        return false;
    }
    return false;
}

namespace {

std::string_view arith_symbol(ArithOp op)
{
    switch (op) {
    case ArithOp::Add:
        return "+";
    case ArithOp::Sub:
        return "-";
    case ArithOp::Mul:
        return "*";
    case ArithOp::Div:
        return "/";
    }
    return "+";
}

std::optional<ArithOp> parse_arith(std::string_view s)
{
    if (s == "+") {
        return ArithOp::Add;
    }
    if (s == "-") {
        return ArithOp::Sub;
    }
    if (s == "*") {
        return ArithOp::Mul;
    }
    if (s == "/") {
        return ArithOp::Div;
    }
    return std::nullopt;
}

nlohmann::ordered_json operand_to_json(const Operand& o)
{
    nlohmann::ordered_json j;
    if (o.column) {
        j["column"] = *o.column;
    } else {
        j["literal"] = to_json(o.literal);
    }
    return j;
}

Operand operand_from_json(const nlohmann::json& j)
{
    Operand o;
    if (j.contains("column")) {
        o.column = j.at("column").get<std::string>();
    } else if (j.contains("literal")) {
        o.literal = value_from_json(j.at("literal"));
    }
    return o;
}

std::vector<std::string> string_list(const nlohmann::json& j, const char* key)
{
    std::vector<std::string> out;
    if (j.contains(key) && j.at(key).is_array()) {
        for (const auto& v : j.at(key)) {
            out.push_back(v.get<std::string>());
        }
    } else if (j.contains(key) && j.at(key).is_string()) {
        out.push_back(j.at(key).get<std::string>());
    }
    return out;
}

}  // namespace

nlohmann::ordered_json params_to_json(const StepParams& params)
{
    nlohmann::ordered_json j;
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ScanParams>) {
                j["kind"] = "scan";
                j["table"] = p.table;
                if (!p.columns.empty()) {
                    j["columns"] = p.columns;
                }
            } else if constexpr (std::is_same_v<T, FilterParams>) {
                j["kind"] = "filter";
                j["column"] = p.column;
                j["op"] = std::string(to_string(p.op));
                if (p.rhs_column) {
                    j["rhs_column"] = *p.rhs_column;
                } else if (p.op == CmpOp::In || p.op == CmpOp::NotIn) {
                    auto arr = nlohmann::ordered_json::array();
                    for (const auto& v : p.values) {
                        arr.push_back(nlohmann::ordered_json(to_json(v)));
                    }
                    j["values"] = arr;
                } else if (!p.values.empty()) {
                    j["value"] = to_json(p.values.front());
                }
            } else if constexpr (std::is_same_v<T, ProjectParams>) {
                j["kind"] = "project";
                auto items = nlohmann::ordered_json::array();
                for (const auto& it : p.items) {
                    nlohmann::ordered_json ij;
                    ij["name"] = it.name;
                    if (!it.op && it.lhs.column) {
                        ij["column"] = *it.lhs.column;
                    } else {
                        ij["lhs"] = operand_to_json(it.lhs);
                        if (it.op) {
                            ij["op"] = std::string(arith_symbol(*it.op));
                            ij["rhs"] = operand_to_json(it.rhs);
                        }
                    }
                    items.push_back(ij);
                }
                j["items"] = items;
            } else if constexpr (std::is_same_v<T, AggregateParams>) {
                j["kind"] = "aggregate";
                j["func"] = std::string(to_string(p.func));
                j["target"] = p.target;
                j["group_by"] = p.group_by;
                j["output"] = p.output;
            } else if constexpr (std::is_same_v<T, JoinParams>) {
                j["kind"] = "join";
                j["left_column"] = p.left_column;
                j["op"] = std::string(to_string(p.op));
                j["right_column"] = p.right_column;
            } else if constexpr (std::is_same_v<T, SortParams>) {
                j["kind"] = "sort";
                j["column"] = p.column;
                j["descending"] = p.descending;
            } else if constexpr (std::is_same_v<T, LimitParams>) {
                j["kind"] = "limit";
                j["n"] = p.n;
            } else if constexpr (std::is_same_v<T, SetOpParams>) {
                j["kind"] = "set_op";
                j["op"] = std::string(to_string(p.kind));
            } else if constexpr (std::is_same_v<T, DistinctParams>) {
                j["kind"] = "distinct";
                j["columns"] = p.columns;
            } else {
                j["kind"] = "semantic";
                j["condition"] = p.condition;
                if (!p.new_column.empty()) {
                    j["new_column"] = p.new_column;
                }
                if (!p.input_columns.empty()) {
                    j["input_columns"] = p.input_columns;
                }
                if (!p.group_by.empty()) {
                    j["group_by"] = p.group_by;
                }
                if (!p.target.empty()) {
                    j["target"] = p.target;
                }
            }
        },
        params);
    return j;
}

StepParams params_from_json(const nlohmann::json& j)
{
    if (!j.is_object() || !j.contains("kind")) {
        throw ParseError("params must be an object with a 'kind'");
    }
    const std::string kind = j.at("kind").get<std::string>();
    try {
        if (kind == "scan") {
            return ScanParams{j.at("table").get<std::string>(), string_list(j, "columns")};
        }
        if (kind == "filter") {
            FilterParams p;
            p.column = j.at("column").get<std::string>();
            auto op = parse_cmp_op(j.at("op").get<std::string>());
            if (!op) {
                throw ParseError("unknown comparison operator '" + j.at("op").get<std::string>() + "'");
            }
            p.op = *op;
            if (j.contains("rhs_column")) {
                p.rhs_column = j.at("rhs_column").get<std::string>();
            }
            if (j.contains("values")) {
                for (const auto& v : j.at("values")) {
                    p.values.push_back(value_from_json(v));
                }
            } else if (j.contains("value")) {
                p.values.push_back(value_from_json(j.at("value")));
            }
            return p;
        }
        if (kind == "project") {
            ProjectParams p;
            for (const auto& ij : j.at("items")) {
                ProjectItem it;
                it.name = ij.at("name").get<std::string>();
                if (ij.contains("column")) {
                    it.lhs.column = ij.at("column").get<std::string>();
                } else {
                    it.lhs = operand_from_json(ij.at("lhs"));
                    if (ij.contains("op")) {
                        it.op = parse_arith(ij.at("op").get<std::string>());
                        if (!it.op) {
                            throw ParseError("unknown arithmetic operator");
                        }
                        it.rhs = operand_from_json(ij.at("rhs"));
                    }
                }
                p.items.push_back(std::move(it));
            }
            return p;
        }
        if (kind == "aggregate") {
            AggregateParams p;
            auto f = parse_agg_func(j.at("func").get<std::string>());
            if (!f) {
                throw ParseError("unknown aggregate function");
            }
            p.func = *f;
            p.target = j.at("target").get<std::string>();
            p.group_by = string_list(j, "group_by");
            p.output = j.value("output", std::string(to_string(p.func)) + "_" + p.target);
            return p;
        }
        if (kind == "join") {
            JoinParams p;
            p.left_column = j.at("left_column").get<std::string>();
            p.right_column = j.at("right_column").get<std::string>();
            auto op = parse_cmp_op(j.value("op", std::string("=")));
            if (!op) {
                throw ParseError("unknown join operator");
            }
            p.op = *op;
            return p;
        }
        if (kind == "sort") {
            return SortParams{j.at("column").get<std::string>(), j.value("descending", false)};
        }
        if (kind == "limit") {
            return LimitParams{j.at("n").get<std::size_t>()};
        }
        if (kind == "set_op") {
            auto k = parse_set_op_kind(j.at("op").get<std::string>());
            if (!k) {
                throw ParseError("unknown set operation");
            }
            return SetOpParams{*k};
        }
        if (kind == "distinct") {
            return DistinctParams{string_list(j, "columns")};
        }
        if (kind == "semantic") {
            SemanticParams p;
            p.condition = j.value("condition", std::string());
            p.new_column = j.value("new_column", std::string());
            p.input_columns = string_list(j, "input_columns");
            p.group_by = string_list(j, "group_by");
            p.target = j.value("target", std::string());
            return p;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed " + kind + " params: " + e.what());
    }
    throw ParseError("unknown params kind '" + kind + "'");
}

std::vector<std::string> referenced_columns(const StepParams& params)
{
    std::vector<std::string> out;
    auto add = [&](const std::string& c) {
        if (!c.empty() && c != "*" && std::find(out.begin(), out.end(), c) == out.end()) {
            out.push_back(c);
        }
    };
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ScanParams>) {
            } else if constexpr (std::is_same_v<T, FilterParams>) {
                add(p.column);
                if (p.rhs_column) {
                    add(*p.rhs_column);
                }
            } else if constexpr (std::is_same_v<T, ProjectParams>) {
                for (const auto& it : p.items) {
                    if (it.lhs.column) {
                        add(*it.lhs.column);
                    }
                    if (it.op && it.rhs.column) {
                        add(*it.rhs.column);
                    }
                }
            } else if constexpr (std::is_same_v<T, AggregateParams>) {
                add(p.target);
                for (const auto& g : p.group_by) {
                    add(g);
                }
            } else if constexpr (std::is_same_v<T, JoinParams>) {
                add(p.left_column);
                add(p.right_column);
            } else if constexpr (std::is_same_v<T, SortParams>) {
                add(p.column);
            } else if constexpr (std::is_same_v<T, DistinctParams>) {
                for (const auto& c : p.columns) {
                    add(c);
                }
            } else if constexpr (std::is_same_v<T, SemanticParams>) {
                for (const auto& c : p.input_columns) {
                    add(c);
                }
                for (const auto& g : p.group_by) {
                    add(g);
                }
                add(p.target);
            }
        },
        params);
    return out;
}

std::size_t required_arity(OperatorTag tag)
{
    switch (tag.kind) {
    case OpKind::Scan:
        return 0;
    case OpKind::Join:
    case OpKind::SetOp:
        return 2;
    default:
        return 1;
    }
}

std::optional<std::string> scan_table(const PlanStep& step)
{
    if (step.op.kind != OpKind::Scan) {
        return std::nullopt;
    }
    if (step.params) {
        if (const auto* s = std::get_if<ScanParams>(&*step.params)) {
            return s->table;
        }
    }
    if (step.parents.size() == 1) {
        return step.parents.front();
    }
    static const std::regex scan_re(R"(^\s*return\s+(?:all\s+)?rows\s+from\s+([A-Za-z_][\w.]*)\s*\.?\s*$)", std::regex::icase);
    std::smatch m;
    if (std::regex_match(step.instruction, m, scan_re)) {
        return m[1].str();
    }
    return std::nullopt;
}

const PlanStep* PlanDag::find(std::string_view id) const
{
    for (const auto& s : steps_) {
        if (s.id == id) {
            return &s;
        }
    }
    return nullptr;
}

PlanStep* PlanDag::find(std::string_view id)
{
    for (auto& s : steps_) {
        if (s.id == id) {
            return &s;
        }
    }
    return nullptr;
}

const PlanStep& PlanDag::at(std::string_view id) const
{
    if (const auto* s = find(id)) {
        return *s;
    }
    throw PlanningError("unknown step '" + std::string(id) + "'");
}

std::vector<std::string> PlanDag::input_ids(const PlanStep& step) const
{
    if (step.op.kind == OpKind::Scan) {
        return {};
    }
    return step.parents;
}

std::vector<std::string> PlanDag::consumers(std::string_view id) const
{
    std::vector<std::string> out;
    for (const auto& s : steps_) {
        if (s.op.kind == OpKind::Scan) {
            continue;
        }
        if (std::find(s.parents.begin(), s.parents.end(), id) != s.parents.end()) {
            out.push_back(s.id);
        }
    }
    return out;
}

std::string PlanDag::sink() const
{
    std::vector<std::string> sinks;
    for (const auto& s : steps_) {
        if (consumers(s.id).empty()) {
            sinks.push_back(s.id);
        }
    }
    if (sinks.size() != 1) {
        throw PlanningError("plan '" + id_ + "' has " + std::to_string(sinks.size()) + " sinks");
    }
    return sinks.front();
}

std::string PlanDag::fresh_id(std::string_view base) const
{
    std::string candidate(base);
    for (int n = 2; find(candidate) != nullptr; ++n) {
        candidate = std::string(base) + "_" + std::to_string(n);
    }
    return candidate;
}

std::string_view to_string(IssueKind k)
{
    switch (k) {
    case IssueKind::Empty:
        return "empty";
    case IssueKind::DuplicateId:
        return "duplicate_id";
    case IssueKind::DanglingParent:
        return "dangling_parent";
    case IssueKind::Cycle:
        return "cycle";
    case IssueKind::Arity:
        return "arity";
    case IssueKind::Atomicity:
        return "atomicity";
    case IssueKind::MultipleSinks:
        return "multiple_sinks";
    case IssueKind::Params:
        return "params";
    }
    return "unknown";
}

bool ValidationResult::has(IssueKind k) const
{
    return std::any_of(issues.begin(), issues.end(), [&](const ValidationIssue& i) { return i.kind == k; });
}

std::string ValidationResult::summary() const
{
    std::string out;
    for (const auto& i : issues) {
        if (!out.empty()) {
            out += "; ";
        }
        out += std::string(to_string(i.kind)) + (i.step.empty() ? "" : " at " + i.step) + ": " + i.message;
    }
    return out;
}

bool has_multiple_conditions(std::string_view condition)
{
    // Blank out quoted literals so connectives inside them are ignored.
    std::string s(condition);
    char quote = 0;
    for (auto& c : s) {
        if (quote != 0) {
            if (c == quote) {
                quote = 0;
            } else {
                c = ' ';
            }
        } else if (c == '\'' || c == '"') {
            quote = c;
        }
    }
    static const std::regex connective(R"((^|[\s)])(and|or|between)(?=[\s(]|$)|&&|\|\|)", std::regex::icase);
    return std::regex_search(s, connective);
}

namespace {

std::string condition_text(const PlanStep& step)
{
    const std::string lower = to_lower(step.instruction);
    if (step.op.semantic()) {
        auto pos = lower.find("condition:");
        return pos == std::string::npos ? step.instruction : step.instruction.substr(pos + 10);
    }
    auto pos = lower.find(" where ");
    return pos == std::string::npos ? std::string() : step.instruction.substr(pos + 7);
}

}  // namespace

ValidationResult validate(const PlanDag& dag)
{
    ValidationResult res;
    auto issue = [&](IssueKind k, const std::string& step, std::string msg) {
        res.issues.push_back({k, step, std::move(msg)});
    };
    if (dag.steps().empty()) {
        issue(IssueKind::Empty, "", "plan has no steps");
        return res;
    }

    std::set<std::string> ids;
    for (const auto& s : dag.steps()) {
        if (!ids.insert(s.id).second) {
            issue(IssueKind::DuplicateId, s.id, "duplicate step id");
        }
    }

    for (const auto& s : dag.steps()) {
        if (s.op.kind == OpKind::Scan) {
            if (s.parents.size() > 1) {
                issue(IssueKind::Arity, s.id, "SCAN names more than one base relation");
            } else if (s.parents.size() == 1 && ids.count(s.parents.front()) != 0) {
                issue(IssueKind::Arity, s.id, "SCAN must read a base relation, not step '" + s.parents.front() + "'");
            }
        } else {
            for (const auto& p : s.parents) {
                if (ids.count(p) == 0) {
                    issue(IssueKind::DanglingParent, s.id, "parent '" + p + "' does not resolve");
                }
            }
            const std::size_t want = required_arity(s.op);
            if (s.parents.size() != want) {
                issue(IssueKind::Arity, s.id,
                      operator_name(s.op) + " needs " + std::to_string(want) + " parents, has " +
                          std::to_string(s.parents.size()));
            }
        }
        if (s.params && !params_match_operator(*s.params, s.op)) {
            issue(IssueKind::Params, s.id, "params do not match operator " + operator_name(s.op));
        }
        if (s.op.kind == OpKind::Filter) {
            bool multi = has_multiple_conditions(condition_text(s));
            if (s.params) {
                if (const auto* f = std::get_if<FilterParams>(&*s.params)) {
                    multi = multi || has_multiple_conditions(f->column);
                    for (const auto& v : f->values) {
                        if (const auto* str = std::get_if<std::string>(&v); str && f->op != CmpOp::Contains &&
                                                                             f->op != CmpOp::In && f->op != CmpOp::NotIn) {
                            multi = multi || (has_multiple_conditions(*str) && str->find_first_of("<>=") != std::string::npos);
                        }
                    }
                } else if (const auto* sp = std::get_if<SemanticParams>(&*s.params)) {
                    multi = multi || has_multiple_conditions(sp->condition);
                }
            }
            if (multi) {
                issue(IssueKind::Atomicity, s.id, "filter holds more than one logical condition");
            }
        }
    }

    if (res.has(IssueKind::DuplicateId) || res.has(IssueKind::DanglingParent)) {
        return res;
    }

    // Kahn's algorithm; whatever remains unprocessed lies on or behind a cycle.
    std::map<std::string, std::size_t> indegree;
    for (const auto& s : dag.steps()) {
        indegree[s.id] = dag.input_ids(s).size();
    }
    std::vector<std::string> ready;
    for (const auto& s : dag.steps()) {
        if (indegree[s.id] == 0) {
            ready.push_back(s.id);
        }
    }
    std::size_t processed = 0;
    while (!ready.empty()) {
        std::string id = ready.back();
        ready.pop_back();
        ++processed;
        for (const auto& c : dag.consumers(id)) {
            const auto& cs = dag.at(c);
            for (const auto& p : cs.parents) {
                if (p == id && --indegree[c] == 0) {
                    ready.push_back(c);
                }
            }
        }
    }
    if (processed != dag.size()) {
        std::string members;
        for (const auto& [id, d] : indegree) {
            if (d > 0) {
                members += (members.empty() ? "" : ", ") + id;
            }
        }
        issue(IssueKind::Cycle, "", "cycle through " + members);
        return res;
    }

    std::size_t sinks = 0;
    for (const auto& s : dag.steps()) {
        sinks += dag.consumers(s.id).empty() ? 1 : 0;
    }
    if (sinks != 1) {
        issue(IssueKind::MultipleSinks, "", std::to_string(sinks) + " sinks");
    }
    return res;
}

std::vector<std::vector<std::string>> topo_schedule(const PlanDag& dag)
{
    std::map<std::string, std::size_t> layer;
    std::map<std::string, int> state;  // 1 visiting, 2 done
    std::function<std::size_t(const std::string&)> visit = [&](const std::string& id) -> std::size_t {
        auto st = state[id];
        if (st == 2) {
            return layer[id];
        }
        if (st == 1) {
            throw PlanningError("cycle detected at step '" + id + "'");
        }
        state[id] = 1;
        const auto& step = dag.at(id);
        std::size_t l = 0;
        for (const auto& p : dag.input_ids(step)) {
            l = std::max(l, visit(p) + 1);
        }
        state[id] = 2;
        layer[id] = l;
        return l;
    };
    std::size_t depth = 0;
    for (const auto& s : dag.steps()) {
        depth = std::max(depth, visit(s.id) + 1);
    }
    std::vector<std::vector<std::string>> layers(depth);
    for (const auto& s : dag.steps()) {
        layers[layer[s.id]].push_back(s.id);
    }
    return layers;
}

std::vector<std::string> topo_order(const PlanDag& dag)
{
    std::vector<std::string> out;
    for (auto& l : topo_schedule(dag)) {
        out.insert(out.end(), l.begin(), l.end());
    }
    return out;
}

namespace {

std::string strip_code_fences(std::string_view doc)
{
    std::string s = trim(doc);
    if (s.rfind("```", 0) == 0) {
        auto nl = s.find('\n');
        s = nl == std::string::npos ? std::string() : s.substr(nl + 1);
        auto end = s.rfind("```");
        if (end != std::string::npos) {
            s = s.substr(0, end);
        }
    }
    return s;
}

// Quotes bare identifiers in single-element lists, e.g. "parent": [products].
std::string quote_bare_identifiers(const std::string& doc)
{
    static const std::regex bare(R"(\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\])");
    std::string out;
    std::sregex_iterator it(doc.begin(), doc.end(), bare);
    std::size_t last = 0;
    for (; it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        const std::string word = m[1].str();
        if (word == "true" || word == "false" || word == "null") {
            continue;
        }
        out += doc.substr(last, static_cast<std::size_t>(m.position(0)) - last);
        out += "[\"" + word + "\"]";
        last = static_cast<std::size_t>(m.position(0) + m.length(0));
    }
    out += doc.substr(last);
    return out;
}

std::vector<std::string> parent_list(const nlohmann::json& step)
{
    std::vector<std::string> out;
    auto it = step.find("parent");
    if (it == step.end()) {
        it = step.find("parents");
    }
    if (it == step.end() || it->is_null()) {
        return out;
    }
    if (it->is_string()) {
        if (!it->get<std::string>().empty()) {
            out.push_back(it->get<std::string>());
        }
        return out;
    }
    if (!it->is_array()) {
        throw ParseError("'parent' must be a list of strings");
    }
    for (const auto& p : *it) {
        if (!p.is_string()) {
            throw ParseError("'parent' must be a list of strings");
        }
        out.push_back(p.get<std::string>());
    }
    return out;
}

}  // namespace

ParsedPlans parse_plan(std::string_view document)
{
    std::string text = strip_code_fences(document);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        try {
            doc = nlohmann::json::parse(quote_bare_identifiers(text));
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("plan document is not valid JSON: ") + e.what());
        }
    }

    nlohmann::json plans;
    if (doc.is_object() && doc.contains("plans")) {
        plans = doc.at("plans");
    } else if (doc.is_object() && doc.contains("steps")) {
        plans = nlohmann::json::array({doc});
    } else if (doc.is_array()) {
        plans = doc;
    } else {
        throw ParseError("plan document must contain a 'plans' list");
    }
    if (!plans.is_array()) {
        throw ParseError("'plans' must be a list");
    }
    if (plans.empty()) {
        throw ParseError("plan list is empty");
    }

    ParsedPlans out;
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const std::string plan_id = "plan_" + std::to_string(i + 1);
        const auto& pj = plans[i];
        try {
            if (!pj.is_object() || !pj.contains("steps") || !pj.at("steps").is_array()) {
                throw ParseError("plan has no 'steps' list");
            }
            std::vector<PlanStep> steps;
            for (const auto& sj : pj.at("steps")) {
                PlanStep step;
                step.id = sj.at("id").get<std::string>();
                const std::string opname = sj.at("operator").get<std::string>();
                auto tag = parse_operator_name(opname);
                if (!tag) {
                    throw ParseError("unknown operator '" + opname + "' at " + step.id);
                }
                step.op = *tag;
                step.instruction = sj.value("action", sj.value("instruction", std::string()));
                step.parents = parent_list(sj);
                if (sj.contains("params") && !sj.at("params").is_null()) {
                    step.params = params_from_json(sj.at("params"));
                }
                steps.push_back(std::move(step));
            }
            PlanDag dag(plan_id, std::move(steps));
            auto v = validate(dag);
            if (!v.ok()) {
                out.diagnostics.push_back(plan_id + " dropped: " + v.summary());
                continue;
            }
            out.plans.push_back(std::move(dag));
        } catch (const ParseError& e) {
            out.diagnostics.push_back(plan_id + " dropped: " + e.what());
        } catch (const nlohmann::json::exception& e) {
            out.diagnostics.push_back(plan_id + " dropped: malformed step: " + e.what());
        }
    }
    return out;
}

nlohmann::ordered_json plan_to_json(const PlanDag& dag)
{
    nlohmann::ordered_json steps = nlohmann::ordered_json::array();
    for (const auto& s : dag.steps()) {
        nlohmann::ordered_json sj;
        sj["id"] = s.id;
        sj["operator"] = operator_name(s.op);
        sj["action"] = s.instruction;
        sj["parent"] = s.parents;
        if (s.params) {
            sj["params"] = params_to_json(*s.params);
        }
        steps.push_back(sj);
    }
    nlohmann::ordered_json pj;
    pj["steps"] = steps;
    return pj;
}

std::string serialize_plan(const std::vector<PlanDag>& plans)
{
    nlohmann::ordered_json doc;
    doc["plans"] = nlohmann::ordered_json::array();
    for (const auto& p : plans) {
        doc["plans"].push_back(plan_to_json(p));
    }
    return doc.dump(2);
}

std::string serialize_plan(const PlanDag& dag) { return serialize_plan(std::vector<PlanDag>{dag}); }

namespace {

std::string render_literal(const Value& v)
{
    if (std::holds_alternative<double>(v) || std::holds_alternative<bool>(v)) {
        return render(v);
    }
    return "'" + render(v) + "'";
}

std::string join_names(const std::vector<std::string>& names)
{
    std::string out;
    for (const auto& n : names) {
        out += (out.empty() ? "" : ", ") + n;
    }
    return out;
}

std::string render_operand(const Operand& o) { return o.column ? *o.column : render_literal(o.literal); }

std::string parent_at(const PlanStep& s, std::size_t i) { return i < s.parents.size() ? s.parents[i] : "?"; }

}  // namespace

std::string describe_step(const PlanStep& step)
{
    if (!step.params) {
        return step.instruction;
    }
    const auto& p0 = parent_at(step, 0);
    return std::visit(
        [&](const auto& p) -> std::string {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ScanParams>) {
                return "Return rows from " + p.table;
            } else if constexpr (std::is_same_v<T, FilterParams>) {
                std::string out = "Return rows from " + p0 + " where " + p.column + " " + std::string(to_string(p.op));
                if (p.rhs_column) {
                    out += " " + *p.rhs_column;
                } else if (p.op == CmpOp::In || p.op == CmpOp::NotIn) {
                    std::string list;
                    for (const auto& v : p.values) {
                        list += (list.empty() ? "" : ", ") + render_literal(v);
                    }
                    out += " (" + list + ")";
                } else if (!p.values.empty()) {
                    out += " " + render_literal(p.values.front());
                }
                return out;
            } else if constexpr (std::is_same_v<T, ProjectParams>) {
                std::vector<std::string> names;
                std::string calc;
                for (const auto& it : p.items) {
                    names.push_back(it.name);
                    if (it.op || !it.lhs.column || *it.lhs.column != it.name) {
                        std::string expr = render_operand(it.lhs);
                        if (it.op) {
                            expr += " " + std::string(arith_symbol(*it.op)) + " " + render_operand(it.rhs);
                        }
                        calc += (calc.empty() ? "" : "; ") + it.name + " = " + expr;
                    }
                }
                std::string out = "Return " + join_names(names) + " of " + p0;
                if (!calc.empty()) {
                    out += ", calculating " + calc;
                }
                return out;
            } else if constexpr (std::is_same_v<T, AggregateParams>) {
                std::string out = "Return " + std::string(to_string(p.func)) + " of " + p.target;
                const std::string default_out = std::string(to_string(p.func)) + (p.target == "*" ? "" : "_" + p.target);
                if (p.output != default_out) {
                    out += " as " + p.output;
                }
                if (!p.group_by.empty()) {
                    out += " grouped by " + join_names(p.group_by);
                }
                return out + " from " + p0;
            } else if constexpr (std::is_same_v<T, JoinParams>) {
                return "Return combined rows from " + p0 + " and " + parent_at(step, 1) + " where " + p.left_column + " " +
                       std::string(to_string(p.op)) + " " + p.right_column + " matches";
            } else if constexpr (std::is_same_v<T, SortParams>) {
                return "Return " + p0 + " sorted by " + p.column + (p.descending ? " DESC" : " ASC");
            } else if constexpr (std::is_same_v<T, LimitParams>) {
                return "Return the top " + std::to_string(p.n) + " rows from " + p0;
            } else if constexpr (std::is_same_v<T, SetOpParams>) {
                std::string k(to_string(p.kind));
                k[0] = static_cast<char>(k[0] - 'a' + 'A');
                return "Return the " + k + " of " + p0 + " and " + parent_at(step, 1);
            } else if constexpr (std::is_same_v<T, DistinctParams>) {
                return "Return unique rows from " + p0 + (p.columns.empty() ? "" : " based on " + join_names(p.columns));
            } else {
                switch (step.op.kind) {
                case OpKind::Map:
                    return "Return " + p0 + " with new column " + p.new_column + " derived from " +
                           join_names(p.input_columns) + " by " + p.condition;
                case OpKind::Filter:
                    return "Return rows from " + p0 + " satisfying the semantic condition: " + p.condition;
                case OpKind::Join:
                    return "Return combined rows from " + p0 + " and " + parent_at(step, 1) +
                           " using semantic matching logic: " + p.condition;
                default:
                    return "Return a summary of " + p.target +
                           (p.group_by.empty() ? "" : " grouped by " + join_names(p.group_by)) + " from " + p0 +
                           " using instruction: " + p.condition;
                }
            }
        },
        *step.params);
}

std::string dump_plan(const PlanDag& dag)
{
    std::ostringstream os;
    os << dag.id() << "\n";
    for (const auto& s : dag.steps()) {
        os << "  " << s.id << " [" << operator_name(s.op) << "] <- (" << join_names(s.parents) << ") " << s.instruction
           << "\n";
    }
    return os.str();
}

}  // namespace hyqe
