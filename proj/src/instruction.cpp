#include "hyqe/instruction.hpp"

#include <algorithm>
#include <regex>

#include "hyqe/error.hpp"
#include "hyqe/schema.hpp"

namespace hyqe {

namespace {

const auto kIcase = std::regex::icase | std::regex::ECMAScript;

[[noreturn]] void fail(OperatorTag op, std::string_view text, const std::string& why)
{
    throw ParseError(operator_name(op) + " instruction '" + std::string(text) + "': " + why);
}

std::string unquote(std::string s)
{
    s = trim(s);
    if (s.size() >= 2) {
        const char a = s.front();
        const char b = s.back();
        if ((a == '\'' && b == '\'') || (a == '"' && b == '"') || (a == '`' && b == '`') || (a == '[' && b == ']')) {
            return s.substr(1, s.size() - 2);
        }
    }
    return s;
}

/// Drops a "step_id." prefix naming one of the parents.
std::string local_name(std::string s, const std::vector<std::string>& parents)
{
    s = unquote(s);
    for (const auto& p : parents) {
        if (s.size() > p.size() + 1 && s.compare(0, p.size(), p) == 0 && s[p.size()] == '.') {
            return unquote(s.substr(p.size() + 1));
        }
    }
    return s;
}

/// Splits on commas outside quotes, and on a trailing " and ".
std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::string cur;
    char quote = 0;
    for (char c : text) {
        if (quote != 0) {
            cur += c;
            if (c == quote) {
                quote = 0;
            }
            continue;
        }
        if (c == '\'' || c == '"') {
            quote = c;
            cur += c;
            continue;
        }
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
            continue;
        }
        cur += c;
    }
    if (!trim(cur).empty()) {
        out.push_back(trim(cur));
    }
    std::vector<std::string> result;
    static const std::regex and_re(R"(^(?:and\s+)?(.*?)(?:\s+and\s+(.*))?$)", kIcase);
    for (const auto& item : out) {
        std::smatch m;
        if (item.front() != '\'' && item.front() != '"' && std::regex_match(item, m, and_re)) {
            if (!trim(m[1].str()).empty()) {
                result.push_back(trim(m[1].str()));
            }
            if (m[2].matched && !trim(m[2].str()).empty()) {
                result.push_back(trim(m[2].str()));
            }
        } else if (!item.empty()) {
            result.push_back(item);
        }
    }
    return result;
}

std::vector<std::string> name_list(const std::string& text, const std::vector<std::string>& parents)
{
    const std::string t = to_lower(trim(text));
    if (t.empty() || t == "none" || t == "nothing" || t == "n/a" || t == "-" || t == "null") {
        return {};
    }
    std::vector<std::string> out;
    for (const auto& item : split_list(text)) {
        out.push_back(local_name(item, parents));
    }
    return out;
}

bool is_quoted(const std::string& s)
{
    return s.size() >= 2 && ((s.front() == '\'' && s.back() == '\'') || (s.front() == '"' && s.back() == '"'));
}

Value literal(const std::string& raw)
{
    const std::string s = trim(raw);
    if (is_quoted(s)) {
        return s.substr(1, s.size() - 2);
    }
    if (auto n = parse_number(s)) {
        return *n;
    }
    if (auto b = parse_boolean(s)) {
        return *b;
    }
    return s;
}

/// A bare word is a column when the input schema has it; quoted text and
/// numbers are always literals.
bool operand_is_column(const std::string& raw, const std::vector<Column>* input)
{
    const std::string s = trim(raw);
    if (is_quoted(s) || parse_number(s) || parse_boolean(s)) {
        return false;
    }
    if (input == nullptr) {
        return false;
    }
    return resolve_column(*input, s).has_value();
}

struct FoundOp {
    std::size_t pos = std::string::npos;
    std::size_t len = 0;
    CmpOp op = CmpOp::Eq;
};

/// Leftmost comparison operator outside quotes; the longer spelling wins a tie.
FoundOp find_comparison(const std::string& text)
{
    struct Spelling {
        const char* text;
        CmpOp op;
        bool word;
    };
    static const Spelling spellings[] = {
        {"is not null", CmpOp::IsNotNull, true}, {"is null", CmpOp::IsNull, true}, {"not in", CmpOp::NotIn, true},
        {"contains", CmpOp::Contains, true},     {"in", CmpOp::In, true},          {"!=", CmpOp::Ne, false},
        {"<>", CmpOp::Ne, false},                {">=", CmpOp::Ge, false},         {"<=", CmpOp::Le, false},
        {"==", CmpOp::Eq, false},                {"=", CmpOp::Eq, false},          {">", CmpOp::Gt, false},
        {"<", CmpOp::Lt, false},
    };
    const std::string lower = to_lower(text);
    std::vector<bool> quoted(text.size(), false);
    char q = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (q != 0) {
            quoted[i] = true;
            if (text[i] == q) {
                q = 0;
            }
        } else if (text[i] == '\'' || text[i] == '"') {
            q = text[i];
            quoted[i] = true;
        }
    }
    auto word_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; };
    FoundOp best;
    for (const auto& sp : spellings) {
        const std::string needle = sp.text;
        for (auto pos = lower.find(needle); pos != std::string::npos; pos = lower.find(needle, pos + 1)) {
            if (quoted[pos] || pos == 0) {
                continue;
            }
            if (sp.word) {
                const auto end = pos + needle.size();
                if (word_char(lower[pos - 1]) || (end < lower.size() && word_char(lower[end]))) {
                    continue;
                }
            }
            if (pos < best.pos || (pos == best.pos && needle.size() > best.len)) {
                best = FoundOp{pos, needle.size(), sp.op};
            }
            break;
        }
    }
    return best;
}

FilterParams parse_filter_condition(OperatorTag tag, std::string_view text, const std::string& cond,
                                    const std::vector<std::string>& parents, const std::vector<Column>* input)
{
    const FoundOp found = find_comparison(cond);
    if (found.pos == std::string::npos) {
        fail(tag, text, "no comparison operator");
    }
    FilterParams f;
    f.column = local_name(cond.substr(0, found.pos), parents);
    f.op = found.op;
    std::string rhs = trim(cond.substr(found.pos + found.len));
    if (f.column.empty()) {
        fail(tag, text, "missing column");
    }
    switch (f.op) {
    case CmpOp::IsNull:
    case CmpOp::IsNotNull:
        if (!rhs.empty()) {
            fail(tag, text, "unexpected operand after null test");
        }
        return f;
    case CmpOp::In:
    case CmpOp::NotIn: {
        if (rhs.size() >= 2 && rhs.front() == '(' && rhs.back() == ')') {
            rhs = rhs.substr(1, rhs.size() - 2);
        } else if (rhs.size() >= 2 && rhs.front() == '[' && rhs.back() == ']') {
            rhs = rhs.substr(1, rhs.size() - 2);
        }
        for (const auto& item : split_list(rhs)) {
            f.values.push_back(literal(item));
        }
        if (f.values.empty()) {
            fail(tag, text, "empty value list");
        }
        return f;
    }
    default:
        break;
    }
    if (rhs.empty()) {
        fail(tag, text, "missing operand");
    }
    if (operand_is_column(rhs, input)) {
        f.rhs_column = local_name(rhs, parents);
    } else {
        f.values.push_back(literal(rhs));
    }
    return f;
}

std::optional<ArithOp> arith_of(char c)
{
    switch (c) {
    case '+':
        return ArithOp::Add;
    case '-':
        return ArithOp::Sub;
    case '*':
        return ArithOp::Mul;
    case '/':
        return ArithOp::Div;
    default:
        return std::nullopt;
    }
}

Operand operand(const std::string& raw, const std::vector<std::string>& parents)
{
    const std::string s = trim(raw);
    if (is_quoted(s)) {
        return Operand{std::nullopt, s.substr(1, s.size() - 2)};
    }
    if (auto n = parse_number(s)) {
        return Operand{std::nullopt, *n};
    }
    return Operand{local_name(s, parents), {}};
}

ProjectItem parse_calculation(OperatorTag tag, std::string_view text, const std::string& calc,
                              const std::vector<std::string>& parents)
{
    const auto eq = calc.find('=');
    if (eq == std::string::npos) {
        fail(tag, text, "calculation without '='");
    }
    ProjectItem item;
    item.name = unquote(calc.substr(0, eq));
    const std::string expr = trim(calc.substr(eq + 1));
    // Binary operator: the first + - * / after the first operand character,
    // outside quotes, with a space on at least one side or between words.
    char q = 0;
    for (std::size_t i = 1; i < expr.size(); ++i) {
        const char c = expr[i];
        if (q != 0) {
            if (c == q) {
                q = 0;
            }
            continue;
        }
        if (c == '\'' || c == '"') {
            q = c;
            continue;
        }
        auto op = arith_of(c);
        if (op && (expr[i - 1] == ' ' || (i + 1 < expr.size() && expr[i + 1] == ' ') || c == '*' || c == '/')) {
            item.lhs = operand(expr.substr(0, i), parents);
            item.op = op;
            item.rhs = operand(expr.substr(i + 1), parents);
            return item;
        }
    }
    item.lhs = operand(expr, parents);
    return item;
}

}  // namespace

StepParams parse_instruction(OperatorTag op, std::string_view text_view, const std::vector<std::string>& parents,
                             const std::vector<Column>* input)
{
    std::string text = trim(text_view);
    while (!text.empty() && (text.back() == '.' || text.back() == ';')) {
        text.pop_back();
    }
    std::smatch m;
    if (op.semantic()) {
        SemanticParams sp;
        switch (op.kind) {
        case OpKind::Map: {
            static const std::regex re(R"(^return\s+(\S+)\s+with\s+new\s+column\s+(.+?)\s+derived\s+from\s+(.+?)\s+by\s+([\s\S]+)$)", kIcase);
            if (!std::regex_match(text, m, re)) {
                fail(op, text, "does not follow the derive template");
            }
            sp.new_column = unquote(m[2].str());
            sp.input_columns = name_list(m[3].str(), parents);
            sp.condition = trim(m[4].str());
            return sp;
        }
        case OpKind::Filter: {
            static const std::regex re(R"(^return\s+rows\s+from\s+(\S+)\s+satisfying\s+the\s+semantic\s+condition\s*:\s*([\s\S]+)$)", kIcase);
            if (!std::regex_match(text, m, re)) {
                fail(op, text, "does not follow the semantic filter template");
            }
            sp.condition = trim(m[2].str());
            return sp;
        }
        case OpKind::Join: {
            static const std::regex re(R"(^return\s+combined\s+rows\s+from\s+(\S+)\s+and\s+(\S+)\s+using\s+semantic\s+matching\s+logic\s*:\s*([\s\S]+)$)", kIcase);
            if (!std::regex_match(text, m, re)) {
                fail(op, text, "does not follow the semantic join template");
            }
            sp.condition = trim(m[3].str());
            return sp;
        }
        case OpKind::Aggregate: {
            static const std::regex re(R"(^return\s+a\s+summary\s+of\s+(.+?)(?:\s+grouped\s+by\s+(.+?))?\s+from\s+(\S+)\s+using\s+instruction\s*:\s*([\s\S]+)$)", kIcase);
            if (!std::regex_match(text, m, re)) {
                fail(op, text, "does not follow the semantic aggregate template");
            }
            sp.target = local_name(m[1].str(), parents);
            if (m[2].matched) {
                sp.group_by = name_list(m[2].str(), parents);
            }
            sp.condition = trim(m[4].str());
            return sp;
        }
        default:
            fail(op, text, "unsupported semantic operator");
        }
    }

    switch (op.kind) {
    case OpKind::Scan: {
        static const std::regex re(R"(^return\s+(?:all\s+)?rows\s+from\s+(?:table\s+)?(\S+)$)", kIcase);
        if (!std::regex_match(text, m, re)) {
            fail(op, text, "does not follow the scan template");
        }
        return ScanParams{unquote(m[1].str()), {}};
    }
    case OpKind::Filter: {
        static const std::regex re(R"(^return\s+rows\s+from\s+(\S+)\s+where\s+([\s\S]+)$)", kIcase);
        if (!std::regex_match(text, m, re)) {
            fail(op, text, "does not follow the filter template");
        }
        return parse_filter_condition(op, text, trim(m[2].str()), parents, input);
    }
    case OpKind::Project: {
        static const std::regex re(R"(^return\s+(.+?)\s+of\s+(\S+?)(?:\s*,?\s+calculating\s+([\s\S]+))?$)", kIcase);
        if (!std::regex_match(text, m, re)) {
            fail(op, text, "does not follow the project template");
        }
        std::map<std::string, ProjectItem> calcs;
        if (m[3].matched) {
            std::string all = m[3].str();
            std::size_t start = 0;
            for (std::size_t i = 0; i <= all.size(); ++i) {
                if (i == all.size() || all[i] == ';') {
                    const std::string part = trim(all.substr(start, i - start));
                    if (!part.empty() && to_lower(part) != "if needed" && part.find('=') != std::string::npos) {
                        auto item = parse_calculation(op, text, part, parents);
                        calcs.emplace(item.name, item);
                    }
                    start = i + 1;
                }
            }
        }
        ProjectParams pp;
        static const std::regex alias(R"(^(.+?)\s+as\s+(\S+)$)", kIcase);
        for (const auto& raw : split_list(m[1].str())) {
            std::smatch am;
            if (std::regex_match(raw, am, alias)) {
                ProjectItem item;
                item.name = unquote(am[2].str());
                item.lhs.column = local_name(am[1].str(), parents);
                pp.items.push_back(item);
                continue;
            }
            const std::string name = local_name(raw, parents);
            auto it = calcs.find(name);
            pp.items.push_back(it != calcs.end() ? it->second : ProjectItem::column(name));
        }
        if (pp.items.empty()) {
            fail(op, text, "no output columns");
        }
        return pp;
    }
    case OpKind::Aggregate: {
        static const std::regex re(
            R"(^return\s+(?:the\s+)?(max|min|count|sum|avg|average|maximum|minimum|total)\s*(?:of\s+|\()\s*(.+?)\)?(?:\s+as\s+(\S+))?(?:\s+grouped\s+by\s+(.+?))?\s+from\s+(\S+)$)",
            kIcase);
        if (!std::regex_match(text, m, re)) {
            fail(op, text, "does not follow the aggregate template");
        }
        const std::string f = to_lower(m[1].str());
        AggregateParams ap;
        if (f == "average") {
            ap.func = AggFunc::Avg;
        } else if (f == "maximum") {
            ap.func = AggFunc::Max;
        } else if (f == "minimum") {
            ap.func = AggFunc::Min;
        } else if (f == "total") {
            ap.func = AggFunc::Sum;
        } else {
            ap.func = *parse_agg_func(f);
        }
        ap.target = local_name(m[2].str(), parents);
        const std::string tl = to_lower(ap.target);
        if (tl == "rows" || tl == "all rows" || tl == "all" || tl == "*") {
            ap.target = "*";
        }
        if (m[4].matched) {
            ap.group_by = name_list(m[4].str(), parents);
        }
        ap.output = m[3].matched ? unquote(m[3].str())
                                 : std::string(to_string(ap.func)) + (ap.target == "*" ? "" : "_" + ap.target);
        return ap;
    }
    case OpKind::Join: {
        static const std::regex re(R"(^return\s+combined\s+rows\s+from\s+(\S+)\s+and\s+(\S+)\s+where\s+([\s\S]+?)(?:\s+matches)?$)", kIcase);
        if (!std::regex_match(text, m, re)) {
            fail(op, text, "does not follow the join template");
        }
        std::vector<std::string> both = parents;
        both.push_back(m[1].str());
        both.push_back(m[2].str());
        const std::string cond = trim(m[3].str());
        const FoundOp found = find_comparison(cond);
        if (found.pos == std::string::npos || found.op == CmpOp::IsNull || found.op == CmpOp::IsNotNull ||
            found.op == CmpOp::In || found.op == CmpOp::NotIn || found.op == CmpOp::Contains) {
            fail(op, text, "join condition needs a column comparison");
        }
        JoinParams jp;
        jp.left_column = local_name(cond.substr(0, found.pos), both);
        jp.op = found.op;
        jp.right_column = local_name(cond.substr(found.pos + found.len), both);
        if (jp.left_column.empty() || jp.right_column.empty()) {
            fail(op, text, "join condition needs two columns");
        }
        return jp;
    }
    case OpKind::Sort: {
        static const std::regex re(R"(^return\s+(\S+)\s+sorted\s+by\s+(.+?)(?:\s+(asc|desc|ascending|descending))?$)", kIcase);
        if (!std::regex_match(text, m, re)) {
            fail(op, text, "does not follow the sort template");
        }
        SortParams sp;
        sp.column = local_name(m[2].str(), parents);
        sp.descending = m[3].matched && to_lower(m[3].str()).rfind("desc", 0) == 0;
        return sp;
    }
    case OpKind::Limit: {
        static const std::regex re(R"(^return\s+the\s+(?:top|first)\s+(\d+)\s+rows?\s+from\s+(\S+)$)", kIcase);
        if (!std::regex_match(text, m, re)) {
            fail(op, text, "does not follow the limit template");
        }
        return LimitParams{static_cast<std::size_t>(std::stoull(m[1].str()))};
    }
    case OpKind::SetOp: {
        static const std::regex re(R"(^return\s+the\s+(union|intersection|difference)\s+of\s+(\S+)\s+and\s+(\S+)$)", kIcase);
        if (!std::regex_match(text, m, re)) {
            fail(op, text, "does not follow the set operation template");
        }
        return SetOpParams{*parse_set_op_kind(to_lower(m[1].str()))};
    }
    case OpKind::Distinct: {
        static const std::regex re(R"(^return\s+unique\s+rows\s+from\s+(\S+?)(?:\s+based\s+on\s+([\s\S]+))?$)", kIcase);
        if (!std::regex_match(text, m, re)) {
            fail(op, text, "does not follow the distinct template");
        }
        DistinctParams dp;
        if (m[2].matched) {
            const std::string cols = to_lower(trim(m[2].str()));
            if (cols != "all columns" && cols != "all" && cols != "*") {
                dp.columns = name_list(m[2].str(), parents);
            }
        }
        return dp;
    }
    default:
        fail(op, text, "unsupported operator");
    }
}

}  // namespace hyqe
