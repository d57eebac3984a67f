#include "hyqe/exec_relational.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "hyqe/error.hpp"
#include "hyqe/schema.hpp"

namespace hyqe {

const Relation& ExecEnv::input(std::string_view id) const
{
    auto it = materialized.find(id);
    if (it == materialized.end()) {
        throw ExecutionError("input '" + std::string(id) + "' is not materialized");
    }
    return it->second;
}

std::string row_key(const Row& row)
{
    std::string key;
    for (const auto& v : row) {
        key += is_null(v) ? std::string("\x01") : value_key(v);
        key.push_back('\x1f');
    }
    return key;
}

namespace {

std::vector<const Schema*> input_schemas(const PlanStep& step, const ExecEnv& env)
{
    std::vector<const Schema*> out;
    if (step.op.kind == OpKind::Scan) {
        return out;
    }
    for (const auto& p : step.parents) {
        out.push_back(&env.input(p).columns());
    }
    return out;
}

bool matches(const Value& cell, CmpOp op, const Value& rhs)
{
    if (is_null(cell) || is_null(rhs)) {
        return false;
    }
    if (op == CmpOp::Contains) {
        return to_lower(render(cell)).find(to_lower(render(rhs))) != std::string::npos;
    }
    auto c = compare_values(cell, rhs);
    if (!c) {
        return false;
    }
    switch (op) {
    case CmpOp::Eq:
        return *c == std::weak_ordering::equivalent;
    case CmpOp::Ne:
        return *c != std::weak_ordering::equivalent;
    case CmpOp::Lt:
        return *c == std::weak_ordering::less;
    case CmpOp::Gt:
        return *c == std::weak_ordering::greater;
    case CmpOp::Le:
        return *c != std::weak_ordering::greater;
    case CmpOp::Ge:
        return *c != std::weak_ordering::less;
    default:
        return false;
    }
}

bool filter_row(const Row& row, std::size_t col, std::optional<std::size_t> rhs_col, const FilterParams& p)
{
    const Value& cell = row[col];
    switch (p.op) {
    case CmpOp::IsNull:
        return is_null(cell);
    case CmpOp::IsNotNull:
        return !is_null(cell);
    case CmpOp::In:
    case CmpOp::NotIn: {
        if (is_null(cell)) {
            return false;
        }
        const bool found = std::any_of(p.values.begin(), p.values.end(), [&](const Value& v) { return values_equal(cell, v); });
        return p.op == CmpOp::In ? found : !found;
    }
    default:
        if (rhs_col) {
            return matches(cell, p.op, row[*rhs_col]);
        }
        if (p.values.empty()) {
            throw SchemaError("filter on '" + p.column + "' has no comparison value");
        }
        return matches(cell, p.op, p.values.front());
    }
}

std::optional<double> as_number(const Value& v, const std::string& what)
{
    if (is_null(v)) {
        return std::nullopt;
    }
    if (const auto* d = std::get_if<double>(&v)) {
        return *d;
    }
    if (const auto* b = std::get_if<bool>(&v)) {
        return *b ? 1.0 : 0.0;
    }
    if (const auto* s = std::get_if<std::string>(&v)) {
        if (auto d = parse_number(*s)) {
            return *d;
        }
    }
    throw SchemaError("type mismatch: '" + render(v) + "' in " + what + " is not numeric");
}

Value eval_operand(const Operand& o, const Row& row, const Schema& schema)
{
    if (o.column) {
        return row[require_column(schema, *o.column)];
    }
    return o.literal;
}

Value arith(ArithOp op, const Value& a, const Value& b, const std::string& name)
{
    auto x = as_number(a, name);
    auto y = as_number(b, name);
    if (!x || !y) {
        return std::monostate{};
    }
    switch (op) {
    case ArithOp::Add:
        return *x + *y;
    case ArithOp::Sub:
        return *x - *y;
    case ArithOp::Mul:
        return *x * *y;
    case ArithOp::Div:
        if (*y == 0.0) {
            return std::monostate{};
        }
        return *x / *y;
    }
    return std::monostate{};
}

Relation eval_project(const PlanStep& step, const ProjectParams& p, const Relation& in, Schema out_schema)
{
    std::vector<Row> rows;
    rows.reserve(in.size());
    std::vector<std::optional<std::size_t>> direct;
    for (const auto& it : p.items) {
        direct.push_back(!it.op && it.lhs.column ? std::optional<std::size_t>(require_column(in.columns(), *it.lhs.column))
                                                 : std::nullopt);
    }
    for (const auto& row : in.rows()) {
        Row r;
        r.reserve(p.items.size());
        for (std::size_t i = 0; i < p.items.size(); ++i) {
            const auto& it = p.items[i];
            if (direct[i]) {
                r.push_back(row[*direct[i]]);
            } else if (!it.op) {
                r.push_back(eval_operand(it.lhs, row, in.columns()));
            } else {
                r.push_back(arith(*it.op, eval_operand(it.lhs, row, in.columns()), eval_operand(it.rhs, row, in.columns()),
                                  it.name));
            }
        }
        rows.push_back(std::move(r));
    }
    return Relation(step.id, std::move(out_schema), std::move(rows));
}

Relation eval_aggregate(const PlanStep& step, const AggregateParams& p, const Relation& in, Schema out_schema)
{
    std::vector<std::size_t> group_cols;
    for (const auto& g : p.group_by) {
        group_cols.push_back(require_column(in.columns(), g));
    }
    const std::optional<std::size_t> target =
        p.target == "*" ? std::nullopt : std::optional<std::size_t>(require_column(in.columns(), p.target));

    struct Acc {
        Row key_values;
        std::size_t count = 0;
        double sum = 0.0;
        Value best;
    };
    std::vector<Acc> groups;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& row : in.rows()) {
        Row key_values;
        for (auto g : group_cols) {
            key_values.push_back(row[g]);
        }
        const std::string key = row_key(key_values);
        auto [it, inserted] = index.emplace(key, groups.size());
        if (inserted) {
            groups.push_back(Acc{std::move(key_values)});
        }
        Acc& acc = groups[it->second];
        if (!target) {
            ++acc.count;
            continue;
        }
        const Value& v = row[*target];
        if (is_null(v)) {
            continue;
        }
        ++acc.count;
        switch (p.func) {
        case AggFunc::Sum:
        case AggFunc::Avg:
            acc.sum += *as_number(v, p.target);
            break;
        case AggFunc::Min:
        case AggFunc::Max: {
            if (is_null(acc.best)) {
                acc.best = v;
                break;
            }
            auto c = compare_values(v, acc.best);
            if (c && ((p.func == AggFunc::Min && *c == std::weak_ordering::less) ||
                      (p.func == AggFunc::Max && *c == std::weak_ordering::greater))) {
                acc.best = v;
            }
            break;
        }
        case AggFunc::Count:
            break;
        }
    }
    if (groups.empty() && group_cols.empty()) {
        groups.push_back(Acc{});
    }
    std::vector<Row> rows;
    for (auto& acc : groups) {
        Row r = std::move(acc.key_values);
        switch (p.func) {
        case AggFunc::Count:
            r.emplace_back(static_cast<double>(acc.count));
            break;
        case AggFunc::Sum:
            r.push_back(acc.count == 0 ? Value{} : Value{acc.sum});
            break;
        case AggFunc::Avg:
            r.push_back(acc.count == 0 ? Value{} : Value{acc.sum / static_cast<double>(acc.count)});
            break;
        case AggFunc::Min:
        case AggFunc::Max:
            r.push_back(acc.best);
            break;
        }
        rows.push_back(std::move(r));
    }
    return Relation(step.id, std::move(out_schema), std::move(rows));
}

Relation eval_join(const PlanStep& step, const JoinParams& p, const Relation& a, const Relation& b)
{
    JoinLayout layout = join_layout(a.columns(), b.columns(), step.parents[1], &p);
    const std::size_t lk = *layout.left_key;
    const std::size_t rk = *layout.right_key;
    auto combine = [&](const Row& l, const Row& r) {
        Row out = l;
        for (auto i : layout.right_kept) {
            out.push_back(r[i]);
        }
        return out;
    };
    std::vector<Row> rows;
    if (p.op == CmpOp::Eq) {
        std::unordered_map<std::string, std::vector<std::size_t>> build;
        for (std::size_t j = 0; j < b.size(); ++j) {
            const Value& v = b.rows()[j][rk];
            if (!is_null(v)) {
                build[value_key(v)].push_back(j);
            }
        }
        for (const auto& l : a.rows()) {
            if (is_null(l[lk])) {
                continue;
            }
            auto it = build.find(value_key(l[lk]));
            if (it == build.end()) {
                continue;
            }
            for (auto j : it->second) {
                rows.push_back(combine(l, b.rows()[j]));
            }
        }
    } else {
        // The left column always sits on the left of the operator, whichever
        // input carries it.
        const bool swapped = !resolve_column(a.columns(), p.left_column).has_value() ||
                             !resolve_column(b.columns(), p.right_column).has_value();
        for (const auto& l : a.rows()) {
            for (const auto& r : b.rows()) {
                const bool ok = swapped ? matches(r[rk], p.op, l[lk]) : matches(l[lk], p.op, r[rk]);
                if (ok) {
                    rows.push_back(combine(l, r));
                }
            }
        }
    }
    return Relation(step.id, std::move(layout.columns), std::move(rows));
}

Relation eval_set_op(const PlanStep& step, const SetOpParams& p, const Relation& a, const Relation& b, Schema out_schema)
{
    std::vector<Row> rows;
    if (p.kind == SetOpKind::Union) {
        rows = a.rows();
        rows.insert(rows.end(), b.rows().begin(), b.rows().end());
        return Relation(step.id, std::move(out_schema), std::move(rows));
    }
    std::unordered_set<std::string> right;
    for (const auto& r : b.rows()) {
        right.insert(row_key(r));
    }
    std::unordered_set<std::string> seen;
    for (const auto& r : a.rows()) {
        const std::string k = row_key(r);
        const bool in_right = right.count(k) != 0;
        if ((p.kind == SetOpKind::Intersection) == in_right && seen.insert(k).second) {
            rows.push_back(r);
        }
    }
    return Relation(step.id, std::move(out_schema), std::move(rows));
}

}  // namespace

Relation eval_relational(const PlanStep& step, const ExecEnv& env)
{
    if (step.op.semantic()) {
        throw ExecutionError(step.id + " is a semantic step");
    }
    if (!step.params) {
        throw ExecutionError(step.id + " is not compiled");
    }
    if (env.base == nullptr) {
        throw ExecutionError("no base database");
    }
    const auto inputs = input_schemas(step, env);
    Schema out_schema = output_schema(step, inputs, *env.base);

    return std::visit(
        [&](const auto& p) -> Relation {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ScanParams>) {
                const Relation& base = env.base->at(p.table);
                std::vector<std::size_t> cols;
                for (const auto& c : out_schema) {
                    cols.push_back(base.column_index(c.name));
                }
                std::vector<Row> rows;
                rows.reserve(base.size());
                for (const auto& row : base.rows()) {
                    Row r;
                    r.reserve(cols.size());
                    for (auto c : cols) {
                        r.push_back(row[c]);
                    }
                    rows.push_back(std::move(r));
                }
                return Relation(step.id, std::move(out_schema), std::move(rows));
            } else if constexpr (std::is_same_v<T, FilterParams>) {
                const Relation& in = env.input(step.parents[0]);
                const std::size_t col = require_column(in.columns(), p.column);
                std::optional<std::size_t> rhs;
                if (p.rhs_column) {
                    rhs = require_column(in.columns(), *p.rhs_column);
                }
                std::vector<Row> rows;
                for (const auto& row : in.rows()) {
                    if (filter_row(row, col, rhs, p)) {
                        rows.push_back(row);
                    }
                }
                return Relation(step.id, std::move(out_schema), std::move(rows));
            } else if constexpr (std::is_same_v<T, ProjectParams>) {
                return eval_project(step, p, env.input(step.parents[0]), std::move(out_schema));
            } else if constexpr (std::is_same_v<T, AggregateParams>) {
                return eval_aggregate(step, p, env.input(step.parents[0]), std::move(out_schema));
            } else if constexpr (std::is_same_v<T, JoinParams>) {
                return eval_join(step, p, env.input(step.parents[0]), env.input(step.parents[1]));
            } else if constexpr (std::is_same_v<T, SortParams>) {
                const Relation& in = env.input(step.parents[0]);
                const std::size_t col = require_column(in.columns(), p.column);
                std::vector<Row> rows = in.rows();
                auto asc = [col](const Row& x, const Row& y) {
                    if (is_null(x[col]) || is_null(y[col])) {
                        return is_null(x[col]) && !is_null(y[col]);
                    }
                    return *compare_values(x[col], y[col]) == std::weak_ordering::less;
                };
                if (p.descending) {
                    std::stable_sort(rows.begin(), rows.end(), [&](const Row& x, const Row& y) { return asc(y, x); });
                } else {
                    std::stable_sort(rows.begin(), rows.end(), asc);
                }
                return Relation(step.id, std::move(out_schema), std::move(rows));
            } else if constexpr (std::is_same_v<T, LimitParams>) {
                const Relation& in = env.input(step.parents[0]);
                const auto n = std::min(p.n, in.size());
                std::vector<Row> rows(in.rows().begin(), in.rows().begin() + static_cast<std::ptrdiff_t>(n));
                return Relation(step.id, std::move(out_schema), std::move(rows));
            } else if constexpr (std::is_same_v<T, SetOpParams>) {
                return eval_set_op(step, p, env.input(step.parents[0]), env.input(step.parents[1]), std::move(out_schema));
            } else if constexpr (std::is_same_v<T, DistinctParams>) {
                const Relation& in = env.input(step.parents[0]);
                std::vector<std::size_t> cols;
                for (const auto& c : p.columns) {
                    cols.push_back(require_column(in.columns(), c));
                }
                std::unordered_set<std::string> seen;
                std::vector<Row> rows;
                for (const auto& row : in.rows()) {
                    std::string k;
                    if (cols.empty()) {
                        k = row_key(row);
                    } else {
                        Row sub;
                        for (auto c : cols) {
                            sub.push_back(row[c]);
                        }
                        k = row_key(sub);
                    }
                    if (seen.insert(k).second) {
                        rows.push_back(row);
                    }
                }
                return Relation(step.id, std::move(out_schema), std::move(rows));
            } else {
                throw ExecutionError(step.id + ": semantic params on a relational operator");
            }
        },
        *step.params);
}

void materialize(ExecEnv& env, const std::string& id, Relation relation)
{
    if (env.materialized.count(id) != 0) {
        throw ExecutionError("step '" + id + "' is already materialized");
    }
    relation.rename(id);
    relation.reprofile();
    env.materialized.emplace(id, std::move(relation));
}

}  // namespace hyqe
