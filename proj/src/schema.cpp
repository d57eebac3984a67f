#include "hyqe/schema.hpp"

#include <algorithm>
#include <set>

#include "hyqe/error.hpp"

namespace hyqe {

std::optional<std::size_t> resolve_column(const Schema& schema, std::string_view name)
{
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (schema[i].name == name) {
            return i;
        }
    }
    const auto dot = name.find('.');
    if (dot == std::string_view::npos) {
        return std::nullopt;
    }
    const auto table = name.substr(0, dot);
    const auto col = name.substr(dot + 1);
    std::optional<std::size_t> found;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const auto& c = schema[i];
        if (c.origin_table == table && (c.name == col || c.origin_column == col)) {
            if (found) {
                return std::nullopt;
            }
            found = i;
        }
    }
    return found;
}

std::size_t require_column(const Schema& schema, std::string_view name)
{
    if (auto i = resolve_column(schema, name)) {
        return *i;
    }
    throw SchemaError("unknown column '" + std::string(name) + "'");
}

JoinLayout join_layout(const Schema& left, const Schema& right, std::string_view right_name, const JoinParams* params)
{
    JoinLayout out;
    out.columns = left;
    if (params != nullptr) {
        auto lk = resolve_column(left, params->left_column);
        auto rk = resolve_column(right, params->right_column);
        if (!lk || !rk) {
            lk = resolve_column(left, params->right_column);
            rk = resolve_column(right, params->left_column);
        }
        if (!lk || !rk) {
            throw SchemaError("join condition " + params->left_column + " " + std::string(to_string(params->op)) + " " +
                              params->right_column + " does not resolve against its inputs");
        }
        out.left_key = lk;
        out.right_key = rk;
    }
    std::set<std::string> names;
    for (const auto& c : left) {
        names.insert(c.name);
    }
    for (std::size_t i = 0; i < right.size(); ++i) {
        Column c = right[i];
        if (params != nullptr && params->op == CmpOp::Eq && out.right_key == i && left[*out.left_key].name == c.name) {
            continue;
        }
        if (names.count(c.name) != 0) {
            const std::string prefix = c.origin_table.empty() ? std::string(right_name) : c.origin_table;
            std::string candidate = prefix + "." + c.name;
            for (int n = 2; names.count(candidate) != 0; ++n) {
                candidate = prefix + "." + c.name + "_" + std::to_string(n);
            }
            c.name = candidate;
        }
        names.insert(c.name);
        out.right_kept.push_back(i);
        out.columns.push_back(std::move(c));
    }
    return out;
}

std::string semantic_output_column(const SemanticParams& p) { return p.new_column.empty() ? "result" : p.new_column; }

namespace {

Column computed(std::string name, AttributeKind kind)
{
    Column c;
    c.name = std::move(name);
    c.kind = kind;
    return c;
}

const Schema& only_input(const PlanStep& step, const std::vector<const Schema*>& inputs, std::size_t want)
{
    if (inputs.size() != want) {
        throw SchemaError(step.id + ": expected " + std::to_string(want) + " inputs");
    }
    return *inputs.front();
}

}  // namespace

Schema output_schema(const PlanStep& step, const std::vector<const Schema*>& inputs, const Database& db)
{
    if (!step.params) {
        throw SchemaError(step.id + " is not compiled");
    }
    const auto& params = *step.params;
    if (step.op.semantic()) {
        const auto& p = std::get<SemanticParams>(params);
        switch (step.op.kind) {
        case OpKind::Filter:
            return only_input(step, inputs, 1);
        case OpKind::Map: {
            Schema out = only_input(step, inputs, 1);
            if (p.new_column.empty()) {
                throw SchemaError(step.id + ": derive step has no new column name");
            }
            if (resolve_column(out, p.new_column)) {
                throw SchemaError(step.id + ": derived column '" + p.new_column + "' already exists");
            }
            for (const auto& c : p.input_columns) {
                require_column(out, c);
            }
            out.push_back(computed(p.new_column, AttributeKind::Textual));
            return out;
        }
        case OpKind::Join: {
            only_input(step, inputs, 2);
            return join_layout(*inputs[0], *inputs[1], step.parents[1], nullptr).columns;
        }
        case OpKind::Aggregate: {
            const auto& in = only_input(step, inputs, 1);
            Schema out;
            for (const auto& g : p.group_by) {
                out.push_back(in[require_column(in, g)]);
            }
            if (!p.target.empty() && p.target != "*") {
                require_column(in, p.target);
            }
            out.push_back(computed(semantic_output_column(p), AttributeKind::Textual));
            return out;
        }
        default:
            throw SchemaError(step.id + ": unsupported semantic operator");
        }
    }

    return std::visit(
        [&](const auto& p) -> Schema {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ScanParams>) {
                const Relation& base = db.at(p.table);
                Schema out;
                for (const auto& c : base.columns()) {
                    if (!p.columns.empty() && std::find(p.columns.begin(), p.columns.end(), c.name) == p.columns.end()) {
                        continue;
                    }
                    Column col = c;
                    if (col.origin_table.empty()) {
                        col.origin_table = base.name();
                        col.origin_column = c.name;
                    }
                    out.push_back(std::move(col));
                }
                for (const auto& c : p.columns) {
                    base.column_index(c);
                }
                return out;
            } else if constexpr (std::is_same_v<T, FilterParams>) {
                const auto& in = only_input(step, inputs, 1);
                require_column(in, p.column);
                if (p.rhs_column) {
                    require_column(in, *p.rhs_column);
                }
                return in;
            } else if constexpr (std::is_same_v<T, ProjectParams>) {
                const auto& in = only_input(step, inputs, 1);
                Schema out;
                std::set<std::string> names;
                for (const auto& it : p.items) {
                    if (!names.insert(it.name).second) {
                        throw SchemaError(step.id + ": duplicate output column '" + it.name + "'");
                    }
                    if (!it.op && it.lhs.column) {
                        Column c = in[require_column(in, *it.lhs.column)];
                        c.name = it.name;
                        out.push_back(std::move(c));
                        continue;
                    }
                    if (it.lhs.column) {
                        require_column(in, *it.lhs.column);
                    }
                    if (it.op && it.rhs.column) {
                        require_column(in, *it.rhs.column);
                    }
                    out.push_back(computed(it.name, AttributeKind::Numeric));
                }
                return out;
            } else if constexpr (std::is_same_v<T, AggregateParams>) {
                const auto& in = only_input(step, inputs, 1);
                Schema out;
                for (const auto& g : p.group_by) {
                    out.push_back(in[require_column(in, g)]);
                }
                AttributeKind kind = AttributeKind::Numeric;
                if (p.target != "*") {
                    const auto& t = in[require_column(in, p.target)];
                    if ((p.func == AggFunc::Sum || p.func == AggFunc::Avg) && t.kind != AttributeKind::Numeric) {
                        throw SchemaError(step.id + ": " + std::string(to_string(p.func)) + " over non-numeric column '" +
                                          p.target + "'");
                    }
                    if (p.func == AggFunc::Min || p.func == AggFunc::Max) {
                        kind = t.kind;
                    }
                } else if (p.func != AggFunc::Count) {
                    throw SchemaError(step.id + ": '*' is only valid for count");
                }
                out.push_back(computed(p.output, kind));
                return out;
            } else if constexpr (std::is_same_v<T, JoinParams>) {
                only_input(step, inputs, 2);
                return join_layout(*inputs[0], *inputs[1], step.parents[1], &p).columns;
            } else if constexpr (std::is_same_v<T, SortParams>) {
                const auto& in = only_input(step, inputs, 1);
                require_column(in, p.column);
                return in;
            } else if constexpr (std::is_same_v<T, LimitParams>) {
                return only_input(step, inputs, 1);
            } else if constexpr (std::is_same_v<T, SetOpParams>) {
                only_input(step, inputs, 2);
                if (inputs[0]->size() != inputs[1]->size()) {
                    throw SchemaError(step.id + ": set operation over inputs of different arity");
                }
                return *inputs[0];
            } else if constexpr (std::is_same_v<T, DistinctParams>) {
                const auto& in = only_input(step, inputs, 1);
                for (const auto& c : p.columns) {
                    require_column(in, c);
                }
                return in;
            } else {
                throw SchemaError(step.id + ": semantic params on a relational operator");
            }
        },
        params);
}

std::map<std::string, Schema> infer_schemas(const PlanDag& dag, const Database& db)
{
    std::map<std::string, Schema> out;
    for (const auto& id : topo_order(dag)) {
        const auto& step = dag.at(id);
        std::vector<const Schema*> inputs;
        for (const auto& p : dag.input_ids(step)) {
            inputs.push_back(&out.at(p));
        }
        out.emplace(id, output_schema(step, inputs, db));
    }
    return out;
}

}  // namespace hyqe
