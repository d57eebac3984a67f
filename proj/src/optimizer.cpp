#include "hyqe/optimizer.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <set>

#include "hyqe/error.hpp"
#include "hyqe/join_order.hpp"
#include "hyqe/schema.hpp"

namespace hyqe {

std::string_view to_string(Placement p)
{
    switch (p) {
    case Placement::Elevate:
        return "Elevate";
    case Placement::Defer:
        return "Defer";
    case Placement::Pinned:
        return "Pinned";
    }
    return "Defer";
}

nlohmann::ordered_json to_json(const RewriteTrace& t)
{
    nlohmann::ordered_json j;
    j["applied"] = nlohmann::ordered_json::array();
    for (const auto& a : t.applied) {
        j["applied"].push_back({{"rule", a.rule},
                                {"steps", a.steps},
                                {"cost_before", to_double(a.cost_before)},
                                {"cost_after", to_double(a.cost_after)},
                                {"cost_before_exact", to_string(a.cost_before)},
                                {"cost_after_exact", to_string(a.cost_after)},
                                {"detail", a.detail}});
    }
    j["decisions"] = nlohmann::ordered_json::array();
    for (const auto& d : t.decisions) {
        j["decisions"].push_back({{"step", d.step},
                                  {"expander", d.expander},
                                  {"delta_gamma", to_double(d.delta_gamma)},
                                  {"decision", std::string(to_string(d.decision))},
                                  {"moved", d.moved},
                                  {"note", d.note}});
    }
    j["notes"] = t.notes;
    return j;
}

Placement decide_placement(const Rational& gamma_in, const Rational& gamma_out, const Rational& epsilon)
{
    if (gamma_in <= 0) {
        return Placement::Defer;
    }
    return gamma_out / gamma_in > epsilon ? Placement::Elevate : Placement::Defer;
}

std::vector<std::string> mentioned_columns(std::string_view text, const std::vector<Column>& schema)
{
    std::string hay = to_lower(text);
    auto word_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; };
    std::vector<std::string> out;
    for (const auto& c : schema) {
        const std::string needle = to_lower(c.name);
        if (needle.empty()) {
            continue;
        }
        for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
            const bool left_ok = pos == 0 || !word_char(hay[pos - 1]);
            const auto end = pos + needle.size();
            const bool right_ok = end >= hay.size() || !word_char(hay[end]);
            if (left_ok && right_ok) {
                out.push_back(c.name);
                break;
            }
        }
    }
    return out;
}

namespace {

using Schemas = std::map<std::string, Schema>;

bool is_rel(const PlanStep& s, OpKind k) { return !s.op.semantic() && s.op.kind == k; }
bool is_sem(const PlanStep& s, OpKind k) { return s.op.semantic() && s.op.kind == k; }

bool all_compiled(const PlanDag& dag)
{
    return std::all_of(dag.steps().begin(), dag.steps().end(), [](const PlanStep& s) { return s.params.has_value(); });
}

std::vector<std::string> names_of(const Schema& s)
{
    std::vector<std::string> out;
    out.reserve(s.size());
    for (const auto& c : s) {
        out.push_back(c.name);
    }
    return out;
}

PlanStep& step_ref(PlanDag& dag, std::string_view id)
{
    auto* s = dag.find(id);
    if (s == nullptr) {
        throw PlanningError("optimizer lost step '" + std::string(id) + "'");
    }
    return *s;
}

/// Every non-SCAN step except those in `except` that reads `from` now reads `to`.
void redirect(PlanDag& dag, const std::string& from, const std::string& to, const std::set<std::string>& except)
{
    for (auto& s : dag.mutable_steps()) {
        if (s.op.kind == OpKind::Scan || except.count(s.id) != 0) {
            continue;
        }
        std::replace(s.parents.begin(), s.parents.end(), from, to);
    }
}

/// Stable topological order: earliest plan position first among ready steps.
void sort_topologically(PlanDag& dag)
{
    auto& steps = dag.mutable_steps();
    std::set<std::string> ids;
    for (const auto& s : steps) {
        ids.insert(s.id);
    }
    std::vector<PlanStep> out;
    std::set<std::string> done;
    std::vector<bool> used(steps.size(), false);
    while (out.size() < steps.size()) {
        bool progressed = false;
        for (std::size_t i = 0; i < steps.size(); ++i) {
            if (used[i]) {
                continue;
            }
            const auto ins = dag.input_ids(steps[i]);
            const bool ready = std::all_of(ins.begin(), ins.end(),
                                           [&](const std::string& p) { return done.count(p) != 0 || ids.count(p) == 0; });
            if (ready) {
                used[i] = true;
                done.insert(steps[i].id);
                out.push_back(steps[i]);
                progressed = true;
                break;
            }
        }
        if (!progressed) {
            throw PlanningError("rewrite produced a cycle");
        }
    }
    steps = std::move(out);
}

void refresh_instructions(PlanDag& out, const PlanDag& original)
{
    for (auto& s : out.mutable_steps()) {
        const auto* o = original.find(s.id);
        if (o == nullptr || o->parents != s.parents || o->params != s.params || o->op != s.op) {
            s.instruction = describe_step(s);
        }
    }
}

/// Cost of a plan, or nothing when the plan does not type-check.
std::optional<Rational> price(const PlanDag& dag, const Database& db, const CostModelParams& p)
{
    try {
        for (const auto& issue : validate(dag).issues) {
            if (issue.kind != IssueKind::Atomicity) {
                return std::nullopt;
            }
        }
        return plan_cost(dag, estimate_plan(dag, db, p), p);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::optional<std::vector<std::string>> sink_names(const PlanDag& dag, const Database& db)
{
    try {
        return names_of(infer_schemas(dag, db).at(dag.sink()));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

/// Decides whether a candidate replaces the current plan and prices both.
struct Judge {
    const Database& db;
    const CostModelParams& p;
    bool guarded;

    bool accept(const PlanDag& before, const PlanDag& after, Rational& cost_before, Rational& cost_after) const
    {
        const auto names_before = sink_names(before, db);
        const auto names_after = sink_names(after, db);
        if (!names_after || names_before != names_after) {
            return false;
        }
        const auto cb = price(before, db, p);
        const auto ca = price(after, db, p);
        if (!ca) {
            return false;
        }
        cost_before = cb.value_or(0);
        cost_after = *ca;
        return !guarded || (cb && *ca < *cb);
    }
};

// ---------------------------------------------------------------------------
// Selection pushdown

struct Origin {
    std::size_t input = 0;
    std::string name;
};

/// Where an output column of `step` comes from unchanged, per input. Empty
/// when the column is computed by the step or the step does not pass rows
/// through untouched.
std::vector<Origin> column_origins(const PlanStep& step, std::string_view col, const Schemas& schemas, const PlanDag& dag)
{
    const auto& out = schemas.at(step.id);
    const auto j = resolve_column(out, col);
    if (!j) {
        return {};
    }
    const auto ins = dag.input_ids(step);
    auto in = [&](std::size_t k) -> const Schema& { return schemas.at(ins.at(k)); };
    auto group_origin = [&](const std::vector<std::string>& group_by) -> std::vector<Origin> {
        if (*j >= group_by.size()) {
            return {};
        }
        return {{0, in(0)[require_column(in(0), group_by[*j])].name}};
    };
    auto join_origin = [&](const JoinParams* jp) -> std::vector<Origin> {
        const auto layout = join_layout(in(0), in(1), step.parents[1], jp);
        if (*j < in(0).size()) {
            return {{0, in(0)[*j].name}};
        }
        return {{1, in(1)[layout.right_kept.at(*j - in(0).size())].name}};
    };

    if (step.op.semantic()) {
        const auto& sp = std::get<SemanticParams>(*step.params);
        switch (step.op.kind) {
        case OpKind::Filter:
            return {{0, in(0)[*j].name}};
        case OpKind::Map:
            if (*j + 1 == out.size()) {
                return {};
            }
            return {{0, in(0)[*j].name}};
        case OpKind::Join:
            return join_origin(nullptr);
        case OpKind::Aggregate:
            return group_origin(sp.group_by);
        default:
            return {};
        }
    }
    switch (step.op.kind) {
    case OpKind::Sort:
    case OpKind::Distinct:
        return {{0, in(0)[*j].name}};
    case OpKind::Project: {
        const auto& item = std::get<ProjectParams>(*step.params).items.at(*j);
        if (item.op || !item.lhs.column) {
            return {};
        }
        return {{0, in(0)[require_column(in(0), *item.lhs.column)].name}};
    }
    case OpKind::Aggregate:
        return group_origin(std::get<AggregateParams>(*step.params).group_by);
    case OpKind::Join:
        return join_origin(&std::get<JoinParams>(*step.params));
    case OpKind::SetOp:
        return {{0, in(0)[*j].name}, {1, in(1)[*j].name}};
    default:
        return {};
    }
}

/// Builds the plan with filter `fid` moved below its parent, or nothing when
/// the move is not valid.
std::optional<PlanDag> push_one(const PlanDag& dag, const Schemas& schemas, const std::string& fid)
{
    const PlanStep& f = dag.at(fid);
    if (!is_rel(f, OpKind::Filter) || f.parents.size() != 1) {
        return std::nullopt;
    }
    const PlanStep* parent = dag.find(f.parents[0]);
    if (parent == nullptr || parent->op.kind == OpKind::Scan || is_rel(*parent, OpKind::Limit) ||
        is_rel(*parent, OpKind::Filter)) {
        return std::nullopt;
    }
    if (dag.consumers(parent->id) != std::vector<std::string>{fid}) {
        return std::nullopt;
    }
    const auto& fp = std::get<FilterParams>(*f.params);
    std::vector<std::string> cols{fp.column};
    if (fp.rhs_column) {
        cols.push_back(*fp.rhs_column);
    }
    if (is_rel(*parent, OpKind::Distinct)) {
        const auto& dc = std::get<DistinctParams>(*parent->params).columns;
        for (const auto& c : cols) {
            if (!dc.empty() && std::find(dc.begin(), dc.end(), c) == dc.end()) {
                return std::nullopt;
            }
        }
    }

    // Per target input, the filter's columns renamed to that input's names.
    std::map<std::size_t, std::vector<std::string>> targets;
    for (const auto& c : cols) {
        const auto origins = column_origins(*parent, c, schemas, dag);
        if (origins.empty()) {
            return std::nullopt;
        }
        for (const auto& o : origins) {
            targets[o.input].push_back(o.name);
        }
    }
    for (const auto& [k, names] : targets) {
        if (names.size() != cols.size()) {
            return std::nullopt;
        }
    }
    const bool set_op = is_rel(*parent, OpKind::SetOp);
    if (!set_op && targets.size() != 1) {
        return std::nullopt;
    }

    PlanDag next = dag;
    const std::string pid = parent->id;
    redirect(next, fid, pid, {fid, pid});
    bool first = true;
    for (const auto& [k, names] : targets) {
        FilterParams renamed = fp;
        renamed.column = names[0];
        if (renamed.rhs_column) {
            renamed.rhs_column = names[1];
        }
        PlanStep& p = step_ref(next, pid);
        const std::string below = p.parents.at(k);
        if (first) {
            PlanStep& nf = step_ref(next, fid);
            nf.params = renamed;
            nf.parents = {below};
            step_ref(next, pid).parents[k] = fid;
            first = false;
        } else {
            PlanStep copy = dag.at(fid);
            copy.id = next.fresh_id(fid);
            copy.params = renamed;
            copy.parents = {below};
            p.parents[k] = copy.id;
            next.mutable_steps().push_back(std::move(copy));
        }
    }
    sort_topologically(next);
    refresh_instructions(next, dag);
    return next;
}

// ---------------------------------------------------------------------------
// Projection pruning

std::vector<std::string> semantic_refs(const SemanticParams& sp, const Schema& in)
{
    std::vector<std::string> out = mentioned_columns(sp.condition, in);
    for (const auto* list : {&sp.input_columns, &sp.group_by}) {
        for (const auto& c : *list) {
            if (auto j = resolve_column(in, c)) {
                out.push_back(in[*j].name);
            }
        }
    }
    if (!sp.target.empty() && sp.target != "*") {
        if (auto j = resolve_column(in, sp.target)) {
            out.push_back(in[*j].name);
        }
    }
    return out;
}

}  // namespace

bool restore_column_order(PlanDag& dag, const std::string& id, const std::vector<std::string>& names, const Database& db)
{
    const auto current = names_of(infer_schemas(dag, db).at(id));
    if (current == names) {
        return true;
    }
    auto a = current;
    auto b = names;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) {
        return false;
    }
    PlanStep& s = step_ref(dag, id);
    const std::string moved = dag.fresh_id(id);
    s.id = moved;
    PlanStep proj;
    proj.id = id;
    proj.op = OperatorTag{OpClass::Relational, OpKind::Project};
    ProjectParams pp;
    for (const auto& n : names) {
        pp.items.push_back(ProjectItem::column(n));
    }
    proj.params = pp;
    proj.parents = {moved};
    proj.instruction = describe_step(proj);
    auto& steps = dag.mutable_steps();
    auto pos = std::find_if(steps.begin(), steps.end(), [&](const PlanStep& x) { return x.id == moved; });
    steps.insert(pos + 1, std::move(proj));
    return true;
}

PlanDag push_selections(const PlanDag& dag, const Database& db, const CostModelParams& p, RewriteTrace* trace, bool guarded)
{
    if (!all_compiled(dag)) {
        if (trace != nullptr) {
            trace->notes.push_back("PushSelections skipped: plan has uncompiled steps");
        }
        return dag;
    }
    const Judge judge{db, p, guarded};
    PlanDag cur = dag;
    std::set<std::pair<std::string, std::string>> blocked;
    const std::size_t limit = 4 * (dag.size() + 1) * (dag.size() + 1);
    for (std::size_t round = 0; round < limit; ++round) {
        const Schemas schemas = infer_schemas(cur, db);
        bool moved = false;
        for (const auto& s : cur.steps()) {
            if (!is_rel(s, OpKind::Filter) || s.parents.size() != 1) {
                continue;
            }
            const std::pair<std::string, std::string> key{s.id, s.parents[0]};
            if (blocked.count(key) != 0) {
                continue;
            }
            std::optional<PlanDag> next;
            try {
                next = push_one(cur, schemas, s.id);
            } catch (const Error&) {
                next.reset();
            }
            if (!next) {
                blocked.insert(key);
                continue;
            }
            Rational before;
            Rational after;
            // The parent takes the filter's place; its schema must equal the
            // filter's old one or downstream names would shift.
            bool same_shape = false;
            try {
                const auto ns = infer_schemas(*next, db);
                same_shape = names_of(ns.at(key.second)) == names_of(schemas.at(s.id));
            } catch (const Error&) {
                same_shape = false;
            }
            if (!same_shape || !judge.accept(cur, *next, before, after)) {
                blocked.insert(key);
                continue;
            }
            if (trace != nullptr) {
                trace->applied.push_back({"PushSelections", {key.first, key.second}, before, after, "below " + key.second});
            }
            cur = std::move(*next);
            moved = true;
            break;
        }
        if (!moved) {
            break;
        }
    }
    return cur;
}

PlanDag prune_projections(const PlanDag& dag, const Database& db, const CostModelParams& p, RewriteTrace* trace,
                          bool guarded)
{
    if (!all_compiled(dag)) {
        if (trace != nullptr) {
            trace->notes.push_back("PruneProjections skipped: plan has uncompiled steps");
        }
        return dag;
    }
    const Schemas schemas = infer_schemas(dag, db);
    const auto order = topo_order(dag);
    const std::string sink = dag.sink();
    std::map<std::string, std::set<std::string>> need;
    for (const auto& c : schemas.at(sink)) {
        need[sink].insert(c.name);
    }
    PlanDag next = dag;
    std::vector<std::string> changed;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const PlanStep& s = dag.at(*it);
        const auto& n = need[s.id];
        const auto ins = dag.input_ids(s);
        std::vector<std::set<std::string>> req(ins.size());
        auto in = [&](std::size_t k) -> const Schema& { return schemas.at(ins.at(k)); };
        auto add = [&](std::size_t k, std::string_view c) {
            if (auto j = resolve_column(in(k), c)) {
                req[k].insert(in(k)[*j].name);
            }
        };
        auto add_all = [&](std::size_t k) {
            for (const auto& c : in(k)) {
                req[k].insert(c.name);
            }
        };
        auto add_needed = [&](std::size_t k) {
            for (const auto& c : n) {
                add(k, c);
            }
        };
        auto add_join_needed = [&](const JoinParams* jp) {
            const auto layout = join_layout(in(0), in(1), s.parents[1], jp);
            for (const auto& c : n) {
                const auto j = resolve_column(layout.columns, c);
                if (!j) {
                    continue;
                }
                if (*j < in(0).size()) {
                    req[0].insert(in(0)[*j].name);
                } else {
                    req[1].insert(in(1)[layout.right_kept[*j - in(0).size()]].name);
                }
            }
            if (layout.left_key) {
                req[0].insert(in(0)[*layout.left_key].name);
                req[1].insert(in(1)[*layout.right_key].name);
            }
        };

        if (s.op.semantic()) {
            const auto& sp = std::get<SemanticParams>(*s.params);
            // Without declared input columns the backend sees whole rows, so
            // every column stays.
            const bool whole_rows = sp.input_columns.empty();
            switch (s.op.kind) {
            case OpKind::Filter:
            case OpKind::Map:
                if (whole_rows) {
                    add_all(0);
                    break;
                }
                add_needed(0);
                for (const auto& c : semantic_refs(sp, in(0))) {
                    req[0].insert(c);
                }
                break;
            case OpKind::Aggregate:
                if (whole_rows) {
                    add_all(0);
                    break;
                }
                for (const auto& c : semantic_refs(sp, in(0))) {
                    req[0].insert(c);
                }
                break;
            case OpKind::Join:
                if (whole_rows) {
                    add_all(0);
                    add_all(1);
                    break;
                }
                add_join_needed(nullptr);
                for (std::size_t k = 0; k < 2; ++k) {
                    for (const auto& c : semantic_refs(sp, in(k))) {
                        req[k].insert(c);
                    }
                }
                break;
            default:
                break;
            }
        } else {
            switch (s.op.kind) {
            case OpKind::Scan: {
                auto& sp = std::get<ScanParams>(*step_ref(next, s.id).params);
                const Relation& base = db.at(sp.table);
                std::vector<std::string> keep;
                for (const auto& c : base.columns()) {
                    const bool available = sp.columns.empty() ||
                                           std::find(sp.columns.begin(), sp.columns.end(), c.name) != sp.columns.end();
                    if (available && n.count(c.name) != 0) {
                        keep.push_back(c.name);
                    }
                }
                if (keep.empty()) {
                    keep.push_back(schemas.at(s.id).front().name);
                }
                if (keep.size() < schemas.at(s.id).size()) {
                    sp.columns = keep;
                    changed.push_back(s.id);
                }
                break;
            }
            case OpKind::Filter: {
                const auto& fp = std::get<FilterParams>(*s.params);
                add_needed(0);
                add(0, fp.column);
                if (fp.rhs_column) {
                    add(0, *fp.rhs_column);
                }
                break;
            }
            case OpKind::Project: {
                const auto& items = std::get<ProjectParams>(*s.params).items;
                std::vector<ProjectItem> kept;
                for (const auto& item : items) {
                    if (n.count(item.name) != 0) {
                        kept.push_back(item);
                    }
                }
                if (kept.empty()) {
                    kept.push_back(items.front());
                }
                if (kept.size() < items.size()) {
                    step_ref(next, s.id).params = ProjectParams{kept};
                    changed.push_back(s.id);
                }
                for (const auto& item : kept) {
                    if (item.lhs.column) {
                        add(0, *item.lhs.column);
                    }
                    if (item.op && item.rhs.column) {
                        add(0, *item.rhs.column);
                    }
                }
                break;
            }
            case OpKind::Aggregate: {
                const auto& ap = std::get<AggregateParams>(*s.params);
                for (const auto& g : ap.group_by) {
                    add(0, g);
                }
                if (ap.target != "*") {
                    add(0, ap.target);
                }
                break;
            }
            case OpKind::Join:
                add_join_needed(&std::get<JoinParams>(*s.params));
                break;
            case OpKind::Sort:
                add_needed(0);
                add(0, std::get<SortParams>(*s.params).column);
                break;
            case OpKind::Limit:
                add_needed(0);
                break;
            case OpKind::Distinct: {
                const auto& dc = std::get<DistinctParams>(*s.params).columns;
                if (dc.empty()) {
                    add_all(0);
                } else {
                    add_needed(0);
                    for (const auto& c : dc) {
                        add(0, c);
                    }
                }
                break;
            }
            case OpKind::SetOp:
                add_all(0);
                add_all(1);
                break;
            default:
                break;
            }
        }
        for (std::size_t k = 0; k < ins.size(); ++k) {
            need[ins[k]].insert(req[k].begin(), req[k].end());
        }
    }

    if (changed.empty()) {
        return dag;
    }
    refresh_instructions(next, dag);
    const Judge judge{db, p, guarded};
    Rational before;
    Rational after;
    if (!judge.accept(dag, next, before, after)) {
        if (trace != nullptr) {
            trace->notes.push_back("PruneProjections rejected");
        }
        return dag;
    }
    if (trace != nullptr) {
        trace->applied.push_back({"PruneProjections", changed, before, after, ""});
    }
    return next;
}

namespace {

// ---------------------------------------------------------------------------
// Join reordering

bool chain_join(const PlanStep& s)
{
    return is_rel(s, OpKind::Join) && s.params && std::get<JoinParams>(*s.params).op == CmpOp::Eq;
}

struct Chain {
    std::vector<std::string> joins;  // internal nodes, root last
    std::vector<std::string> leaves; // left to right
};

void collect_chain(const PlanDag& dag, const std::string& id, Chain& chain)
{
    const PlanStep& s = dag.at(id);
    for (const auto& in : s.parents) {
        const PlanStep& child = dag.at(in);
        if (chain_join(child) && dag.consumers(in) == std::vector<std::string>{id}) {
            collect_chain(dag, in, chain);
        } else {
            chain.leaves.push_back(in);
        }
    }
    chain.joins.push_back(id);
}

/// (leaf, leaf-local column name) behind every output position of a node.
using Provenance = std::vector<std::pair<std::string, std::string>>;

Provenance provenance(const PlanDag& dag, const Schemas& schemas, const std::set<std::string>& internal,
                      const std::string& id)
{
    if (internal.count(id) == 0) {
        Provenance out;
        for (const auto& c : schemas.at(id)) {
            out.emplace_back(id, c.name);
        }
        return out;
    }
    const PlanStep& s = dag.at(id);
    const auto left = provenance(dag, schemas, internal, s.parents[0]);
    const auto right = provenance(dag, schemas, internal, s.parents[1]);
    const auto layout =
        join_layout(schemas.at(s.parents[0]), schemas.at(s.parents[1]), s.parents[1], &std::get<JoinParams>(*s.params));
    Provenance out = left;
    for (auto k : layout.right_kept) {
        out.push_back(right.at(k));
    }
    return out;
}

struct ChainModel {
    std::vector<JoinInput> inputs;
    std::vector<JoinEdge> edges;
};

std::optional<ChainModel> model_chain(const PlanDag& dag, const Schemas& schemas, const PlanEstimates& stats,
                                      const Chain& chain)
{
    std::set<std::string> internal(chain.joins.begin(), chain.joins.end());
    std::map<std::string, std::size_t> index;
    ChainModel m;
    for (const auto& leaf : chain.leaves) {
        if (!index.emplace(leaf, m.inputs.size()).second) {
            return std::nullopt;
        }
        const auto& e = stats.at(leaf);
        m.inputs.push_back(JoinInput{leaf, e.card.gamma_out, e.out_row_bytes, {}});
    }
    for (const auto& jid : chain.joins) {
        const PlanStep& s = dag.at(jid);
        const auto layout =
            join_layout(schemas.at(s.parents[0]), schemas.at(s.parents[1]), s.parents[1], &std::get<JoinParams>(*s.params));
        const auto lp = provenance(dag, schemas, internal, s.parents[0]);
        const auto rp = provenance(dag, schemas, internal, s.parents[1]);
        const auto& l = lp.at(*layout.left_key);
        const auto& r = rp.at(*layout.right_key);
        JoinEdge edge{index.at(l.first), l.second, index.at(r.first), r.second};
        m.edges.push_back(edge);
        for (const auto& [leaf, col] : {l, r}) {
            auto& in = m.inputs[index.at(leaf)];
            in.key_distinct[col] = stats.at(leaf).distinct.at(col);
        }
    }
    return m;
}

/// Cost of the chain as currently shaped, which may be bushy.
Rational current_chain_cost(const PlanDag& dag, const ChainModel& m, const std::set<std::string>& internal,
                            const std::map<std::string, std::size_t>& index, const CostModelParams& p)
{
    Rational total = 0;
    std::function<std::vector<std::size_t>(const std::string&)> members = [&](const std::string& id) {
        if (internal.count(id) == 0) {
            return std::vector<std::size_t>{index.at(id)};
        }
        const PlanStep& s = dag.at(id);
        auto l = members(s.parents[0]);
        auto r = members(s.parents[1]);
        auto width = [&](const std::vector<std::size_t>& xs) {
            Rational w = 0;
            for (auto x : xs) {
                w += m.inputs[x].width;
            }
            return w;
        };
        total += join_step_cost(join_set_card(m.inputs, m.edges, l), width(l), join_set_card(m.inputs, m.edges, r), width(r), p);
        l.insert(l.end(), r.begin(), r.end());
        return l;
    };
    for (const auto& id : internal) {
        const auto consumers = dag.consumers(id);
        const bool root = std::none_of(consumers.begin(), consumers.end(), [&](const std::string& c) { return internal.count(c) != 0; });
        if (root) {
            members(id);
        }
    }
    return total;
}

/// Rewrites one chain into the given left-deep order. Returns nothing when
/// the original column layout cannot be restored.
std::optional<PlanDag> rebuild_chain(const PlanDag& dag, const Database& db, const Schemas& schemas, const Chain& chain,
                                     const ChainModel& m, const std::vector<std::size_t>& order)
{
    const std::set<std::string> internal(chain.joins.begin(), chain.joins.end());
    const std::string root = chain.joins.back();
    const auto original = provenance(dag, schemas, internal, root);
    const auto original_names = names_of(schemas.at(root));

    // Reuse the join ids in plan order with the root on top.
    std::vector<std::string> ids;
    for (const auto& s : dag.steps()) {
        if (internal.count(s.id) != 0 && s.id != root) {
            ids.push_back(s.id);
        }
    }
    ids.push_back(root);

    PlanDag next = dag;
    auto& steps = next.mutable_steps();
    steps.erase(std::remove_if(steps.begin(), steps.end(), [&](const PlanStep& s) { return internal.count(s.id) != 0; }),
                steps.end());

    Schema composite = schemas.at(m.inputs[order[0]].name);
    Provenance prov;
    for (const auto& c : composite) {
        prov.emplace_back(m.inputs[order[0]].name, c.name);
    }
    std::set<std::size_t> in_set{order[0]};
    std::string prev = m.inputs[order[0]].name;
    for (std::size_t k = 1; k < order.size(); ++k) {
        const std::size_t r = order[k];
        const JoinEdge* edge = nullptr;
        bool r_on_left = false;
        for (const auto& e : m.edges) {
            if (e.right == r && in_set.count(e.left) != 0) {
                edge = &e;
                break;
            }
            if (e.left == r && in_set.count(e.right) != 0) {
                edge = &e;
                r_on_left = true;
                break;
            }
        }
        if (edge == nullptr) {
            return std::nullopt;
        }
        const std::size_t other = r_on_left ? edge->right : edge->left;
        const std::string& other_col = r_on_left ? edge->right_column : edge->left_column;
        const std::string& r_col = r_on_left ? edge->left_column : edge->right_column;
        const auto pos = std::find(prov.begin(), prov.end(), std::make_pair(m.inputs[other].name, other_col));
        if (pos == prov.end()) {
            return std::nullopt;
        }
        JoinParams jp{composite[static_cast<std::size_t>(pos - prov.begin())].name, CmpOp::Eq, r_col};
        const std::string& leaf = m.inputs[r].name;
        const Schema& right = schemas.at(leaf);
        const auto layout = join_layout(composite, right, leaf, &jp);
        if (*layout.left_key != static_cast<std::size_t>(pos - prov.begin()) ||
            right[*layout.right_key].name != r_col) {
            return std::nullopt;
        }
        for (auto kept : layout.right_kept) {
            prov.emplace_back(leaf, right[kept].name);
        }
        composite = layout.columns;

        PlanStep j;
        j.id = ids[k - 1];
        j.op = OperatorTag{OpClass::Relational, OpKind::Join};
        j.params = jp;
        j.parents = {prev, leaf};
        j.instruction = describe_step(j);
        steps.push_back(std::move(j));
        prev = ids[k - 1];
        in_set.insert(r);
    }

    if (names_of(composite) != original_names) {
        // Same columns in another order: restore it with a PROJECT that takes
        // over the root id.
        ProjectParams pp;
        for (std::size_t i = 0; i < original.size(); ++i) {
            const auto pos = std::find(prov.begin(), prov.end(), original[i]);
            if (pos == prov.end()) {
                return std::nullopt;
            }
            ProjectItem item;
            item.name = original_names[i];
            item.lhs.column = composite[static_cast<std::size_t>(pos - prov.begin())].name;
            pp.items.push_back(std::move(item));
        }
        PlanStep& top = step_ref(next, root);
        const std::string moved = next.fresh_id(root + "_join");
        top.id = moved;
        PlanStep proj;
        proj.id = root;
        proj.op = OperatorTag{OpClass::Relational, OpKind::Project};
        proj.params = pp;
        proj.parents = {moved};
        proj.instruction = describe_step(proj);
        steps.push_back(std::move(proj));
    }
    sort_topologically(next);
    refresh_instructions(next, dag);
    infer_schemas(next, db);
    return next;
}

}  // namespace

PlanDag reorder_joins(const PlanDag& dag, const Database& db, const CostModelParams& p, RewriteTrace* trace, bool guarded,
                      const OptimizerOptions& opts)
{
    if (!all_compiled(dag)) {
        if (trace != nullptr) {
            trace->notes.push_back("ReorderJoins skipped: plan has uncompiled steps");
        }
        return dag;
    }
    const Judge judge{db, p, guarded};
    PlanDag cur = dag;
    std::set<std::string> done;
    for (;;) {
        const Schemas schemas = infer_schemas(cur, db);
        const PlanEstimates stats = estimate_plan(cur, db, p);
        std::optional<std::string> root;
        for (const auto& s : cur.steps()) {
            if (!chain_join(s) || done.count(s.id) != 0) {
                continue;
            }
            const auto consumers = cur.consumers(s.id);
            const bool absorbed = consumers.size() == 1 && chain_join(cur.at(consumers[0]));
            if (!absorbed) {
                root = s.id;
                break;
            }
        }
        if (!root) {
            break;
        }
        done.insert(*root);
        Chain chain;
        collect_chain(cur, *root, chain);
        if (chain.leaves.size() < 3) {
            continue;
        }
        std::optional<ChainModel> m;
        try {
            m = model_chain(cur, schemas, stats, chain);
        } catch (const std::exception&) {
            m.reset();
        }
        if (!m) {
            if (trace != nullptr) {
                trace->notes.push_back("ReorderJoins left " + *root + " unchanged: join inputs are not distinct steps");
            }
            continue;
        }
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < m->inputs.size(); ++i) {
            index[m->inputs[i].name] = i;
        }
        const std::set<std::string> internal(chain.joins.begin(), chain.joins.end());
        const Rational current = current_chain_cost(cur, *m, internal, index, p);
        const bool exhaustive = m->inputs.size() <= p.tau;
        JoinTree best;
        try {
            best = exhaustive ? dp_join_order(m->inputs, m->edges, p, opts.allow_cross_products)
                              : greedy_join_order(m->inputs, m->edges, p, opts.allow_cross_products);
        } catch (const PlanningError& e) {
            if (trace != nullptr) {
                trace->notes.push_back("ReorderJoins left " + *root + " unchanged: " + e.what());
            }
            continue;
        }
        if (best.cost >= current) {
            continue;
        }
        std::optional<PlanDag> next;
        try {
            next = rebuild_chain(cur, db, schemas, chain, *m, best.order);
        } catch (const std::exception&) {
            next.reset();
        }
        Rational before;
        Rational after;
        if (!next || !judge.accept(cur, *next, before, after)) {
            if (trace != nullptr) {
                trace->notes.push_back("ReorderJoins left " + *root + " unchanged: rewrite rejected");
            }
            continue;
        }
        if (trace != nullptr) {
            trace->applied.push_back({"ReorderJoins", chain.joins, before, after, exhaustive ? "DP" : "Greedy"});
        }
        cur = std::move(*next);
    }
    return cur;
}

namespace {

// ---------------------------------------------------------------------------
// Semantic placement

bool expander(const PlanStep& s)
{
    return s.op.kind == OpKind::Join || (is_rel(s, OpKind::SetOp) && std::get<SetOpParams>(*s.params).kind == SetOpKind::Union);
}

bool two_input(const PlanStep& s) { return s.op.kind == OpKind::Join || is_rel(s, OpKind::SetOp); }

/// Input side of every referenced column of a step placed above a join, or
/// nothing when they span both sides or get renamed by the join.
std::optional<std::size_t> single_side(const PlanStep& join, const Schemas& schemas, const std::vector<std::string>& refs)
{
    const auto& l = schemas.at(join.parents[0]);
    const auto& r = schemas.at(join.parents[1]);
    const JoinParams* jp = join.op.semantic() ? nullptr : &std::get<JoinParams>(*join.params);
    const auto layout = join_layout(l, r, join.parents[1], jp);
    std::optional<std::size_t> side;
    for (const auto& c : refs) {
        const auto j = resolve_column(layout.columns, c);
        if (!j) {
            return std::nullopt;
        }
        std::size_t k = 0;
        std::string local;
        if (*j < l.size()) {
            local = l[*j].name;
        } else {
            k = 1;
            local = r[layout.right_kept[*j - l.size()]].name;
        }
        if (local != layout.columns[*j].name || (side && *side != k)) {
            return std::nullopt;
        }
        side = k;
    }
    return side;
}

bool uses_column(const PlanStep& join, const std::string& col)
{
    if (join.op.semantic()) {
        const auto& sp = std::get<SemanticParams>(*join.params);
        Schema only(1);
        only[0].name = col;
        return !mentioned_columns(sp.condition, only).empty() ||
               std::find(sp.input_columns.begin(), sp.input_columns.end(), col) != sp.input_columns.end();
    }
    if (!is_rel(join, OpKind::Join)) {
        return false;
    }
    const auto& jp = std::get<JoinParams>(*join.params);
    return jp.left_column == col || jp.right_column == col;
}

}  // namespace

PlanDag place_semantic(const PlanDag& dag, const Database& db, const PlanEstimates& stats, const CostModelParams& p,
                       RewriteTrace* trace, bool guarded)
{
    if (!all_compiled(dag)) {
        if (trace != nullptr) {
            trace->notes.push_back("Placement skipped: plan has uncompiled steps");
        }
        return dag;
    }
    const Judge judge{db, p, guarded};
    PlanDag cur = dag;
    auto record = [&](PlacementDecision d) {
        if (trace != nullptr) {
            trace->decisions.push_back(std::move(d));
        }
    };
    auto gamma_out = [&](const std::string& id) { return stats.at(id).card.gamma_out; };
    auto gamma_in = [&](const std::string& id) { return stats.at(id).card.gamma_in; };
    // Applies a candidate and fills in the decision's moved flag and note.
    auto commit = [&](std::optional<PlanDag> next, PlacementDecision& d, const std::string& rule) {
        Rational before;
        Rational after;
        if (!next) {
            return;
        }
        if (!judge.accept(cur, *next, before, after)) {
            d.note = "move rejected: no cost reduction";
            return;
        }
        if (trace != nullptr) {
            trace->applied.push_back({rule, {d.step, d.expander}, before, after, "delta_gamma " + to_string(d.delta_gamma)});
        }
        cur = std::move(*next);
        d.moved = true;
    };

    for (const auto& sid : topo_order(dag)) {
        const PlanStep* sp = cur.find(sid);
        if (sp == nullptr || !sp->op.semantic()) {
            continue;
        }
        const PlanStep s = *sp;
        const Schemas schemas = infer_schemas(cur, db);
        const auto consumers = cur.consumers(sid);
        const PlanStep* below = s.parents.size() == 1 ? cur.find(s.parents[0]) : nullptr;

        const PlanStep* above_x = consumers.size() == 1 ? cur.find(consumers[0]) : nullptr;
        const bool case_a = above_x != nullptr && two_input(*above_x);
        const bool case_b = !case_a && below != nullptr && two_input(*below);
        if (!case_a && !case_b) {
            if (consumers.size() > 1 || (below != nullptr && two_input(*below))) {
                const PlanStep* x = below != nullptr && two_input(*below) ? below : nullptr;
                if (x != nullptr) {
                    record({sid, x->id, 0, Placement::Defer, false, "input shared with other operators"});
                }
            }
            continue;
        }
        const PlanStep& x = case_a ? *above_x : *below;
        PlacementDecision d{sid, x.id, 0, Placement::Defer, false, ""};

        if (is_sem(s, OpKind::Aggregate) || is_sem(s, OpKind::Join)) {
            d.decision = Placement::Pinned;
            d.note = "operator shape is fixed";
            record(d);
            continue;
        }
        if (!expander(x)) {
            d.note = "intersection and difference do not expand";
            record(d);
            continue;
        }
        const auto& sparams = std::get<SemanticParams>(*s.params);
        const bool is_map = s.op.kind == OpKind::Map;

        if (case_a) {
            const std::size_t k = x.parents[0] == sid ? 0 : 1;
            if (x.parents[0] == x.parents[1]) {
                d.decision = Placement::Pinned;
                d.note = "feeds both inputs";
                record(d);
                continue;
            }
            if (is_rel(x, OpKind::SetOp)) {
                const std::string other_id = x.parents[1 - k];
                const PlanStep* other = cur.find(other_id);
                const bool twin = other != nullptr && other->op == s.op && other->params == s.params &&
                                  cur.consumers(other_id) == std::vector<std::string>{x.id} &&
                                  names_of(schemas.at(s.parents[0])) == names_of(schemas.at(other->parents[0]));
                if (!twin) {
                    d.decision = Placement::Pinned;
                    d.note = "only one union branch carries the step";
                    record(d);
                    continue;
                }
                d.delta_gamma = gamma_out(x.id) / std::max(Rational(1), gamma_in(sid) + gamma_in(other_id));
                d.decision = decide_placement(gamma_in(sid) + gamma_in(other_id), gamma_out(x.id), p.epsilon);
                if (d.decision == Placement::Defer && k == 0) {
                    PlanDag next = cur;
                    const std::string xid = x.id;
                    redirect(next, xid, sid, {sid});
                    step_ref(next, xid).parents = {s.parents[0], other->parents[0]};
                    step_ref(next, sid).parents = {xid};
                    auto& steps = next.mutable_steps();
                    steps.erase(std::remove_if(steps.begin(), steps.end(), [&](const PlanStep& z) { return z.id == other_id; }),
                                steps.end());
                    sort_topologically(next);
                    refresh_instructions(next, cur);
                    commit(std::move(next), d, "Defer");
                }
                record(d);
                continue;
            }
            d.delta_gamma = gamma_in(sid) == 0 ? Rational(0) : gamma_out(x.id) / gamma_in(sid);
            d.decision = decide_placement(gamma_in(sid), gamma_out(x.id), p.epsilon);
            if (d.decision == Placement::Elevate) {
                d.note = "already below the expansion";
                record(d);
                continue;
            }
            // Defer: move above the join when the step keeps its column names.
            if (is_map && uses_column(x, sparams.new_column)) {
                d.decision = Placement::Pinned;
                d.note = "derived column is a join key";
                record(d);
                continue;
            }
            std::optional<PlanDag> next;
            try {
                PlanDag cand = cur;
                const std::string xid = x.id;
                const std::string input = s.parents[0];
                redirect(cand, xid, sid, {sid});
                step_ref(cand, xid).parents[k] = input;
                step_ref(cand, sid).parents = {xid};
                sort_topologically(cand);
                const Schemas cs = infer_schemas(cand, db);
                const auto refs = semantic_refs(sparams, schemas.at(input));
                const auto side = single_side(cand.at(xid), cs, refs);
                if ((!refs.empty() && (!side || *side != k)) || (refs.empty() && !sparams.input_columns.empty())) {
                    d.decision = Placement::Pinned;
                    d.note = "referenced columns are renamed by the join";
                } else if (!restore_column_order(cand, sid, names_of(schemas.at(xid)), db)) {
                    d.decision = Placement::Pinned;
                    d.note = "column layout changes";
                } else {
                    refresh_instructions(cand, cur);
                    next = std::move(cand);
                }
            } catch (const Error& e) {
                d.decision = Placement::Pinned;
                d.note = e.what();
            }
            commit(std::move(next), d, "Defer");
            record(d);
            continue;
        }

        // Case B: the step sits on top of the expander's output.
        if (cur.consumers(x.id) != std::vector<std::string>{sid}) {
            d.note = "expander output shared with other operators";
            record(d);
            continue;
        }
        if (is_rel(x, OpKind::SetOp)) {
            d.delta_gamma = gamma_in(x.id) == 0 ? Rational(0) : gamma_out(x.id) / gamma_in(x.id);
            d.decision = decide_placement(gamma_in(x.id), gamma_out(x.id), p.epsilon);
            d.note = "kept above the union";
            record(d);
            continue;
        }
        const auto refs = semantic_refs(sparams, schemas.at(x.id));
        const auto side = refs.empty() ? std::nullopt : single_side(x, schemas, refs);
        if (!side) {
            d.decision = Placement::Pinned;
            d.note = refs.empty() ? "condition names no input column" : "condition spans both join inputs";
            record(d);
            continue;
        }
        const std::string branch = x.parents[*side];
        d.delta_gamma = gamma_out(branch) == 0 ? Rational(0) : gamma_out(x.id) / gamma_out(branch);
        d.decision = decide_placement(gamma_out(branch), gamma_out(x.id), p.epsilon);
        if (d.decision == Placement::Defer) {
            d.note = "already above the expansion";
            record(d);
            continue;
        }
        std::optional<PlanDag> next;
        try {
            PlanDag cand = cur;
            const std::string xid = x.id;
            redirect(cand, sid, xid, {xid});
            step_ref(cand, sid).parents = {branch};
            step_ref(cand, xid).parents[*side] = sid;
            sort_topologically(cand);
            if (!restore_column_order(cand, xid, names_of(schemas.at(sid)), db)) {
                d.decision = Placement::Pinned;
                d.note = "column layout changes";
            } else {
                refresh_instructions(cand, cur);
                next = std::move(cand);
            }
        } catch (const Error& e) {
            d.decision = Placement::Pinned;
            d.note = e.what();
        }
        commit(std::move(next), d, "Elevate");
        record(d);
    }
    return cur;
}

OptimizeResult optimize(const PlanDag& dag, const Database& db, const CostModelParams& p, const OptimizerOptions& opts)
{
    p.check();
    const auto v = validate(dag);
    if (!v.ok()) {
        throw PlanningError("cannot optimize an invalid plan: " + v.summary());
    }
    OptimizeResult r;
    r.plan = dag;
    if (!all_compiled(dag)) {
        r.trace.notes.push_back("plan has uncompiled steps; left unchanged");
        return r;
    }
    const auto before = price(dag, db, p);
    if (!before) {
        r.trace.notes.push_back("plan could not be estimated; left unchanged");
        return r;
    }
    r.cost_before = *before;
    r.cost_after = *before;
    try {
        RewriteTrace trace;
        PlanDag cur = push_selections(dag, db, p, &trace, true);
        cur = prune_projections(cur, db, p, &trace, true);
        cur = reorder_joins(cur, db, p, &trace, true, opts);
        cur = place_semantic(cur, db, estimate_plan(cur, db, p), p, &trace, true);
        const auto after = price(cur, db, p);
        if (!after || *after > *before || sink_names(cur, db) != sink_names(dag, db)) {
            throw PlanningError("rewritten plan failed its final check");
        }
        r.plan = std::move(cur);
        r.trace = std::move(trace);
        r.cost_after = *after;
    } catch (const std::exception& e) {
        r.plan = dag;
        r.trace = {};
        r.trace.notes.push_back(std::string("optimizer fell back to the input plan: ") + e.what());
        r.cost_after = r.cost_before;
    }
    return r;
}

}  // namespace hyqe
