#include "hyqe/planner.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <set>

#include "hyqe/error.hpp"
#include "hyqe/ingest.hpp"
#include "hyqe/instruction.hpp"
#include "hyqe/prompts.hpp"

namespace hyqe {

std::string_view to_string(DiversityDimension d)
{
    switch (d) {
    case DiversityDimension::SchemaMapping:
        return "schema_mapping";
    case DiversityDimension::RiskProfile:
        return "risk_profile";
    case DiversityDimension::OperatorSubstitution:
        return "operator_substitution";
    case DiversityDimension::SemanticIntent:
        return "semantic_intent";
    }
    return "";
}

DiversificationStrategy DiversificationStrategy::none(std::size_t k)
{
    DiversificationStrategy s;
    s.dimensions.clear();
    s.k = k;
    s.naive = true;
    return s;
}

void DiversificationStrategy::check() const
{
    if (k == 0) {
        throw ContractViolation("plan count k must be at least 1");
    }
    if (k > 1 && dimensions.empty() && !naive) {
        throw ContractViolation("several plans need at least one diversity dimension");
    }
}

std::string DiversificationStrategy::text() const
{
    if (naive) {
        return "";
    }
    std::string out;
    for (auto d : dimensions) {
        switch (d) {
        case DiversityDimension::SchemaMapping:
            out += "- Schema mapping: where a question term could match more than one table or column, ground it "
                   "differently across plans.\n";
            break;
        case DiversityDimension::RiskProfile:
            out += "- Risk profile: include plans built only from relational operators next to plans that use "
                   "semantic operators for fuzzy or free-text content.\n";
            break;
        case DiversityDimension::OperatorSubstitution:
            out += "- Operator substitution: where a relational and a semantic operator can both express a step, "
                   "use different ones in different plans.\n";
            break;
        case DiversityDimension::SemanticIntent:
            out += "- Semantic intent: when the question can be read more than one way, let plans follow different "
                   "readings.\n";
            break;
        }
    }
    if (!out.empty()) {
        out.pop_back();
    }
    return out;
}

namespace {

template <class T>
T planner_call(const PlannerEnv& env, const std::string& op, const std::string& subject, std::size_t chunk,
               const std::function<BackendReply()>& call, const std::function<T(const nlohmann::json&)>& check)
{
    std::string last;
    for (std::size_t attempt = 0; attempt <= env.options.retries; ++attempt) {
        BackendReply reply;
        try {
            reply = call();
        } catch (const BackendError& e) {
            last = e.what();
            continue;
        }
        if (env.accounting != nullptr) {
            CallRecord r;
            r.step = subject;
            r.op = op;
            r.chunk = chunk;
            r.attempt = attempt;
            r.usage = reply.usage;
            env.accounting->record(std::move(r));
        }
        try {
            return check(reply.body);
        } catch (const ContractViolation& e) {
            last = e.what();
        } catch (const nlohmann::json::exception& e) {
            last = e.what();
        }
    }
    throw PlanningError(op + " call for " + subject + " failed after " + std::to_string(env.options.retries + 1) +
                        " attempts: " + last);
}

SemanticBackend& backend_of(const PlannerEnv& env)
{
    if (env.backend == nullptr) {
        throw ContractViolation("planning needs a backend");
    }
    return *env.backend;
}

void note(std::vector<std::string>* diagnostics, std::string text)
{
    if (diagnostics != nullptr) {
        diagnostics->push_back(std::move(text));
    }
}

std::string clip(std::string s, std::size_t n)
{
    for (char& c : s) {
        if (c == '\n' || c == '\r' || c == '|') {
            c = ' ';
        }
    }
    if (s.size() > n) {
        s.resize(n);
        s += "...";
    }
    return s;
}

std::vector<std::string> column_samples(const Relation& r, std::size_t col, std::size_t n)
{
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& row : r.rows()) {
        if (out.size() == n) {
            break;
        }
        if (is_null(row[col])) {
            continue;
        }
        std::string s = clip(render(row[col]), 40);
        if (seen.insert(s).second) {
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::string join_strings(const std::vector<std::string>& items, const std::string& sep)
{
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += (i == 0 ? "" : sep) + items[i];
    }
    return out;
}

}  // namespace

std::vector<std::string> key_columns(const Relation& r, const Database& db)
{
    std::set<std::string> keys(r.primary_key().begin(), r.primary_key().end());
    for (const auto& fk : r.foreign_keys()) {
        keys.insert(fk.column);
    }
    for (const auto& [name, other] : db.relations()) {
        for (const auto& fk : other.foreign_keys()) {
            if (fk.ref_relation == r.name()) {
                keys.insert(fk.ref_column);
            }
        }
    }
    std::vector<std::string> out;
    for (const auto& c : r.columns()) {
        if (keys.count(c.name) != 0) {
            out.push_back(c.name);
        }
    }
    return out;
}

std::map<std::string, std::vector<std::string>> semantic_prune_schema(const Database& db, const std::string& question,
                                                                      const PlannerEnv& env,
                                                                      std::vector<std::string>* diagnostics)
{
    auto& backend = backend_of(env);
    std::vector<const Relation*> rels;
    for (const auto& [name, r] : db.relations()) {
        rels.push_back(&r);
    }
    std::vector<std::vector<std::string>> kept(rels.size());
    std::vector<std::vector<std::string>> notes(rels.size());

    parallel_for(rels.size(), env.options.parallelism, [&](std::size_t i) {
        const Relation& r = *rels[i];
        nlohmann::json columns = nlohmann::json::array();
        std::vector<std::string> parts;
        for (std::size_t c = 0; c < r.arity(); ++c) {
            const auto samples = column_samples(r, c, 3);
            const std::string kind(to_string(r.columns()[c].kind));
            columns.push_back({{"name", r.columns()[c].name}, {"kind", kind}, {"samples", samples}});
            parts.push_back(r.columns()[c].name + " (" + kind + "): [" + join_strings(samples, ", ") + "]");
        }
        const std::string prompt = render_prompt(
            PromptKind::SchemaPruning, {{"table", r.name()}, {"question", question}, {"context_str", join_strings(parts, "; ")}});
        const auto answer = planner_call<std::vector<std::string>>(
            env, "PRUNE", r.name(), 0, [&] { return backend.prune_columns(r.name(), question, columns, prompt); },
            [](const nlohmann::json& body) {
                if (!body.is_array()) {
                    throw ContractViolation("pruning reply must be a list of column names");
                }
                std::vector<std::string> names;
                for (const auto& v : body) {
                    if (!v.is_string()) {
                        throw ContractViolation("pruning reply holds a non-string entry");
                    }
                    names.push_back(v.get<std::string>());
                }
                return names;
            });

        std::set<std::string> want;
        for (const auto& name : answer) {
            if (r.find_column(name)) {
                want.insert(name);
            } else {
                notes[i].push_back("pruning " + r.name() + ": backend named unknown column '" + name + "', ignored");
            }
        }
        if (want.empty()) {
            notes[i].push_back("pruning " + r.name() + ": no column selected, keeping all");
            kept[i] = r.column_names();
            return;
        }
        for (const auto& k : key_columns(r, db)) {
            want.insert(k);
        }
        for (const auto& c : r.columns()) {
            if (want.count(c.name) != 0) {
                kept[i].push_back(c.name);
            }
        }
    });

    std::map<std::string, std::vector<std::string>> out;
    for (std::size_t i = 0; i < rels.size(); ++i) {
        for (auto& n : notes[i]) {
            note(diagnostics, std::move(n));
        }
        out[rels[i]->name()] = std::move(kept[i]);
    }
    return out;
}

Database apply_pruning(const Database& db, const std::map<std::string, std::vector<std::string>>& keep)
{
    Database out;
    for (const auto& [name, r] : db.relations()) {
        auto it = keep.find(name);
        if (it == keep.end()) {
            out.add(r);
            continue;
        }
        std::vector<std::size_t> idx;
        std::vector<Column> cols;
        for (const auto& c : it->second) {
            idx.push_back(r.column_index(c));
            cols.push_back(r.columns()[idx.back()]);
        }
        std::vector<Row> rows;
        rows.reserve(r.size());
        for (const auto& row : r.rows()) {
            Row nr;
            nr.reserve(idx.size());
            for (std::size_t i : idx) {
                nr.push_back(row[i]);
            }
            rows.push_back(std::move(nr));
        }
        Relation pruned(name, std::move(cols), std::move(rows));
        std::vector<std::string> pk;
        for (const auto& k : r.primary_key()) {
            if (pruned.find_column(k)) {
                pk.push_back(k);
            }
        }
        std::vector<ForeignKey> fks;
        for (const auto& fk : r.foreign_keys()) {
            if (pruned.find_column(fk.column)) {
                fks.push_back(fk);
            }
        }
        pruned.set_keys(std::move(pk), std::move(fks));
        out.add(std::move(pruned));
    }
    return out;
}

std::string row_text(const Relation& r, std::size_t row)
{
    std::string out;
    for (std::size_t c = 0; c < r.arity(); ++c) {
        if (c != 0) {
            out += "; ";
        }
        out += r.columns()[c].name + ": " + render(r.rows()[row][c]);
    }
    return out;
}

std::vector<std::size_t> preview_indices(const Relation& r, const std::string& question, std::size_t k1, std::size_t k2,
                                         std::uint64_t seed, SemanticBackend& backend,
                                         std::vector<std::string>* diagnostics)
{
    const std::size_t n = r.size();
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    if (n <= k1 + k2) {
        return all;
    }
    std::mt19937_64 rng(seed ^ std::hash<std::string>{}(r.name()));
    auto sample = [&](std::size_t count) {
        std::vector<std::size_t> picked;
        std::sample(all.begin(), all.end(), std::back_inserter(picked), count, rng);
        return picked;
    };

    std::vector<std::size_t> semantic;
    if (k1 > 0) {
        try {
            const auto q = backend.embed(question);
            std::vector<std::pair<double, std::size_t>> scored;
            scored.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                scored.emplace_back(-cosine_similarity(q, backend.embed(row_text(r, i))), i);
            }
            std::stable_sort(scored.begin(), scored.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
            for (std::size_t i = 0; i < k1; ++i) {
                semantic.push_back(scored[i].second);
            }
        } catch (const Error& e) {
            note(diagnostics, "preview " + r.name() + ": embedding failed (" + e.what() + "), using random rows");
            return sample(std::min(n, 2 * k2));
        }
    }
    std::vector<std::size_t> out = semantic;
    const std::set<std::size_t> taken(semantic.begin(), semantic.end());
    for (std::size_t i : sample(k2)) {
        if (taken.count(i) == 0) {
            out.push_back(i);
        }
    }
    return out;
}

Relation build_preview(const Relation& r, const std::string& question, std::size_t k1, std::size_t k2,
                       std::uint64_t seed, SemanticBackend& backend, std::vector<std::string>* diagnostics)
{
    std::vector<Row> rows;
    for (std::size_t i : preview_indices(r, question, k1, k2, seed, backend, diagnostics)) {
        rows.push_back(r.rows()[i]);
    }
    return Relation(r.name(), r.columns(), std::move(rows));
}

QueryContext prepare_context(const Database& db, const std::string& question, const PlannerEnv& env)
{
    QueryContext ctx;
    ctx.question = question;
    ctx.k1 = env.options.k1;
    ctx.k2 = env.options.k2;
    ctx.pruned_schema = semantic_prune_schema(db, question, env, &ctx.diagnostics);
    ctx.refined_db = apply_pruning(db, ctx.pruned_schema);

    std::vector<const Relation*> rels;
    for (const auto& [name, r] : ctx.refined_db.relations()) {
        rels.push_back(&r);
    }
    std::vector<Relation> previews(rels.size());
    std::vector<std::vector<std::string>> notes(rels.size());
    parallel_for(rels.size(), env.options.parallelism, [&](std::size_t i) {
        previews[i] = build_preview(*rels[i], question, ctx.k1, ctx.k2, env.options.seed, backend_of(env), &notes[i]);
    });
    for (std::size_t i = 0; i < rels.size(); ++i) {
        for (auto& n : notes[i]) {
            ctx.diagnostics.push_back(std::move(n));
        }
        ctx.preview.emplace(rels[i]->name(), std::move(previews[i]));
    }
    return ctx;
}

namespace {

std::string table_block(const Relation& r, std::size_t cell_chars)
{
    std::string out;
    std::vector<std::string> header;
    for (const auto& c : r.columns()) {
        header.push_back(c.name + " (" + std::string(to_string(c.kind)) + ")");
    }
    out += "| " + join_strings(header, " | ") + " |\n";
    out += "|" + std::string(header.size() * 4, '-') + "|\n";
    for (const auto& row : r.rows()) {
        std::vector<std::string> cells;
        for (const auto& v : row) {
            cells.push_back(clip(render(v), cell_chars));
        }
        out += "| " + join_strings(cells, " | ") + " |\n";
    }
    return out;
}

}  // namespace

std::string render_data_preview(const QueryContext& ctx, std::size_t cell_chars)
{
    std::string out;
    for (const auto& [name, r] : ctx.refined_db.relations()) {
        out += "Table: " + name + " (" + std::to_string(r.size()) + " rows)\n";
        if (!r.primary_key().empty()) {
            out += "Primary key: " + join_strings(r.primary_key(), ", ") + "\n";
        }
        for (const auto& fk : r.foreign_keys()) {
            out += "Foreign key: " + fk.column + " -> " + fk.ref_relation + "." + fk.ref_column + "\n";
        }
        auto it = ctx.preview.find(name);
        out += table_block(it == ctx.preview.end() ? Relation(name, r.columns(), {}) : it->second, cell_chars);
        out += "\n";
    }
    return out;
}

std::vector<PlanDag> ground_and_decompose(const QueryContext& ctx, const DiversificationStrategy& strategy,
                                          const PlannerEnv& env, std::vector<std::string>* diagnostics)
{
    strategy.check();
    auto& backend = backend_of(env);
    const std::string system = render_prompt(PromptKind::DecompositionSystem,
                                             {{"k", std::to_string(strategy.k)},
                                              {"diversification_strategy", strategy.text()}});
    const std::string user = render_prompt(
        PromptKind::DecompositionUser,
        {{"data_preview", render_data_preview(ctx, env.options.cell_chars)}, {"question", ctx.question}});

    ParsedPlans parsed = planner_call<ParsedPlans>(
        env, "PLAN", "question", 0, [&] { return backend.plan(ctx.question, system, user, strategy.k); },
        [](const nlohmann::json& body) {
            const std::string doc = body.is_string() ? body.get<std::string>() : body.dump();
            try {
                return parse_plan(doc);
            } catch (const ParseError& e) {
                throw ContractViolation(std::string("unreadable plan document: ") + e.what());
            }
        });
    for (auto& d : parsed.diagnostics) {
        note(diagnostics, std::move(d));
    }
    if (parsed.plans.empty()) {
        throw PlanningError("no valid plan in the planner's reply");
    }
    if (parsed.plans.size() > strategy.k) {
        note(diagnostics, "planner returned " + std::to_string(parsed.plans.size()) + " plans, keeping the first " +
                              std::to_string(strategy.k));
        parsed.plans.resize(strategy.k);
    }
    return std::move(parsed.plans);
}

namespace {

/// Filter literals written as text ('yes', '2024-01-05', '42') take the
/// column's kind when they parse as it.
void coerce_literals(PlanStep& step, const std::vector<Column>& columns)
{
    auto* f = step.params ? std::get_if<FilterParams>(&*step.params) : nullptr;
    if (f == nullptr) {
        return;
    }
    const auto idx = resolve_column(columns, f->column);
    if (!idx) {
        return;
    }
    const AttributeKind kind = columns[*idx].kind;
    static const std::vector<std::string> date_formats = IngestOptions{}.date_formats;
    for (auto& v : f->values) {
        const auto* s = std::get_if<std::string>(&v);
        if (s == nullptr) {
            continue;
        }
        if (kind == AttributeKind::Boolean) {
            if (auto b = parse_boolean(*s)) {
                v = *b;
            }
        } else if (kind == AttributeKind::Numeric) {
            if (auto d = parse_number(*s)) {
                v = *d;
            }
        } else if (kind == AttributeKind::Temporal) {
            if (auto t = parse_timestamp(*s, date_formats)) {
                v = *t;
            }
        }
    }
}

/// The part after "where"; the "from a and b" of a join is not a condition.
std::string condition_text(const std::string& instruction)
{
    const std::string lower = to_lower(instruction);
    const auto pos = lower.find(" where ");
    return pos == std::string::npos ? instruction : instruction.substr(pos + 7);
}

}  // namespace

std::vector<std::string> check_compiled(const PlanStep& step, const std::vector<StepInput>& inputs, const Database& db)
{
    if (!step.params) {
        return {"step has no params"};
    }
    if (!params_match_operator(*step.params, step.op)) {
        return {"params kind '" + params_to_json(*step.params).value("kind", std::string()) + "' does not fit operator " +
                operator_name(step.op)};
    }
    std::vector<std::string> problems;
    if (!step.op.semantic() && (step.op.kind == OpKind::Filter || step.op.kind == OpKind::Join) &&
        has_multiple_conditions(condition_text(step.instruction))) {
        problems.push_back("instruction holds more than one condition; a step must be atomic");
    }
    std::vector<const Schema*> schemas;
    for (const auto& in : inputs) {
        schemas.push_back(in.schema);
    }
    try {
        output_schema(step, schemas, db);
    } catch (const Error& e) {
        problems.push_back(e.what());
        return problems;
    }
    const auto kind_of = [&](const std::string& col) -> std::optional<AttributeKind> {
        for (const auto* s : schemas) {
            if (auto i = resolve_column(*s, col)) {
                return (*s)[*i].kind;
            }
        }
        return std::nullopt;
    };
    if (const auto* f = std::get_if<FilterParams>(&*step.params)) {
        const auto k = kind_of(f->column);
        const bool ordered = f->op == CmpOp::Eq || f->op == CmpOp::Ne || f->op == CmpOp::Lt || f->op == CmpOp::Gt ||
                             f->op == CmpOp::Le || f->op == CmpOp::Ge;
        if (k == AttributeKind::Numeric && ordered && !f->rhs_column) {
            for (const auto& v : f->values) {
                if (const auto* s = std::get_if<std::string>(&v); s != nullptr && !parse_number(*s)) {
                    problems.push_back("numeric column '" + f->column + "' compared with text '" + *s + "'");
                }
            }
        }
    } else if (const auto* a = std::get_if<AggregateParams>(&*step.params)) {
        if ((a->func == AggFunc::Sum || a->func == AggFunc::Avg) && a->target != "*") {
            const auto k = kind_of(a->target);
            if (k && *k != AttributeKind::Numeric) {
                problems.push_back(std::string(to_string(a->func)) + " needs a numeric column, '" + a->target + "' is " +
                                   std::string(to_string(*k)));
            }
        }
    } else if (const auto* p = std::get_if<ProjectParams>(&*step.params)) {
        for (const auto& item : p->items) {
            if (!item.op) {
                continue;
            }
            for (const Operand* o : {&item.lhs, &item.rhs}) {
                if (o->column) {
                    const auto k = kind_of(*o->column);
                    if (k && *k != AttributeKind::Numeric) {
                        problems.push_back("arithmetic on non-numeric column '" + *o->column + "'");
                    }
                }
            }
        }
    }
    return problems;
}

namespace {

const char* const kStructuredOutput =
    "\n\n### STRUCTURED OUTPUT ###\n"
    "This engine runs structured operators, not SQL. Answer with one JSON object: \"kind\" plus the fields of "
    "that kind.\n"
    "scan: table, columns\n"
    "filter: column, op, value | values | rhs_column\n"
    "project: items [{name, column} | {name, lhs, op, rhs}]\n"
    "aggregate: func, target, group_by, output\n"
    "join: left_column, op, right_column\n"
    "sort: column, descending\n"
    "limit: n\n"
    "set_op: op\n"
    "distinct: columns\n";

std::string schema_text(const std::vector<StepInput>& inputs, const PlanStep& step, const Database& db)
{
    std::string out;
    auto describe = [&](const std::string& name, const Schema& s) {
        std::vector<std::string> cols;
        for (const auto& c : s) {
            cols.push_back(c.name + " " + std::string(to_string(c.kind)));
        }
        out += name + "(" + join_strings(cols, ", ") + ")\n";
    };
    if (step.op.kind == OpKind::Scan && !step.op.semantic()) {
        if (auto t = scan_table(step); t && db.contains(*t)) {
            describe(*t, db.at(*t).columns());
        }
    }
    for (const auto& in : inputs) {
        describe(in.name, *in.schema);
    }
    return out;
}

std::string preview_text(const std::vector<StepInput>& inputs, const PlanStep& step,
                         const std::map<std::string, Relation>& previews)
{
    std::set<std::string> tables;
    if (step.op.kind == OpKind::Scan && !step.op.semantic()) {
        if (auto t = scan_table(step)) {
            tables.insert(*t);
        }
    }
    for (const auto& in : inputs) {
        for (const auto& c : *in.schema) {
            if (!c.origin_table.empty()) {
                tables.insert(c.origin_table);
            }
        }
    }
    std::string out;
    for (const auto& t : tables) {
        auto it = previews.find(t);
        if (it != previews.end()) {
            out += t + ":\n" + table_block(it->second, 80);
        }
    }
    return out;
}

}  // namespace

PlanStep compile_instruction(const PlanStep& step, const std::vector<StepInput>& inputs, const Database& db,
                             const std::map<std::string, Relation>& previews, const PlannerEnv& env,
                             std::vector<std::string>* diagnostics)
{
    if (step.params) {
        return step;
    }
    std::vector<std::string> parent_names;
    std::vector<Column> columns;
    for (const auto& in : inputs) {
        parent_names.push_back(in.name);
        columns.insert(columns.end(), in.schema->begin(), in.schema->end());
    }

    if (step.op.semantic()) {
        PlanStep out = step;
        try {
            out.params = parse_instruction(step.op, step.instruction, parent_names, &columns);
        } catch (const ParseError& e) {
            if (step.op.kind == OpKind::Map) {
                throw PlanningError(step.id + ": " + e.what());
            }
            SemanticParams p;
            p.condition = trim(step.instruction);
            out.params = p;
            note(diagnostics, step.id + ": instruction off-template, sent to the backend whole");
        }
        const auto problems = check_compiled(out, inputs, db);
        if (!problems.empty()) {
            throw PlanningError(step.id + ": " + join_strings(problems, "; "));
        }
        return out;
    }

    auto& backend = backend_of(env);
    std::vector<std::string> tables = parent_names;
    if (step.op.kind == OpKind::Scan) {
        if (auto t = scan_table(step)) {
            tables = {*t};
        }
    }
    const std::string base_prompt =
        render_prompt(PromptKind::StepCompile, {{"tables", join_strings(tables, ", ")},
                                                {"schema", schema_text(inputs, step, db)},
                                                {"preview_rows", preview_text(inputs, step, previews)},
                                                {"step", step.id + " " + operator_name(step.op) + ": " + step.instruction}}) +
        kStructuredOutput;
    nlohmann::json context{{"parents", parent_names}};
    context["columns"] = nlohmann::json::array();
    for (const auto& c : columns) {
        context["columns"].push_back(c.name);
    }

    std::vector<std::string> feedback;
    for (std::size_t attempt = 0; attempt < std::max<std::size_t>(env.options.compile_attempts, 1); ++attempt) {
        std::string prompt = base_prompt;
        if (!feedback.empty()) {
            prompt += "\n### PREVIOUS ERRORS ###\n" + join_strings(feedback, "\n") + "\n";
        }
        BackendReply reply;
        try {
            reply = backend.compile_step(operator_name(step.op), step.instruction, prompt, context, feedback);
        } catch (const BackendError& e) {
            feedback.push_back("attempt " + std::to_string(attempt + 1) + ": backend error: " + e.what());
            continue;
        }
        if (env.accounting != nullptr) {
            CallRecord r;
            r.step = step.id;
            r.op = "COMPILE";
            r.attempt = attempt;
            r.usage = reply.usage;
            env.accounting->record(std::move(r));
        }
        std::vector<std::string> problems;
        PlanStep candidate = step;
        if (reply.body.is_object() && reply.body.contains("error")) {
            problems.push_back("backend could not translate: " + reply.body.at("error").dump());
        } else {
            try {
                candidate.params = params_from_json(reply.body);
                coerce_literals(candidate, columns);
                problems = check_compiled(candidate, inputs, db);
            } catch (const ParseError& e) {
                problems.push_back(e.what());
            } catch (const nlohmann::json::exception& e) {
                problems.push_back(e.what());
            }
        }
        if (problems.empty()) {
            return candidate;
        }
        feedback.push_back("attempt " + std::to_string(attempt + 1) + ": " + join_strings(problems, "; "));
    }
    throw PlanningError(step.id + ": could not compile \"" + step.instruction + "\": " + join_strings(feedback, " | "));
}

PlanDag compile_plan(const PlanDag& dag, const Database& db, const std::map<std::string, Relation>& previews,
                     const PlannerEnv& env, std::vector<std::string>* diagnostics)
{
    PlanDag out = dag;
    std::map<std::string, Schema> schemas;
    for (const auto& id : topo_order(dag)) {
        const PlanStep& step = dag.at(id);
        std::vector<StepInput> inputs;
        std::vector<const Schema*> ptrs;
        for (const auto& in : dag.input_ids(step)) {
            inputs.push_back({in, &schemas.at(in)});
            ptrs.push_back(&schemas.at(in));
        }
        PlanStep compiled = compile_instruction(step, inputs, db, previews, env, diagnostics);
        schemas[id] = output_schema(compiled, ptrs, db);
        *out.find(id) = std::move(compiled);
    }
    return out;
}

}  // namespace hyqe
