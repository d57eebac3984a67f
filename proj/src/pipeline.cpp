#include "hyqe/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "hyqe/executor.hpp"
#include "hyqe/http_backend.hpp"
#include "hyqe/optimizer.hpp"
#include "hyqe/planner.hpp"

namespace hyqe {

std::string_view to_string(ConsolidationMode m)
{
    switch (m) {
    case ConsolidationMode::Vote:
        return "vote";
    case ConsolidationMode::Judge:
        return "judge";
    case ConsolidationMode::Delegate:
        return "delegate";
    case ConsolidationMode::AccAtK:
        return "acc-at-k";
    }
    return "";
}

ConsolidationMode consolidation_mode_from_string(std::string_view s)
{
    const std::string m = to_lower(s);
    if (m == "vote") {
        return ConsolidationMode::Vote;
    }
    if (m == "judge") {
        return ConsolidationMode::Judge;
    }
    if (m == "delegate") {
        return ConsolidationMode::Delegate;
    }
    if (m == "acc-at-k" || m == "acc@k") {
        return ConsolidationMode::AccAtK;
    }
    throw ContractViolation("unknown consolidation mode '" + std::string(s) + "'");
}

void RunConfig::check() const
{
    if (k == 0) {
        throw ContractViolation("k must be at least 1");
    }
    if (semantic.batch.b == 0) {
        throw ContractViolation("base batch size must be at least 1");
    }
    if (semantic.batch.b_max == 0) {
        throw ContractViolation("token budget must be positive");
    }
    if (semantic.parallelism == 0) {
        throw ContractViolation("parallelism must be at least 1");
    }
    if (compile_attempts == 0) {
        throw ContractViolation("compile attempts must be at least 1");
    }
    if (semantic.partial_cap == 0) {
        throw ContractViolation("partial aggregation cap must be at least 1");
    }
    cost.check();
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base)
{
    if (!j.is_object()) {
        throw ParseError("run config must be a JSON object");
    }
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) {
                field = j.at(key).get<std::decay_t<decltype(field)>>();
            }
        };
        get("k", base.k);
        get("beta", base.semantic.batch.b);
        get("bmax", base.semantic.batch.b_max);
        get("t_row", base.semantic.batch.t_row);
        get("retries", base.semantic.retries);
        get("parallelism", base.semantic.parallelism);
        get("max_depth", base.semantic.max_depth);
        get("partial_cap", base.semantic.partial_cap);
        get("k1", base.k1);
        get("k2", base.k2);
        get("compile_attempts", base.compile_attempts);
        get("backend", base.backend);
        get("seed", base.seed);
        get("optimize", base.optimize);
        get("diversify", base.diversify);
        get("allow_cross_products", base.allow_cross_products);
        if (j.contains("mode")) {
            base.mode = consolidation_mode_from_string(j.at("mode").get<std::string>());
        }
        if (j.contains("equality")) {
            const std::string e = to_lower(j.at("equality").get<std::string>());
            if (e != "exact" && e != "semantic") {
                throw ParseError("equality must be exact or semantic");
            }
            base.equality = e == "exact" ? EqualityMode::Exact : EqualityMode::Semantic;
        }
        if (j.contains("judge_examples")) {
            base.judge_examples = j.at("judge_examples").get<std::string>();
        }
        if (j.contains("trace_dir")) {
            base.trace_dir = j.at("trace_dir").get<std::string>();
        }
        base.cost = cost_params_from_json(j.contains("cost") ? j.at("cost") : j, base.cost);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("run config: ") + e.what());
    } catch (const ContractViolation& e) {
        throw ParseError(std::string("run config: ") + e.what());
    }
    return base;
}

nlohmann::ordered_json to_json(const RunConfig& c)
{
    nlohmann::ordered_json j;
    j["k"] = c.k;
    j["beta"] = c.semantic.batch.b;
    j["bmax"] = c.semantic.batch.b_max;
    j["t_row"] = c.semantic.batch.t_row;
    j["retries"] = c.semantic.retries;
    j["parallelism"] = c.semantic.parallelism;
    j["max_depth"] = c.semantic.max_depth;
    j["partial_cap"] = c.semantic.partial_cap;
    j["k1"] = c.k1;
    j["k2"] = c.k2;
    j["compile_attempts"] = c.compile_attempts;
    j["mode"] = std::string(to_string(c.mode));
    j["equality"] = c.equality == EqualityMode::Exact ? "exact" : "semantic";
    j["seed"] = c.seed;
    j["optimize"] = c.optimize;
    j["diversify"] = c.diversify;
    j["allow_cross_products"] = c.allow_cross_products;
    j["cost"] = to_json(c.cost);
    return j;
}

std::unique_ptr<SemanticBackend> make_backend(const std::string& spec)
{
    if (spec.rfind("mock:", 0) == 0) {
        return std::make_unique<MockBackend>(MockBackend::from_file(spec.substr(5)));
    }
    if (spec.rfind("http:", 0) == 0 && spec.rfind("http://", 0) != 0) {
        return std::make_unique<HttpBackend>(spec.substr(5));
    }
    if (spec.rfind("http://", 0) == 0) {
        return std::make_unique<HttpBackend>(spec);
    }
    throw BackendError("backend must be mock:<rulebook> or http://host:port/path, got '" + spec + "'");
}

namespace {

nlohmann::ordered_json usage_json(const Usage& u)
{
    return {{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}};
}

Usage add(Usage a, const Usage& b)
{
    a.input_tokens += b.input_tokens;
    a.output_tokens += b.output_tokens;
    return a;
}

nlohmann::ordered_json relation_json(const Relation& r)
{
    nlohmann::ordered_json cols = nlohmann::ordered_json::array();
    for (const auto& c : r.columns()) {
        cols.push_back(c.name);
    }
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : r.rows()) {
        nlohmann::ordered_json cells = nlohmann::ordered_json::array();
        for (const auto& v : row) {
            cells.push_back(nlohmann::ordered_json(to_json(v)));
        }
        rows.push_back(std::move(cells));
    }
    return {{"columns", std::move(cols)}, {"rows", std::move(rows)}};
}

struct PlanRun {
    PlanDag plan;
    std::optional<OptimizeResult> optimized;
    std::optional<Rational> estimated_cost;
    std::optional<ExecutionReport> exec;
    TokenAccounting compile_tokens;
    std::string error;
    std::string failed_at;
    std::vector<std::string> notes;
};

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ExecutionError("cannot write " + path.string());
    }
    out << text;
}

}  // namespace

nlohmann::ordered_json run_question(const Database& db, const std::string& question, const RunConfig& cfg,
                                    SemanticBackend& backend, const std::vector<PlanDag>* plans)
{
    cfg.check();
    TokenAccounting planning;
    PlannerEnv env;
    env.backend = &backend;
    env.options.k1 = cfg.k1;
    env.options.k2 = cfg.k2;
    env.options.seed = cfg.seed;
    env.options.retries = cfg.semantic.retries;
    env.options.compile_attempts = cfg.compile_attempts;
    env.options.parallelism = cfg.semantic.parallelism;
    env.accounting = &planning;

    QueryContext ctx;
    std::vector<PlanDag> dags;
    std::vector<std::string> diagnostics;
    try {
        if (plans != nullptr) {
            // Given plans were written against the full schema; skip pruning.
            ctx.question = question;
            ctx.refined_db = db;
            for (const auto& [name, r] : db.relations()) {
                ctx.pruned_schema[name] = r.column_names();
                ctx.preview.emplace(name, build_preview(r, question, cfg.k1, cfg.k2, cfg.seed, backend, &ctx.diagnostics));
            }
            dags = *plans;
        } else {
            ctx = prepare_context(db, question, env);
            const auto strategy = cfg.diversify ? [&] {
                DiversificationStrategy s;
                s.k = cfg.k;
                return s;
            }()
                                                : DiversificationStrategy::none(cfg.k);
            dags = ground_and_decompose(ctx, strategy, env, &diagnostics);
        }
    } catch (const Error& e) {
        throw StageError(Stage::Plan, std::string("planning failed: ") + e.what());
    }
    diagnostics.insert(diagnostics.begin(), ctx.diagnostics.begin(), ctx.diagnostics.end());
    if (dags.empty()) {
        throw StageError(Stage::Plan, "planning produced no plan");
    }

    ExecutionOptions eopts;
    eopts.semantic = cfg.semantic;
    eopts.trace_dir = cfg.trace_dir;
    OptimizerOptions oopts;
    oopts.allow_cross_products = cfg.allow_cross_products;

    std::vector<PlanRun> runs(dags.size());
    parallel_for(dags.size(), cfg.semantic.parallelism, [&](std::size_t i) {
        PlanRun& run = runs[i];
        run.plan = dags[i];
        PlannerEnv penv = env;
        penv.accounting = &run.compile_tokens;
        try {
            run.plan = compile_plan(dags[i], ctx.refined_db, ctx.preview, penv, &run.notes);
        } catch (const Error& e) {
            run.failed_at = "compile";
            run.error = e.what();
            return;
        }
        try {
            if (cfg.optimize) {
                run.optimized = optimize(run.plan, ctx.refined_db, cfg.cost, oopts);
                run.plan = run.optimized->plan;
                run.estimated_cost = run.optimized->cost_after;
            } else {
                run.estimated_cost = plan_cost(run.plan, estimate_plan(run.plan, ctx.refined_db, cfg.cost), cfg.cost);
            }
        } catch (const Error& e) {
            run.notes.push_back(std::string("cost estimate unavailable: ") + e.what());
        }
        try {
            run.exec = execute_plan(run.plan, ctx.refined_db, &backend, eopts);
        } catch (const Error& e) {
            run.failed_at = "execute";
            run.error = e.what();
        }
    });

    std::vector<CandidateResult> candidates;
    for (const auto& run : runs) {
        candidates.push_back(run.exec ? make_candidate(run.plan, *run.exec)
                                      : failed_candidate(run.plan, run.failed_at + ": " + run.error));
    }
    if (std::none_of(candidates.begin(), candidates.end(), [](const CandidateResult& c) { return c.ok(); })) {
        std::string why;
        for (const auto& c : candidates) {
            why += "\n  " + c.plan_id + ": " + *c.error;
        }
        throw StageError(Stage::Execute, "every plan failed:" + why);
    }

    TokenAccounting consolidation;
    nlohmann::ordered_json selection;
    try {
        switch (cfg.mode) {
        case ConsolidationMode::Vote:
        case ConsolidationMode::Judge: {
            Selection sel;
            if (cfg.mode == ConsolidationMode::Vote) {
                sel = majority_vote(candidates, cfg.equality, &backend);
            } else {
                JudgeOptions jo;
                jo.retries = cfg.semantic.retries;
                if (cfg.judge_examples) {
                    std::ifstream in(*cfg.judge_examples);
                    if (!in) {
                        throw ContractViolation("cannot read judge examples " + cfg.judge_examples->string());
                    }
                    std::stringstream ss;
                    ss << in.rdbuf();
                    jo.few_shot_examples = ss.str();
                }
                sel = judge_select(question, candidates, backend, ctx.refined_db, jo, &consolidation);
            }
            const auto& chosen = candidates[sel.index];
            selection["plan_id"] = chosen.plan_id;
            selection["answer"] = relation_json(chosen.result);
            selection["normalized"] = chosen.normalized.text();
            nlohmann::ordered_json groups = nlohmann::ordered_json::array();
            for (const auto& g : sel.groups) {
                nlohmann::ordered_json ids = nlohmann::ordered_json::array();
                for (std::size_t m : g) {
                    ids.push_back(candidates[m].plan_id);
                }
                groups.push_back(std::move(ids));
            }
            selection["groups"] = std::move(groups);
            selection["notes"] = sel.notes;
            break;
        }
        case ConsolidationMode::Delegate:
            selection = delegate(question, candidates);
            break;
        case ConsolidationMode::AccAtK: {
            nlohmann::ordered_json answers = nlohmann::ordered_json::array();
            for (const auto& c : candidates) {
                nlohmann::ordered_json a{{"plan_id", c.plan_id}};
                if (c.ok()) {
                    a["answer"] = relation_json(c.result);
                    a["normalized"] = c.normalized.text();
                } else {
                    a["error"] = *c.error;
                }
                answers.push_back(std::move(a));
            }
            selection["answers"] = std::move(answers);
            break;
        }
        }
    } catch (const Error& e) {
        throw StageError(Stage::Consolidate, std::string("consolidation failed: ") + e.what());
    }

    Usage compile_total;
    Usage exec_total;
    nlohmann::ordered_json plan_reports = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& run = runs[i];
        nlohmann::ordered_json pj;
        pj["plan_id"] = run.plan.id();
        pj["status"] = run.error.empty() ? "ok" : "failed";
        if (!run.error.empty()) {
            pj["error"] = run.failed_at + ": " + run.error;
        }
        pj["plan"] = plan_to_json(run.plan);
        if (run.optimized) {
            pj["optimizer"] = {{"cost_before", to_string(run.optimized->cost_before)},
                               {"cost_after", to_string(run.optimized->cost_after)},
                               {"trace", to_json(run.optimized->trace)}};
        }
        if (run.estimated_cost) {
            pj["estimated_cost"] = to_string(*run.estimated_cost);
        }
        const Usage ct = run.compile_tokens.totals();
        compile_total = add(compile_total, ct);
        nlohmann::ordered_json tokens{{"compile", usage_json(ct)}};
        if (run.exec) {
            pj["result"] = relation_json(run.exec->result);
            pj["normalized"] = candidates[i].normalized.text();
            pj["step_rows"] = run.exec->step_rows;
            const Usage et = run.exec->accounting.totals();
            exec_total = add(exec_total, et);
            tokens["execution"] = usage_json(et);
            tokens["calls"] = run.exec->accounting.calls();
            tokens["by_operator"] = to_json(run.exec->accounting)["by_operator"];
        }
        pj["tokens"] = std::move(tokens);
        std::vector<std::string> notes = run.notes;
        if (run.exec) {
            notes.insert(notes.end(), run.exec->diagnostics.begin(), run.exec->diagnostics.end());
        }
        pj["diagnostics"] = notes;
        if (cfg.trace_dir) {
            std::filesystem::create_directories(*cfg.trace_dir);
            write_text(*cfg.trace_dir / (run.plan.id() + "_plan.json"), pj.dump(2) + "\n");
            if (run.exec) {
                write_text(*cfg.trace_dir / (run.plan.id() + "_tokens.json"), to_json(run.exec->accounting).dump(2) + "\n");
            }
        }
        plan_reports.push_back(std::move(pj));
    }

    nlohmann::ordered_json report;
    report["question"] = question;
    report["config"] = to_json(cfg);
    nlohmann::ordered_json pruned = nlohmann::ordered_json::object();
    for (const auto& [name, cols] : ctx.pruned_schema) {
        pruned[name] = cols;
    }
    report["pruned_schema"] = std::move(pruned);
    report["plans"] = std::move(plan_reports);
    report["mode"] = std::string(to_string(cfg.mode));
    report["selection"] = std::move(selection);
    const Usage plan_total = planning.totals();
    const Usage cons_total = consolidation.totals();
    report["tokens"] = {{"planning", usage_json(plan_total)},
                        {"compile", usage_json(compile_total)},
                        {"execution", usage_json(exec_total)},
                        {"consolidation", usage_json(cons_total)},
                        {"total", usage_json(add(add(add(plan_total, compile_total), exec_total), cons_total))}};
    report["diagnostics"] = diagnostics;
    return report;
}

}  // namespace hyqe
