#include "hyqe/executor.hpp"

#include <fstream>

#include "hyqe/error.hpp"
#include "hyqe/exec_relational.hpp"
#include "hyqe/ingest.hpp"
#include "hyqe/schema.hpp"

namespace hyqe {

Relation eval_semantic(const PlanStep& step, const ExecEnv& env, const SemanticContext& ctx)
{
    if (!step.params) {
        throw ExecutionError(step.id + " is not compiled");
    }
    const auto& p = std::get<SemanticParams>(*step.params);
    const std::string& instruction = p.condition.empty() ? step.instruction : p.condition;
    const auto inputs = step.parents;
    switch (step.op.kind) {
    case OpKind::Map:
        return exec_map(instruction, p.new_column, env.input(inputs.at(0)), ctx);
    case OpKind::Filter:
        return exec_filter(instruction, env.input(inputs.at(0)), ctx);
    case OpKind::Join:
        return exec_join(instruction, env.input(inputs.at(0)), env.input(inputs.at(1)), inputs.at(1), ctx);
    case OpKind::Aggregate:
        return exec_aggregate(instruction, env.input(inputs.at(0)), p.group_by, semantic_output_column(p), ctx);
    default:
        throw ExecutionError(step.id + ": unsupported semantic operator " + operator_name(step.op));
    }
}

ExecutionReport execute_plan(const PlanDag& dag, const Database& db, SemanticBackend* backend,
                             const ExecutionOptions& opts)
{
    ExecutionReport report;
    report.plan = dag.id();
    report.sink = dag.sink();
    ExecEnv env;
    env.base = &db;

    if (opts.trace_dir) {
        std::filesystem::create_directories(*opts.trace_dir);
    }

    for (const auto& layer : topo_schedule(dag)) {
        std::vector<Relation> results(layer.size());
        std::vector<std::vector<std::string>> notes(layer.size());
        parallel_for(layer.size(), opts.semantic.parallelism, [&](std::size_t i) {
            const PlanStep& step = dag.at(layer[i]);
            try {
                if (step.op.semantic()) {
                    SemanticContext ctx;
                    ctx.backend = backend;
                    ctx.options = opts.semantic;
                    ctx.accounting = &report.accounting;
                    ctx.diagnostics = &notes[i];
                    ctx.step = step.id;
                    results[i] = eval_semantic(step, env, ctx);
                } else {
                    results[i] = eval_relational(step, env);
                }
            } catch (const Error& e) {
                throw ExecutionError(step.id + " (" + operator_name(step.op) + "): " + e.what());
            }
        });
        for (std::size_t i = 0; i < layer.size(); ++i) {
            for (auto& n : notes[i]) {
                report.diagnostics.push_back(std::move(n));
            }
            report.step_rows[layer[i]] = results[i].size();
            if (opts.trace_dir) {
                const auto path = *opts.trace_dir / (dag.id() + "_" + layer[i] + ".csv");
                std::ofstream out(path, std::ios::binary);
                if (!out) {
                    throw ExecutionError("cannot write trace file " + path.string());
                }
                write_csv(out, results[i]);
            }
            materialize(env, layer[i], std::move(results[i]));
        }
    }
    report.result = env.input(report.sink);
    return report;
}

nlohmann::ordered_json to_json(const ExecutionReport& r, bool include_rows)
{
    nlohmann::ordered_json out;
    out["plan"] = r.plan;
    out["sink"] = r.sink;
    nlohmann::ordered_json cols = nlohmann::ordered_json::array();
    for (const auto& c : r.result.columns()) {
        cols.push_back(c.name);
    }
    out["columns"] = std::move(cols);
    out["row_count"] = r.result.size();
    if (include_rows) {
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (const auto& row : r.result.rows()) {
            nlohmann::ordered_json cells = nlohmann::ordered_json::array();
            for (const auto& v : row) {
                cells.push_back(nlohmann::ordered_json(to_json(v)));
            }
            rows.push_back(std::move(cells));
        }
        out["rows"] = std::move(rows);
    }
    nlohmann::ordered_json steps = nlohmann::ordered_json::object();
    for (const auto& [id, n] : r.step_rows) {
        steps[id] = n;
    }
    out["step_rows"] = std::move(steps);
    out["tokens"] = to_json(r.accounting);
    out["diagnostics"] = r.diagnostics;
    return out;
}

}  // namespace hyqe
