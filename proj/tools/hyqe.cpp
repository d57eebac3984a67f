// hyqe command line: ingest, run, optimize, calibrate.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hyqe/bundle.hpp"
#include "hyqe/cost.hpp"
#include "hyqe/error.hpp"
#include "hyqe/ingest.hpp"
#include "hyqe/optimizer.hpp"
#include "hyqe/pipeline.hpp"
#include "hyqe/planner.hpp"
#include "hyqe/preprocess.hpp"

namespace {

enum Exit : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kIngest = 3,
    kPlan = 4,
    kExecute = 5,
    kConsolidate = 6,
    kBackend = 7,
};

/// Carries an exit code out of a subcommand.
struct CliFailure {
    int code;
    std::string message;
};

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CliFailure{kUsage, "cannot read " + path};
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_output(const std::string& path, const std::string& text)
{
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CliFailure{kUsage, "cannot write " + path};
    }
    out << text;
}

std::pair<std::string, std::string> split_once(const std::string& s, char sep, const char* what)
{
    const auto pos = s.find(sep);
    if (pos == std::string::npos || pos == 0 || pos + 1 == s.size()) {
        throw CliFailure{kUsage, std::string("malformed ") + what + " '" + s + "'"};
    }
    return {s.substr(0, pos), s.substr(pos + 1)};
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

hyqe::Database load_db(const std::string& path)
{
    try {
        return hyqe::load_bundle(path);
    } catch (const hyqe::Error& e) {
        throw CliFailure{kIngest, e.what()};
    }
}

// ---- ingest ----

struct IngestArgs {
    std::vector<std::string> files;
    std::string out;
    std::string format;
    std::vector<std::string> types;
    std::vector<std::string> keys;
    std::vector<std::string> fks;
    bool clean = false;
    bool prune = false;
};

int cmd_ingest(const IngestArgs& a)
{
    hyqe::Database db;
    std::vector<std::pair<std::string, hyqe::ForeignKey>> pending_fks;
    for (const auto& f : a.fks) {
        // orders.user_id=users.id
        const auto [lhs, rhs] = split_once(f, '=', "foreign key");
        const auto [table, column] = split_once(lhs, '.', "foreign key");
        const auto [ref_table, ref_column] = split_once(rhs, '.', "foreign key");
        pending_fks.push_back({table, {column, ref_table, ref_column}});
    }
    for (const auto& file : a.files) {
        const std::filesystem::path p(file);
        const std::string name = p.stem().string();
        hyqe::InputFormat format;
        try {
            const std::string ext = a.format.empty() ? p.extension().string() : a.format;
            format = hyqe::input_format_from_string(ext == ".jsonl" || ext == ".ndjson" ? "jsonl"
                                                    : ext == ".csv"                     ? "csv"
                                                                                        : ext);
        } catch (const hyqe::Error& e) {
            throw CliFailure{kUsage, file + ": " + e.what()};
        }
        hyqe::IngestOptions opts;
        for (const auto& t : a.types) {
            // [table.]column=kind
            const auto [lhs, kind] = split_once(t, '=', "type hint");
            std::string column = lhs;
            if (const auto dot = lhs.find('.'); dot != std::string::npos) {
                if (lhs.substr(0, dot) != name) {
                    continue;
                }
                column = lhs.substr(dot + 1);
            }
            try {
                opts.type_hints[column] = hyqe::attribute_kind_from_string(kind);
            } catch (const hyqe::Error& e) {
                throw CliFailure{kUsage, t + ": " + e.what()};
            }
        }
        for (const auto& k : a.keys) {
            const auto [table, cols] = split_once(k, '=', "primary key");
            if (table == name) {
                opts.primary_key = split_list(cols);
            }
        }
        for (const auto& [table, fk] : pending_fks) {
            if (table == name) {
                opts.foreign_keys.push_back(fk);
            }
        }
        std::ifstream in(file, std::ios::binary);
        if (!in) {
            throw CliFailure{kIngest, "cannot read " + file};
        }
        try {
            hyqe::Relation r = hyqe::ingest_table(in, format, name, opts);
            if (a.prune) {
                auto outcome = hyqe::heuristic_prune(r);
                for (const auto& d : outcome.report.dropped) {
                    std::cerr << "pruned " << name << "." << d.column << " (" << hyqe::to_string(d.rule) << ")\n";
                }
                r = std::move(outcome.relation);
            }
            db.add(std::move(r));
        } catch (const hyqe::Error& e) {
            throw CliFailure{kIngest, file + ": " + e.what()};
        }
    }
    try {
        db.check_foreign_keys();
        if (a.clean) {
            db = hyqe::clean_database(db);
        }
    } catch (const hyqe::Error& e) {
        throw CliFailure{kIngest, e.what()};
    }
    const std::string text = hyqe::bundle_to_json(db).dump(1) + "\n";
    write_output(a.out, text);
    return kOk;
}

// ---- shared run / optimize configuration ----

struct ConfigFlags {
    std::string config;
    std::optional<std::size_t> k;
    std::optional<std::size_t> beta;
    std::optional<std::size_t> bmax;
    std::optional<std::string> epsilon;
    std::optional<std::size_t> tau;
    std::optional<std::string> mode;
    std::optional<std::string> equality;
    std::optional<std::string> backend;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> trace_dir;
    std::optional<std::size_t> parallelism;
    bool no_opt = false;
    bool no_diversify = false;
    bool cross_products = false;
};

void add_config_flags(CLI::App* app, ConfigFlags& f, bool run_flags)
{
    app->add_option("--config", f.config, "JSON config file; flags override it");
    app->add_option("--epsilon", f.epsilon, "Placement threshold, a rational such as 2 or 3/2");
    app->add_option("--tau", f.tau, "Exhaustive join-order limit");
    app->add_option("--backend", f.backend, "mock:<rulebook.json> or http://host:port/path");
    app->add_flag("--no-opt", f.no_opt, "Skip the optimizer");
    app->add_flag("--allow-cross-products", f.cross_products, "Let join ordering use cross products");
    if (!run_flags) {
        return;
    }
    app->add_option("--k", f.k, "Number of plans");
    app->add_option("--beta", f.beta, "Base batch size");
    app->add_option("--bmax", f.bmax, "Per-call token budget");
    app->add_option("--mode", f.mode, "vote, judge, delegate or acc-at-k");
    app->add_option("--equality", f.equality, "exact or semantic answer equality for votes");
    app->add_option("--seed", f.seed, "Preview sampling seed");
    app->add_option("--trace-dir", f.trace_dir, "Write per-step CSVs and per-plan JSON here");
    app->add_option("--parallelism", f.parallelism, "Concurrent plans and backend calls");
    app->add_flag("--no-diversify", f.no_diversify, "Plan without a diversification strategy");
}

/// defaults < config file < flags
hyqe::RunConfig resolve_config(const ConfigFlags& f)
{
    hyqe::RunConfig cfg;
    try {
        if (!f.config.empty()) {
            cfg = hyqe::run_config_from_json(nlohmann::json::parse(read_file(f.config)), cfg);
        }
        if (f.k) {
            cfg.k = *f.k;
        }
        if (f.beta) {
            cfg.semantic.batch.b = *f.beta;
        }
        if (f.bmax) {
            cfg.semantic.batch.b_max = *f.bmax;
        }
        if (f.epsilon) {
            cfg.cost.epsilon = hyqe::rational_from_string(*f.epsilon);
        }
        if (f.tau) {
            cfg.cost.tau = *f.tau;
        }
        if (f.mode) {
            cfg.mode = hyqe::consolidation_mode_from_string(*f.mode);
        }
        if (f.equality) {
            if (*f.equality != "exact" && *f.equality != "semantic") {
                throw CliFailure{kUsage, "--equality must be exact or semantic"};
            }
            cfg.equality = *f.equality == "exact" ? hyqe::EqualityMode::Exact : hyqe::EqualityMode::Semantic;
        }
        if (f.backend) {
            cfg.backend = *f.backend;
        }
        if (f.seed) {
            cfg.seed = *f.seed;
        }
        if (f.trace_dir) {
            cfg.trace_dir = *f.trace_dir;
        }
        if (f.parallelism) {
            cfg.semantic.parallelism = *f.parallelism;
        }
        if (f.no_opt) {
            cfg.optimize = false;
        }
        if (f.no_diversify) {
            cfg.diversify = false;
        }
        if (f.cross_products) {
            cfg.allow_cross_products = true;
        }
        cfg.check();
    } catch (const nlohmann::json::exception& e) {
        throw CliFailure{kUsage, std::string("config: ") + e.what()};
    } catch (const hyqe::Error& e) {
        throw CliFailure{kUsage, e.what()};
    }
    return cfg;
}

std::unique_ptr<hyqe::SemanticBackend> open_backend(const hyqe::RunConfig& cfg)
{
    if (cfg.backend.empty()) {
        throw CliFailure{kUsage, "no backend configured (use --backend or the config file)"};
    }
    try {
        return hyqe::make_backend(cfg.backend);
    } catch (const hyqe::Error& e) {
        throw CliFailure{kBackend, e.what()};
    }
}

std::vector<hyqe::PlanDag> load_plans(const std::string& path)
{
    try {
        auto parsed = hyqe::parse_plan(read_file(path));
        for (const auto& d : parsed.diagnostics) {
            std::cerr << "plan: " << d << "\n";
        }
        if (parsed.plans.empty()) {
            throw CliFailure{kPlan, path + ": no valid plan"};
        }
        return std::move(parsed.plans);
    } catch (const hyqe::Error& e) {
        throw CliFailure{kPlan, path + ": " + e.what()};
    }
}

// ---- run ----

struct RunArgs {
    ConfigFlags flags;
    std::string question;
    std::string db;
    std::string plans_file;
    std::string out;
    bool explain = false;
};

int cmd_run(const RunArgs& a)
{
    const hyqe::RunConfig cfg = resolve_config(a.flags);
    const hyqe::Database db = load_db(a.db);
    auto backend = open_backend(cfg);
    std::optional<std::vector<hyqe::PlanDag>> plans;
    if (!a.plans_file.empty()) {
        plans = load_plans(a.plans_file);
    }
    nlohmann::ordered_json report;
    try {
        report = hyqe::run_question(db, a.question, cfg, *backend, plans ? &*plans : nullptr);
    } catch (const hyqe::StageError& e) {
        switch (e.stage()) {
        case hyqe::Stage::Plan:
            throw CliFailure{kPlan, e.what()};
        case hyqe::Stage::Execute:
            throw CliFailure{kExecute, e.what()};
        case hyqe::Stage::Consolidate:
            throw CliFailure{kConsolidate, e.what()};
        }
    } catch (const hyqe::BackendError& e) {
        throw CliFailure{kBackend, e.what()};
    } catch (const hyqe::Error& e) {
        throw CliFailure{kPlan, e.what()};
    }
    if (a.explain) {
        for (const auto& p : report["plans"]) {
            std::cerr << "== " << p["plan_id"].get<std::string>() << " (" << p["status"].get<std::string>() << ")\n";
            for (const auto& s : p["plan"]["steps"]) {
                std::cerr << "  " << s["id"].get<std::string>() << " " << s["operator"].get<std::string>() << ": "
                          << s["action"].get<std::string>() << "\n";
            }
            if (p.contains("optimizer")) {
                std::cerr << "  cost " << p["optimizer"]["cost_before"].get<std::string>() << " -> "
                          << p["optimizer"]["cost_after"].get<std::string>() << "\n";
                for (const auto& r : p["optimizer"]["trace"]["applied"]) {
                    std::cerr << "  rewrite " << r.dump() << "\n";
                }
            }
        }
    }
    write_output(a.out, report.dump(2) + "\n");
    return kOk;
}

// ---- optimize ----

struct OptimizeArgs {
    ConfigFlags flags;
    std::string plans_file;
    std::string db;
    std::string out;
};

int cmd_optimize(const OptimizeArgs& a)
{
    const hyqe::RunConfig cfg = resolve_config(a.flags);
    const hyqe::Database db = load_db(a.db);
    std::vector<hyqe::PlanDag> plans = load_plans(a.plans_file);

    const bool compiled = std::all_of(plans.begin(), plans.end(), [](const hyqe::PlanDag& d) {
        return std::all_of(d.steps().begin(), d.steps().end(), [](const hyqe::PlanStep& s) { return s.params.has_value(); });
    });
    std::unique_ptr<hyqe::SemanticBackend> backend;
    if (!compiled) {
        if (cfg.backend.empty()) {
            throw CliFailure{kPlan, "plan has uncompiled steps; give --backend to compile them"};
        }
        backend = open_backend(cfg);
    }

    hyqe::OptimizerOptions oopts;
    oopts.allow_cross_products = cfg.allow_cross_products;
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (auto& dag : plans) {
        try {
            if (!compiled) {
                hyqe::PlannerEnv env;
                env.backend = backend.get();
                env.options.compile_attempts = cfg.compile_attempts;
                env.options.retries = cfg.semantic.retries;
                std::map<std::string, hyqe::Relation> previews;
                for (const auto& [name, r] : db.relations()) {
                    previews.emplace(name, hyqe::build_preview(r, "", cfg.k1, cfg.k2, cfg.seed, *backend, nullptr));
                }
                std::vector<std::string> notes;
                dag = hyqe::compile_plan(dag, db, previews, env, &notes);
                for (const auto& n : notes) {
                    std::cerr << dag.id() << ": " << n << "\n";
                }
            }
            nlohmann::ordered_json pj;
            pj["plan_id"] = dag.id();
            if (cfg.optimize) {
                const auto res = hyqe::optimize(dag, db, cfg.cost, oopts);
                pj["cost_before"] = hyqe::to_string(res.cost_before);
                pj["cost_after"] = hyqe::to_string(res.cost_after);
                pj["plan"] = hyqe::plan_to_json(res.plan);
                pj["trace"] = hyqe::to_json(res.trace);
                std::cerr << dag.id() << ": cost " << pj["cost_before"].get<std::string>() << " -> "
                          << pj["cost_after"].get<std::string>() << "\n";
            } else {
                const auto cost = hyqe::plan_cost(dag, hyqe::estimate_plan(dag, db, cfg.cost), cfg.cost);
                pj["cost_before"] = hyqe::to_string(cost);
                pj["cost_after"] = hyqe::to_string(cost);
                pj["plan"] = hyqe::plan_to_json(dag);
                pj["trace"] = hyqe::to_json(hyqe::RewriteTrace{});
            }
            out.push_back(std::move(pj));
        } catch (const hyqe::BackendError& e) {
            throw CliFailure{kBackend, dag.id() + ": " + e.what()};
        } catch (const hyqe::Error& e) {
            throw CliFailure{kPlan, dag.id() + ": " + e.what()};
        }
    }
    write_output(a.out, nlohmann::ordered_json{{"plans", std::move(out)}}.dump(2) + "\n");
    return kOk;
}

// ---- calibrate ----

struct CalibrateArgs {
    std::string sizes;
    std::uint64_t seed = 7;
    std::size_t repetitions = 3;
    std::string samples;
    bool no_backend = false;
    std::string out;
};

int cmd_calibrate(const CalibrateArgs& a)
{
    hyqe::CalibrationWorkload w;
    w.seed = a.seed;
    w.repetitions = a.repetitions;
    if (!a.sizes.empty()) {
        w.sizes.clear();
        for (const auto& s : split_list(a.sizes)) {
            try {
                w.sizes.push_back(std::stoul(s));
            } catch (const std::exception&) {
                throw CliFailure{kUsage, "bad size '" + s + "'"};
            }
        }
    }
    std::vector<hyqe::BackendSample> samples;
    if (!a.no_backend && !a.samples.empty()) {
        try {
            for (const auto& sj : nlohmann::json::parse(read_file(a.samples))) {
                samples.push_back({sj.at("latency_seconds").get<double>(), sj.at("tokens").get<std::uint64_t>()});
            }
        } catch (const nlohmann::json::exception& e) {
            throw CliFailure{kUsage, a.samples + ": " + e.what()};
        }
    }
    try {
        const auto report = hyqe::calibrate(w, samples, hyqe::default_scan_measurer(w));
        write_output(a.out, hyqe::to_json(report).dump(2) + "\n");
    } catch (const hyqe::Error& e) {
        throw CliFailure{kInternal, std::string("calibration failed: ") + e.what()};
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"hyqe: hybrid relational and semantic query engine"};
    app.require_subcommand(1);

    IngestArgs ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "Load CSV or JSON Lines files into a database bundle");
    ingest_cmd->add_option("files", ingest.files, "Input files; the table name is the file stem")->required();
    ingest_cmd->add_option("-o,--out", ingest.out, "Bundle path (default stdout)");
    ingest_cmd->add_option("--format", ingest.format, "csv or jsonl (default by extension)");
    ingest_cmd->add_option("--type", ingest.types, "[table.]column=kind type hint");
    ingest_cmd->add_option("--key", ingest.keys, "table=col[,col] primary key");
    ingest_cmd->add_option("--fk", ingest.fks, "table.col=ref_table.ref_col foreign key");
    ingest_cmd->add_flag("--clean", ingest.clean, "Normalize column names and blank cells");
    ingest_cmd->add_flag("--prune", ingest.prune, "Drop null-dominated, constant and non-informative columns");

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Answer a question over a bundle");
    run_cmd->add_option("-q,--question", run.question, "Natural-language question")->required();
    run_cmd->add_option("--db", run.db, "Database bundle")->required();
    run_cmd->add_option("--plans-file", run.plans_file, "Use these plans instead of planning");
    run_cmd->add_option("-o,--out", run.out, "Report path (default stdout)");
    run_cmd->add_flag("--explain", run.explain, "Print plans and rewrites to stderr");
    add_config_flags(run_cmd, run.flags, true);

    OptimizeArgs opt;
    auto* opt_cmd = app.add_subcommand("optimize", "Optimize plans against a bundle");
    opt_cmd->add_option("--plans-file", opt.plans_file, "Plan document")->required();
    opt_cmd->add_option("--db", opt.db, "Database bundle")->required();
    opt_cmd->add_option("-o,--out", opt.out, "Output path (default stdout)");
    add_config_flags(opt_cmd, opt.flags, false);

    CalibrateArgs cal;
    auto* cal_cmd = app.add_subcommand("calibrate", "Fit cost constants on a synthetic workload");
    cal_cmd->add_option("--sizes", cal.sizes, "Comma-separated row counts");
    cal_cmd->add_option("--seed", cal.seed, "Workload seed");
    cal_cmd->add_option("--repetitions", cal.repetitions, "Timing repetitions per size");
    cal_cmd->add_option("--backend-samples", cal.samples, "JSON list of {latency_seconds, tokens}");
    cal_cmd->add_flag("--no-backend", cal.no_backend, "Keep the default call constants");
    cal_cmd->add_option("-o,--out", cal.out, "Output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*ingest_cmd) {
            return cmd_ingest(ingest);
        }
        if (*run_cmd) {
            return cmd_run(run);
        }
        if (*opt_cmd) {
            return cmd_optimize(opt);
        }
        if (*cal_cmd) {
            return cmd_calibrate(cal);
        }
    } catch (const CliFailure& f) {
        std::cerr << "hyqe: " << f.message << "\n";
        return f.code;
    } catch (const std::exception& e) {
        std::cerr << "hyqe: internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kUsage;
}
