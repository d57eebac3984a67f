#include "hyqe/cost.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <set>
#include <sstream>

#include "hyqe/error.hpp"
#include "hyqe/ingest.hpp"
#include "hyqe/schema.hpp"

namespace hyqe {

void CostModelParams::check() const
{
    if (epsilon < 1) {
        throw ContractViolation("epsilon must be at least 1");
    }
    if (tau < 2) {
        throw ContractViolation("tau must be at least 2");
    }
    if (c_cpu < 0 || c_io < 0 || c_call < 0 || alpha < 0) {
        throw ContractViolation("unit costs must be nonnegative");
    }
    if (w_sys < 0 || w_llm < 0) {
        throw ContractViolation("cost weights must be nonnegative");
    }
    if (page_size == 0) {
        throw ContractViolation("page_size must be positive");
    }
    if (range_selectivity < 0 || range_selectivity > 1 || semantic_selectivity < 0 || semantic_selectivity > 1) {
        throw ContractViolation("selectivities must lie in [0, 1]");
    }
}

nlohmann::ordered_json to_json(const CostModelParams& p)
{
    nlohmann::ordered_json j;
    j["c_cpu"] = to_double(p.c_cpu);
    j["c_io"] = to_double(p.c_io);
    j["c_call"] = to_double(p.c_call);
    j["alpha"] = to_double(p.alpha);
    j["w_sys"] = to_double(p.w_sys);
    j["w_llm"] = to_double(p.w_llm);
    j["epsilon"] = to_double(p.epsilon);
    j["tau"] = p.tau;
    j["page_size"] = p.page_size;
    j["range_selectivity"] = to_double(p.range_selectivity);
    j["semantic_selectivity"] = to_double(p.semantic_selectivity);
    return j;
}

namespace {

Rational read_rational(const nlohmann::json& v, const char* key)
{
    if (v.is_number()) {
        // The serialized decimal is what the user wrote, e.g. 0.001.
        return rational_from_string(v.dump());
    }
    if (v.is_string()) {
        return rational_from_string(v.get<std::string>());
    }
    throw ParseError(std::string("'") + key + "' must be a number");
}

}  // namespace

CostModelParams cost_params_from_json(const nlohmann::json& j, CostModelParams base)
{
    if (!j.is_object()) {
        throw ParseError("cost parameters must be an object");
    }
    auto set = [&](const char* key, Rational& field) {
        if (j.contains(key)) {
            field = read_rational(j.at(key), key);
        }
    };
    set("c_cpu", base.c_cpu);
    set("c_io", base.c_io);
    set("c_call", base.c_call);
    set("alpha", base.alpha);
    set("w_sys", base.w_sys);
    set("w_llm", base.w_llm);
    set("epsilon", base.epsilon);
    set("range_selectivity", base.range_selectivity);
    set("semantic_selectivity", base.semantic_selectivity);
    if (j.contains("tau")) {
        base.tau = j.at("tau").get<std::size_t>();
    }
    if (j.contains("page_size")) {
        base.page_size = j.at("page_size").get<std::uint64_t>();
    }
    base.check();
    return base;
}

Rational join_card(const Rational& size_a, const Rational& size_b, const Rational& distinct_a, const Rational& distinct_b)
{
    if (size_a == 0 || size_b == 0) {
        return 0;
    }
    const Rational d = std::max(distinct_a, distinct_b);
    if (d == 0) {
        throw PlanningError("degenerate join statistics: both key distinct counts are 0 over nonempty inputs");
    }
    return size_a * size_b / d;
}

std::uint64_t estimate_join_card(std::uint64_t size_a, std::uint64_t size_b, std::uint64_t distinct_a,
                                 std::uint64_t distinct_b)
{
    const Rational v = join_card(Rational(size_a), Rational(size_b), Rational(distinct_a), Rational(distinct_b));
    return floor_of(v).convert_to<std::uint64_t>();
}

std::uint64_t estimate_union_card(std::uint64_t size_a, std::uint64_t size_b) { return size_a + size_b; }

Rational sys_cost(const Rational& gamma_in, const Rational& pages, const CostModelParams& p)
{
    return gamma_in * p.c_cpu + pages * p.c_io;
}

Rational llm_cost(const Rational& gamma_in, const Rational& expected_tokens, const CostModelParams& p)
{
    return gamma_in * (p.c_call + p.alpha * expected_tokens);
}

Rational pages_for(const Rational& rows, const Rational& row_bytes, std::uint64_t page_size)
{
    return Rational(ceil_of(rows * row_bytes / Rational(page_size)));
}

namespace {

struct Shape {
    Rational rows;
    std::vector<ColumnStats> cols;

    Rational row_bytes() const
    {
        Rational b = 0;
        for (const auto& c : cols) {
            b += c.bytes;
        }
        return b;
    }
    Rational row_tokens() const
    {
        Rational t = 0;
        for (const auto& c : cols) {
            t += c.tokens;
        }
        return t;
    }
};

ColumnStats base_stats(const Column& c)
{
    ColumnStats s;
    s.name = c.name;
    s.distinct = c.profile.distinct_count;
    s.bytes = rational_from_double(c.profile.avg_bytes);
    s.tokens = c.kind == AttributeKind::Textual && c.profile.expected_token_len > 0
                   ? rational_from_double(c.profile.expected_token_len)
                   : Rational(1);
    s.null_fraction = rational_from_double(c.profile.null_fraction);
    return s;
}

ColumnStats computed_stats(const std::string& name, const Rational& rows, Rational bytes, Rational tokens)
{
    return ColumnStats{name, rows, std::move(bytes), std::move(tokens), 0};
}

const ColumnStats& stats_of(const Shape& s, const Schema& schema, std::string_view name)
{
    return s.cols[require_column(schema, name)];
}

Rational product_distinct(const Shape& in, const Schema& schema, const std::vector<std::string>& cols)
{
    Rational prod = 1;
    for (const auto& c : cols) {
        prod *= std::max(Rational(1), stats_of(in, schema, c).distinct);
    }
    return prod;
}

Rational filter_fraction(const FilterParams& f, const ColumnStats& c, const CostModelParams& p)
{
    const Rational d = c.distinct;
    switch (f.op) {
    case CmpOp::Eq:
        if (f.rhs_column) {
            return p.range_selectivity;
        }
        return d == 0 ? Rational(0) : Rational(1) / d;
    case CmpOp::Ne:
        if (f.rhs_column) {
            return p.range_selectivity;
        }
        return d == 0 ? Rational(0) : Rational(1) - Rational(1) / d;
    case CmpOp::In:
        return d == 0 ? Rational(0) : std::min(Rational(1), Rational(f.values.size()) / d);
    case CmpOp::NotIn:
        return d == 0 ? Rational(0) : std::max(Rational(0), Rational(1) - Rational(f.values.size()) / d);
    case CmpOp::IsNull:
        return c.null_fraction;
    case CmpOp::IsNotNull:
        return Rational(1) - c.null_fraction;
    default:
        return p.range_selectivity;
    }
}

}  // namespace

PlanEstimates estimate_plan(const PlanDag& dag, const Database& db, const CostModelParams& p)
{
    PlanEstimates out;
    std::map<std::string, Shape> shapes;
    std::map<std::string, Schema> schemas;

    for (const auto& id : topo_order(dag)) {
        const PlanStep& step = dag.at(id);
        std::vector<const Schema*> in_schemas;
        std::vector<const Shape*> in;
        for (const auto& pid : dag.input_ids(step)) {
            in_schemas.push_back(&schemas.at(pid));
            in.push_back(&shapes.at(pid));
        }
        Schema schema = output_schema(step, in_schemas, db);
        Shape shape;
        StepEstimate est;
        est.card.basis = CardBasis::Formula;
        Rational in_bytes = 0;
        for (const auto* s : in) {
            in_bytes += s->rows * s->row_bytes();
        }

        if (step.op.semantic()) {
            const auto& sp = std::get<SemanticParams>(*step.params);
            Rational gamma_in = 0;
            Rational tokens = 0;
            for (const auto* s : in) {
                gamma_in += s->rows;
                tokens += s->rows * s->row_tokens();
            }
            est.card.gamma_in = gamma_in;
            est.expected_tokens = gamma_in == 0 ? Rational(0) : tokens / gamma_in;
            switch (step.op.kind) {
            case OpKind::Filter:
                shape = *in[0];
                shape.rows = in[0]->rows * p.semantic_selectivity;
                break;
            case OpKind::Map:
                shape = *in[0];
                shape.cols.push_back(computed_stats(sp.new_column, shape.rows, 16, 2));
                break;
            case OpKind::Join: {
                shape.rows = (in[0]->rows == 0 || in[1]->rows == 0) ? Rational(0) : std::max(in[0]->rows, in[1]->rows);
                auto layout = join_layout(*in_schemas[0], *in_schemas[1], step.parents[1], nullptr);
                shape.cols = in[0]->cols;
                for (std::size_t k = 0; k < layout.right_kept.size(); ++k) {
                    ColumnStats c = in[1]->cols[layout.right_kept[k]];
                    c.name = layout.columns[in[0]->cols.size() + k].name;
                    shape.cols.push_back(std::move(c));
                }
                break;
            }
            case OpKind::Aggregate: {
                shape.rows = sp.group_by.empty() ? Rational(1)
                                                 : std::min(in[0]->rows, product_distinct(*in[0], *in_schemas[0], sp.group_by));
                for (const auto& g : sp.group_by) {
                    shape.cols.push_back(stats_of(*in[0], *in_schemas[0], g));
                }
                shape.cols.push_back(computed_stats(semantic_output_column(sp), shape.rows, 16, 4));
                break;
            }
            default:
                throw PlanningError(id + ": unsupported semantic operator");
            }
        } else {
            std::visit(
                [&](const auto& prm) {
                    using T = std::decay_t<decltype(prm)>;
                    if constexpr (std::is_same_v<T, ScanParams>) {
                        const Relation& base = db.at(prm.table);
                        shape.rows = base.size();
                        for (const auto& c : schema) {
                            shape.cols.push_back(base_stats(c));
                        }
                        est.card.gamma_in = shape.rows;
                        est.card.basis = CardBasis::Exact;
                        in_bytes = shape.rows * shape.row_bytes();
                    } else if constexpr (std::is_same_v<T, FilterParams>) {
                        shape = *in[0];
                        est.card.gamma_in = in[0]->rows;
                        shape.rows = in[0]->rows * filter_fraction(prm, stats_of(*in[0], *in_schemas[0], prm.column), p);
                    } else if constexpr (std::is_same_v<T, ProjectParams>) {
                        shape.rows = in[0]->rows;
                        est.card.gamma_in = in[0]->rows;
                        for (const auto& it : prm.items) {
                            if (!it.op && it.lhs.column) {
                                ColumnStats c = stats_of(*in[0], *in_schemas[0], *it.lhs.column);
                                c.name = it.name;
                                shape.cols.push_back(std::move(c));
                            } else {
                                shape.cols.push_back(computed_stats(it.name, shape.rows, 8, 1));
                            }
                        }
                    } else if constexpr (std::is_same_v<T, AggregateParams>) {
                        est.card.gamma_in = in[0]->rows;
                        shape.rows = prm.group_by.empty()
                                         ? Rational(1)
                                         : std::min(in[0]->rows, product_distinct(*in[0], *in_schemas[0], prm.group_by));
                        for (const auto& g : prm.group_by) {
                            shape.cols.push_back(stats_of(*in[0], *in_schemas[0], g));
                        }
                        shape.cols.push_back(computed_stats(prm.output, shape.rows, 8, 1));
                    } else if constexpr (std::is_same_v<T, JoinParams>) {
                        auto layout = join_layout(*in_schemas[0], *in_schemas[1], step.parents[1], &prm);
                        const Rational a = in[0]->rows;
                        const Rational b = in[1]->rows;
                        est.card.gamma_in = a + b;
                        if (prm.op == CmpOp::Eq) {
                            const Rational da = in[0]->cols[*layout.left_key].distinct;
                            const Rational db_ = in[1]->cols[*layout.right_key].distinct;
                            shape.rows = (a == 0 || b == 0 || std::max(da, db_) == 0) ? Rational(0) : join_card(a, b, da, db_);
                        } else {
                            shape.rows = a * b * p.range_selectivity;
                        }
                        shape.cols = in[0]->cols;
                        for (std::size_t k = 0; k < layout.right_kept.size(); ++k) {
                            ColumnStats c = in[1]->cols[layout.right_kept[k]];
                            c.name = layout.columns[in[0]->cols.size() + k].name;
                            shape.cols.push_back(std::move(c));
                        }
                    } else if constexpr (std::is_same_v<T, SortParams>) {
                        shape = *in[0];
                        est.card.gamma_in = in[0]->rows;
                    } else if constexpr (std::is_same_v<T, LimitParams>) {
                        shape = *in[0];
                        est.card.gamma_in = in[0]->rows;
                        shape.rows = std::min(in[0]->rows, Rational(prm.n));
                    } else if constexpr (std::is_same_v<T, SetOpParams>) {
                        shape = *in[0];
                        const Rational a = in[0]->rows;
                        const Rational b = in[1]->rows;
                        est.card.gamma_in = a + b;
                        switch (prm.kind) {
                        case SetOpKind::Union:
                            shape.rows = a + b;
                            break;
                        case SetOpKind::Intersection:
                            shape.rows = std::min(a, b);
                            break;
                        case SetOpKind::Difference:
                            shape.rows = a;
                            break;
                        }
                    } else if constexpr (std::is_same_v<T, DistinctParams>) {
                        shape = *in[0];
                        est.card.gamma_in = in[0]->rows;
                        std::vector<std::string> cols = prm.columns;
                        if (cols.empty()) {
                            for (const auto& c : *in_schemas[0]) {
                                cols.push_back(c.name);
                            }
                        }
                        shape.rows = std::min(in[0]->rows, product_distinct(*in[0], *in_schemas[0], cols));
                    }
                },
                *step.params);
        }
        for (auto& c : shape.cols) {
            c.distinct = std::min(c.distinct, shape.rows);
        }
        est.card.gamma_out = shape.rows;
        est.out_row_bytes = shape.row_bytes();
        for (const auto& c : shape.cols) {
            est.distinct[c.name] = c.distinct;
        }
        est.pages = step.op.semantic() ? Rational(0) : pages_for(in_bytes, 1, p.page_size);
        out.emplace(id, std::move(est));
        shapes.emplace(id, std::move(shape));
        schemas.emplace(id, std::move(schema));
    }
    return out;
}

Rational step_cost(const PlanStep& step, const StepEstimate& e, const CostModelParams& p)
{
    if (step.op.semantic()) {
        return p.w_llm * llm_cost(e.card.gamma_in, e.expected_tokens, p);
    }
    return p.w_sys * sys_cost(e.card.gamma_in, e.pages, p);
}

Rational plan_cost(const PlanDag& dag, const PlanEstimates& stats, const CostModelParams& p)
{
    Rational total = 0;
    for (const auto& step : dag.steps()) {
        auto it = stats.find(step.id);
        if (it == stats.end()) {
            throw PlanningError("no estimate for step '" + step.id + "'");
        }
        total += step_cost(step, it->second, p);
    }
    return total;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size()) {
        throw PlanningError("fit inputs differ in length");
    }
    std::set<double> distinct(x.begin(), x.end());
    if (distinct.size() < 2) {
        throw PlanningError("degenerate fit: fewer than 2 distinct sizes");
    }
    const double n = static_cast<double>(x.size());
    double mx = 0;
    double my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0;
    double sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    for (std::size_t i = 0; i < x.size(); ++i) {
        f.residuals.push_back(y[i] - (f.intercept + f.slope * x[i]));
    }
    return f;
}

Relation synthetic_relation(std::size_t rows, std::size_t text_words, std::uint64_t seed)
{
    static const char* const vocab[] = {"alpha", "river", "stone", "market", "signal", "harbor", "copper", "garden",
                                        "orbit", "lantern", "meadow", "canyon", "ember", "forest", "glacier", "summit"};
    constexpr std::size_t vocab_size = sizeof(vocab) / sizeof(vocab[0]);
    std::mt19937_64 rng(seed);
    std::vector<Column> cols(4);
    cols[0].name = "id";
    cols[0].kind = AttributeKind::Numeric;
    cols[1].name = "value";
    cols[1].kind = AttributeKind::Numeric;
    cols[2].name = "category";
    cols[2].kind = AttributeKind::Categorical;
    cols[3].name = "note";
    cols[3].kind = AttributeKind::Textual;
    std::vector<Row> data;
    data.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        std::string text;
        for (std::size_t w = 0; w < text_words; ++w) {
            text += (w ? " " : "") + std::string(vocab[rng() % vocab_size]);
        }
        data.push_back(Row{static_cast<double>(i), static_cast<double>(rng() % 10000),
                           "cat" + std::to_string(rng() % 10), std::move(text)});
    }
    Relation r("synthetic", std::move(cols), std::move(data));
    r.reprofile();
    return r;
}

ScanMeasurer default_scan_measurer(const CalibrationWorkload& w)
{
    return [w](std::size_t rows) {
        const Relation r = synthetic_relation(rows, w.text_words, w.seed);
        using clock = std::chrono::steady_clock;
        ScanMeasurement m;
        m.rows = rows;
        double best_cpu = -1;
        double best_io = -1;
        std::size_t bytes = 0;
        for (std::size_t rep = 0; rep < std::max<std::size_t>(1, w.repetitions); ++rep) {
            auto t0 = clock::now();
            std::size_t hits = 0;
            for (const auto& row : r.rows()) {
                hits += std::get<double>(row[1]) > 5000.0 ? 1 : 0;
            }
            auto t1 = clock::now();
            std::ostringstream os;
            write_csv(os, r);
            auto t2 = clock::now();
            bytes = os.str().size() + (hits & 0);
            const double cpu = std::chrono::duration<double>(t1 - t0).count();
            const double io = std::chrono::duration<double>(t2 - t1).count();
            best_cpu = best_cpu < 0 ? cpu : std::min(best_cpu, cpu);
            best_io = best_io < 0 ? io : std::min(best_io, io);
        }
        m.cpu_seconds = best_cpu;
        m.io_seconds = best_io;
        m.pages = (bytes + 8191) / 8192;
        return m;
    };
}

CalibrationReport calibrate(const CalibrationWorkload& w, const std::vector<BackendSample>& backend_stats,
                            const ScanMeasurer& measure, CostModelParams base)
{
    std::set<std::size_t> sizes(w.sizes.begin(), w.sizes.end());
    if (sizes.size() < 2) {
        throw PlanningError("degenerate fit: fewer than 2 distinct sizes");
    }
    CalibrationReport report;
    std::vector<double> rows;
    std::vector<double> pages;
    std::vector<double> cpu;
    std::vector<double> io;
    for (auto n : w.sizes) {
        ScanMeasurement m = measure(n);
        rows.push_back(static_cast<double>(m.rows));
        pages.push_back(static_cast<double>(m.pages));
        cpu.push_back(m.cpu_seconds);
        io.push_back(m.io_seconds);
        report.measurements.push_back(m);
    }
    LinearFit cpu_fit = fit_line(rows, cpu);
    LinearFit io_fit = fit_line(pages, io);
    if (cpu_fit.slope <= 0 || io_fit.slope <= 0) {
        throw PlanningError("degenerate fit: measured time does not grow with size");
    }
    base.c_cpu = rational_from_double(cpu_fit.slope);
    base.c_io = rational_from_double(io_fit.slope);
    report.cpu_residuals = cpu_fit.residuals;
    report.io_residuals = io_fit.residuals;

    report.backend_samples = backend_stats.size();
    std::set<std::uint64_t> token_counts;
    for (const auto& s : backend_stats) {
        token_counts.insert(s.tokens);
    }
    if (token_counts.size() >= 2) {
        std::vector<double> x;
        std::vector<double> y;
        for (const auto& s : backend_stats) {
            x.push_back(static_cast<double>(s.tokens));
            y.push_back(s.latency_seconds);
        }
        LinearFit f = fit_line(x, y);
        if (f.slope >= 0 && f.intercept >= 0) {
            base.alpha = rational_from_double(f.slope);
            base.c_call = rational_from_double(f.intercept);
            report.backend_fitted = true;
        }
    }
    report.params = base;
    return report;
}

nlohmann::ordered_json to_json(const CalibrationReport& r)
{
    nlohmann::ordered_json j;
    j["params"] = to_json(r.params);
    auto ms = nlohmann::ordered_json::array();
    for (const auto& m : r.measurements) {
        ms.push_back({{"rows", m.rows}, {"pages", m.pages}, {"cpu_seconds", m.cpu_seconds}, {"io_seconds", m.io_seconds}});
    }
    j["measurements"] = ms;
    j["cpu_residuals"] = r.cpu_residuals;
    j["io_residuals"] = r.io_residuals;
    j["samples"] = {{"scan", r.measurements.size()}, {"backend", r.backend_samples}};
    j["backend_fitted"] = r.backend_fitted;
    return j;
}

}  // namespace hyqe
