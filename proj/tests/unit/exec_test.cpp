#include <catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>

#include "hyqe/error.hpp"
#include "hyqe/exec_relational.hpp"
#include "hyqe/executor.hpp"
#include "hyqe/ingest.hpp"
#include "hyqe/semantic_exec.hpp"
#include "support.hpp"

using namespace hyqe;
using namespace hyqe::test;

namespace {

/// t(id, x, c) with nulls in x and c.
Database small_db(std::mt19937_64& rng, std::size_t n)
{
    std::vector<Row> rows;
    static const char* colours[] = {"red", "green", "blue"};
    for (std::size_t i = 0; i < n; ++i) {
        const bool null_x = rng() % 7 == 0;
        const bool null_c = rng() % 9 == 0;
        rows.push_back({Value(static_cast<double>(i)), null_x ? Value{} : Value(static_cast<double>(rng() % 20)),
                        null_c ? Value{} : Value(colours[rng() % 3])});
    }
    Database db;
    db.add(make_relation("t", {{"id", AttributeKind::Numeric}, {"x", AttributeKind::Numeric}, {"c", AttributeKind::Categorical}},
                         std::move(rows)));
    return db;
}

Relation run(const PlanDag& d, const Database& db, SemanticBackend* b = nullptr) { return execute_plan(d, db, b).result; }

FilterParams cmp(std::string col, CmpOp op, Value v) { return FilterParams{std::move(col), op, {std::move(v)}, std::nullopt}; }

Database operator_db()
{
    Database db;
    for (const char* t : {"products", "items", "reviews", "users", "orders", "employees"}) {
        std::ifstream in(fixture(std::string("operators/") + t + ".csv"));
        IngestOptions o;
        if (std::string(t) == "reviews") {
            o.type_hints["text"] = AttributeKind::Textual;
        }
        db.add(ingest_table(in, InputFormat::Csv, t, o));
    }
    return db;
}

SemanticContext context(SemanticBackend& b, TokenAccounting& acc, std::vector<std::string>& diags, std::size_t beta = 100)
{
    SemanticContext ctx;
    ctx.backend = &b;
    ctx.accounting = &acc;
    ctx.diagnostics = &diags;
    ctx.step = "step_2";
    ctx.options.batch.b = beta;
    return ctx;
}

}  // namespace

TEST_CASE("filters commute and conjoin")
{
    std::mt19937_64 rng(41);
    for (int i = 0; i < 30; ++i) {
        const Database db = small_db(rng, 60);
        const auto f1 = cmp("x", CmpOp::Gt, Value(static_cast<double>(rng() % 20)));
        const auto f2 = cmp("c", CmpOp::Ne, Value("red"));
        PlanBuilder a("a");
        const auto a1 = a.add(rel(OpKind::Scan), ScanParams{"t", {}}, {});
        a.add(rel(OpKind::Filter), f2, {a.add(rel(OpKind::Filter), f1, {a1})});
        PlanBuilder b("b");
        const auto b1 = b.add(rel(OpKind::Scan), ScanParams{"t", {}}, {});
        b.add(rel(OpKind::Filter), f1, {b.add(rel(OpKind::Filter), f2, {b1})});
        const Relation ra = run(a.build(), db);
        CHECK(same_result(ra, run(b.build(), db)));
        // Oracle: both predicates true; nulls never pass.
        std::size_t want = 0;
        for (const auto& row : db.at("t").rows()) {
            const bool p1 = !is_null(row[1]) && std::get<double>(row[1]) > std::get<double>(f1.values[0]);
            const bool p2 = !is_null(row[2]) && std::get<std::string>(row[2]) != "red";
            want += p1 && p2 ? 1 : 0;
        }
        CHECK(ra.size() == want);
    }
}

TEST_CASE("null tests and in lists use three-valued logic")
{
    std::mt19937_64 rng(42);
    const Database db = small_db(rng, 200);
    std::size_t nulls = 0;
    std::size_t in_list = 0;
    for (const auto& row : db.at("t").rows()) {
        nulls += is_null(row[1]) ? 1 : 0;
        in_list += !is_null(row[2]) && std::get<std::string>(row[2]) != "blue" ? 1 : 0;
    }
    auto count = [&](FilterParams f) {
        PlanBuilder p("p");
        p.add(rel(OpKind::Filter), f, {p.add(rel(OpKind::Scan), ScanParams{"t", {}}, {})});
        return run(p.build(), db).size();
    };
    CHECK(count(FilterParams{"x", CmpOp::IsNull, {}, std::nullopt}) == nulls);
    CHECK(count(FilterParams{"x", CmpOp::IsNotNull, {}, std::nullopt}) == 200 - nulls);
    CHECK(count(FilterParams{"c", CmpOp::In, {Value("red"), Value("green")}, std::nullopt}) == in_list);
    // NOT IN drops nulls as well.
    CHECK(count(FilterParams{"c", CmpOp::NotIn, {Value("red"), Value("green")}, std::nullopt}) +
              count(FilterParams{"c", CmpOp::In, {Value("red"), Value("green")}, std::nullopt}) +
              count(FilterParams{"c", CmpOp::IsNull, {}, std::nullopt}) ==
          200);
}

TEST_CASE("union adds, distinct is idempotent, intersection and difference partition")
{
    std::mt19937_64 rng(43);
    for (int i = 0; i < 20; ++i) {
        const Database db = small_db(rng, 80);
        // Plans must have one sink, so each builds only the branches it reads.
        auto plan = [&](bool with_hi, const std::function<void(PlanBuilder&, const std::string&, const std::string&)>& top) {
            PlanBuilder q("p");
            const auto s = q.add(rel(OpKind::Scan), ScanParams{"t", {"x", "c"}}, {});
            const auto lo = q.add(rel(OpKind::Filter), cmp("x", CmpOp::Lt, Value(12.0)), {s});
            const auto hi = with_hi ? q.add(rel(OpKind::Filter), cmp("x", CmpOp::Gt, Value(6.0)), {s}) : std::string();
            top(q, lo, hi);
            return run(q.build(), db);
        };
        auto set_op = [&](SetOpKind k) {
            return plan(true, [k](PlanBuilder& q, const std::string& lo, const std::string& hi) {
                q.add(rel(OpKind::SetOp), SetOpParams{k}, {lo, hi});
            });
        };
        const Relation u = set_op(SetOpKind::Union);
        const Relation inter = set_op(SetOpKind::Intersection);
        const Relation diff = set_op(SetOpKind::Difference);
        const Relation l = plan(false, [](PlanBuilder& q, const std::string& lo, const std::string&) {
            q.add(rel(OpKind::Distinct), DistinctParams{}, {lo});
        });
        const Relation twice = plan(false, [](PlanBuilder& q, const std::string& lo, const std::string&) {
            q.add(rel(OpKind::Distinct), DistinctParams{}, {q.add(rel(OpKind::Distinct), DistinctParams{}, {lo})});
        });

        std::size_t n_lo = 0;
        std::size_t n_hi = 0;
        for (const auto& row : db.at("t").rows()) {
            n_lo += !is_null(row[1]) && std::get<double>(row[1]) < 12 ? 1 : 0;
            n_hi += !is_null(row[1]) && std::get<double>(row[1]) > 6 ? 1 : 0;
        }
        CHECK(u.size() == n_lo + n_hi);
        CHECK(same_result(l, twice));
        CHECK(inter.size() + diff.size() == l.size());
        std::set<std::string> hk;
        for (const auto& row : db.at("t").rows()) {
            if (!is_null(row[1]) && std::get<double>(row[1]) > 6) {
                hk.insert(row_key({row[1], row[2]}));
            }
        }
        for (const auto& r : inter.rows()) {
            CHECK(hk.count(row_key(r)) == 1);
        }
        for (const auto& r : diff.rows()) {
            CHECK(hk.count(row_key(r)) == 0);
        }
    }
}

TEST_CASE("equi-joins match a nested-loop oracle and skip null keys")
{
    std::mt19937_64 rng(44);
    for (int i = 0; i < 20; ++i) {
        const Database db = random_chain_db(rng, 2, 80);
        PlanBuilder p("p");
        const auto a = p.add(rel(OpKind::Scan), ScanParams{"r0", {}}, {});
        const auto b = p.add(rel(OpKind::Scan), ScanParams{"r1", {}}, {});
        p.add(rel(OpKind::Join), JoinParams{"r0_id", CmpOp::Eq, "r1_p"}, {a, b});
        const Relation j = run(p.build(), db);
        std::size_t want = 0;
        for (const auto& l : db.at("r0").rows()) {
            for (const auto& r : db.at("r1").rows()) {
                const Value& k = r[db.at("r1").column_index("r1_p")];
                want += !is_null(k) && values_equal(l[0], k) ? 1 : 0;
            }
        }
        CHECK(j.size() == want);
        CHECK(j.arity() == db.at("r0").arity() + db.at("r1").arity());
    }
}

TEST_CASE("aggregates follow the null rules")
{
    Database db;
    db.add(make_relation("t", {{"g", AttributeKind::Categorical}, {"v", AttributeKind::Numeric}},
                         {{Value("a"), Value(1.0)}, {Value("a"), Value{}}, {Value("b"), Value{}}, {Value("a"), Value(5.0)}}));
    auto agg = [&](AggFunc f, std::vector<std::string> group, std::string target = "v") {
        PlanBuilder p("p");
        p.add(rel(OpKind::Aggregate), AggregateParams{f, std::move(target), std::move(group), "out"},
              {p.add(rel(OpKind::Scan), ScanParams{"t", {}}, {})});
        return run(p.build(), db);
    };
    const Relation sum = agg(AggFunc::Sum, {"g"});
    REQUIRE(sum.size() == 2);
    CHECK(render(sum.rows()[0][1]) == "6");
    CHECK(is_null(sum.rows()[1][1]));
    CHECK(render(agg(AggFunc::Count, {}).rows()[0][0]) == "2");
    CHECK(render(agg(AggFunc::Count, {}, "*").rows()[0][0]) == "4");
    CHECK(render(agg(AggFunc::Avg, {}).rows()[0][0]) == "3");
    CHECK(render(agg(AggFunc::Min, {}).rows()[0][0]) == "1");
    CHECK(render(agg(AggFunc::Max, {}).rows()[0][0]) == "5");
}

TEST_CASE("sort is stable with nulls first and limit truncates")
{
    std::mt19937_64 rng(45);
    const Database db = small_db(rng, 50);
    PlanBuilder p("p");
    const auto s = p.add(rel(OpKind::Scan), ScanParams{"t", {}}, {});
    const auto o = p.add(rel(OpKind::Sort), SortParams{"x", false}, {s});
    p.add(rel(OpKind::Limit), LimitParams{10}, {o});
    const Relation r = run(p.build(), db);
    REQUIRE(r.size() == 10);
    std::vector<Row> want = db.at("t").rows();
    std::stable_sort(want.begin(), want.end(), [](const Row& a, const Row& b) {
        if (is_null(a[1]) || is_null(b[1])) {
            return is_null(a[1]) && !is_null(b[1]);
        }
        return std::get<double>(a[1]) < std::get<double>(b[1]);
    });
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(render(r.rows()[i][0]) == render(want[i][0]));
    }
}

TEST_CASE("projection computes arithmetic and rejects unknown columns")
{
    std::mt19937_64 rng(46);
    const Database db = small_db(rng, 20);
    ProjectParams pp;
    pp.items.push_back(ProjectItem::column("id"));
    pp.items.push_back(ProjectItem{"twice", Operand{"x", {}}, ArithOp::Mul, Operand{std::nullopt, Value(2.0)}});
    PlanBuilder p("p");
    p.add(rel(OpKind::Project), pp, {p.add(rel(OpKind::Scan), ScanParams{"t", {}}, {})});
    const Relation r = run(p.build(), db);
    for (std::size_t i = 0; i < r.size(); ++i) {
        const Value& x = db.at("t").rows()[i][1];
        CHECK(render(r.rows()[i][1]) == (is_null(x) ? "" : render_number(2 * std::get<double>(x))));
    }
    ProjectParams bad;
    bad.items.push_back(ProjectItem::column("nope"));
    PlanBuilder q("q");
    q.add(rel(OpKind::Project), bad, {q.add(rel(OpKind::Scan), ScanParams{"t", {}}, {})});
    CHECK_THROWS_AS(execute_plan(q.build(), db, nullptr), ExecutionError);
}

TEST_CASE("materialized ids are single-assignment")
{
    ExecEnv env;
    materialize(env, "a", Relation("a", {}, {}));
    CHECK_THROWS_AS(materialize(env, "a", Relation("a", {}, {})), ExecutionError);
}

TEST_CASE("worked operator examples: filter, map, join, aggregate")
{
    const Database db = operator_db();
    MockBackend mock(nlohmann::json::parse(read_text(fixture("operators/rulebook.json"))));
    TokenAccounting acc;
    std::vector<std::string> diags;
    const auto ctx = context(mock, acc, diags);

    const Relation f = exec_filter("Return items with price > 100", db.at("items"), ctx);
    CHECK(row_multiset(f).size() == 2);
    std::set<std::string> ids;
    for (const auto& r : f.rows()) {
        ids.insert(render(r[0]));
    }
    CHECK(ids == std::set<std::string>{"2", "3"});

    const Relation m = exec_map("Add column 'sentiment' by classifying tone as positive/negative", "sentiment",
                                db.at("reviews"), ctx);
    REQUIRE(m.size() == 2);
    CHECK(m.column_names().back() == "sentiment");
    CHECK(render(m.rows()[0].back()) == "positive");
    CHECK(render(m.rows()[1].back()) == "negative");

    const Relation j = exec_join("Match users to orders by ID", db.at("users"), db.at("orders"), "orders", ctx);
    REQUIRE(j.size() == 2);
    CHECK(j.column_names() == std::vector<std::string>{"user_id", "name", "orders.user_id", "amount"});
    for (const auto& r : j.rows()) {
        CHECK(render(r[1]) == "Alice");
    }

    const Relation a = exec_aggregate("Calculate average salary", db.at("employees"), {}, "avg_salary", ctx);
    REQUIRE(a.size() == 1);
    CHECK(render(a.rows()[0][0]) == "85000");

    CHECK(acc.calls() >= 4);
    CHECK(acc.by_operator().size() == 4);
    CHECK(diags.empty());
}

TEST_CASE("map refuses to overwrite a column")
{
    const Database db = operator_db();
    MockBackend mock(nlohmann::json::parse(read_text(fixture("operators/rulebook.json"))));
    TokenAccounting acc;
    std::vector<std::string> diags;
    CHECK_THROWS_AS(exec_map("Add column 'sentiment' by classifying tone as positive/negative", "text", db.at("reviews"),
                             context(mock, acc, diags)),
                    SchemaError);
}

TEST_CASE("grouped semantic aggregation reduces per group")
{
    std::vector<Row> rows;
    for (int i = 0; i < 60; ++i) {
        rows.push_back({Value(i % 3 == 0 ? "a" : "b"), Value(static_cast<double>(i))});
    }
    const Relation r = make_relation("t", {{"g", AttributeKind::Categorical}, {"v", AttributeKind::Numeric}}, rows);
    MockBackend mock(nlohmann::json{{"aggregate", {{"sum v", {{"column", "v"}, {"function", "sum"}}}}}});
    TokenAccounting acc;
    std::vector<std::string> diags;
    const Relation out = exec_aggregate("sum v", r, {"g"}, "total", context(mock, acc, diags, 4));
    REQUIRE(out.size() == 2);
    double a = 0;
    double b = 0;
    for (int i = 0; i < 60; ++i) {
        (i % 3 == 0 ? a : b) += i;
    }
    for (const auto& row : out.rows()) {
        CHECK(render(row[1]) == render_number(render(row[0]) == "a" ? a : b));
    }
    std::size_t max_depth = 0;
    for (const auto& rec : acc.records()) {
        max_depth = std::max(max_depth, rec.depth);
    }
    CHECK(max_depth >= 1);
}

TEST_CASE("empty ungrouped semantic aggregation yields one null row")
{
    const Relation r = make_relation("t", {{"v", AttributeKind::Numeric}}, {});
    MockBackend mock(nlohmann::json{{"aggregate", {{"sum v", {{"column", "v"}, {"function", "sum"}}}}}});
    TokenAccounting acc;
    std::vector<std::string> diags;
    const Relation out = exec_aggregate("sum v", r, {}, "total", context(mock, acc, diags));
    REQUIRE(out.size() == 1);
    CHECK(is_null(out.rows()[0][0]));
    CHECK(diags.size() == 1);
    CHECK(acc.calls() == 0);
}

namespace {

/// Returns a malformed reply on the first call of every filter batch.
class FlakyBackend : public MockBackend {
public:
    using MockBackend::MockBackend;
    BackendReply filter(const std::string& i, const Rows& rows) override
    {
        if (fail_next_.exchange(false)) {
            return {nlohmann::json{{"not", "a list"}}, Usage{1, 1}};
        }
        return MockBackend::filter(i, rows);
    }
    std::atomic<bool> fail_next_{true};
};

class BrokenBackend : public MockBackend {
public:
    using MockBackend::MockBackend;
    BackendReply filter(const std::string&, const Rows&) override { return {nlohmann::json{7, 99}, Usage{1, 1}}; }
};

}  // namespace

TEST_CASE("malformed replies are retried, then surface as contract violations")
{
    const Database db = operator_db();
    const auto rules = nlohmann::json::parse(read_text(fixture("operators/rulebook.json")));
    TokenAccounting acc;
    std::vector<std::string> diags;
    FlakyBackend flaky(rules);
    const Relation f = exec_filter("Return items with price > 100", db.at("items"), context(flaky, acc, diags));
    CHECK(f.size() == 2);
    std::size_t retried = 0;
    for (const auto& r : acc.records()) {
        retried += r.attempt > 0 ? 1 : 0;
    }
    CHECK(retried == 1);
    BrokenBackend broken(rules);
    CHECK_THROWS_AS(exec_filter("Return items with price > 100", db.at("items"), context(broken, acc, diags)),
                    ContractViolation);
}

TEST_CASE("backend cells are coerced to the column kind")
{
    CHECK(coerce_cell(nlohmann::json("12"), AttributeKind::Numeric) == Value(12.0));
    CHECK(coerce_cell(nlohmann::json(true), AttributeKind::Boolean) == Value(true));
    CHECK(is_null(coerce_cell(nlohmann::json(nullptr), AttributeKind::Numeric)));
    CHECK_THROWS_AS(coerce_cell(nlohmann::json("twelve"), AttributeKind::Numeric), ContractViolation);
}

TEST_CASE("parallel_for rethrows the lowest failing index")
{
    std::atomic<int> ran{0};
    try {
        parallel_for(50, 8, [&](std::size_t i) {
            ++ran;
            if (i == 7 || i == 31) {
                throw std::runtime_error(std::to_string(i));
            }
        });
        FAIL("no exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "7");
    }
    CHECK(ran == 50);
}

TEST_CASE("execution writes a trace file per step")
{
    const auto fx = deferral_fixture();
    MockBackend mock(fx.rulebook);
    const auto dir = std::filesystem::temp_directory_path() / "hyqe_exec_trace";
    std::filesystem::remove_all(dir);
    ExecutionOptions opts;
    opts.trace_dir = dir;
    const auto rep = execute_plan(fx.plan, fx.db, &mock, opts);
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) {
        ++files;
    }
    CHECK(files == fx.plan.size());
    CHECK(rep.step_rows.size() == fx.plan.size());
    CHECK(rep.sink == fx.plan.sink());
    std::filesystem::remove_all(dir);
}

TEST_CASE("a semantic plan without a backend fails as an execution error")
{
    const auto fx = deferral_fixture();
    CHECK_THROWS_AS(execute_plan(fx.plan, fx.db, nullptr), ExecutionError);
}
