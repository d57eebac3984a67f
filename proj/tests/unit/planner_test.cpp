#include <catch_amalgamated.hpp>

#include <fstream>
#include <random>
#include <set>

#include "hyqe/error.hpp"
#include "hyqe/ingest.hpp"
#include "hyqe/planner.hpp"
#include "hyqe/prompts.hpp"
#include "support.hpp"

using namespace hyqe;
using namespace hyqe::test;

namespace {

Database ncaa_semi()
{
    Database db;
    for (const char* t : {"college", "tryout"}) {
        std::ifstream in(fixture(std::string("ncaa/semi/") + t + ".csv"));
        IngestOptions o;
        o.type_hints["notes"] = AttributeKind::Textual;
        o.type_hints["description"] = AttributeKind::Textual;
        db.add(ingest_table(in, InputFormat::Csv, t, o));
    }
    return db;
}

nlohmann::json ncaa_rules() { return nlohmann::json::parse(read_text(fixture("ncaa/rulebook.json"))); }

std::string ncaa_question() { return trim(read_text(fixture("ncaa/question.txt"))); }

Relation items()
{
    return make_relation("items", {{"id", AttributeKind::Numeric}, {"price", AttributeKind::Numeric}},
                         {{Value(1.0), Value(50.0)}, {Value(2.0), Value(150.0)}, {Value(3.0), Value(120.0)}});
}

}  // namespace

TEST_CASE("key columns include referenced columns")
{
    Database db;
    Relation a = make_relation("a", {{"id", AttributeKind::Numeric}, {"v", AttributeKind::Textual}}, {});
    Relation b = make_relation("b", {{"bid", AttributeKind::Numeric}, {"a_ref", AttributeKind::Numeric}}, {});
    b.set_keys({"bid"}, {ForeignKey{"a_ref", "a", "id"}});
    db.add(a);
    db.add(b);
    CHECK(key_columns(db.at("a"), db) == std::vector<std::string>{"id"});
    CHECK(key_columns(db.at("b"), db) == std::vector<std::string>{"bid", "a_ref"});
}

TEST_CASE("pruning keeps keys, drops invented names, and keeps everything on an empty answer")
{
    Database db;
    Relation a = make_relation("a", {{"id", AttributeKind::Numeric}, {"v", AttributeKind::Textual}, {"w", AttributeKind::Textual}},
                               {});
    a.set_keys({"id"}, {});
    db.add(a);
    db.add(make_relation("b", {{"x", AttributeKind::Numeric}, {"y", AttributeKind::Numeric}}, {}));
    MockBackend mock(nlohmann::json{{"prune", {{"a", {"w", "ghost"}}, {"b", nlohmann::json::array()}}}});
    PlannerEnv env{&mock, {}, nullptr};
    std::vector<std::string> diags;
    const auto keep = semantic_prune_schema(db, "what is w?", env, &diags);
    CHECK(keep.at("a") == std::vector<std::string>{"id", "w"});
    CHECK(keep.at("b") == std::vector<std::string>{"x", "y"});
    CHECK_FALSE(diags.empty());
    const Database refined = apply_pruning(db, keep);
    CHECK(refined.at("a").column_names() == std::vector<std::string>{"id", "w"});
}

TEST_CASE("preview takes the closest rows, then a seeded sample")
{
    std::vector<Row> rows;
    for (int i = 0; i < 40; ++i) {
        rows.push_back({Value(static_cast<double>(i)), Value(i == 17 ? "the goalie was accepted" : "filler text " + std::to_string(i))});
    }
    const Relation r = make_relation("t", {{"id", AttributeKind::Numeric}, {"note", AttributeKind::Textual}}, rows);
    MockBackend mock(nlohmann::json::object());
    const auto idx = preview_indices(r, "which goalie was accepted", 3, 4, 9, mock);
    REQUIRE(idx.size() >= 3);
    CHECK(idx.size() <= 7);
    CHECK(idx[0] == 17);
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == idx.size());
    CHECK(preview_indices(r, "which goalie was accepted", 3, 4, 9, mock) == idx);
    // Small relations are shown whole.
    const Relation tiny = make_relation("s", {{"id", AttributeKind::Numeric}}, {{Value(1.0)}, {Value(2.0)}});
    CHECK(preview_indices(tiny, "q", 3, 4, 9, mock) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("decomposition returns the planner's plans with the strategy in the prompt")
{
    const Database db = ncaa_semi();
    MockBackend inner(ncaa_rules());
    RecordingBackend rec(inner);
    PlannerEnv env{&rec, {}, nullptr};
    const auto ctx = prepare_context(db, ncaa_question(), env);
    CHECK(ctx.preview.size() == 2);
    DiversificationStrategy s;
    s.k = 2;
    const auto plans = ground_and_decompose(ctx, s, env);
    CHECK(plans.size() == 2);
    REQUIRE(rec.plan_calls().size() == 1);
    CHECK(rec.plan_calls()[0].system_prompt.find(s.text()) != std::string::npos);
    CHECK(rec.plan_calls()[0].user_prompt.find(ncaa_question()) != std::string::npos);

    const auto naive = DiversificationStrategy::none(1);
    CHECK(naive.text().empty());
    const auto one = ground_and_decompose(ctx, naive, env);
    CHECK(one.size() == 1);
}

TEST_CASE("strategy bounds")
{
    DiversificationStrategy s;
    s.k = 0;
    CHECK_THROWS_AS(s.check(), ContractViolation);
    s.k = 3;
    s.dimensions.clear();
    CHECK_THROWS_AS(s.check(), ContractViolation);
    CHECK_NOTHROW(DiversificationStrategy::none(3).check());
}

TEST_CASE("no valid plan is a planning error")
{
    const Database db = ncaa_semi();
    MockBackend mock(nlohmann::json{{"plans", {{"*", "{\"plans\":[{\"steps\":[]}]}"}}}});
    PlannerEnv env{&mock, {}, nullptr};
    QueryContext ctx;
    ctx.question = "anything";
    ctx.refined_db = db;
    CHECK_THROWS_AS(ground_and_decompose(ctx, DiversificationStrategy::none(1), env), PlanningError);
}

TEST_CASE("compile feeds errors back until the params check out")
{
    Database db;
    db.add(items());
    const std::string instr = "Return rows from step_1 where price > 100";
    MockBackend mock(nlohmann::json{
        {"compile",
         {{instr,
           {{{"kind", "filter"}, {"column", "prc"}, {"op", ">"}, {"value", 100}},
            {{"kind", "filter"}, {"column", "price"}, {"op", ">"}, {"value", 100}}}}}}});
    TokenAccounting acc;
    PlannerEnv env{&mock, {}, &acc};
    const Schema schema = db.at("items").columns();
    PlanStep step{"step_2", rel(OpKind::Filter), instr, std::nullopt, {"step_1"}};
    std::vector<std::string> diags;
    const PlanStep out = compile_instruction(step, {StepInput{"step_1", &schema}}, db, {}, env, &diags);
    REQUIRE(out.params.has_value());
    CHECK(std::get<FilterParams>(*out.params).column == "price");
    CHECK(acc.calls() == 2);

    // Every attempt wrong: the error carries each attempt's problem.
    MockBackend bad(nlohmann::json{
        {"compile", {{instr, {{{"kind", "filter"}, {"column", "prc"}, {"op", ">"}, {"value", 100}}}}}}});
    PlannerEnv bad_env{&bad, {}, nullptr};
    try {
        compile_instruction(step, {StepInput{"step_1", &schema}}, db, {}, bad_env);
        FAIL("expected a planning error");
    } catch (const PlanningError& e) {
        const std::string what = e.what();
        std::size_t mentions = 0;
        for (auto pos = what.find("prc"); pos != std::string::npos; pos = what.find("prc", pos + 1)) {
            ++mentions;
        }
        CHECK(mentions >= 3);
    }
}

TEST_CASE("check_compiled flags unknown columns, wrong kinds and compound conditions")
{
    Database db;
    db.add(items());
    const Schema schema = db.at("items").columns();
    const std::vector<StepInput> in{StepInput{"step_1", &schema}};
    PlanStep s{"step_2", rel(OpKind::Filter), "Return rows from step_1 where price > 100", std::nullopt, {"step_1"}};
    s.params = FilterParams{"price", CmpOp::Gt, {Value(100.0)}, std::nullopt};
    CHECK(check_compiled(s, in, db).empty());
    s.params = FilterParams{"nope", CmpOp::Gt, {Value(100.0)}, std::nullopt};
    CHECK_FALSE(check_compiled(s, in, db).empty());
    s.params = JoinParams{"price", CmpOp::Eq, "id"};
    CHECK_FALSE(check_compiled(s, in, db).empty());
    s.params = FilterParams{"price", CmpOp::Gt, {Value(100.0)}, std::nullopt};
    s.instruction = "Return rows from step_1 where price > 100 and price < 200";
    CHECK_FALSE(check_compiled(s, in, db).empty());
}

TEST_CASE("semantic steps compile locally from their templates")
{
    Database db;
    db.add(items());
    MockBackend mock(nlohmann::json::object());
    TokenAccounting acc;
    PlannerEnv env{&mock, {}, &acc};
    const Schema schema = db.at("items").columns();
    PlanStep s{"step_2", sem(OpKind::Filter),
               "Return rows from step_1 satisfying the semantic condition: the price looks high", std::nullopt, {"step_1"}};
    const PlanStep out = compile_instruction(s, {StepInput{"step_1", &schema}}, db, {}, env);
    CHECK(std::get<SemanticParams>(*out.params).condition == "the price looks high");
    CHECK(acc.calls() == 0);
}

TEST_CASE("compile_plan compiles the semantic NCAA plan")
{
    const Database db = ncaa_semi();
    MockBackend mock(ncaa_rules());
    PlannerEnv env{&mock, {}, nullptr};
    const auto parsed = parse_plan(read_text(fixture("ncaa/semantic_plan.json")));
    const PlanDag out = compile_plan(parsed.plans.at(0), db, {}, env);
    for (const auto& s : out.steps()) {
        CHECK(s.params.has_value());
    }
}

TEST_CASE("prompts substitute every slot")
{
    CHECK(render_prompt("a {x} b {{y}}", {{"x", "1"}}) == "a 1 b {y}");
    CHECK_THROWS_AS(render_prompt("a {x}", {}), ContractViolation);
    const auto p = filter_prompt("keep odd ids", nlohmann::json::array({{{"id", 1}}}));
    CHECK(p.text().find("keep odd ids") != std::string::npos);
    for (auto k : {PromptKind::SchemaPruning, PromptKind::DecompositionSystem, PromptKind::DecompositionUser,
                   PromptKind::StepCompile, PromptKind::Judge}) {
        CHECK_FALSE(prompt_template(k).empty());
    }
}
