#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "hyqe/consolidation.hpp"
#include "hyqe/error.hpp"
#include "support.hpp"

using namespace hyqe;
using namespace hyqe::test;

namespace {

CandidateResult candidate(const std::string& id, const std::vector<std::string>& cells)
{
    std::vector<Row> rows;
    for (const auto& c : cells) {
        rows.push_back({Value(c)});
    }
    const Relation r = make_relation("r", {{"answer", AttributeKind::Categorical}}, rows);
    ExecutionReport rep;
    rep.plan = id;
    rep.result = r;
    return make_candidate(PlanDag(id, {}), rep);
}

}  // namespace

TEST_CASE("normalization ignores row order and case")
{
    CHECK(normalize(make_relation("a", {{"x", AttributeKind::Categorical}}, {{Value("B")}, {Value("a")}})) ==
          normalize(make_relation("b", {{"x", AttributeKind::Categorical}}, {{Value("A")}, {Value("b")}})));
    CHECK(normalize_answer_text("  1.50 ") == normalize_answer_text("1.5"));
    CHECK(plan_id_less("plan_2", "plan_10"));
    CHECK_FALSE(plan_id_less("plan_10", "plan_2"));
}

TEST_CASE("majority vote: largest group, ties to the lowest plan id")
{
    const std::vector<CandidateResult> c{candidate("plan_3", {"x"}), candidate("plan_1", {"y"}),
                                         candidate("plan_2", {"z"})};
    const auto s = majority_vote(c);
    CHECK(c[s.index].plan_id == "plan_1");
    CHECK(s.groups.size() == 3);

    const std::vector<CandidateResult> d{candidate("plan_1", {"x"}), candidate("plan_2", {"y"}),
                                         candidate("plan_3", {"Y"}), candidate("plan_10", {"x"}),
                                         candidate("plan_4", {"y"})};
    const auto t = majority_vote(d);
    CHECK(d[t.index].plan_id == "plan_2");
    CHECK(t.groups.front().size() == 3);
}

TEST_CASE("majority vote is invariant under candidate permutation")
{
    std::mt19937_64 rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<CandidateResult> c;
        const int n = 2 + static_cast<int>(rng() % 6);
        for (int i = 0; i < n; ++i) {
            c.push_back(candidate("plan_" + std::to_string(i + 1), {std::string(1, static_cast<char>('a' + rng() % 3))}));
        }
        if (rng() % 3 == 0) {
            c[rng() % c.size()] = failed_candidate(PlanDag(c[0].plan_id, {}), "boom");
        }
        const auto pick = [](const std::vector<CandidateResult>& v) { return v[majority_vote(v).index].plan_id; };
        std::string first;
        try {
            first = pick(c);
        } catch (const ExecutionError&) {
            continue;
        }
        for (int k = 0; k < 5; ++k) {
            std::shuffle(c.begin(), c.end(), rng);
            CHECK(pick(c) == first);
        }
    }
}

TEST_CASE("failed candidates never win and all-failed is an error")
{
    std::vector<CandidateResult> c{failed_candidate(PlanDag("plan_1", {}), "bad"), candidate("plan_2", {"x"})};
    CHECK(c[majority_vote(c).index].plan_id == "plan_2");
    std::vector<CandidateResult> none{failed_candidate(PlanDag("plan_1", {}), "bad")};
    CHECK_THROWS_AS(majority_vote(none), ExecutionError);
}

TEST_CASE("semantic equality groups what the backend calls equal")
{
    MockBackend mock(nlohmann::json::object());
    const std::vector<CandidateResult> c{candidate("plan_1", {"Tempe "}), candidate("plan_2", {"tempe"}),
                                         candidate("plan_3", {"Phoenix"})};
    const auto s = majority_vote(c, EqualityMode::Semantic, &mock);
    CHECK(s.groups.front().size() == 2);
}

TEST_CASE("judge picks by index or plurality and falls back on a bad index")
{
    Database db;
    const std::vector<CandidateResult> c{candidate("plan_1", {"x"}), candidate("plan_2", {"y"}),
                                         candidate("plan_3", {"y"})};
    MockBackend pick2(nlohmann::json{{"judge", {{"*", 2}}}});
    CHECK(c[judge_select("q", c, pick2, db).index].plan_id == "plan_3");
    MockBackend plural(nlohmann::json{{"judge", {{"*", "plurality"}}}});
    CHECK(judge_select("q", c, plural, db).index == majority_vote(c).index);
    MockBackend bad(nlohmann::json{{"judge", {{"*", 9}}}});
    const auto s = judge_select("q", c, bad, db);
    CHECK(s.index == majority_vote(c).index);
    CHECK_FALSE(s.notes.empty());
    TokenAccounting acc;
    const std::vector<CandidateResult> one{candidate("plan_1", {"x"})};
    CHECK(judge_select("q", one, pick2, db, {}, &acc).index == 0);
    CHECK(acc.calls() == 0);
}

TEST_CASE("delegation lists every candidate")
{
    const std::vector<CandidateResult> c{candidate("plan_1", {"x"}), failed_candidate(PlanDag("plan_2", {}), "bad")};
    const auto j = delegate("q", c);
    CHECK(j.at("results").size() == 2);
    CHECK(delegate_text("q", c).find("plan_2") != std::string::npos);
}
