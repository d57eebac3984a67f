#include "support.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "hyqe/exec_relational.hpp"
#include "hyqe/schema.hpp"

#ifndef HYQE_FIXTURE_DIR
#error "HYQE_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace hyqe::test {

std::filesystem::path fixture_dir() { return HYQE_FIXTURE_DIR; }

std::filesystem::path fixture(const std::string& rel) { return fixture_dir() / rel; }

std::string read_text(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + p.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Relation make_relation(const std::string& name, const std::vector<std::pair<std::string, AttributeKind>>& cols,
                       std::vector<Row> rows)
{
    std::vector<Column> columns;
    for (const auto& [n, k] : cols) {
        Column c;
        c.name = n;
        c.kind = k;
        c.origin_table = name;
        c.origin_column = n;
        columns.push_back(std::move(c));
    }
    Relation r(name, std::move(columns), std::move(rows));
    r.reprofile();
    return r;
}

std::vector<std::string> row_multiset(const Relation& r)
{
    std::vector<std::string> out;
    out.reserve(r.size());
    for (const auto& row : r.rows()) {
        out.push_back(row_key(row));
    }
    std::sort(out.begin(), out.end());
    return out;
}

bool same_result(const Relation& a, const Relation& b, std::string* why)
{
    if (a.column_names() != b.column_names()) {
        if (why != nullptr) {
            std::string s = "columns differ:";
            for (const auto& n : a.column_names()) {
                s += " " + n;
            }
            s += " |";
            for (const auto& n : b.column_names()) {
                s += " " + n;
            }
            *why = s;
        }
        return false;
    }
    if (row_multiset(a) != row_multiset(b)) {
        if (why != nullptr) {
            *why = "rows differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " rows";
        }
        return false;
    }
    return true;
}

namespace {

const std::vector<std::string> kColors{"red", "green", "blue", "amber"};
const std::vector<std::string> kWords{"apple", "pear", "quiet", "river", "stone", "amber", "night", "salt"};

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

bool chance(std::mt19937_64& rng, double p) { return std::uniform_real_distribution<double>(0, 1)(rng) < p; }

}  // namespace

Database random_chain_db(std::mt19937_64& rng, std::size_t relations, std::size_t max_rows)
{
    Database db;
    std::size_t parent_rows = 0;
    for (std::size_t i = 0; i < relations; ++i) {
        const std::string n = "r" + std::to_string(i);
        const std::size_t rows = 1 + pick(rng, max_rows);
        std::vector<std::pair<std::string, AttributeKind>> cols{{n + "_id", AttributeKind::Numeric}};
        if (i > 0) {
            cols.push_back({n + "_p", AttributeKind::Numeric});
        }
        cols.push_back({n + "_x", AttributeKind::Numeric});
        cols.push_back({n + "_c", AttributeKind::Categorical});
        cols.push_back({n + "_t", AttributeKind::Textual});
        std::vector<Row> data;
        for (std::size_t r = 0; r < rows; ++r) {
            Row row{Value(static_cast<double>(r + 1))};
            if (i > 0) {
                row.push_back(Value(static_cast<double>(1 + pick(rng, parent_rows))));
            }
            row.push_back(chance(rng, 0.05) ? Value() : Value(static_cast<double>(pick(rng, 100))));
            row.push_back(chance(rng, 0.05) ? Value() : Value(kColors[pick(rng, kColors.size())]));
            row.push_back(Value(kWords[pick(rng, kWords.size())] + " " + kWords[pick(rng, kWords.size())]));
            data.push_back(std::move(row));
        }
        Relation rel = make_relation(n, cols, std::move(data));
        std::vector<ForeignKey> fks;
        if (i > 0) {
            fks.push_back({n + "_p", "r" + std::to_string(i - 1), "r" + std::to_string(i - 1) + "_id"});
        }
        rel.set_keys({n + "_id"}, std::move(fks));
        db.add(std::move(rel));
        parent_rows = rows;
    }
    return db;
}

OperatorTag rel(OpKind k) { return {OpClass::Relational, k}; }
OperatorTag sem(OpKind k) { return {OpClass::Semantic, k}; }

std::string PlanBuilder::add(OperatorTag op, StepParams params, std::vector<std::string> parents)
{
    PlanStep s;
    s.id = "step_" + std::to_string(steps_.size() + 1);
    s.op = op;
    s.params = std::move(params);
    s.parents = std::move(parents);
    s.instruction = describe_step(s);
    steps_.push_back(s);
    return s.id;
}

namespace {

/// Picks plan operators while tracking each step's schema.
struct CaseGen {
    std::mt19937_64& rng;
    const Database& db;
    PlanBuilder b{"plan_1"};
    std::map<std::string, Schema> schema;
    nlohmann::json rules{{"filter", nlohmann::json::object()}, {"map", nlohmann::json::object()}};
    std::size_t derived = 0;

    std::string add(OperatorTag op, StepParams params, std::vector<std::string> parents)
    {
        PlanStep probe;
        probe.op = op;
        probe.params = params;
        probe.parents = parents;
        std::vector<const Schema*> ins;
        for (const auto& p : parents) {
            if (schema.count(p) != 0) {
                ins.push_back(&schema.at(p));
            }
        }
        Schema out = output_schema(probe, ins, db);
        const std::string id = b.add(op, std::move(params), std::move(parents));
        schema[id] = std::move(out);
        return id;
    }

    std::vector<const Column*> columns_of(const std::string& id, AttributeKind kind)
    {
        std::vector<const Column*> out;
        for (const auto& c : schema.at(id)) {
            if (c.kind == kind) {
                out.push_back(&c);
            }
        }
        return out;
    }

    /// A relational or semantic filter on one column of `id`.
    std::string filter(const std::string& id)
    {
        const auto nums = columns_of(id, AttributeKind::Numeric);
        const auto cats = columns_of(id, AttributeKind::Categorical);
        const auto texts = columns_of(id, AttributeKind::Textual);
        const int kind = static_cast<int>(pick(rng, 5));
        if (kind == 0 && !texts.empty()) {
            const auto& col = texts[pick(rng, texts.size())]->name;
            const std::string w = kWords[pick(rng, kWords.size())];
            const std::string cond = col + " mentions " + w;
            rules["filter"][cond] = {{"column", col}, {"pattern", "\\b" + w + "\\b"}};
            SemanticParams p;
            p.condition = cond;
            p.input_columns = {col};
            return add(sem(OpKind::Filter), p, {id});
        }
        if (kind == 1 && !nums.empty()) {
            const auto& col = nums[pick(rng, nums.size())]->name;
            const int v = static_cast<int>(pick(rng, 100));
            const std::string cond = col + " is above " + std::to_string(v);
            rules["filter"][cond] = {{"column", col}, {"op", ">"}, {"value", v}};
            SemanticParams p;
            p.condition = cond;
            p.input_columns = {col};
            return add(sem(OpKind::Filter), p, {id});
        }
        FilterParams f;
        if (kind == 2 && !cats.empty()) {
            f.column = cats[pick(rng, cats.size())]->name;
            if (chance(rng, 0.3)) {
                f.op = CmpOp::In;
                f.values = {Value(kColors[pick(rng, 4)]), Value(kColors[pick(rng, 4)])};
            } else {
                f.op = chance(rng, 0.5) ? CmpOp::Eq : CmpOp::Ne;
                f.values = {Value(kColors[pick(rng, 4)])};
            }
        } else if (kind == 3 && !texts.empty()) {
            f.column = texts[pick(rng, texts.size())]->name;
            f.op = CmpOp::Contains;
            f.values = {Value(kWords[pick(rng, kWords.size())])};
        } else if (!nums.empty()) {
            f.column = nums[pick(rng, nums.size())]->name;
            if (chance(rng, 0.1)) {
                f.op = chance(rng, 0.5) ? CmpOp::IsNull : CmpOp::IsNotNull;
            } else {
                static const CmpOp ops[] = {CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne};
                f.op = ops[pick(rng, 6)];
                f.values = {Value(static_cast<double>(pick(rng, 100)))};
            }
        } else {
            return id;
        }
        return add(rel(OpKind::Filter), f, {id});
    }

    std::string map(const std::string& id)
    {
        const auto cats = columns_of(id, AttributeKind::Categorical);
        if (cats.empty()) {
            return id;
        }
        const auto& col = cats[pick(rng, cats.size())]->name;
        const std::string out = "warm_" + std::to_string(++derived);
        const std::string cond = "label the warmth of " + col;
        rules["map"][cond] = {{"source", col}, {"cases", {{{"pattern", "^(red|amber)$"}, {"value", "warm"}}}},
                              {"default", "cool"}};
        SemanticParams p;
        p.condition = cond;
        p.new_column = out;
        p.input_columns = {col};
        return add(sem(OpKind::Map), p, {id});
    }

    std::string project(const std::string& id)
    {
        const auto& cols = schema.at(id);
        ProjectParams pp;
        for (const auto& c : cols) {
            if (chance(rng, 0.6)) {
                pp.items.push_back(ProjectItem::column(c.name));
            }
        }
        if (pp.items.empty()) {
            pp.items.push_back(ProjectItem::column(cols[pick(rng, cols.size())].name));
        }
        const auto nums = columns_of(id, AttributeKind::Numeric);
        if (!nums.empty() && chance(rng, 0.3)) {
            ProjectItem it;
            it.name = "calc_" + std::to_string(++derived);
            it.lhs.column = nums[pick(rng, nums.size())]->name;
            it.op = chance(rng, 0.5) ? ArithOp::Mul : ArithOp::Add;
            it.rhs.literal = Value(static_cast<double>(1 + pick(rng, 5)));
            pp.items.push_back(it);
        }
        return add(rel(OpKind::Project), pp, {id});
    }

    std::string aggregate(const std::string& id)
    {
        const auto nums = columns_of(id, AttributeKind::Numeric);
        const auto cats = columns_of(id, AttributeKind::Categorical);
        AggregateParams ap;
        static const AggFunc fs[] = {AggFunc::Count, AggFunc::Sum, AggFunc::Min, AggFunc::Max, AggFunc::Avg};
        ap.func = fs[pick(rng, 5)];
        if (ap.func == AggFunc::Count || nums.empty()) {
            ap.func = AggFunc::Count;
            ap.target = "*";
        } else {
            ap.target = nums[pick(rng, nums.size())]->name;
        }
        if (!cats.empty() && chance(rng, 0.6)) {
            ap.group_by = {cats[pick(rng, cats.size())]->name};
        }
        ap.output = "agg_value";
        return add(rel(OpKind::Aggregate), ap, {id});
    }
};

}  // namespace

GeneratedCase random_plan_case(std::mt19937_64& rng, std::size_t max_relations, std::size_t max_rows)
{
    GeneratedCase out;
    const std::size_t n = 1 + pick(rng, max_relations);
    out.db = random_chain_db(rng, n, max_rows);
    CaseGen g{rng, out.db};

    std::vector<std::string> inputs;
    for (std::size_t i = 0; i < n; ++i) {
        std::string id = g.add(rel(OpKind::Scan), ScanParams{"r" + std::to_string(i), {}}, {});
        if (chance(rng, 0.3)) {
            id = g.filter(id);
        }
        inputs.push_back(id);
    }
    // Join in a random connected order: start anywhere, extend either end.
    std::size_t lo = pick(rng, n);
    std::size_t hi = lo;
    std::string cur = inputs[lo];
    while (hi - lo + 1 < n) {
        const bool left = lo > 0 && (hi + 1 == n || chance(rng, 0.5));
        JoinParams jp;
        if (left) {
            --lo;
            jp.left_column = "r" + std::to_string(lo + 1) + "_p";
            jp.right_column = "r" + std::to_string(lo) + "_id";
            cur = g.add(rel(OpKind::Join), jp, {cur, inputs[lo]});
        } else {
            ++hi;
            jp.left_column = "r" + std::to_string(hi - 1) + "_id";
            jp.right_column = "r" + std::to_string(hi) + "_p";
            cur = g.add(rel(OpKind::Join), jp, {cur, inputs[hi]});
        }
    }

    const std::size_t extra = pick(rng, 4);
    for (std::size_t i = 0; i < extra; ++i) {
        cur = g.filter(cur);
    }
    if (chance(rng, 0.15)) {
        const std::string a = g.filter(cur);
        const std::string b = g.filter(cur);
        if (a != cur && b != cur) {
            cur = g.add(rel(OpKind::SetOp), SetOpParams{SetOpKind::Union}, {a, b});
        }
    }
    if (chance(rng, 0.3)) {
        cur = g.map(cur);
    }
    if (chance(rng, 0.3)) {
        cur = g.filter(cur);
    }
    if (chance(rng, 0.3)) {
        cur = g.project(cur);
    } else if (chance(rng, 0.3)) {
        cur = g.aggregate(cur);
    }
    out.plan = g.b.build();
    out.rulebook = g.rules;
    return out;
}

GeneratedCase deferral_fixture()
{
    GeneratedCase out;
    std::vector<Row> accounts;
    for (int i = 1; i <= 100; ++i) {
        const std::string note = i % 4 == 0 ? "customer asked for a refund after the outage"
                                            : "customer renewed the annual plan without issues";
        accounts.push_back({Value(static_cast<double>(i)), Value(note), Value(i % 2 == 0 ? "gold" : "basic")});
    }
    Relation a = make_relation("accounts",
                               {{"account_id", AttributeKind::Numeric},
                                {"support_note", AttributeKind::Textual},
                                {"tier", AttributeKind::Categorical}},
                               std::move(accounts));
    a.set_keys({"account_id"}, {});
    std::vector<Row> events;
    for (int i = 0; i < 1000; ++i) {
        events.push_back({Value(static_cast<double>(i + 1)), Value(static_cast<double>(i % 100 + 1)),
                          Value(i % 3 == 0 ? "login" : "purchase")});
    }
    Relation b = make_relation("events",
                               {{"event_id", AttributeKind::Numeric},
                                {"event_account", AttributeKind::Numeric},
                                {"event_kind", AttributeKind::Categorical}},
                               std::move(events));
    b.set_keys({"event_id"}, {{"event_account", "accounts", "account_id"}});
    out.db.add(std::move(a));
    out.db.add(std::move(b));

    PlanBuilder pb("plan_1");
    const auto sa = pb.add(rel(OpKind::Scan), ScanParams{"accounts", {}}, {});
    const auto sb = pb.add(rel(OpKind::Scan), ScanParams{"events", {}}, {});
    const auto j = pb.add(rel(OpKind::Join), JoinParams{"account_id", CmpOp::Eq, "event_account"}, {sa, sb});
    SemanticParams f;
    f.condition = "the support_note mentions a refund";
    pb.add(sem(OpKind::Filter), f, {j});
    out.plan = pb.build();
    out.rulebook = {{"filter", {{f.condition, {{"column", "support_note"}, {"pattern", "\\brefund\\b"}}}}}};
    return out;
}

BackendReply RecordingBackend::plan(const std::string& q, const std::string& sys, const std::string& user, std::size_t k)
{
    {
        std::lock_guard<std::mutex> lock(mu_);
        plan_calls_.push_back({sys, user, k});
    }
    return inner_.plan(q, sys, user, k);
}

std::vector<RecordingBackend::PlanCall> RecordingBackend::plan_calls() const
{
    std::lock_guard<std::mutex> lock(mu_);
    return plan_calls_;
}

}  // namespace hyqe::test
