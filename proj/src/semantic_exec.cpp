#include "hyqe/semantic_exec.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>
#include <tuple>
#include <unordered_map>

#include "hyqe/error.hpp"
#include "hyqe/exec_relational.hpp"
#include "hyqe/plan.hpp"
#include "hyqe/schema.hpp"

namespace hyqe {

std::size_t compute_batch_size(const BatchConfig& cfg)
{
    if (cfg.b == 0) {
        throw ContractViolation("base batch size must be at least 1");
    }
    if (cfg.t_row == 0) {
        throw ContractViolation("tokens per row must be positive");
    }
    const std::uint64_t fit = cfg.b_max / cfg.t_row;
    if (fit == 0) {
        throw ExecutionError("token budget " + std::to_string(cfg.b_max) + " cannot hold one row of " +
                             std::to_string(cfg.t_row) + " tokens");
    }
    return static_cast<std::size_t>(std::min<std::uint64_t>(cfg.b, fit));
}

std::uint64_t estimate_row_tokens(const std::vector<Column>& columns)
{
    std::uint64_t total = 0;
    for (const auto& c : columns) {
        const auto by_text = static_cast<std::uint64_t>(std::ceil(c.profile.expected_token_len));
        const auto by_bytes = static_cast<std::uint64_t>(std::ceil(c.profile.avg_bytes / 4.0));
        total += std::max<std::uint64_t>({by_text, by_bytes, 1}) + approx_tokens(c.name) + 1;
    }
    return std::max<std::uint64_t>(total, 1);
}

TokenAccounting::TokenAccounting(const TokenAccounting& other) : records_(other.records()) {}

TokenAccounting& TokenAccounting::operator=(const TokenAccounting& other)
{
    if (this != &other) {
        auto copy = other.records();
        std::lock_guard lock(mu_);
        records_ = std::move(copy);
    }
    return *this;
}

void TokenAccounting::record(CallRecord r)
{
    std::lock_guard lock(mu_);
    records_.push_back(std::move(r));
}

void TokenAccounting::merge(const TokenAccounting& other)
{
    auto more = other.records();
    std::lock_guard lock(mu_);
    records_.insert(records_.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
}

std::vector<CallRecord> TokenAccounting::records() const
{
    std::vector<CallRecord> out;
    {
        std::lock_guard lock(mu_);
        out = records_;
    }
    std::stable_sort(out.begin(), out.end(), [](const CallRecord& a, const CallRecord& b) {
        return std::tie(a.step, a.op, a.group, a.depth, a.chunk, a.attempt) <
               std::tie(b.step, b.op, b.group, b.depth, b.chunk, b.attempt);
    });
    return out;
}

std::size_t TokenAccounting::calls() const
{
    std::lock_guard lock(mu_);
    return records_.size();
}

Usage TokenAccounting::totals() const
{
    std::lock_guard lock(mu_);
    Usage u;
    for (const auto& r : records_) {
        u.input_tokens += r.usage.input_tokens;
        u.output_tokens += r.usage.output_tokens;
    }
    return u;
}

namespace {

std::map<std::string, Usage> group_usage(const std::vector<CallRecord>& records, std::string CallRecord::*key)
{
    std::map<std::string, Usage> out;
    for (const auto& r : records) {
        auto& u = out[r.*key];
        u.input_tokens += r.usage.input_tokens;
        u.output_tokens += r.usage.output_tokens;
    }
    return out;
}

}  // namespace

std::map<std::string, Usage> TokenAccounting::by_operator() const { return group_usage(records(), &CallRecord::op); }
std::map<std::string, Usage> TokenAccounting::by_step() const { return group_usage(records(), &CallRecord::step); }

nlohmann::ordered_json to_json(const TokenAccounting& a)
{
    nlohmann::ordered_json calls = nlohmann::ordered_json::array();
    for (const auto& r : a.records()) {
        calls.push_back({{"step", r.step},
                         {"operator", r.op},
                         {"group", r.group},
                         {"depth", r.depth},
                         {"chunk", r.chunk},
                         {"attempt", r.attempt},
                         {"rows", r.rows},
                         {"rows_b", r.rows_b},
                         {"t_row", r.t_row},
                         {"budget", r.budget},
                         {"forced", r.forced},
                         {"input_tokens", r.usage.input_tokens},
                         {"output_tokens", r.usage.output_tokens}});
    }
    auto usage_json = [](const Usage& u) {
        return nlohmann::ordered_json{{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}};
    };
    nlohmann::ordered_json per_op = nlohmann::ordered_json::object();
    for (const auto& [op, u] : a.by_operator()) {
        per_op[op] = usage_json(u);
    }
    nlohmann::ordered_json per_step = nlohmann::ordered_json::object();
    for (const auto& [step, u] : a.by_step()) {
        per_step[step] = usage_json(u);
    }
    nlohmann::ordered_json out;
    out["totals"] = usage_json(a.totals());
    out["calls"] = a.calls();
    out["by_operator"] = std::move(per_op);
    out["by_step"] = std::move(per_step);
    out["records"] = std::move(calls);
    return out;
}

nlohmann::json row_to_json(const std::vector<Column>& columns, const Row& row)
{
    nlohmann::json obj = nlohmann::json::object();
    for (std::size_t i = 0; i < columns.size(); ++i) {
        obj[columns[i].name] = to_json(row[i]);
    }
    return obj;
}

nlohmann::json rows_to_json(const std::vector<Column>& columns, const std::vector<Row>& rows)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& row : rows) {
        arr.push_back(row_to_json(columns, row));
    }
    return arr;
}

Value coerce_cell(const nlohmann::json& cell, AttributeKind kind)
{
    if (cell.is_null()) {
        return std::monostate{};
    }
    switch (kind) {
    case AttributeKind::Textual:
    case AttributeKind::Categorical:
        if (cell.is_string()) {
            return cell.get<std::string>();
        }
        if (cell.is_number()) {
            return render_number(cell.get<double>());
        }
        if (cell.is_boolean()) {
            return std::string(cell.get<bool>() ? "true" : "false");
        }
        return cell.dump();
    case AttributeKind::Numeric:
        if (cell.is_number()) {
            return cell.get<double>();
        }
        if (cell.is_string()) {
            const std::string s = trim(cell.get<std::string>());
            if (s.empty()) {
                return std::monostate{};
            }
            if (auto n = parse_number(s)) {
                return *n;
            }
        }
        break;
    case AttributeKind::Boolean:
        if (cell.is_boolean()) {
            return cell.get<bool>();
        }
        if (cell.is_string()) {
            if (auto b = parse_boolean(cell.get<std::string>())) {
                return *b;
            }
        }
        break;
    case AttributeKind::Temporal:
        if (cell.is_string()) {
            if (auto t = parse_timestamp(cell.get<std::string>(), {"%Y-%m-%d", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"})) {
                return *t;
            }
        }
        break;
    }
    throw ContractViolation("cell " + cell.dump() + " is not " + std::string(to_string(kind)));
}

void parallel_for(std::size_t n, std::size_t parallelism, const std::function<void(std::size_t)>& fn)
{
    if (n == 0) {
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    const std::size_t workers = std::clamp<std::size_t>(parallelism, 1, n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

namespace {

SemanticBackend& backend_of(const SemanticContext& ctx)
{
    if (ctx.backend == nullptr) {
        throw ContractViolation("semantic operator run without a backend");
    }
    return *ctx.backend;
}

std::uint64_t row_tokens(const SemanticContext& ctx, const std::vector<Column>& columns)
{
    return ctx.options.batch.t_row != 0 ? ctx.options.batch.t_row : estimate_row_tokens(columns);
}

std::size_t batch_for(const SemanticContext& ctx, std::uint64_t t_row)
{
    BatchConfig cfg = ctx.options.batch;
    cfg.t_row = t_row;
    return compute_batch_size(cfg);
}

struct Chunk {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

std::vector<Chunk> partition(std::size_t n, std::size_t beta)
{
    std::vector<Chunk> out;
    for (std::size_t i = 0; i < n; i += beta) {
        out.push_back({i, std::min(n, i + beta)});
    }
    return out;
}

/// One backend call with retries. `call` issues the request; `check`
/// validates and decodes the reply, throwing ContractViolation when it is
/// malformed. Every reply received is recorded, including rejected ones.
template <class Result>
Result call_with_retries(const SemanticContext& ctx, CallRecord base, const std::function<BackendReply()>& call,
                         const std::function<Result(const nlohmann::json&)>& check)
{
    std::string last;
    bool contract = false;
    for (std::size_t attempt = 0; attempt <= ctx.options.retries; ++attempt) {
        BackendReply reply;
        try {
            reply = call();
        } catch (const BackendError& e) {
            last = e.what();
            contract = false;
            continue;
        }
        if (ctx.accounting != nullptr) {
            CallRecord r = base;
            r.attempt = attempt;
            r.usage = reply.usage;
            ctx.accounting->record(std::move(r));
        }
        try {
            return check(reply.body);
        } catch (const ContractViolation& e) {
            last = e.what();
            contract = true;
        } catch (const nlohmann::json::exception& e) {
            last = e.what();
            contract = true;
        }
    }
    const std::string msg = base.step + " " + base.op + " chunk " + std::to_string(base.chunk) + " failed after " +
                            std::to_string(ctx.options.retries + 1) + " attempts: " + last;
    if (contract) {
        throw ContractViolation(msg);
    }
    throw BackendError(msg);
}

CallRecord record_base(const SemanticContext& ctx, const char* op, std::size_t chunk, std::size_t rows,
                       std::uint64_t t_row)
{
    CallRecord r;
    r.step = ctx.step;
    r.op = op;
    r.chunk = chunk;
    r.rows = rows;
    r.t_row = t_row;
    r.budget = ctx.options.batch.b_max;
    return r;
}

std::vector<Row> slice(const std::vector<Row>& rows, const Chunk& c)
{
    return {rows.begin() + static_cast<std::ptrdiff_t>(c.begin), rows.begin() + static_cast<std::ptrdiff_t>(c.end)};
}

}  // namespace

Relation exec_map(const std::string& instruction, const std::string& new_column, const Relation& r,
                  const SemanticContext& ctx)
{
    if (new_column.empty()) {
        throw SchemaError("derive needs a new column name");
    }
    if (r.find_column(new_column)) {
        throw SchemaError("derived column '" + new_column + "' already exists");
    }
    std::vector<Column> columns = r.columns();
    Column derived;
    derived.name = new_column;
    derived.kind = AttributeKind::Textual;
    columns.push_back(derived);
    if (r.empty()) {
        return Relation(r.name(), std::move(columns), {});
    }
    auto& backend = backend_of(ctx);
    const std::uint64_t t_row = row_tokens(ctx, r.columns());
    const auto chunks = partition(r.size(), batch_for(ctx, t_row));
    std::vector<std::vector<Value>> derived_values(chunks.size());

    parallel_for(chunks.size(), ctx.options.parallelism, [&](std::size_t ci) {
        const Chunk& c = chunks[ci];
        const nlohmann::json data = rows_to_json(r.columns(), slice(r.rows(), c));
        derived_values[ci] = call_with_retries<std::vector<Value>>(
            ctx, record_base(ctx, "LLM_DERIVE", ci, c.size(), t_row),
            [&] { return backend.map(instruction, new_column, data); },
            [&](const nlohmann::json& body) {
                if (!body.is_object() || !body.contains("rows") || !body.at("rows").is_array()) {
                    throw ContractViolation("derive reply must be {\"rows\": [...]}");
                }
                const auto& rows = body.at("rows");
                if (rows.size() != c.size()) {
                    throw ContractViolation("derive reply has " + std::to_string(rows.size()) + " rows for a chunk of " +
                                            std::to_string(c.size()));
                }
                std::vector<Value> out;
                out.reserve(rows.size());
                for (const auto& row : rows) {
                    if (!row.is_object()) {
                        throw ContractViolation("derive reply rows must be objects");
                    }
                    auto it = row.find(new_column);
                    out.push_back(it == row.end() ? Value{} : coerce_cell(*it, AttributeKind::Textual));
                }
                return out;
            });
    });

    std::vector<Row> rows;
    rows.reserve(r.size());
    for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
        for (std::size_t i = 0; i < chunks[ci].size(); ++i) {
            Row row = r.rows()[chunks[ci].begin + i];
            row.push_back(std::move(derived_values[ci][i]));
            rows.push_back(std::move(row));
        }
    }
    return Relation(r.name(), std::move(columns), std::move(rows));
}

Relation exec_filter(const std::string& instruction, const Relation& r, const SemanticContext& ctx)
{
    if (r.empty()) {
        return Relation(r.name(), r.columns(), {});
    }
    auto& backend = backend_of(ctx);
    const std::uint64_t t_row = row_tokens(ctx, r.columns());
    const auto chunks = partition(r.size(), batch_for(ctx, t_row));
    std::vector<std::vector<std::size_t>> kept(chunks.size());

    parallel_for(chunks.size(), ctx.options.parallelism, [&](std::size_t ci) {
        const Chunk& c = chunks[ci];
        const nlohmann::json data = rows_to_json(r.columns(), slice(r.rows(), c));
        kept[ci] = call_with_retries<std::vector<std::size_t>>(
            ctx, record_base(ctx, "LLM_FILTER", ci, c.size(), t_row), [&] { return backend.filter(instruction, data); },
            [&](const nlohmann::json& body) {
                if (!body.is_array()) {
                    throw ContractViolation("filter reply must be an index array");
                }
                std::vector<bool> seen(c.size(), false);
                for (const auto& v : body) {
                    if (!v.is_number_integer()) {
                        throw ContractViolation("filter index " + v.dump() + " is not an integer");
                    }
                    const auto i = v.get<std::int64_t>();
                    if (i < 0 || static_cast<std::size_t>(i) >= c.size()) {
                        throw ContractViolation("filter index " + std::to_string(i) + " outside chunk of " +
                                                std::to_string(c.size()));
                    }
                    if (seen[static_cast<std::size_t>(i)]) {
                        throw ContractViolation("filter index " + std::to_string(i) + " repeated");
                    }
                    seen[static_cast<std::size_t>(i)] = true;
                }
                std::vector<std::size_t> out;
                for (std::size_t i = 0; i < seen.size(); ++i) {
                    if (seen[i]) {
                        out.push_back(c.begin + i);
                    }
                }
                return out;
            });
    });

    std::vector<Row> rows;
    for (const auto& idx : kept) {
        for (std::size_t i : idx) {
            rows.push_back(r.rows()[i]);
        }
    }
    return Relation(r.name(), r.columns(), std::move(rows));
}

Relation exec_join(const std::string& instruction, const Relation& a, const Relation& b, const std::string& name_b,
                   const SemanticContext& ctx)
{
    const JoinLayout layout = join_layout(a.columns(), b.columns(), name_b, nullptr);
    if (a.empty() || b.empty()) {
        return Relation(a.name(), layout.columns, {});
    }
    auto& backend = backend_of(ctx);

    // Reply keys: left names as-is; right columns by layout name, by
    // name_b-prefixed name, or bare when that does not clash.
    std::unordered_map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < a.arity(); ++i) {
        slot.emplace(a.columns()[i].name, i);
    }
    for (std::size_t k = 0; k < layout.right_kept.size(); ++k) {
        const std::size_t out = a.arity() + k;
        const std::string& bare = b.columns()[layout.right_kept[k]].name;
        slot.emplace(layout.columns[out].name, out);
        slot.emplace(name_b + "." + bare, out);
        slot.emplace(bare, out);
    }

    // Both blocks share one prompt, so a block pair must fit the budget.
    std::uint64_t t_row = ctx.options.batch.t_row;
    if (t_row == 0) {
        t_row = estimate_row_tokens(a.columns()) + estimate_row_tokens(b.columns());
    } else {
        t_row *= 2;
    }
    const std::size_t beta = batch_for(ctx, t_row);
    const auto blocks_a = partition(a.size(), beta);
    const auto blocks_b = partition(b.size(), beta);
    const std::size_t pairs = blocks_a.size() * blocks_b.size();
    std::vector<std::vector<Row>> results(pairs);

    parallel_for(pairs, ctx.options.parallelism, [&](std::size_t pi) {
        const Chunk& ca = blocks_a[pi / blocks_b.size()];
        const Chunk& cb = blocks_b[pi % blocks_b.size()];
        const nlohmann::json da = rows_to_json(a.columns(), slice(a.rows(), ca));
        const nlohmann::json db = rows_to_json(b.columns(), slice(b.rows(), cb));
        CallRecord base = record_base(ctx, "LLM_JOIN", pi, ca.size(), t_row);
        base.rows_b = cb.size();
        results[pi] = call_with_retries<std::vector<Row>>(
            ctx, base, [&] { return backend.join(instruction, a.name(), da, name_b, db); },
            [&](const nlohmann::json& body) {
                if (!body.is_object() || !body.contains("rows") || !body.at("rows").is_array()) {
                    throw ContractViolation("join reply must be {\"rows\": [...]}");
                }
                std::vector<Row> out;
                for (const auto& row : body.at("rows")) {
                    if (!row.is_object()) {
                        throw ContractViolation("join reply rows must be objects");
                    }
                    Row merged(layout.columns.size());
                    for (const auto& [key, cell] : row.items()) {
                        auto it = slot.find(key);
                        if (it == slot.end()) {
                            throw ContractViolation("join reply column '" + key + "' is in neither input");
                        }
                        merged[it->second] = coerce_cell(cell, layout.columns[it->second].kind);
                    }
                    out.push_back(std::move(merged));
                }
                return out;
            });
    });

    std::vector<Row> rows;
    for (auto& block : results) {
        for (auto& row : block) {
            rows.push_back(std::move(row));
        }
    }
    return Relation(a.name(), layout.columns, std::move(rows));
}

namespace {

nlohmann::json final_value(const nlohmann::json& body)
{
    if (!body.is_object() || !body.contains("result")) {
        throw ContractViolation("final aggregation reply must be {\"result\": ...}");
    }
    nlohmann::json v = body.at("result");
    if (v.is_object() && v.size() == 1) {
        v = v.begin().value();
    }
    return v;
}

std::vector<nlohmann::json> partial_rows(const nlohmann::json& body, std::size_t cap)
{
    std::vector<nlohmann::json> out;
    if (body.is_object()) {
        out.push_back(body);
    } else if (body.is_array()) {
        for (const auto& p : body) {
            if (!p.is_object()) {
                throw ContractViolation("partial aggregation rows must be objects");
            }
            out.push_back(p);
        }
    } else {
        throw ContractViolation("partial aggregation reply must be an object or a list of objects");
    }
    if (out.size() > cap) {
        throw ContractViolation("partial aggregation returned " + std::to_string(out.size()) + " rows, cap is " +
                                std::to_string(cap));
    }
    return out;
}

Value reduce(const std::string& instruction, nlohmann::json rows, std::uint64_t t_row, std::size_t group,
             const SemanticContext& ctx)
{
    auto& backend = backend_of(ctx);
    for (std::size_t depth = 0;; ++depth) {
        const std::size_t beta = batch_for(ctx, t_row);
        const bool forced = depth > ctx.options.max_depth;
        if (rows.size() <= beta || forced) {
            CallRecord base = record_base(ctx, "LLM_AGGREGATE", 0, rows.size(), t_row);
            base.group = group;
            base.depth = depth;
            base.forced = forced;
            const nlohmann::json v = call_with_retries<nlohmann::json>(
                ctx, base, [&] { return backend.aggregate(instruction, rows, AggregatePhase::Final); }, final_value);
            return coerce_cell(v, AttributeKind::Textual);
        }
        const auto chunks = partition(rows.size(), beta);
        std::vector<std::vector<nlohmann::json>> partials(chunks.size());
        parallel_for(chunks.size(), ctx.options.parallelism, [&](std::size_t ci) {
            const Chunk& c = chunks[ci];
            nlohmann::json data = nlohmann::json::array();
            for (std::size_t i = c.begin; i < c.end; ++i) {
                data.push_back(rows[i]);
            }
            CallRecord base = record_base(ctx, "LLM_AGGREGATE", ci, c.size(), t_row);
            base.group = group;
            base.depth = depth;
            partials[ci] = call_with_retries<std::vector<nlohmann::json>>(
                ctx, base, [&] { return backend.aggregate(instruction, data, AggregatePhase::Partial); },
                [&](const nlohmann::json& body) { return partial_rows(body, ctx.options.partial_cap); });
        });
        nlohmann::json next = nlohmann::json::array();
        std::uint64_t next_t_row = 1;
        for (auto& ps : partials) {
            for (auto& p : ps) {
                next_t_row = std::max(next_t_row, approx_tokens(p.dump()));
                next.push_back(std::move(p));
            }
        }
        if (next.size() >= rows.size()) {
            // No shrink: go straight to the final call on what we have.
            depth = ctx.options.max_depth;
        }
        rows = std::move(next);
        t_row = ctx.options.batch.t_row != 0 ? ctx.options.batch.t_row : next_t_row;
    }
}

}  // namespace

Relation exec_aggregate(const std::string& instruction, const Relation& r, const std::vector<std::string>& group_by,
                        const std::string& output, const SemanticContext& ctx)
{
    std::vector<std::size_t> keys;
    std::vector<Column> columns;
    for (const auto& g : group_by) {
        keys.push_back(require_column(r.columns(), g));
        columns.push_back(r.columns()[keys.back()]);
    }
    Column value_col;
    value_col.name = output;
    value_col.kind = AttributeKind::Textual;
    columns.push_back(value_col);

    if (r.empty()) {
        if (!group_by.empty()) {
            return Relation(r.name(), std::move(columns), {});
        }
        if (ctx.diagnostics != nullptr) {
            ctx.diagnostics->push_back(ctx.step + ": aggregation over an empty input; result is null");
        }
        return Relation(r.name(), std::move(columns), {Row{Value{}}});
    }

    // Groups in order of first appearance.
    std::vector<std::vector<std::size_t>> groups;
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < r.size(); ++i) {
        Row key_cells;
        for (std::size_t k : keys) {
            key_cells.push_back(r.rows()[i][k]);
        }
        auto [it, fresh] = index.emplace(row_key(key_cells), groups.size());
        if (fresh) {
            groups.emplace_back();
        }
        groups[it->second].push_back(i);
    }

    const std::uint64_t t_row = row_tokens(ctx, r.columns());
    std::vector<Value> results(groups.size());
    // Groups run one after another; each reduce level fans out internally.
    for (std::size_t g = 0; g < groups.size(); ++g) {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t i : groups[g]) {
            rows.push_back(row_to_json(r.columns(), r.rows()[i]));
        }
        results[g] = reduce(instruction, std::move(rows), t_row, g, ctx);
    }

    std::vector<Row> out;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        Row row;
        for (std::size_t k : keys) {
            row.push_back(r.rows()[groups[g].front()][k]);
        }
        row.push_back(results[g]);
        out.push_back(std::move(row));
    }
    return Relation(r.name(), std::move(columns), std::move(out));
}

}  // namespace hyqe
