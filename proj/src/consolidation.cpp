#include "hyqe/consolidation.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "hyqe/error.hpp"
#include "hyqe/prompts.hpp"
#include "hyqe/semantic_exec.hpp"

namespace hyqe {

std::string NormalizedAnswer::text() const
{
    if (columns == 1 && rows.size() == 1) {
        return rows.front().front();
    }
    return nlohmann::json(rows).dump();
}

std::string NormalizedAnswer::key() const { return std::to_string(columns) + "|" + nlohmann::json(rows).dump(); }

NormalizedAnswer normalize(const NormalizedAnswer& a)
{
    NormalizedAnswer out;
    out.columns = a.columns;
    out.rows.reserve(a.rows.size());
    for (const auto& row : a.rows) {
        std::vector<std::string> cells;
        cells.reserve(row.size());
        for (const auto& c : row) {
            cells.push_back(normalize_answer_text(c));
        }
        out.rows.push_back(std::move(cells));
    }
    std::sort(out.rows.begin(), out.rows.end());
    return out;
}

NormalizedAnswer normalize(const Relation& r)
{
    NormalizedAnswer raw;
    raw.columns = r.arity();
    for (const auto& row : r.rows()) {
        std::vector<std::string> cells;
        for (const auto& v : row) {
            cells.push_back(render(v));
        }
        raw.rows.push_back(std::move(cells));
    }
    return normalize(raw);
}

CandidateResult make_candidate(const PlanDag& plan, const ExecutionReport& report)
{
    CandidateResult c;
    c.plan_id = plan.id();
    c.plan = plan;
    c.result = report.result;
    c.normalized = normalize(report.result);
    c.tokens = report.accounting.totals();
    c.step_rows = report.step_rows;
    return c;
}

CandidateResult failed_candidate(const PlanDag& plan, std::string error)
{
    CandidateResult c;
    c.plan_id = plan.id();
    c.plan = plan;
    c.error = std::move(error);
    return c;
}

bool plan_id_less(std::string_view a, std::string_view b)
{
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.size() && j < b.size()) {
        const bool da = std::isdigit(static_cast<unsigned char>(a[i])) != 0;
        const bool db = std::isdigit(static_cast<unsigned char>(b[j])) != 0;
        if (da && db) {
            std::size_t ei = i;
            std::size_t ej = j;
            while (ei < a.size() && std::isdigit(static_cast<unsigned char>(a[ei])) != 0) {
                ++ei;
            }
            while (ej < b.size() && std::isdigit(static_cast<unsigned char>(b[ej])) != 0) {
                ++ej;
            }
            // Compare digit runs by value: strip leading zeros, then length, then text.
            auto na = a.substr(i, ei - i);
            auto nb = b.substr(j, ej - j);
            na.remove_prefix(std::min(na.find_first_not_of('0'), na.size()));
            nb.remove_prefix(std::min(nb.find_first_not_of('0'), nb.size()));
            if (na.size() != nb.size()) {
                return na.size() < nb.size();
            }
            if (na != nb) {
                return na < nb;
            }
            i = ei;
            j = ej;
            continue;
        }
        if (a[i] != b[j]) {
            return a[i] < b[j];
        }
        ++i;
        ++j;
    }
    if (a.size() - i != b.size() - j) {
        return a.size() - i < b.size() - j;
    }
    return a < b;
}

namespace {

std::vector<std::size_t> ok_by_plan_id(const std::vector<CandidateResult>& candidates)
{
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].ok()) {
            idx.push_back(i);
        }
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
        return plan_id_less(candidates[x].plan_id, candidates[y].plan_id);
    });
    return idx;
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x)
{
    while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    return x;
}

}  // namespace

Selection majority_vote(const std::vector<CandidateResult>& candidates, EqualityMode mode, SemanticBackend* backend)
{
    const auto order = ok_by_plan_id(candidates);
    if (order.empty()) {
        throw ExecutionError("every plan failed; nothing to vote on");
    }
    const std::size_t n = order.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);

    // Exact grouping first; the semantic pass only merges what is left.
    std::map<std::string, std::size_t> first_of;
    for (std::size_t i = 0; i < n; ++i) {
        auto [it, fresh] = first_of.emplace(candidates[order[i]].normalized.key(), i);
        if (!fresh) {
            parent[find_root(parent, i)] = find_root(parent, it->second);
        }
    }
    Selection sel;
    if (mode == EqualityMode::Semantic) {
        if (backend == nullptr) {
            throw ContractViolation("semantic voting needs a backend");
        }
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (const auto& [ka, a] : first_of) {
            for (const auto& [kb, b] : first_of) {
                if (a < b && candidates[order[a]].normalized.columns == candidates[order[b]].normalized.columns) {
                    pairs.emplace_back(a, b);
                }
            }
        }
        std::vector<char> same(pairs.size(), 0);
        std::vector<std::string> failures(pairs.size());
        parallel_for(pairs.size(), 8, [&](std::size_t p) {
            try {
                const auto reply = backend->equal(candidates[order[pairs[p].first]].normalized.text(),
                                                  candidates[order[pairs[p].second]].normalized.text());
                same[p] = reply.body.is_boolean() && reply.body.get<bool>() ? 1 : 0;
            } catch (const Error& e) {
                failures[p] = e.what();
            }
        });
        for (std::size_t p = 0; p < pairs.size(); ++p) {
            if (!failures[p].empty()) {
                sel.notes.push_back("equality check failed, treated as different: " + failures[p]);
            }
            if (same[p] != 0) {
                parent[find_root(parent, pairs[p].second)] = find_root(parent, pairs[p].first);
            }
        }
    }

    std::map<std::size_t, std::vector<std::size_t>> by_root;
    for (std::size_t i = 0; i < n; ++i) {
        by_root[find_root(parent, i)].push_back(i);
    }
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [root, members] : by_root) {
        groups.push_back(std::move(members));
    }
    // Largest first; equal sizes by their earliest plan id (members are in
    // plan-id order, so the front is the earliest).
    std::sort(groups.begin(), groups.end(), [](const auto& x, const auto& y) {
        return x.size() != y.size() ? x.size() > y.size() : x.front() < y.front();
    });
    for (auto& g : groups) {
        for (auto& m : g) {
            m = order[m];
        }
    }
    sel.index = groups.front().front();
    sel.groups = std::move(groups);
    return sel;
}

namespace {

std::string sample_table(const Relation& r, std::size_t limit)
{
    if (r.empty()) {
        return "(0 rows)\n";
    }
    std::string out;
    std::vector<std::string> names = r.column_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        out += (i == 0 ? "" : " | ") + names[i];
    }
    out += "\n";
    for (std::size_t i = 0; i < std::min(limit, r.size()); ++i) {
        for (std::size_t c = 0; c < r.arity(); ++c) {
            out += (c == 0 ? "" : " | ") + render(r.rows()[i][c]);
        }
        out += "\n";
    }
    if (r.size() > limit) {
        out += "(" + std::to_string(r.size()) + " rows in total)\n";
    }
    return out;
}

std::string tables_text(const Database& db)
{
    std::string out;
    for (const auto& [name, r] : db.relations()) {
        out += name + "(";
        for (std::size_t i = 0; i < r.arity(); ++i) {
            out += (i == 0 ? "" : ", ") + r.columns()[i].name;
        }
        out += ")\n";
    }
    return out;
}

}  // namespace

Selection judge_select(const std::string& question, const std::vector<CandidateResult>& candidates,
                       SemanticBackend& backend, const Database& db, const JudgeOptions& opts,
                       TokenAccounting* accounting)
{
    const auto order = ok_by_plan_id(candidates);
    if (order.empty()) {
        throw ExecutionError("every plan failed; nothing to judge");
    }
    if (order.size() == 1) {
        Selection sel;
        sel.index = order.front();
        sel.groups = {{order.front()}};
        return sel;
    }
    std::string plans;
    nlohmann::json summary = nlohmann::json::array();
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& c = candidates[order[i]];
        plans += "Plan " + std::to_string(i) + " (" + c.plan_id + "):\n" + dump_plan(c.plan) + "Prediction:\n" +
                 sample_table(c.result, opts.sample_rows) + "\n";
        summary.push_back({{"index", i}, {"plan_id", c.plan_id}, {"summary", dump_plan(c.plan)},
                           {"answer", c.normalized.key()}});
    }
    const std::string prompt = render_prompt(PromptKind::Judge, {{"question", question},
                                                                 {"tables", tables_text(db)},
                                                                 {"plans", plans},
                                                                 {"few_shot_examples", opts.few_shot_examples}});
    std::string failure;
    for (std::size_t attempt = 0; attempt <= opts.retries; ++attempt) {
        try {
            const auto reply = backend.judge(question, summary, prompt);
            if (accounting != nullptr) {
                CallRecord r;
                r.step = "consolidation";
                r.op = "JUDGE";
                r.attempt = attempt;
                r.usage = reply.usage;
                accounting->record(std::move(r));
            }
            std::optional<long long> pick;
            if (reply.body.is_number_integer()) {
                pick = reply.body.get<long long>();
            } else if (reply.body.is_string()) {
                const std::string s = trim(reply.body.get<std::string>());
                if (auto n = parse_number(s); n && *n == static_cast<double>(static_cast<long long>(*n))) {
                    pick = static_cast<long long>(*n);
                }
            }
            if (!pick) {
                failure = "judge reply " + reply.body.dump() + " is not an index";
                continue;
            }
            if (*pick < 0 || static_cast<std::size_t>(*pick) >= order.size()) {
                Selection sel = majority_vote(candidates);
                sel.notes.push_back("judge picked " + std::to_string(*pick) + " of " + std::to_string(order.size()) +
                                    " candidates; fell back to majority vote");
                return sel;
            }
            Selection sel;
            sel.index = order[static_cast<std::size_t>(*pick)];
            for (std::size_t i : order) {
                sel.groups.push_back({i});
            }
            return sel;
        } catch (const BackendError& e) {
            failure = e.what();
        }
    }
    Selection sel = majority_vote(candidates);
    sel.notes.push_back("judge failed (" + failure + "); fell back to majority vote");
    return sel;
}

nlohmann::ordered_json delegate(const std::string& question, const std::vector<CandidateResult>& candidates)
{
    nlohmann::ordered_json out;
    out["question"] = question;
    nlohmann::ordered_json results = nlohmann::ordered_json::array();
    Usage total;
    for (const auto& c : candidates) {
        nlohmann::ordered_json block;
        block["plan_id"] = c.plan_id;
        if (c.error) {
            block["error"] = *c.error;
        } else {
            nlohmann::ordered_json cols = nlohmann::ordered_json::array();
            for (const auto& col : c.result.columns()) {
                cols.push_back(col.name);
            }
            block["columns"] = std::move(cols);
            block["row_count"] = c.result.size();
            if (c.result.empty()) {
                block["rows"] = "(0 rows)";
            } else {
                nlohmann::ordered_json rows = nlohmann::ordered_json::array();
                for (const auto& row : c.result.rows()) {
                    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
                    for (const auto& v : row) {
                        cells.push_back(nlohmann::ordered_json(to_json(v)));
                    }
                    rows.push_back(std::move(cells));
                }
                block["rows"] = std::move(rows);
            }
        }
        block["tokens"] = {{"input_tokens", c.tokens.input_tokens}, {"output_tokens", c.tokens.output_tokens}};
        nlohmann::ordered_json lineage = nlohmann::ordered_json::array();
        for (const auto& s : c.plan.steps()) {
            nlohmann::ordered_json step{{"id", s.id}, {"operator", operator_name(s.op)}, {"action", s.instruction},
                                        {"parent", s.parents}};
            if (auto it = c.step_rows.find(s.id); it != c.step_rows.end()) {
                step["rows"] = it->second;
            }
            lineage.push_back(std::move(step));
        }
        block["lineage"] = std::move(lineage);
        total.input_tokens += c.tokens.input_tokens;
        total.output_tokens += c.tokens.output_tokens;
        results.push_back(std::move(block));
    }
    out["results"] = std::move(results);
    out["tokens"] = {{"input_tokens", total.input_tokens}, {"output_tokens", total.output_tokens}};
    return out;
}

std::string delegate_text(const std::string& question, const std::vector<CandidateResult>& candidates)
{
    std::string out = "Question: " + question + "\n";
    for (const auto& c : candidates) {
        out += "\n== " + c.plan_id + " ==\n";
        out += dump_plan(c.plan);
        if (c.error) {
            out += "failed: " + *c.error + "\n";
        } else {
            out += sample_table(c.result, c.result.size());
        }
        out += "tokens: " + std::to_string(c.tokens.input_tokens) + " in, " + std::to_string(c.tokens.output_tokens) +
               " out\n";
    }
    return out;
}

}  // namespace hyqe
