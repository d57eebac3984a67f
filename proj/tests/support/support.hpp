#pragma once

// Shared test helpers: hand-rolled generators, fixture loading, comparison.

#include <filesystem>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyqe/backend.hpp"
#include "hyqe/plan.hpp"
#include "hyqe/relation.hpp"

namespace hyqe::test {

std::filesystem::path fixture_dir();
std::filesystem::path fixture(const std::string& rel);
std::string read_text(const std::filesystem::path& p);

/// Relation from a header of (name, kind) and rows; profiled.
Relation make_relation(const std::string& name, const std::vector<std::pair<std::string, AttributeKind>>& cols,
                       std::vector<Row> rows);

/// Text of every row, sorted. Equal outputs mean equal row multisets.
std::vector<std::string> row_multiset(const Relation& r);

/// Same column names in the same order and the same row multiset.
bool same_result(const Relation& a, const Relation& b, std::string* why = nullptr);

/// Chain of relations r0..r{n-1}; r{i}_p references r{i-1}_id. Columns:
/// r{i}_id, [r{i}_p], r{i}_x (numeric, some nulls), r{i}_c (categorical),
/// r{i}_t (short text).
Database random_chain_db(std::mt19937_64& rng, std::size_t relations, std::size_t max_rows);

struct GeneratedCase {
    Database db;
    PlanDag plan;
    nlohmann::json rulebook;
};

/// A compiled plan over a random chain database: scans with optional
/// pushed-down or semantic filters, the FK join chain, a few operators on
/// top, sometimes a union, map, projection or aggregate. The rulebook
/// answers every semantic step.
GeneratedCase random_plan_case(std::mt19937_64& rng, std::size_t max_relations, std::size_t max_rows);

/// accounts(100) joined to events(1000), ten events per account, with a
/// semantic filter on an accounts column placed above the join.
GeneratedCase deferral_fixture();

/// Builds compiled steps one at a time; instructions come from describe_step.
class PlanBuilder {
public:
    explicit PlanBuilder(std::string id) : id_(std::move(id)) {}
    std::string add(OperatorTag op, StepParams params, std::vector<std::string> parents);
    PlanDag build() const { return PlanDag(id_, steps_); }

private:
    std::string id_;
    std::vector<PlanStep> steps_;
};

OperatorTag rel(OpKind k);
OperatorTag sem(OpKind k);

/// Forwards to an inner backend and keeps every planning prompt.
class RecordingBackend : public SemanticBackend {
public:
    explicit RecordingBackend(SemanticBackend& inner) : inner_(inner) {}

    BackendReply map(const std::string& i, const std::string& c, const Rows& r) override { return inner_.map(i, c, r); }
    BackendReply filter(const std::string& i, const Rows& r) override { return inner_.filter(i, r); }
    BackendReply join(const std::string& i, const std::string& na, const Rows& a, const std::string& nb,
                      const Rows& b) override
    {
        return inner_.join(i, na, a, nb, b);
    }
    BackendReply aggregate(const std::string& i, const Rows& r, AggregatePhase ph) override
    {
        return inner_.aggregate(i, r, ph);
    }
    BackendReply plan(const std::string& q, const std::string& sys, const std::string& user, std::size_t k) override;
    BackendReply prune_columns(const std::string& t, const std::string& q, const nlohmann::json& c,
                               const std::string& p) override
    {
        return inner_.prune_columns(t, q, c, p);
    }
    BackendReply compile_step(const std::string& op, const std::string& i, const std::string& p,
                              const nlohmann::json& ctx, const std::vector<std::string>& fb) override
    {
        return inner_.compile_step(op, i, p, ctx, fb);
    }
    BackendReply judge(const std::string& q, const nlohmann::json& c, const std::string& p) override
    {
        return inner_.judge(q, c, p);
    }
    BackendReply equal(const std::string& a, const std::string& b) override { return inner_.equal(a, b); }
    std::vector<double> embed(const std::string& t) override { return inner_.embed(t); }

    struct PlanCall {
        std::string system_prompt;
        std::string user_prompt;
        std::size_t k = 0;
    };
    std::vector<PlanCall> plan_calls() const;

private:
    SemanticBackend& inner_;
    mutable std::mutex mu_;
    std::vector<PlanCall> plan_calls_;
};

}  // namespace hyqe::test
