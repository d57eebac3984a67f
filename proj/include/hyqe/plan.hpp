#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyqe/value.hpp"

namespace hyqe {

enum class OpClass { Relational, Semantic };
enum class OpKind { Scan, Filter, Project, Aggregate, Join, Sort, Limit, SetOp, Distinct, Map };

struct OperatorTag {
    OpClass cls = OpClass::Relational;
    OpKind kind = OpKind::Scan;

    bool semantic() const noexcept { return cls == OpClass::Semantic; }
    bool operator==(const OperatorTag&) const = default;
};

/// Wire name as emitted in plan documents: SCAN ... DISTINCT, LLM_DERIVE,
/// LLM_FILTER, LLM_JOIN, LLM_AGGREGATE.
std::string operator_name(OperatorTag tag);
std::optional<OperatorTag> parse_operator_name(std::string_view name);
/// The relational and semantic operator universe, DISTINCT included.
std::vector<OperatorTag> all_operators();

enum class CmpOp { Eq, Ne, Lt, Gt, Le, Ge, Contains, In, NotIn, IsNull, IsNotNull };

std::string_view to_string(CmpOp op);
std::optional<CmpOp> parse_cmp_op(std::string_view s);

struct ScanParams {
    std::string table;
    /// Columns read from the base relation; empty means all.
    std::vector<std::string> columns;
    bool operator==(const ScanParams&) const = default;
};

struct FilterParams {
    std::string column;
    CmpOp op = CmpOp::Eq;
    /// One literal, or the list for in / not in. Empty for null tests.
    std::vector<Value> values;
    /// Set when comparing against another column instead of a literal.
    std::optional<std::string> rhs_column;
    bool operator==(const FilterParams&) const = default;
};

struct Operand {
    std::optional<std::string> column;
    Value literal;
    bool operator==(const Operand&) const = default;
};

enum class ArithOp { Add, Sub, Mul, Div };

struct ProjectItem {
    std::string name;
    Operand lhs;
    std::optional<ArithOp> op;
    Operand rhs;
    bool operator==(const ProjectItem&) const = default;

    static ProjectItem column(std::string name) { return ProjectItem{name, Operand{name, {}}, std::nullopt, {}}; }
};

struct ProjectParams {
    std::vector<ProjectItem> items;
    bool operator==(const ProjectParams&) const = default;
};

enum class AggFunc { Max, Min, Count, Sum, Avg };

std::string_view to_string(AggFunc f);
std::optional<AggFunc> parse_agg_func(std::string_view s);

struct AggregateParams {
    AggFunc func = AggFunc::Count;
    /// Column name, or "*" for count(*).
    std::string target;
    std::vector<std::string> group_by;
    std::string output;
    bool operator==(const AggregateParams&) const = default;
};

/// Single-predicate join condition. Column names are resolved against
/// whichever input carries them, so the pair is order-agnostic.
struct JoinParams {
    std::string left_column;
    CmpOp op = CmpOp::Eq;
    std::string right_column;
    bool operator==(const JoinParams&) const = default;
};

struct SortParams {
    std::string column;
    bool descending = false;
    bool operator==(const SortParams&) const = default;
};

struct LimitParams {
    std::size_t n = 0;
    bool operator==(const LimitParams&) const = default;
};

enum class SetOpKind { Union, Intersection, Difference };

std::string_view to_string(SetOpKind k);
std::optional<SetOpKind> parse_set_op_kind(std::string_view s);

struct SetOpParams {
    SetOpKind kind = SetOpKind::Union;
    bool operator==(const SetOpParams&) const = default;
};

struct DistinctParams {
    /// Columns defining uniqueness; empty means the full row.
    std::vector<std::string> columns;
    bool operator==(const DistinctParams&) const = default;
};

/// Parameters of every semantic operator. `condition` is the natural-language
/// instruction handed to the backend.
struct SemanticParams {
    std::string condition;
    std::string new_column;
    std::vector<std::string> input_columns;
    std::vector<std::string> group_by;
    std::string target;
    bool operator==(const SemanticParams&) const = default;
};

using StepParams = std::variant<ScanParams, FilterParams, ProjectParams, AggregateParams, JoinParams, SortParams,
                                LimitParams, SetOpParams, DistinctParams, SemanticParams>;

/// Whether the params alternative is the one the operator requires.
bool params_match_operator(const StepParams& params, OperatorTag tag);

nlohmann::ordered_json params_to_json(const StepParams& params);
StepParams params_from_json(const nlohmann::json& j);

/// Columns a step reads from its inputs, according to its params.
std::vector<std::string> referenced_columns(const StepParams& params);

struct PlanStep {
    std::string id;
    OperatorTag op;
    std::string instruction;
    std::optional<StepParams> params;
    /// Step ids of the inputs. A SCAN may instead name its base relation here.
    std::vector<std::string> parents;

    bool operator==(const PlanStep&) const = default;
};

/// Required input count: 0 for SCAN, 2 for JOIN / SET_OP / LLM_JOIN, else 1.
std::size_t required_arity(OperatorTag tag);

/// Base relation read by a SCAN: params table if compiled, else the name in
/// its parent list, else the name in the instruction.
std::optional<std::string> scan_table(const PlanStep& step);

class PlanDag {
public:
    PlanDag() = default;
    PlanDag(std::string id, std::vector<PlanStep> steps) : id_(std::move(id)), steps_(std::move(steps)) {}

    const std::string& id() const noexcept { return id_; }
    void set_id(std::string id) { id_ = std::move(id); }
    const std::vector<PlanStep>& steps() const noexcept { return steps_; }
    std::vector<PlanStep>& mutable_steps() noexcept { return steps_; }
    std::size_t size() const noexcept { return steps_.size(); }

    const PlanStep* find(std::string_view id) const;
    PlanStep* find(std::string_view id);
    const PlanStep& at(std::string_view id) const;

    /// Parents that are step ids (a SCAN's base-relation reference excluded).
    std::vector<std::string> input_ids(const PlanStep& step) const;
    /// Steps that list `id` as an input, in plan order.
    std::vector<std::string> consumers(std::string_view id) const;
    /// The unique step nothing depends on. Throws PlanningError otherwise.
    std::string sink() const;
    std::string fresh_id(std::string_view base) const;

    bool operator==(const PlanDag&) const = default;

private:
    std::string id_;
    std::vector<PlanStep> steps_;
};

enum class IssueKind { Empty, DuplicateId, DanglingParent, Cycle, Arity, Atomicity, MultipleSinks, Params };

std::string_view to_string(IssueKind k);

struct ValidationIssue {
    IssueKind kind;
    std::string step;
    std::string message;
};

struct ValidationResult {
    std::vector<ValidationIssue> issues;
    bool ok() const noexcept { return issues.empty(); }
    bool has(IssueKind k) const;
    std::string summary() const;
};

/// True when the text holds more than one logical condition: an unquoted
/// AND / OR / BETWEEN connective.
bool has_multiple_conditions(std::string_view condition);

ValidationResult validate(const PlanDag& dag);

/// Longest-path layering: layer(v) = 1 + max layer(parents), sources at 0.
/// Ids within a layer keep plan order. Throws PlanningError on a cycle.
std::vector<std::vector<std::string>> topo_schedule(const PlanDag& dag);

/// Steps in a topological order (layer by layer).
std::vector<std::string> topo_order(const PlanDag& dag);

struct ParsedPlans {
    std::vector<PlanDag> plans;
    std::vector<std::string> diagnostics;
};

/// Reads the {"plans":[{"steps":[{"id","operator","action","parent"}]}]}
/// document. Plans with unknown operators or validation failures are dropped
/// with a diagnostic, so the result may hold no plans. Throws ParseError for
/// a malformed document or an empty plan list.
ParsedPlans parse_plan(std::string_view document);

/// Emits the same schema; compiled steps carry an extra "params" object.
nlohmann::ordered_json plan_to_json(const PlanDag& dag);
std::string serialize_plan(const std::vector<PlanDag>& plans);
std::string serialize_plan(const PlanDag& dag);

/// Regenerates the natural-language instruction of a compiled step from its
/// operator template, params and parents.
std::string describe_step(const PlanStep& step);

/// Plain-text dump, one step per line.
std::string dump_plan(const PlanDag& dag);

}  // namespace hyqe
