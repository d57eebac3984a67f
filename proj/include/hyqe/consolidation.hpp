#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyqe/backend.hpp"
#include "hyqe/executor.hpp"
#include "hyqe/plan.hpp"
#include "hyqe/relation.hpp"

namespace hyqe {

/// Order-free, case-folded form of a result: every cell through
/// normalize_answer_text, rows sorted.
struct NormalizedAnswer {
    std::size_t columns = 0;
    std::vector<std::vector<std::string>> rows;

    /// The lone cell of a 1×1 result, else the rows as JSON.
    std::string text() const;
    /// Column count plus rows; equal keys mean equal answers.
    std::string key() const;
    bool operator==(const NormalizedAnswer&) const = default;
};

NormalizedAnswer normalize(const Relation& r);
NormalizedAnswer normalize(const NormalizedAnswer& a);

struct CandidateResult {
    std::string plan_id;
    PlanDag plan;
    Relation result;
    NormalizedAnswer normalized;
    Usage tokens;
    std::map<std::string, std::size_t> step_rows;
    /// Set when the plan failed; failed candidates never win.
    std::optional<std::string> error;

    bool ok() const { return !error.has_value(); }
};

CandidateResult make_candidate(const PlanDag& plan, const ExecutionReport& report);
CandidateResult failed_candidate(const PlanDag& plan, std::string error);

/// "plan_2" before "plan_10": digit runs compare by value.
bool plan_id_less(std::string_view a, std::string_view b);

enum class EqualityMode { Exact, Semantic };

struct Selection {
    /// Index into the candidate list.
    std::size_t index = 0;
    /// Candidate indices per answer group, largest first.
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::string> notes;
};

/// Groups successful candidates by answer and returns the first (by plan id)
/// of the largest group; ties go to the group holding the lowest plan id.
/// Semantic mode joins candidates the backend calls equal and takes
/// connected components; results of different widths never group. Throws
/// ExecutionError when every candidate failed.
Selection majority_vote(const std::vector<CandidateResult>& candidates, EqualityMode mode = EqualityMode::Exact,
                        SemanticBackend* backend = nullptr);

struct JudgeOptions {
    std::size_t sample_rows = 10;
    std::string few_shot_examples;
    /// Extra attempts after a failed judge call.
    std::size_t retries = 2;
};

/// Lets the backend pick among successful candidates. A single candidate is
/// returned without a call; a bad index or a failing backend falls back to
/// majority_vote with a note.
Selection judge_select(const std::string& question, const std::vector<CandidateResult>& candidates,
                       SemanticBackend& backend, const Database& db, const JudgeOptions& opts = {},
                       TokenAccounting* accounting = nullptr);

/// Every candidate with its rows, tokens and step lineage; no choice made.
nlohmann::ordered_json delegate(const std::string& question, const std::vector<CandidateResult>& candidates);
std::string delegate_text(const std::string& question, const std::vector<CandidateResult>& candidates);

}  // namespace hyqe
