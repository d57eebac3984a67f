#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hyqe {

struct Usage {
    std::uint64_t input_tokens = 0;
    std::uint64_t output_tokens = 0;
};

/// A backend answer: the JSON body in the shape the operator contract asks
/// for, plus the tokens it cost.
struct BackendReply {
    nlohmann::json body;
    Usage usage;
};

enum class AggregatePhase { Partial, Final };

/// Rows travel as JSON arrays of row objects.
using Rows = nlohmann::json;

/// Everything the pipeline asks of a language model. Implementations must
/// tolerate concurrent calls.
class SemanticBackend {
public:
    virtual ~SemanticBackend() = default;

    /// {"rows": [...]}: the input rows, each with `new_column` added.
    virtual BackendReply map(const std::string& instruction, const std::string& new_column, const Rows& rows) = 0;
    /// Bare array of 0-based indices of matching rows.
    virtual BackendReply filter(const std::string& instruction, const Rows& rows) = 0;
    /// {"rows": [...]}: merged rows of matching pairs. Conflicting right-hand
    /// columns are prefixed with `name_b` and a dot.
    virtual BackendReply join(const std::string& instruction, const std::string& name_a, const Rows& rows_a,
                              const std::string& name_b, const Rows& rows_b) = 0;
    /// Partial: a summary object (or a short array of them). Final:
    /// {"result": value_or_object}.
    virtual BackendReply aggregate(const std::string& instruction, const Rows& rows, AggregatePhase phase) = 0;

    /// Plan document text for the decomposition prompts.
    virtual BackendReply plan(const std::string& question, const std::string& system_prompt,
                              const std::string& user_prompt, std::size_t k) = 0;
    /// JSON list of column names worth keeping.
    virtual BackendReply prune_columns(const std::string& table, const std::string& question,
                                       const nlohmann::json& columns, const std::string& prompt) = 0;
    /// Structured params for one relational step, as a JSON object.
    /// `context` is {"parents": [...], "columns": [...]} naming the step's
    /// inputs; `feedback` holds the errors of earlier attempts.
    virtual BackendReply compile_step(const std::string& operator_name, const std::string& instruction,
                                      const std::string& prompt, const nlohmann::json& context,
                                      const std::vector<std::string>& feedback) = 0;
    /// Integer index of the chosen candidate. `candidates` carries one
    /// object per plan with its summary and normalized answer.
    virtual BackendReply judge(const std::string& question, const nlohmann::json& candidates, const std::string& prompt) = 0;
    /// Boolean: whether two answers mean the same thing.
    virtual BackendReply equal(const std::string& answer_a, const std::string& answer_b) = 0;
    virtual std::vector<double> embed(const std::string& text) = 0;
};

/// ceil(bytes / 4), the token estimate used for accounting.
std::uint64_t approx_tokens(std::string_view text);

/// Deterministic backend driven by a JSON rulebook. It prices calls from the
/// rendered prompts, so token totals follow the real prompt sizes. Unknown
/// instructions raise BackendError.
///
/// Rulebook sections, each keyed by instruction (or question / table):
///   filter:    {column, pattern} regex match, or {column, op, value}; "negate"
///   map:       {source, cases:[{pattern, value}], default} or {source, extract}
///   join:      {left, right} normalized equality, "mode": "contains" optional
///   aggregate: {column, function: sum|count|min|max|avg}
///   plans:     plan document (object or string); "*" is the fallback
///   prune:     column list per table; absent tables use name-token overlap
///   compile:   list of params objects returned on successive attempts;
///              other instructions are read with the step templates
///   judge:     index per question; "*": "plurality" picks the modal answer
class MockBackend : public SemanticBackend {
public:
    explicit MockBackend(nlohmann::json rulebook);
    static MockBackend from_file(const std::filesystem::path& path);

    BackendReply map(const std::string& instruction, const std::string& new_column, const Rows& rows) override;
    BackendReply filter(const std::string& instruction, const Rows& rows) override;
    BackendReply join(const std::string& instruction, const std::string& name_a, const Rows& rows_a,
                      const std::string& name_b, const Rows& rows_b) override;
    BackendReply aggregate(const std::string& instruction, const Rows& rows, AggregatePhase phase) override;
    BackendReply plan(const std::string& question, const std::string& system_prompt, const std::string& user_prompt,
                      std::size_t k) override;
    BackendReply prune_columns(const std::string& table, const std::string& question, const nlohmann::json& columns,
                               const std::string& prompt) override;
    BackendReply compile_step(const std::string& operator_name, const std::string& instruction, const std::string& prompt,
                              const nlohmann::json& context, const std::vector<std::string>& feedback) override;
    BackendReply judge(const std::string& question, const nlohmann::json& candidates, const std::string& prompt) override;
    BackendReply equal(const std::string& answer_a, const std::string& answer_b) override;
    std::vector<double> embed(const std::string& text) override;

    const nlohmann::json& rulebook() const noexcept { return rules_; }

private:
    const nlohmann::json& rule(const char* section, const std::string& key) const;
    nlohmann::json rules_;
};

/// Hashed term-frequency vector over lowercase alphanumeric tokens.
std::vector<double> term_frequency_embedding(std::string_view text, std::size_t dims = 256);
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Case-folded, trimmed text with numbers in canonical form; used for
/// answer comparison.
std::string normalize_answer_text(std::string_view text);

}  // namespace hyqe
