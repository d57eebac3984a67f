#pragma once

#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace hyqe {

enum class PromptKind {
    SchemaPruning,
    DecompositionSystem,
    DecompositionUser,
    StepCompile,
    SemanticSystem,
    SemanticFilter,
    SemanticMap,
    AggregatePartial,
    AggregateFinal,
    JoinSystem,
    JoinUser,
    AnswerEvaluator,
    MajorityVote,
    Judge,
};

/// Raw template text. Slots are written {name}; {{ and }} stand for literal
/// braces, and any other brace is literal as well.
std::string_view prompt_template(PromptKind kind);

/// Substitutes the named slots. Throws ContractViolation for a slot that is
/// missing from `slots`.
std::string render_prompt(std::string_view tmpl, const std::map<std::string, std::string>& slots);
std::string render_prompt(PromptKind kind, const std::map<std::string, std::string>& slots);

/// System and user messages of one backend call.
struct RenderedPrompt {
    std::string system;
    std::string user;
    /// Both messages joined by a blank line; what token estimates price.
    std::string text() const;
};

RenderedPrompt filter_prompt(const std::string& instruction, const nlohmann::json& rows);
RenderedPrompt map_prompt(const std::string& instruction, const std::string& new_column, const nlohmann::json& rows);
RenderedPrompt aggregate_prompt(const std::string& instruction, const nlohmann::json& rows, bool partial);
RenderedPrompt join_prompt(const std::string& instruction, const nlohmann::json& rows_a, const nlohmann::json& rows_b);

}  // namespace hyqe
