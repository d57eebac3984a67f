#include "hyqe/prompts.hpp"

#include <cctype>

#include "hyqe/error.hpp"

namespace hyqe {

namespace assets {
const std::map<std::string, std::string_view>& prompt_assets();
}

namespace {

const char* asset_name(PromptKind kind)
{
    switch (kind) {
    case PromptKind::SchemaPruning:
        return "schema_pruning";
    case PromptKind::DecompositionSystem:
        return "decomposition_system";
    case PromptKind::DecompositionUser:
        return "decomposition_user";
    case PromptKind::StepCompile:
        return "step_compile";
    case PromptKind::SemanticSystem:
        return "semantic_system";
    case PromptKind::SemanticFilter:
        return "semantic_filter";
    case PromptKind::SemanticMap:
        return "semantic_map";
    case PromptKind::AggregatePartial:
        return "aggregate_partial";
    case PromptKind::AggregateFinal:
        return "aggregate_final";
    case PromptKind::JoinSystem:
        return "join_system";
    case PromptKind::JoinUser:
        return "join_user";
    case PromptKind::AnswerEvaluator:
        return "answer_evaluator";
    case PromptKind::MajorityVote:
        return "majority_vote";
    case PromptKind::Judge:
        return "judge";
    }
    return "";
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0 || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

}  // namespace

std::string_view prompt_template(PromptKind kind)
{
    const auto& table = assets::prompt_assets();
    auto it = table.find(asset_name(kind));
    if (it == table.end()) {
        throw ContractViolation(std::string("missing prompt asset ") + asset_name(kind));
    }
    return it->second;
}

std::string render_prompt(std::string_view tmpl, const std::map<std::string, std::string>& slots)
{
    std::string out;
    out.reserve(tmpl.size());
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        const char c = tmpl[i];
        if ((c == '{' || c == '}') && i + 1 < tmpl.size() && tmpl[i + 1] == c) {
            out += c;
            ++i;
            continue;
        }
        if (c == '{' && i + 1 < tmpl.size() && ident_start(tmpl[i + 1])) {
            std::size_t j = i + 1;
            while (j < tmpl.size() && ident_char(tmpl[j])) {
                ++j;
            }
            if (j < tmpl.size() && tmpl[j] == '}') {
                const std::string name(tmpl.substr(i + 1, j - i - 1));
                auto it = slots.find(name);
                if (it == slots.end()) {
                    throw ContractViolation("prompt slot {" + name + "} has no value");
                }
                out += it->second;
                i = j;
                continue;
            }
        }
        out += c;
    }
    return out;
}

std::string render_prompt(PromptKind kind, const std::map<std::string, std::string>& slots)
{
    return render_prompt(prompt_template(kind), slots);
}

std::string RenderedPrompt::text() const { return system.empty() ? user : system + "\n\n" + user; }

RenderedPrompt filter_prompt(const std::string& instruction, const nlohmann::json& rows)
{
    return {std::string(prompt_template(PromptKind::SemanticSystem)),
            render_prompt(PromptKind::SemanticFilter, {{"instruction", instruction}, {"data_str", rows.dump()}})};
}

RenderedPrompt map_prompt(const std::string& instruction, const std::string& new_column, const nlohmann::json& rows)
{
    const std::string text = "Add column '" + new_column + "': " + instruction;
    return {std::string(prompt_template(PromptKind::SemanticSystem)),
            render_prompt(PromptKind::SemanticMap, {{"instruction", text}, {"data_str", rows.dump()}})};
}

RenderedPrompt aggregate_prompt(const std::string& instruction, const nlohmann::json& rows, bool partial)
{
    return {std::string(prompt_template(PromptKind::SemanticSystem)),
            render_prompt(partial ? PromptKind::AggregatePartial : PromptKind::AggregateFinal,
                          {{"instruction", instruction}, {"data_str", rows.dump()}})};
}

RenderedPrompt join_prompt(const std::string& instruction, const nlohmann::json& rows_a, const nlohmann::json& rows_b)
{
    return {std::string(prompt_template(PromptKind::JoinSystem)),
            render_prompt(PromptKind::JoinUser,
                          {{"instruction", instruction}, {"table_a", rows_a.dump()}, {"table_b", rows_b.dump()}})};
}

}  // namespace hyqe
