#pragma once

#include <string>

#include "hyqe/backend.hpp"

namespace hyqe {

/// Posts one JSON request per call to an HTTP endpoint:
///   {"operator", "instruction", "data", "data_b", "phase", "system_prompt", "prompt", ...}
/// The response body is the operator's JSON reply. Token counts come from the
/// X-Input-Tokens / X-Output-Tokens headers, else from the rendered prompt
/// and reply sizes. Every call uses its own connection.
class HttpBackend : public SemanticBackend {
public:
    /// `endpoint` is http://host[:port][/path].
    explicit HttpBackend(const std::string& endpoint, int timeout_seconds = 120);

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

private:
    BackendReply post(nlohmann::json request, const std::string& prompt_text);

    std::string base_;
    std::string path_;
    int timeout_;
};

}  // namespace hyqe
