#include "hyqe/http_backend.hpp"

#include <optional>

#include <httplib.h>

#include "hyqe/error.hpp"
#include "hyqe/prompts.hpp"

namespace hyqe {

HttpBackend::HttpBackend(const std::string& endpoint, int timeout_seconds) : timeout_(timeout_seconds)
{
    const std::string scheme = "http://";
    if (endpoint.rfind(scheme, 0) != 0) {
        throw BackendError("backend endpoint must start with http://, got '" + endpoint + "'");
    }
    const auto slash = endpoint.find('/', scheme.size());
    base_ = endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : endpoint.substr(slash);
}

BackendReply HttpBackend::post(nlohmann::json request, const std::string& prompt_text)
{
    httplib::Client client(base_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    const std::string payload = request.dump();
    auto res = client.Post(path_, payload, "application/json");
    if (!res) {
        throw BackendError("request to " + base_ + path_ + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw BackendError("backend answered HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    BackendReply reply;
    try {
        reply.body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
        throw BackendError(std::string("backend reply is not JSON: ") + e.what());
    }
    auto header_count = [&](const char* name) -> std::optional<std::uint64_t> {
        if (!res->has_header(name)) {
            return std::nullopt;
        }
        try {
            return std::stoull(res->get_header_value(name));
        } catch (const std::exception&) {
            return std::nullopt;
        }
    };
    reply.usage.input_tokens = header_count("X-Input-Tokens").value_or(approx_tokens(prompt_text));
    reply.usage.output_tokens = header_count("X-Output-Tokens").value_or(approx_tokens(res->body));
    return reply;
}

BackendReply HttpBackend::map(const std::string& instruction, const std::string& new_column, const Rows& rows)
{
    const auto p = map_prompt(instruction, new_column, rows);
    return post({{"operator", "map"}, {"instruction", instruction}, {"new_column", new_column}, {"data", rows},
                 {"system_prompt", p.system}, {"prompt", p.user}},
                p.text());
}

BackendReply HttpBackend::filter(const std::string& instruction, const Rows& rows)
{
    const auto p = filter_prompt(instruction, rows);
    return post({{"operator", "filter"}, {"instruction", instruction}, {"data", rows}, {"system_prompt", p.system},
                 {"prompt", p.user}},
                p.text());
}

BackendReply HttpBackend::join(const std::string& instruction, const std::string& name_a, const Rows& rows_a,
                               const std::string& name_b, const Rows& rows_b)
{
    const auto p = join_prompt(instruction, rows_a, rows_b);
    return post({{"operator", "join"}, {"instruction", instruction}, {"name_a", name_a}, {"data", rows_a},
                 {"name_b", name_b}, {"data_b", rows_b}, {"system_prompt", p.system}, {"prompt", p.user}},
                p.text());
}

BackendReply HttpBackend::aggregate(const std::string& instruction, const Rows& rows, AggregatePhase phase)
{
    const bool partial = phase == AggregatePhase::Partial;
    const auto p = aggregate_prompt(instruction, rows, partial);
    return post({{"operator", "aggregate"}, {"instruction", instruction}, {"data", rows},
                 {"phase", partial ? "partial" : "final"}, {"system_prompt", p.system}, {"prompt", p.user}},
                p.text());
}

BackendReply HttpBackend::plan(const std::string& question, const std::string& system_prompt,
                               const std::string& user_prompt, std::size_t k)
{
    return post({{"operator", "plan"}, {"question", question}, {"k", k}, {"system_prompt", system_prompt},
                 {"prompt", user_prompt}},
                system_prompt + "\n\n" + user_prompt);
}

BackendReply HttpBackend::prune_columns(const std::string& table, const std::string& question,
                                        const nlohmann::json& columns, const std::string& prompt)
{
    return post({{"operator", "prune"}, {"table", table}, {"question", question}, {"columns", columns},
                 {"prompt", prompt}},
                prompt);
}

BackendReply HttpBackend::compile_step(const std::string& operator_name, const std::string& instruction,
                                       const std::string& prompt, const nlohmann::json& context,
                                       const std::vector<std::string>& feedback)
{
    return post({{"operator", "compile"}, {"step_operator", operator_name}, {"instruction", instruction},
                 {"context", context}, {"feedback", feedback}, {"prompt", prompt}},
                prompt);
}

BackendReply HttpBackend::judge(const std::string& question, const nlohmann::json& candidates,
                                const std::string& prompt)
{
    return post({{"operator", "judge"}, {"question", question}, {"candidates", candidates}, {"prompt", prompt}},
                prompt);
}

BackendReply HttpBackend::equal(const std::string& answer_a, const std::string& answer_b)
{
    return post({{"operator", "equal"}, {"answer_a", answer_a}, {"answer_b", answer_b}}, answer_a + answer_b);
}

std::vector<double> HttpBackend::embed(const std::string& text)
{
    const auto reply = post({{"operator", "embed"}, {"text", text}}, text);
    if (!reply.body.is_array()) {
        throw ContractViolation("embedding reply must be a number array");
    }
    std::vector<double> out;
    for (const auto& v : reply.body) {
        if (!v.is_number()) {
            throw ContractViolation("embedding reply must be a number array");
        }
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace hyqe
