#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fraktur/error.hpp"
#include "fraktur/gateway.hpp"

namespace fraktur {

enum class ApiStyle { Anthropic, OpenAi };

struct HttpProviderConfig {
    /// Provider id; the key is read from FRAKTUR_<ID>_KEY.
    std::string id = "anthropic";
    ApiStyle style = ApiStyle::Anthropic;
    /// Scheme, host and optional port, e.g. "https://api.anthropic.com".
    std::string base_url = "https://api.anthropic.com";
    std::chrono::seconds timeout{600};
};

/// Environment variable holding the credential of `provider_id`.
inline std::string key_variable(std::string_view provider_id) {
    std::string v = "FRAKTUR_";
    for (char c : provider_id) {
        v += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                                                         : '_';
    }
    return v + "_KEY";
}

inline HttpProviderConfig default_provider_config(const std::string& provider_id) {
    if (provider_id == "openai") return {"openai", ApiStyle::OpenAi, "https://api.openai.com"};
    if (provider_id == "anthropic") return {"anthropic", ApiStyle::Anthropic, "https://api.anthropic.com"};
    throw Error(ErrorCode::InvalidConfig, "unknown provider '" + provider_id + "'; give style and base_url");
}

/// Chat-completion style provider over HTTP. Construction fails with
/// AuthError when the credential variable is unset.
class HttpProvider : public Provider {
public:
    explicit HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
        const auto var = key_variable(config_.id);
        const char* key = std::getenv(var.c_str());
        if (!key || !*key) throw Error(ErrorCode::AuthError, "no credential for provider '" + config_.id + "': set " + var);
        key_ = key;
    }

    ProviderReply send(const VisionRequest& request) override {
        httplib::Client client(config_.base_url);
        const auto secs = static_cast<time_t>(config_.timeout.count());
        client.set_connection_timeout(30, 0);
        client.set_read_timeout(secs, 0);
        client.set_write_timeout(secs, 0);

        httplib::Headers headers;
        std::string path;
        nlohmann::json body;
        if (config_.style == ApiStyle::Anthropic) {
            path = "/v1/messages";
            headers = {{"x-api-key", key_}, {"anthropic-version", "2023-06-01"}};
            body = anthropic_body(request);
        } else {
            path = "/v1/chat/completions";
            headers = {{"Authorization", "Bearer " + key_}};
            body = openai_body(request);
        }
        const auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res) {
            return {ReplyStatus::Transient, "connection failed: " + httplib::to_string(res.error()), std::nullopt,
                    std::nullopt};
        }
        if (res->status == 401 || res->status == 403) return {ReplyStatus::Auth, res->body, std::nullopt, std::nullopt};
        if (res->status == 408 || res->status == 429 || res->status >= 500) {
            return {ReplyStatus::Transient, res->body, std::nullopt, std::nullopt};
        }
        if (res->status != 200) {
            return {ReplyStatus::Fatal, "HTTP " + std::to_string(res->status) + ": " + res->body, std::nullopt,
                    std::nullopt};
        }
        try {
            return config_.style == ApiStyle::Anthropic ? anthropic_reply(res->body) : openai_reply(res->body);
        } catch (const std::exception& err) {
            return {ReplyStatus::Fatal, std::string("unreadable provider reply: ") + err.what(), std::nullopt,
                    std::nullopt};
        }
    }

    static nlohmann::json anthropic_body(const VisionRequest& r) {
        nlohmann::json content = nlohmann::json::array();
        if (!r.image_b64.empty()) {
            content.push_back({{"type", "image"},
                               {"source", {{"type", "base64"}, {"media_type", r.media_type}, {"data", r.image_b64}}}});
        }
        content.push_back({{"type", "text"}, {"text", r.prompt}});
        nlohmann::json body{{"model", r.params.model_id},
                            {"max_tokens", r.params.max_output_tokens},
                            {"messages", {{{"role", "user"}, {"content", content}}}}};
        if (r.params.reasoning_enabled) {
            // Extended thinking does not accept a temperature.
            body["thinking"] = {{"type", "enabled"}, {"budget_tokens", r.params.reasoning_budget_tokens}};
        } else {
            body["temperature"] = r.params.temperature;
        }
        return body;
    }

    static nlohmann::json openai_body(const VisionRequest& r) {
        nlohmann::json content = nlohmann::json::array();
        content.push_back({{"type", "text"}, {"text", r.prompt}});
        if (!r.image_b64.empty()) {
            content.push_back(
                {{"type", "image_url"}, {"image_url", {{"url", "data:" + r.media_type + ";base64," + r.image_b64}}}});
        }
        nlohmann::json body{{"model", r.params.model_id},
                            {"max_tokens", r.params.max_output_tokens},
                            {"temperature", r.params.temperature},
                            {"messages", {{{"role", "user"}, {"content", content}}}}};
        return body;
    }

    static ProviderReply anthropic_reply(const std::string& raw) {
        const auto j = nlohmann::json::parse(raw);
        ProviderReply reply;
        for (const auto& part : j.at("content")) {
            if (part.value("type", "") == "text") reply.body += part.at("text").get<std::string>();
        }
        if (auto u = j.find("usage"); u != j.end()) {
            if (u->contains("input_tokens")) reply.input_tokens = u->at("input_tokens").get<std::int64_t>();
            if (u->contains("output_tokens")) reply.output_tokens = u->at("output_tokens").get<std::int64_t>();
        }
        return reply;
    }

    static ProviderReply openai_reply(const std::string& raw) {
        const auto j = nlohmann::json::parse(raw);
        ProviderReply reply;
        const auto& msg = j.at("choices").at(0).at("message").at("content");
        reply.body = msg.is_string() ? msg.get<std::string>() : msg.dump();
        if (auto u = j.find("usage"); u != j.end()) {
            if (u->contains("prompt_tokens")) reply.input_tokens = u->at("prompt_tokens").get<std::int64_t>();
            if (u->contains("completion_tokens")) reply.output_tokens = u->at("completion_tokens").get<std::int64_t>();
        }
        return reply;
    }

private:
    HttpProviderConfig config_;
    std::string key_;
};

} // namespace fraktur
