#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraktur/error.hpp"
#include "fraktur/image.hpp"
#include "fraktur/prompts.hpp"
#include "fraktur/text.hpp"
#include "fraktur/usage.hpp"

namespace fraktur {

struct ModelParams {
    std::string provider_id = "mock";
    std::string model_id = "mock-vision";
    /// Low temperature for transcription.
    double temperature = 0.0;
    int max_output_tokens = 32000;
    bool reasoning_enabled = false;
    int reasoning_budget_tokens = 0;

    bool operator==(const ModelParams&) const = default;

    void validate() const {
        if (!(temperature >= 0.0 && temperature <= 1.0)) {
            throw Error(ErrorCode::InvalidConfig, "temperature must lie in [0, 1]");
        }
        if (max_output_tokens < 1) throw Error(ErrorCode::InvalidConfig, "max_output_tokens must be positive");
        if (reasoning_budget_tokens < 0) throw Error(ErrorCode::InvalidConfig, "reasoning_budget_tokens must be >= 0");
        if (!reasoning_enabled && reasoning_budget_tokens != 0) {
            throw Error(ErrorCode::InvalidConfig, "reasoning_budget_tokens must be 0 when reasoning is disabled");
        }
        if (provider_id.empty() || model_id.empty()) throw Error(ErrorCode::InvalidConfig, "provider and model are required");
    }
};

inline void to_json(nlohmann::json& j, const ModelParams& p) {
    j = nlohmann::json{{"provider", p.provider_id},
                       {"model", p.model_id},
                       {"temperature", p.temperature},
                       {"max_output_tokens", p.max_output_tokens},
                       {"reasoning_enabled", p.reasoning_enabled},
                       {"reasoning_budget_tokens", p.reasoning_budget_tokens}};
}

inline void from_json(const nlohmann::json& j, ModelParams& p) {
    const ModelParams d;
    p.provider_id = j.value("provider", d.provider_id);
    p.model_id = j.value("model", d.model_id);
    p.temperature = j.value("temperature", d.temperature);
    p.max_output_tokens = j.value("max_output_tokens", d.max_output_tokens);
    p.reasoning_enabled = j.value("reasoning_enabled", d.reasoning_enabled);
    p.reasoning_budget_tokens = j.value("reasoning_budget_tokens", d.reasoning_budget_tokens);
}

/// One model call: an optional encoded image plus a prompt. Text-only
/// requests (merging, adjudication, enrichment) leave image_b64 empty.
struct VisionRequest {
    std::string request_id;
    std::string image_b64;
    std::string media_type;
    std::string prompt;
    ModelParams params;
    /// Human-readable tag (tile label, batch name); not part of the id.
    std::string label;
};

namespace gateway_detail {

inline std::string request_digest(const std::string& image_b64, const std::string& media_type,
                                  const std::string& prompt, const ModelParams& params) {
    const nlohmann::json key{{"image_sha256", sha256_hex(image_b64)},
                             {"media_type", media_type},
                             {"prompt_sha256", sha256_hex(prompt)},
                             {"params", params}};
    return sha256_hex(key.dump()).substr(0, 32);
}

} // namespace gateway_detail

/// Request for an image; the id is a content hash of image, prompt and
/// parameters, so identical inputs give identical ids.
inline VisionRequest build_vision_request(const Bytes& png, const PromptLibrary& prompts, const std::string& prompt_id,
                                          const ModelParams& params, std::string label = {}) {
    const PromptAsset asset = prompts.load(prompt_id);
    params.validate();
    if (png.empty()) throw Error(ErrorCode::InvalidArgument, "request image is empty");
    VisionRequest req;
    req.image_b64 = base64_encode(png);
    req.media_type = "image/png";
    req.prompt = asset.text;
    req.params = params;
    req.label = std::move(label);
    req.request_id = gateway_detail::request_digest(req.image_b64, req.media_type, req.prompt, req.params);
    return req;
}

/// Text-only request: prompt asset followed by the payload.
inline VisionRequest build_text_request(const PromptAsset& asset, const std::string& payload, const ModelParams& params,
                                        std::string label = {}) {
    params.validate();
    VisionRequest req;
    req.prompt = asset.text + "\n\n" + payload;
    req.params = params;
    req.label = std::move(label);
    req.request_id = gateway_detail::request_digest("", "", req.prompt, req.params);
    return req;
}

enum class ReplyStatus { Ok, Transient, Auth, Fatal };

struct ProviderReply {
    ReplyStatus status = ReplyStatus::Ok;
    std::string body;
    /// Empty when the provider does not report usage.
    std::optional<std::int64_t> input_tokens;
    std::optional<std::int64_t> output_tokens;
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual ProviderReply send(const VisionRequest& request) = 0;
};

/// Offline provider. Replies are looked up by request id, then by label:
/// `{key}.json` (scripted attempts) or `{key}.txt` (plain body). A handler,
/// when set, takes precedence over fixture files.
///
/// Scripted form: {"replies": [{"status": "transient"}, {"status": "ok",
/// "body": "...", "input_tokens": 10, "output_tokens": 20}]}; attempt k uses
/// replies[min(k, last)].
class MockProvider : public Provider {
public:
    using Handler = std::function<ProviderReply(const VisionRequest&, int attempt)>;

    MockProvider() = default;
    explicit MockProvider(std::filesystem::path fixtures, std::optional<std::filesystem::path> audit_log = std::nullopt)
        : fixtures_(std::move(fixtures)), audit_log_(std::move(audit_log)) {}

    void set_handler(Handler h) { handler_ = std::move(h); }

    ProviderReply send(const VisionRequest& request) override {
        int attempt = 0;
        {
            std::lock_guard lock(mutex_);
            attempt = attempts_[request.request_id]++;
            ++calls_;
            if (audit_log_) {
                std::ofstream out(*audit_log_, std::ios::app);
                out << request.request_id << '\t' << request.label << '\n';
            }
        }
        if (handler_) return handler_(request, attempt);
        if (fixtures_) {
            for (const auto& key : {request.request_id, request.label}) {
                if (key.empty()) continue;
                if (auto reply = from_file(*fixtures_ / (key + ".json"), attempt, true)) return *reply;
                if (auto reply = from_file(*fixtures_ / (key + ".txt"), attempt, false)) return *reply;
            }
        }
        return ProviderReply{ReplyStatus::Fatal, "mock: no fixture for request " + request.request_id +
                                                     (request.label.empty() ? "" : " (" + request.label + ")"),
                             std::nullopt, std::nullopt};
    }

    std::size_t calls() const {
        std::lock_guard lock(mutex_);
        return calls_;
    }

private:
    static std::optional<ProviderReply> from_file(const std::filesystem::path& path, int attempt, bool scripted) {
        std::ifstream in(path, std::ios::binary);
        if (!in) return std::nullopt;
        std::stringstream ss;
        ss << in.rdbuf();
        if (!scripted) return ProviderReply{ReplyStatus::Ok, ss.str(), std::nullopt, std::nullopt};
        const auto j = nlohmann::json::parse(ss.str());
        const nlohmann::json* r = &j;
        if (j.contains("replies")) {
            const auto& replies = j.at("replies");
            r = &replies.at(std::min<std::size_t>(static_cast<std::size_t>(attempt), replies.size() - 1));
        }
        ProviderReply reply;
        const auto status = r->value("status", std::string("ok"));
        reply.status = status == "ok"          ? ReplyStatus::Ok
                       : status == "transient" ? ReplyStatus::Transient
                       : status == "auth"      ? ReplyStatus::Auth
                                               : ReplyStatus::Fatal;
        reply.body = r->value("body", std::string());
        if (r->contains("input_tokens")) reply.input_tokens = r->at("input_tokens").get<std::int64_t>();
        if (r->contains("output_tokens")) reply.output_tokens = r->at("output_tokens").get<std::int64_t>();
        return reply;
    }

    std::optional<std::filesystem::path> fixtures_;
    std::optional<std::filesystem::path> audit_log_;
    Handler handler_;
    mutable std::mutex mutex_;
    std::map<std::string, int> attempts_;
    std::size_t calls_ = 0;
};

struct Response {
    std::string body;
    UsageRecord usage;
    /// True when served from the response store without a provider call.
    bool from_store = false;
    std::vector<std::string> warnings;

    bool refused() const { return usage.outcome == Outcome::Refusal; }
};

/// Throws RefusalDetected carrying the refusal text.
inline const Response& expect_ok(const Response& r) {
    if (r.refused()) throw Error(ErrorCode::RefusalDetected, r.body);
    return r;
}

struct GatewayOptions {
    int max_retries = 3;
    std::chrono::milliseconds backoff_base{1000};
    double backoff_factor = 2.0;
    std::size_t max_in_flight = 4;
    /// Case-insensitive phrases marking a reply as a refusal.
    std::vector<std::string> refusal_phrases{"too detailed and contains too much information",
                                             "i'm sorry", "i am sorry", "i cannot", "i can't"};
    /// Completed responses are kept here as `{request_id}.json`, with the
    /// request as `{request_id}.request.json`.
    std::optional<std::filesystem::path> response_dir;
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };
    /// Observer for "stored" (response persisted) and "recorded" (usage
    /// appended) events of fresh provider replies.
    std::function<void(std::string_view)> on_event;
};

namespace gateway_detail {

class Semaphore {
public:
    explicit Semaphore(std::size_t n) : free_(std::max<std::size_t>(n, 1)) {}
    void acquire() {
        std::unique_lock lock(m_);
        cv_.wait(lock, [&] { return free_ > 0; });
        --free_;
    }
    void release() {
        {
            std::lock_guard lock(m_);
            ++free_;
        }
        cv_.notify_one();
    }

private:
    std::mutex m_;
    std::condition_variable cv_;
    std::size_t free_;
};

inline void write_atomic(const std::filesystem::path& path, const std::string& data) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << data;
        out.flush();
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace gateway_detail

/// Provider-agnostic client: retries transient failures with exponential
/// backoff, answers repeated request ids from its response store, classifies
/// refusals, and records one UsageRecord per finished request.
class Gateway {
public:
    Gateway(Provider& provider, UsageLedger& ledger, GatewayOptions options = {})
        : provider_(provider), ledger_(ledger), options_(std::move(options)), slots_(options_.max_in_flight) {}

    Response submit(const VisionRequest& request) {
        if (text::trim_view(request.prompt).empty()) throw Error(ErrorCode::InvalidArgument, "request prompt is empty");
        std::shared_future<Response> pending;
        std::shared_ptr<std::promise<Response>> owner;
        {
            std::lock_guard lock(mutex_);
            if (auto it = done_.find(request.request_id); it != done_.end()) {
                Response r = it->second;
                r.from_store = true;
                return r;
            }
            if (auto it = in_flight_.find(request.request_id); it != in_flight_.end()) {
                pending = it->second;
            } else {
                owner = std::make_shared<std::promise<Response>>();
                pending = owner->get_future().share();
                in_flight_[request.request_id] = pending;
            }
        }
        if (!owner) {
            Response r = pending.get();
            r.from_store = true;
            return r;
        }
        try {
            Response r = resolve(request);
            {
                std::lock_guard lock(mutex_);
                done_[request.request_id] = r;
                in_flight_.erase(request.request_id);
            }
            owner->set_value(r);
            return r;
        } catch (...) {
            {
                std::lock_guard lock(mutex_);
                in_flight_.erase(request.request_id);
            }
            owner->set_exception(std::current_exception());
            throw;
        }
    }

    /// Submits all requests with at most max_in_flight concurrent calls and
    /// returns responses in request order. Every request is attempted; the
    /// first failure is rethrown afterwards.
    std::vector<Response> submit_all(const std::vector<VisionRequest>& requests) {
        std::vector<std::optional<Response>> results(requests.size());
        std::vector<std::exception_ptr> errors(requests.size());
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < requests.size(); i = next++) {
                try {
                    results[i] = submit(requests[i]);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        const std::size_t n_workers = std::min(options_.max_in_flight, requests.size());
        {
            std::vector<std::jthread> workers;
            for (std::size_t w = 1; w < n_workers; ++w) workers.emplace_back(worker);
            worker();
        }
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
        std::vector<Response> out;
        out.reserve(results.size());
        for (auto& r : results) out.push_back(std::move(*r));
        return out;
    }

    std::size_t provider_calls() const { return provider_calls_.load(); }
    const GatewayOptions& options() const { return options_; }
    UsageLedger& ledger() { return ledger_; }

    bool is_refusal(const std::string& body) const {
        const std::string lowered = text::lower(body);
        for (const auto& phrase : options_.refusal_phrases) {
            if (!phrase.empty() && lowered.find(text::lower(phrase)) != std::string::npos) return true;
        }
        return false;
    }

private:
    std::optional<Response> load_stored(const VisionRequest& request) {
        if (!options_.response_dir) return std::nullopt;
        const auto path = *options_.response_dir / (request.request_id + ".json");
        std::ifstream in(path, std::ios::binary);
        if (!in) return std::nullopt;
        std::stringstream ss;
        ss << in.rdbuf();
        const auto j = nlohmann::json::parse(ss.str());
        Response r;
        r.body = j.at("body").get<std::string>();
        r.usage = j.at("usage").get<UsageRecord>();
        r.from_store = true;
        // A crash between storing the response and appending to the ledger
        // leaves the record missing; restore it without a new provider call.
        if (!ledger_.contains(request.request_id)) ledger_.append(r.usage);
        return r;
    }

    void store(const VisionRequest& request, const Response& r) {
        if (!options_.response_dir) return;
        std::filesystem::create_directories(*options_.response_dir);
        nlohmann::json req{{"request_id", request.request_id},
                           {"label", request.label},
                           {"media_type", request.media_type},
                           {"image_sha256", sha256_hex(request.image_b64)},
                           {"prompt", request.prompt},
                           {"params", request.params}};
        gateway_detail::write_atomic(*options_.response_dir / (request.request_id + ".request.json"), req.dump(2));
        nlohmann::json resp{{"body", r.body}, {"usage", r.usage}};
        gateway_detail::write_atomic(*options_.response_dir / (request.request_id + ".json"), resp.dump(2));
    }

    Response resolve(const VisionRequest& request) {
        if (auto stored = load_stored(request)) return *stored;

        slots_.acquire();
        struct Release {
            gateway_detail::Semaphore& s;
            ~Release() { s.release(); }
        } release{slots_};

        UsageRecord usage;
        usage.request_id = request.request_id;
        usage.model_id = request.params.model_id;
        usage.label = request.label;
        const auto started = std::chrono::steady_clock::now();
        auto finish = [&](Outcome outcome) {
            usage.outcome = outcome;
            usage.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - started).count();
        };

        ProviderReply reply;
        for (int attempt = 1;; ++attempt) {
            usage.attempt_count = attempt;
            ++provider_calls_;
            reply = provider_.send(request);
            if (reply.status == ReplyStatus::Ok) break;
            if (reply.status == ReplyStatus::Transient && attempt <= options_.max_retries) {
                double delay = static_cast<double>(options_.backoff_base.count());
                for (int k = 1; k < attempt; ++k) delay *= options_.backoff_factor;
                options_.sleep(std::chrono::milliseconds(static_cast<std::int64_t>(delay)));
                continue;
            }
            finish(Outcome::Error);
            ledger_.append(usage);
            if (reply.status == ReplyStatus::Auth) {
                throw Error(ErrorCode::AuthError, "provider rejected credentials: " + reply.body);
            }
            throw Error(ErrorCode::ProviderError, "provider failed after " + std::to_string(attempt) +
                                                      " attempt(s): " + reply.body);
        }

        Response r;
        r.body = reply.body;
        if (!reply.input_tokens || !reply.output_tokens) {
            r.warnings.push_back("provider reported no token usage; recorded as 0");
        }
        usage.input_tokens = reply.input_tokens.value_or(0);
        usage.output_tokens = reply.output_tokens.value_or(0);
        finish(is_refusal(reply.body) ? Outcome::Refusal : Outcome::Ok);
        r.usage = usage;
        store(request, r);
        if (options_.on_event) options_.on_event("stored");
        ledger_.append(usage);
        if (options_.on_event) options_.on_event("recorded");
        return r;
    }

    Provider& provider_;
    UsageLedger& ledger_;
    GatewayOptions options_;
    gateway_detail::Semaphore slots_;
    std::mutex mutex_;
    std::map<std::string, Response> done_;
    std::map<std::string, std::shared_future<Response>> in_flight_;
    std::atomic<std::size_t> provider_calls_{0};
};

} // namespace fraktur
