#pragma once

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraktur/entry.hpp"
#include "fraktur/error.hpp"
#include "fraktur/gateway.hpp"
#include "fraktur/tiler.hpp"
#include "fraktur/usage.hpp"

namespace fraktur {

struct TilingConfig {
    TilingMode mode = TilingMode::Segments;
    int segments = 4;
    double overlap = 0.25;
    double gutter_ratio = 0.5;
};

struct ProviderConfig {
    /// "mock", "anthropic", "openai" or any id with style and base_url set.
    std::string id = "mock";
    std::string style;
    std::string base_url;
    /// Mock provider reply files.
    std::string fixtures;
    /// Mock provider call log, one request id per line.
    std::string audit_log;
};

struct MergeConfig {
    bool llm = false;
    double threshold = 0.80;
    std::optional<ModelParams> model;
};

struct PromptConfig {
    std::string recognition;
    std::string merge;
};

struct GatewayConfig {
    int max_retries = 3;
    int backoff_ms = 1000;
    int max_in_flight = 4;
    std::vector<std::string> refusal_phrases;
};

/// Job configuration. Stored inside the job manifest; only `model` may be
/// changed after the job was created.
struct JobConfig {
    SchemaId schema = SchemaId::TeiSubset;
    std::string source_id = "source";
    TilingConfig tiling;
    ModelParams model;
    ProviderConfig provider;
    MergeConfig merge;
    PromptConfig prompts;
    int retry_limit = 3;
    GatewayConfig gateway;
    PriceTable prices;

    /// Fills unset prompt ids with the schema defaults and checks ranges.
    void validate() {
        if (prompts.recognition.empty()) {
            prompts.recognition = schema == SchemaId::TeiSubset ? "hupel_tei.v1" : "helle_nine_field.v1";
        }
        if (prompts.merge.empty()) prompts.merge = schema == SchemaId::TeiSubset ? "merge_tei.v1" : "merge_nine_field.v1";
        auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
        if (source_id.empty()) fail("source_id must not be empty");
        if (tiling.segments < 1) fail("tiling.segments must be >= 1");
        if (!(tiling.overlap >= 0.0 && tiling.overlap <= 0.5)) fail("tiling.overlap must lie in [0, 0.5]");
        if (!(tiling.gutter_ratio >= 0.25 && tiling.gutter_ratio <= 0.75)) fail("tiling.gutter_ratio must lie in [0.25, 0.75]");
        if (!(merge.threshold >= 0.0 && merge.threshold <= 1.0)) fail("merge.threshold must lie in [0, 1]");
        if (retry_limit < 0) fail("retry_limit must be >= 0");
        if (gateway.max_retries < 0) fail("gateway.max_retries must be >= 0");
        if (gateway.backoff_ms < 0) fail("gateway.backoff_ms must be >= 0");
        if (gateway.max_in_flight < 1) fail("gateway.max_in_flight must be >= 1");
        if (provider.id.empty()) fail("provider.id must not be empty");
        model.validate();
        if (merge.model) merge.model->validate();
    }

    GatewayOptions gateway_options() const {
        GatewayOptions o;
        o.max_retries = gateway.max_retries;
        o.backoff_base = std::chrono::milliseconds(gateway.backoff_ms);
        o.max_in_flight = static_cast<std::size_t>(gateway.max_in_flight);
        o.refusal_phrases.insert(o.refusal_phrases.end(), gateway.refusal_phrases.begin(), gateway.refusal_phrases.end());
        return o;
    }
};

inline void to_json(nlohmann::json& j, const JobConfig& c) {
    j = nlohmann::json{
        {"schema", schema_name(c.schema)},
        {"source_id", c.source_id},
        {"tiling",
         {{"mode", mode_name(c.tiling.mode)},
          {"segments", c.tiling.segments},
          {"overlap", c.tiling.overlap},
          {"gutter_ratio", c.tiling.gutter_ratio}}},
        {"model", c.model},
        {"provider",
         {{"id", c.provider.id},
          {"style", c.provider.style},
          {"base_url", c.provider.base_url},
          {"fixtures", c.provider.fixtures},
          {"audit_log", c.provider.audit_log}}},
        {"merge", {{"llm", c.merge.llm}, {"threshold", c.merge.threshold}}},
        {"prompts", {{"recognition", c.prompts.recognition}, {"merge", c.prompts.merge}}},
        {"retry_limit", c.retry_limit},
        {"gateway",
         {{"max_retries", c.gateway.max_retries},
          {"backoff_ms", c.gateway.backoff_ms},
          {"max_in_flight", c.gateway.max_in_flight},
          {"refusal_phrases", c.gateway.refusal_phrases}}},
        {"prices", price_table_to_json(c.prices)}};
    if (c.merge.model) j["merge"]["model"] = *c.merge.model;
}

inline void from_json(const nlohmann::json& j, JobConfig& c) {
    c = JobConfig{};
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "configuration must be an object");
    try {
        if (j.contains("schema")) c.schema = parse_schema_name(j.at("schema").get<std::string>());
        c.source_id = j.value("source_id", c.source_id);
        if (const auto t = j.find("tiling"); t != j.end()) {
            if (t->contains("mode")) c.tiling.mode = parse_mode_name(t->at("mode").get<std::string>());
            c.tiling.segments = t->value("segments", c.tiling.segments);
            c.tiling.overlap = t->value("overlap", c.tiling.overlap);
            c.tiling.gutter_ratio = t->value("gutter_ratio", c.tiling.gutter_ratio);
        }
        if (j.contains("model")) c.model = j.at("model").get<ModelParams>();
        if (const auto p = j.find("provider"); p != j.end()) {
            c.provider.id = p->value("id", c.provider.id);
            c.provider.style = p->value("style", c.provider.style);
            c.provider.base_url = p->value("base_url", c.provider.base_url);
            c.provider.fixtures = p->value("fixtures", c.provider.fixtures);
            c.provider.audit_log = p->value("audit_log", c.provider.audit_log);
        }
        if (const auto m = j.find("merge"); m != j.end()) {
            c.merge.llm = m->value("llm", c.merge.llm);
            c.merge.threshold = m->value("threshold", c.merge.threshold);
            if (m->contains("model")) c.merge.model = m->at("model").get<ModelParams>();
        }
        if (const auto p = j.find("prompts"); p != j.end()) {
            c.prompts.recognition = p->value("recognition", c.prompts.recognition);
            c.prompts.merge = p->value("merge", c.prompts.merge);
        }
        c.retry_limit = j.value("retry_limit", c.retry_limit);
        if (const auto g = j.find("gateway"); g != j.end()) {
            c.gateway.max_retries = g->value("max_retries", c.gateway.max_retries);
            c.gateway.backoff_ms = g->value("backoff_ms", c.gateway.backoff_ms);
            c.gateway.max_in_flight = g->value("max_in_flight", c.gateway.max_in_flight);
            c.gateway.refusal_phrases = g->value("refusal_phrases", c.gateway.refusal_phrases);
        }
        if (j.contains("prices")) c.prices = price_table_from_json(j.at("prices"));
    } catch (const nlohmann::json::exception& err) {
        throw Error(ErrorCode::InvalidConfig, std::string("bad configuration: ") + err.what());
    }
}

/// A configuration key settable from the command line and the environment.
/// Keys are JSON pointers into the configuration document.
struct Setting {
    std::string_view flag;
    std::string_view env;
    std::string_view pointer;
    std::string_view help;
};

inline constexpr std::array<Setting, 18> kSettings{{
    {"schema", "FRAKTUR_SCHEMA", "/schema", "entry schema: tei or nine_field"},
    {"source-id", "FRAKTUR_SOURCE_ID", "/source_id", "source dictionary id stamped on entries"},
    {"mode", "FRAKTUR_TILING_MODE", "/tiling/mode", "tiling mode: whole_page, two_columns or segments"},
    {"segments", "FRAKTUR_SEGMENTS", "/tiling/segments", "segments per column"},
    {"overlap", "FRAKTUR_OVERLAP", "/tiling/overlap", "overlap fraction between segments, 0 to 0.5"},
    {"gutter-ratio", "FRAKTUR_GUTTER_RATIO", "/tiling/gutter_ratio", "column split position as page-width fraction"},
    {"provider", "FRAKTUR_PROVIDER", "/provider/id", "model provider: mock, anthropic, openai"},
    {"base-url", "FRAKTUR_BASE_URL", "/provider/base_url", "provider endpoint base URL"},
    {"fixtures", "FRAKTUR_FIXTURES", "/provider/fixtures", "mock provider reply directory"},
    {"mock-audit", "FRAKTUR_MOCK_AUDIT", "/provider/audit_log", "mock provider call log file"},
    {"model", "FRAKTUR_MODEL", "/model/model", "model id"},
    {"temperature", "FRAKTUR_TEMPERATURE", "/model/temperature", "sampling temperature"},
    {"max-output-tokens", "FRAKTUR_MAX_OUTPUT_TOKENS", "/model/max_output_tokens", "output token limit"},
    {"merge-threshold", "FRAKTUR_MERGE_THRESHOLD", "/merge/threshold", "duplicate threshold for overlap merging"},
    {"recognition-prompt", "FRAKTUR_RECOGNITION_PROMPT", "/prompts/recognition", "recognition prompt asset id"},
    {"merge-prompt", "FRAKTUR_MERGE_PROMPT", "/prompts/merge", "merge prompt asset id"},
    {"retry-limit", "FRAKTUR_RETRY_LIMIT", "/retry_limit", "retries allowed for a failed page"},
    {"max-in-flight", "FRAKTUR_MAX_IN_FLIGHT", "/gateway/max_in_flight", "concurrent provider requests"},
}};

/// Sets the value at `pointer` from text, typed after the default
/// configuration's value at the same place.
inline void apply_override(nlohmann::json& doc, std::string_view pointer, const std::string& value) {
    static const nlohmann::json defaults = JobConfig{};
    const nlohmann::json::json_pointer ptr{std::string(pointer)};
    const auto& like = defaults.contains(ptr) ? defaults.at(ptr) : nlohmann::json(value);
    try {
        if (like.is_boolean()) {
            doc[ptr] = value == "1" || value == "true" || value == "yes";
        } else if (like.is_number_integer()) {
            std::size_t used = 0;
            const long v = std::stol(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            doc[ptr] = v;
        } else if (like.is_number()) {
            std::size_t used = 0;
            const double v = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            doc[ptr] = v;
        } else {
            doc[ptr] = value;
        }
    } catch (const std::logic_error&) {
        throw Error(ErrorCode::InvalidConfig, "bad value '" + value + "' for " + std::string(pointer));
    }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& err) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": " + err.what(), err.byte);
    }
}

/// Defaults, then the file, then FRAKTUR_* variables, then flags.
inline JobConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::pair<std::string_view, std::string>>& flag_values) {
    nlohmann::json doc = JobConfig{};
    if (file) doc.merge_patch(read_json_file(*file));
    for (const auto& s : kSettings) {
        const char* v = std::getenv(std::string(s.env).c_str());
        if (v && *v) apply_override(doc, s.pointer, v);
    }
    for (const auto& [pointer, value] : flag_values) apply_override(doc, pointer, value);
    JobConfig c = doc.get<JobConfig>();
    c.validate();
    return c;
}

} // namespace fraktur
