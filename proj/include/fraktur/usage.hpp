#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraktur/error.hpp"

namespace fraktur {

enum class Outcome { Ok, Refusal, Error };

inline std::string_view outcome_name(Outcome o) {
    switch (o) {
    case Outcome::Ok: return "ok";
    case Outcome::Refusal: return "refusal";
    case Outcome::Error: return "error";
    }
    return "error";
}

inline Outcome parse_outcome(std::string_view s) {
    if (s == "ok") return Outcome::Ok;
    if (s == "refusal") return Outcome::Refusal;
    return Outcome::Error;
}

struct UsageRecord {
    std::string request_id;
    std::string model_id;
    std::string label;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    std::int64_t latency_ms = 0;
    int attempt_count = 0;
    Outcome outcome = Outcome::Ok;

    bool operator==(const UsageRecord&) const = default;
};

inline void to_json(nlohmann::json& j, const UsageRecord& r) {
    j = nlohmann::json{{"request_id", r.request_id},       {"model_id", r.model_id},
                       {"label", r.label},                 {"input_tokens", r.input_tokens},
                       {"output_tokens", r.output_tokens}, {"latency_ms", r.latency_ms},
                       {"attempt_count", r.attempt_count}, {"outcome", outcome_name(r.outcome)}};
}

inline void from_json(const nlohmann::json& j, UsageRecord& r) {
    r.request_id = j.at("request_id").get<std::string>();
    r.model_id = j.value("model_id", std::string());
    r.label = j.value("label", std::string());
    r.input_tokens = j.value("input_tokens", std::int64_t{0});
    r.output_tokens = j.value("output_tokens", std::int64_t{0});
    r.latency_ms = j.value("latency_ms", std::int64_t{0});
    r.attempt_count = j.value("attempt_count", 0);
    r.outcome = parse_outcome(j.value("outcome", std::string("ok")));
}

/// Append-only usage log. With a backing file every record is written as one
/// JSON line before append() returns; a torn final line left by a crash is
/// discarded when the file is reopened.
class UsageLedger {
public:
    UsageLedger() = default;

    explicit UsageLedger(std::filesystem::path file) : file_(std::move(file)) {
        std::ifstream in(*file_, std::ios::binary);
        if (!in) return;
        std::stringstream ss;
        ss << in.rdbuf();
        const std::string data = ss.str();
        std::size_t start = 0;
        std::size_t good_bytes = 0;
        while (start < data.size()) {
            const auto nl = data.find('\n', start);
            if (nl == std::string::npos) break;
            const auto line = std::string_view(data).substr(start, nl - start);
            if (!line.empty()) {
                try {
                    records_.push_back(nlohmann::json::parse(line).get<UsageRecord>());
                } catch (const std::exception&) {
                    break;
                }
            }
            start = nl + 1;
            good_bytes = start;
        }
        in.close();
        if (good_bytes != data.size()) std::filesystem::resize_file(*file_, good_bytes);
        for (const auto& r : records_) ids_.insert(r.request_id);
    }

    UsageLedger(const UsageLedger&) = delete;
    UsageLedger& operator=(const UsageLedger&) = delete;

    void append(const UsageRecord& record) {
        std::lock_guard lock(mutex_);
        if (file_) {
            std::ofstream out(*file_, std::ios::binary | std::ios::app);
            out << nlohmann::json(record).dump() << '\n';
            out.flush();
            if (!out) throw Error(ErrorCode::IoError, "cannot append to ledger " + file_->string());
        }
        records_.push_back(record);
        ids_.insert(record.request_id);
    }

    bool contains(const std::string& request_id) const {
        std::lock_guard lock(mutex_);
        return ids_.contains(request_id);
    }

    std::vector<UsageRecord> records() const {
        std::lock_guard lock(mutex_);
        return records_;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return records_.size();
    }

private:
    std::optional<std::filesystem::path> file_;
    mutable std::mutex mutex_;
    std::vector<UsageRecord> records_;
    std::set<std::string> ids_;
};

/// Money in integer micro-units of the price table's currency.
using Micros = std::int64_t;

/// Parses a non-negative decimal such as "3", "3.5" or "0.075" exactly.
inline Micros parse_money(std::string_view s) {
    Micros whole = 0;
    Micros frac = 0;
    int frac_digits = 0;
    bool dot = false;
    bool any = false;
    for (char c : s) {
        if (c == '.' && !dot) {
            dot = true;
        } else if (c >= '0' && c <= '9') {
            any = true;
            if (!dot) {
                whole = whole * 10 + (c - '0');
            } else if (frac_digits < 6) {
                frac = frac * 10 + (c - '0');
                ++frac_digits;
            }
        } else {
            throw Error(ErrorCode::InvalidConfig, "not a non-negative decimal amount: '" + std::string(s) + "'");
        }
    }
    if (!any) throw Error(ErrorCode::InvalidConfig, "empty amount");
    while (frac_digits < 6) {
        frac *= 10;
        ++frac_digits;
    }
    return whole * 1'000'000 + frac;
}

/// Renders micro-units with `decimals` places, rounding half up.
inline std::string format_money(Micros micros, int decimals = 3) {
    Micros scale = 1;
    for (int i = decimals; i < 6; ++i) scale *= 10;
    const bool negative = micros < 0;
    Micros v = negative ? -micros : micros;
    v = (v + scale / 2) / scale;
    Micros unit = 1;
    for (int i = 0; i < decimals; ++i) unit *= 10;
    std::string out = (negative ? "-" : "") + std::to_string(v / unit);
    if (decimals > 0) {
        std::string frac = std::to_string(v % unit);
        out += "." + std::string(static_cast<std::size_t>(decimals) - frac.size(), '0') + frac;
    }
    return out;
}

struct ModelPrice {
    Micros input_per_million = 0;
    Micros output_per_million = 0;
};

/// Per-model rates, in currency units per million tokens.
struct PriceTable {
    std::map<std::string, ModelPrice> models;

    const ModelPrice& at(const std::string& model_id) const {
        const auto it = models.find(model_id);
        if (it == models.end()) throw Error(ErrorCode::UnknownModel, "no price for model '" + model_id + "'");
        return it->second;
    }
};

inline PriceTable price_table_from_json(const nlohmann::json& j) {
    PriceTable table;
    for (const auto& [model, rates] : j.items()) {
        auto amount = [&](const char* key) -> Micros {
            const auto& v = rates.at(key);
            if (v.is_string()) return parse_money(v.get<std::string>());
            std::ostringstream ss;
            ss << v.dump();
            return parse_money(ss.str());
        };
        table.models[model] = ModelPrice{amount("input_per_million"), amount("output_per_million")};
    }
    return table;
}

inline nlohmann::json price_table_to_json(const PriceTable& table) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [model, p] : table.models) {
        j[model] = {{"input_per_million", format_money(p.input_per_million, 6)},
                    {"output_per_million", format_money(p.output_per_million, 6)}};
    }
    return j;
}

/// Σ(input·in_rate + output·out_rate) / 10⁶, summed exactly and rounded half
/// up to whole micro-units once at the end.
inline Micros estimate_cost(const std::vector<UsageRecord>& records, const PriceTable& prices) {
    __int128 numerator = 0;
    for (const auto& r : records) {
        const auto& p = prices.at(r.model_id);
        numerator += static_cast<__int128>(r.input_tokens) * p.input_per_million;
        numerator += static_cast<__int128>(r.output_tokens) * p.output_per_million;
    }
    return static_cast<Micros>((numerator + 500'000) / 1'000'000);
}

inline Micros estimate_cost(const UsageLedger& ledger, const PriceTable& prices) {
    return estimate_cost(ledger.records(), prices);
}

struct UsageTotals {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    std::size_t requests = 0;
};

inline UsageTotals totals(const std::vector<UsageRecord>& records) {
    UsageTotals t;
    for (const auto& r : records) {
        t.input_tokens += r.input_tokens;
        t.output_tokens += r.output_tokens;
        ++t.requests;
    }
    return t;
}

} // namespace fraktur
