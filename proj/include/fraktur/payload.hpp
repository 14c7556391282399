#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraktur/entry.hpp"
#include "fraktur/error.hpp"
#include "fraktur/tei.hpp"
#include "fraktur/text.hpp"

namespace fraktur {

struct PayloadWarning {
    std::size_t entry_index = 0;
    std::string message;
    bool operator==(const PayloadWarning&) const = default;
};

struct PayloadOptions {
    /// Provenance stamped on every entry; order_on_page is the entry index.
    EntryProvenance provenance{};
    /// Treat a leading object without a headword as the continuation of an
    /// entry cut at the previous tile instead of failing.
    bool allow_leading_continuation = false;
};

struct PayloadParse {
    std::vector<DictionaryEntry> entries;
    std::vector<PayloadWarning> warnings;
    /// Set only when allow_leading_continuation accepted a headword-less
    /// first object.
    std::optional<DictionaryEntry> continuation;
};

/// Body inside a single ``` fenced block, or the input itself. `offset`
/// receives the byte offset of the returned view within `raw`.
inline std::string_view strip_code_fence(std::string_view raw, std::size_t* offset = nullptr) {
    const std::string_view trimmed = text::trim_view(raw);
    std::size_t base = static_cast<std::size_t>(trimmed.data() - raw.data());
    if (offset) *offset = base;
    if (trimmed.rfind("```", 0) != 0) return trimmed;
    const auto first_nl = trimmed.find('\n');
    if (first_nl == std::string_view::npos) return trimmed;
    const auto close = trimmed.rfind("```");
    if (close == std::string_view::npos || close <= first_nl) return trimmed;
    if (!text::trim_view(trimmed.substr(close + 3)).empty()) return trimmed;
    if (offset) *offset = base + first_nl + 1;
    return trimmed.substr(first_nl + 1, close - first_nl - 1);
}

namespace payload_detail {

inline std::string clean(const std::string& s) { return text::nfc(text::trim_view(s)); }

inline DictionaryEntry read_object(const nlohmann::json& obj, std::size_t index, std::vector<PayloadWarning>& warnings) {
    DictionaryEntry e;
    for (const auto& [key, value] : obj.items()) {
        const auto field = field_index(key);
        if (!field) {
            warnings.push_back({index, "unknown key '" + key + "' ignored"});
            continue;
        }
        if (value.is_null()) continue;
        if (auto* s = scalar_field(e, *field)) {
            if (value.is_string()) {
                *s = clean(value.get<std::string>());
            } else if (value.is_array()) {
                std::vector<std::string> parts;
                for (const auto& v : value) {
                    if (!v.is_string()) throw Error(ErrorCode::SchemaViolation, "field '" + key + "' must hold text", std::nullopt, index);
                    parts.push_back(clean(v.get<std::string>()));
                }
                *s = text::join(parts, kJoinToken);
                warnings.push_back({index, "field '" + key + "' was a list; joined"});
            } else {
                throw Error(ErrorCode::SchemaViolation, "field '" + key + "' must hold text", std::nullopt, index);
            }
            continue;
        }
        auto& seq = *sequence_field(e, *field);
        if (value.is_string()) {
            for (auto& part : text::split(value.get<std::string>(), kJoinToken)) seq.push_back(clean(part));
        } else if (value.is_array()) {
            for (const auto& v : value) {
                if (!v.is_string()) throw Error(ErrorCode::SchemaViolation, "field '" + key + "' must hold text members", std::nullopt, index);
                seq.push_back(clean(v.get<std::string>()));
            }
        } else {
            throw Error(ErrorCode::SchemaViolation, "field '" + key + "' must hold a list of text", std::nullopt, index);
        }
        // Empty list members carry no information; drop them but say so.
        const auto before = seq.size();
        std::erase_if(seq, [](const std::string& m) { return m.empty(); });
        if (seq.size() != before) warnings.push_back({index, "empty members removed from '" + key + "'"});
    }
    return e;
}

} // namespace payload_detail

/// Parses a model reply into entries. NineField expects a JSON array of flat
/// objects keyed by the nine field names; TeiSubset expects a TEI fragment
/// and converts each entry. One surrounding code fence is tolerated.
inline PayloadParse parse_entry_payload(std::string_view raw, SchemaId schema, const PayloadOptions& options = {}) {
    std::size_t base = 0;
    const std::string_view body = strip_code_fence(raw, &base);
    PayloadParse result;

    if (schema == SchemaId::TeiSubset) {
        TeiDocument doc;
        try {
            doc = parse_tei_fragment(body);
        } catch (const Error& err) {
            throw Error(err.code(), err.what(), err.offset() ? std::optional(*err.offset() + base) : std::nullopt, err.index());
        }
        for (std::size_t i = 0; i < doc.entries.size(); ++i) {
            EntryProvenance p = options.provenance;
            p.order_on_page = static_cast<int>(i);
            result.entries.push_back(to_dictionary_entry(doc.entries[i], p));
        }
        return result;
    }

    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& err) {
        throw Error(ErrorCode::MalformedPayload, std::string("payload is not valid JSON: ") + err.what(), base + err.byte);
    }
    if (!parsed.is_array()) throw Error(ErrorCode::MalformedPayload, "payload must be a JSON array of objects", base);

    for (std::size_t i = 0; i < parsed.size(); ++i) {
        const auto& obj = parsed[i];
        if (!obj.is_object()) {
            throw Error(ErrorCode::MalformedPayload, "array member " + std::to_string(i) + " is not an object", base, i);
        }
        DictionaryEntry e = payload_detail::read_object(obj, i, result.warnings);
        if (e.headword_et.empty()) {
            if (i == 0 && options.allow_leading_continuation) {
                e.provenance = options.provenance;
                result.continuation = std::move(e);
                continue;
            }
            throw Error(ErrorCode::SchemaViolation, "entry " + std::to_string(i) + " has no headword_et", std::nullopt, i);
        }
        e.provenance = options.provenance;
        e.provenance.order_on_page = static_cast<int>(result.entries.size());
        for (const auto& v : validate_entry(e)) result.warnings.push_back({i, to_string(v)});
        result.entries.push_back(std::move(e));
    }
    return result;
}

} // namespace fraktur
