#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraktur/error.hpp"
#include "fraktur/text.hpp"

namespace fraktur {

/// Which structured representation a payload, parse or serialization uses.
enum class SchemaId { NineField, TeiSubset };

inline std::string_view schema_name(SchemaId id) {
    return id == SchemaId::NineField ? "nine_field" : "tei";
}

inline SchemaId parse_schema_name(std::string_view name) {
    if (name == "nine_field" || name == "NineField") return SchemaId::NineField;
    if (name == "tei" || name == "TeiSubset") return SchemaId::TeiSubset;
    throw Error(ErrorCode::InvalidConfig, "unknown schema '" + std::string(name) + "'");
}

/// Separator used when a sequence-valued field is flattened into one cell.
inline constexpr std::string_view kJoinToken = "; ";

/// Where an entry came from. `segment` is empty for whole-page or whole-column
/// recognition.
struct EntryProvenance {
    std::string source_id;
    int page = 1;
    int column = 1;
    std::optional<int> segment;
    int order_on_page = 0;

    bool operator==(const EntryProvenance&) const = default;
};

inline std::string segment_label(const std::optional<int>& segment) {
    return segment ? std::to_string(*segment) : std::string("whole");
}

/// One headword article in the nine-field layout.
struct DictionaryEntry {
    std::string headword_et;
    std::vector<std::string> synonyms_et;
    std::string equivalent_de;
    std::vector<std::string> synonyms_de;
    std::string explanation_la;
    std::string part_of_speech;
    std::string grammar_info;
    std::vector<std::string> mwe_et;
    std::vector<std::string> mwe_de;
    EntryProvenance provenance;

    bool operator==(const DictionaryEntry&) const = default;
};

inline constexpr std::array<std::string_view, 9> kFieldNames = {
    "headword_et", "synonyms_et", "equivalent_de", "synonyms_de", "explanation_la",
    "part_of_speech", "grammar_info", "mwe_et", "mwe_de",
};

inline bool is_sequence_field(std::size_t index) {
    return index == 1 || index == 3 || index == 7 || index == 8;
}

inline const std::string* scalar_field(const DictionaryEntry& e, std::size_t index) {
    switch (index) {
    case 0: return &e.headword_et;
    case 2: return &e.equivalent_de;
    case 4: return &e.explanation_la;
    case 5: return &e.part_of_speech;
    case 6: return &e.grammar_info;
    default: return nullptr;
    }
}

inline std::string* scalar_field(DictionaryEntry& e, std::size_t index) {
    return const_cast<std::string*>(scalar_field(std::as_const(e), index));
}

inline const std::vector<std::string>* sequence_field(const DictionaryEntry& e, std::size_t index) {
    switch (index) {
    case 1: return &e.synonyms_et;
    case 3: return &e.synonyms_de;
    case 7: return &e.mwe_et;
    case 8: return &e.mwe_de;
    default: return nullptr;
    }
}

inline std::vector<std::string>* sequence_field(DictionaryEntry& e, std::size_t index) {
    return const_cast<std::vector<std::string>*>(sequence_field(std::as_const(e), index));
}

/// Field value as one string; sequences joined with "; ".
inline std::string field_text(const DictionaryEntry& e, std::size_t index) {
    if (const auto* s = scalar_field(e, index)) return *s;
    return text::join(*sequence_field(e, index), kJoinToken);
}

inline std::optional<std::size_t> field_index(std::string_view name) {
    for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
        if (kFieldNames[i] == name) return i;
    }
    return std::nullopt;
}

inline std::size_t filled_field_count(const DictionaryEntry& e) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
        if (!field_text(e, i).empty()) ++n;
    }
    return n;
}

/// Content fields only; provenance is ignored.
inline bool same_content(const DictionaryEntry& a, const DictionaryEntry& b) {
    for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
        if (field_text(a, i) != field_text(b, i)) return false;
    }
    return true;
}

struct Violation {
    std::string field;
    std::string rule;
    std::string message;

    bool operator==(const Violation&) const = default;
};

inline std::string to_string(const Violation& v) { return v.field + ": " + v.rule + " (" + v.message + ")"; }

inline std::vector<Violation> validate_entry(const DictionaryEntry& e) {
    std::vector<Violation> out;
    if (text::trim_view(e.headword_et).empty()) {
        out.push_back({"headword_et", "empty_headword", "headword is empty after trimming"});
    }
    for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
        const std::string name(kFieldNames[i]);
        if (const auto* s = scalar_field(e, i)) {
            if (text::has_control_chars(*s)) {
                out.push_back({name, "control_character", "value contains a control character"});
            }
            continue;
        }
        const auto& seq = *sequence_field(e, i);
        std::set<std::string_view> seen;
        bool empty_reported = false;
        bool dup_reported = false;
        bool ctrl_reported = false;
        for (const auto& member : seq) {
            if (text::trim_view(member).empty() && !empty_reported) {
                out.push_back({name, "empty_member", "sequence contains an empty member"});
                empty_reported = true;
            }
            if (!seen.insert(member).second && !dup_reported) {
                out.push_back({name, "duplicate_member", "duplicate member '" + member + "'"});
                dup_reported = true;
            }
            if (text::has_control_chars(member) && !ctrl_reported) {
                out.push_back({name, "control_character", "member contains a control character"});
                ctrl_reported = true;
            }
        }
    }
    const auto& p = e.provenance;
    if (p.page < 1) out.push_back({"provenance.page", "range", "page must be positive"});
    if (p.column != 1 && p.column != 2) out.push_back({"provenance.column", "range", "column must be 1 or 2"});
    if (p.segment && *p.segment < 0) out.push_back({"provenance.segment", "range", "segment must be >= 0"});
    if (p.order_on_page < 0) out.push_back({"provenance.order_on_page", "range", "order must be >= 0"});
    return out;
}

inline void to_json(nlohmann::json& j, const EntryProvenance& p) {
    j = nlohmann::json{{"source_id", p.source_id},
                       {"page", p.page},
                       {"column", p.column},
                       {"segment", p.segment ? nlohmann::json(*p.segment) : nlohmann::json("whole")},
                       {"order_on_page", p.order_on_page}};
}

inline void from_json(const nlohmann::json& j, EntryProvenance& p) {
    p.source_id = j.value("source_id", std::string());
    p.page = j.value("page", 1);
    p.column = j.value("column", 1);
    p.segment.reset();
    if (auto it = j.find("segment"); it != j.end() && it->is_number_integer()) p.segment = it->get<int>();
    p.order_on_page = j.value("order_on_page", 0);
}

inline void to_json(nlohmann::json& j, const DictionaryEntry& e) {
    j = nlohmann::json::object();
    for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
        const std::string name(kFieldNames[i]);
        if (const auto* s = scalar_field(e, i)) {
            j[name] = *s;
        } else {
            j[name] = *sequence_field(e, i);
        }
    }
    j["provenance"] = e.provenance;
}

/// Lenient reader used for stored and HTTP bodies; sequences may be given as
/// arrays or as "; "-joined strings.
inline void from_json(const nlohmann::json& j, DictionaryEntry& e) {
    e = DictionaryEntry{};
    for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
        const auto it = j.find(std::string(kFieldNames[i]));
        if (it == j.end() || it->is_null()) continue;
        if (auto* s = scalar_field(e, i)) {
            *s = it->get<std::string>();
        } else if (it->is_array()) {
            *sequence_field(e, i) = it->get<std::vector<std::string>>();
        } else {
            *sequence_field(e, i) = text::split(it->get<std::string>(), kJoinToken);
        }
    }
    if (auto it = j.find("provenance"); it != j.end() && it->is_object()) e.provenance = it->get<EntryProvenance>();
}

} // namespace fraktur
