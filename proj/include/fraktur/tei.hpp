#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <expat.h>
#include <nlohmann/json.hpp>

#include "fraktur/entry.hpp"
#include "fraktur/error.hpp"
#include "fraktur/text.hpp"

namespace fraktur {

// A closed subset of TEI Lex-0:
//
//   div > entry[id] > form[type=lemma] > orth
//                   > gramGrp > pos?, gram[type?]*
//                   > sense* > cit[type=translation, xml:lang?] > quote
//                            > usg[type?]?
//                            > xr[type?]?
//
// Entries may carry zero senses: a lemma cut off at a tile or page break is
// kept as an "open" entry. A fragment may also start with bare <sense>
// elements, the continuation of an entry that began in the previous tile.

struct TeiGram {
    std::string type;
    std::string text;
    bool operator==(const TeiGram&) const = default;
};

struct TeiGramGrp {
    std::optional<std::string> pos;
    std::vector<TeiGram> grams;
    bool operator==(const TeiGramGrp&) const = default;
};

/// usg or xr: free text plus an optional type attribute.
struct TeiMarker {
    std::string type;
    std::string text;
    bool operator==(const TeiMarker&) const = default;
};

struct TeiSense {
    std::string quote;
    std::optional<std::string> lang;
    std::optional<TeiMarker> usg;
    std::optional<TeiMarker> xr;
    bool operator==(const TeiSense&) const = default;
};

struct TeiEntry {
    std::string id;
    std::string orth;
    std::optional<TeiGramGrp> gram_grp;
    std::vector<TeiSense> senses;
    bool operator==(const TeiEntry&) const = default;
};

struct TeiDocument {
    std::vector<TeiSense> leading_senses;
    std::vector<TeiEntry> entries;
    bool operator==(const TeiDocument&) const = default;
};

namespace tei_detail {

struct XmlNode {
    std::string name;
    std::vector<std::pair<std::string, std::string>> attrs;
    std::vector<XmlNode> children;
    std::string text;
    std::size_t offset = 0;
};

struct BuildState {
    XML_Parser parser = nullptr;
    std::vector<XmlNode> stack;
    std::optional<XmlNode> root;
    std::optional<Error> failure;
};

inline void XMLCALL on_start(void* user, const XML_Char* name, const XML_Char** atts) {
    auto* st = static_cast<BuildState*>(user);
    XmlNode node;
    node.name = name;
    node.offset = static_cast<std::size_t>(XML_GetCurrentByteIndex(st->parser));
    for (std::size_t i = 0; atts[i] != nullptr; i += 2) {
        std::string key = atts[i];
        if (key == "xmlns" || key.rfind("xmlns:", 0) == 0) continue;
        node.attrs.emplace_back(std::move(key), text::nfc(atts[i + 1]));
    }
    st->stack.push_back(std::move(node));
}

inline void XMLCALL on_end(void* user, const XML_Char*) {
    auto* st = static_cast<BuildState*>(user);
    XmlNode node = std::move(st->stack.back());
    st->stack.pop_back();
    if (st->stack.empty()) {
        st->root = std::move(node);
    } else {
        st->stack.back().children.push_back(std::move(node));
    }
}

inline void XMLCALL on_text(void* user, const XML_Char* s, int len) {
    auto* st = static_cast<BuildState*>(user);
    if (!st->stack.empty()) st->stack.back().text.append(s, static_cast<std::size_t>(len));
}

inline void XMLCALL on_doctype(void* user, const XML_Char*, const XML_Char*, const XML_Char*, int) {
    auto* st = static_cast<BuildState*>(user);
    if (!st->failure) {
        st->failure = Error(ErrorCode::XmlSyntax, "DOCTYPE declarations are not accepted",
                            static_cast<std::size_t>(XML_GetCurrentByteIndex(st->parser)));
    }
    XML_StopParser(st->parser, XML_FALSE);
}

inline XmlNode parse_xml(std::string_view xml) {
    BuildState st;
    XML_Parser parser = XML_ParserCreate("UTF-8");
    st.parser = parser;
    XML_SetUserData(parser, &st);
    XML_SetElementHandler(parser, on_start, on_end);
    XML_SetCharacterDataHandler(parser, on_text);
    XML_SetStartDoctypeDeclHandler(parser, on_doctype);
    const auto status = XML_Parse(parser, xml.data(), static_cast<int>(xml.size()), XML_TRUE);
    if (status != XML_STATUS_OK && !st.failure) {
        const auto offset = static_cast<std::size_t>(XML_GetCurrentByteIndex(parser));
        std::string msg = "XML syntax error at line " + std::to_string(XML_GetCurrentLineNumber(parser)) + ": " +
                          XML_ErrorString(XML_GetErrorCode(parser));
        st.failure = Error(ErrorCode::XmlSyntax, msg, offset);
    }
    XML_ParserFree(parser);
    if (st.failure) throw *st.failure;
    if (!st.root) throw Error(ErrorCode::XmlSyntax, "document has no root element", 0);
    return std::move(*st.root);
}

[[noreturn]] inline void violation(const XmlNode& node, const std::string& what) {
    throw Error(ErrorCode::SubsetViolation, "<" + node.name + ">: " + what, node.offset);
}

inline void expect_attrs(const XmlNode& node, std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, value] : node.attrs) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            violation(node, "attribute '" + key + "' is outside the subset");
        }
    }
}

inline std::optional<std::string> attr(const XmlNode& node, std::string_view key) {
    for (const auto& [k, v] : node.attrs) {
        if (k == key) return v;
    }
    return std::nullopt;
}

inline void expect_no_text(const XmlNode& node) {
    if (!text::trim_view(node.text).empty()) violation(node, "unexpected text content");
}

inline std::string leaf_text(const XmlNode& node) {
    if (!node.children.empty()) violation(node, "element <" + node.children.front().name + "> not allowed here");
    return text::nfc(text::trim_view(node.text));
}

inline TeiMarker read_marker(const XmlNode& node) {
    expect_attrs(node, {"type"});
    return TeiMarker{attr(node, "type").value_or(""), leaf_text(node)};
}

inline TeiSense read_sense(const XmlNode& node) {
    expect_attrs(node, {});
    expect_no_text(node);
    TeiSense sense;
    bool have_cit = false;
    for (const auto& child : node.children) {
        if (child.name == "cit") {
            if (have_cit) violation(child, "a sense holds exactly one <cit>");
            have_cit = true;
            expect_attrs(child, {"type", "xml:lang"});
            expect_no_text(child);
            if (attr(child, "type") != "translation") violation(child, "type must be 'translation'");
            sense.lang = attr(child, "xml:lang");
            if (child.children.size() != 1 || child.children.front().name != "quote") {
                violation(child, "must contain exactly one <quote>");
            }
            expect_attrs(child.children.front(), {});
            sense.quote = leaf_text(child.children.front());
        } else if (child.name == "usg") {
            if (sense.usg) violation(child, "at most one <usg> per sense");
            sense.usg = read_marker(child);
        } else if (child.name == "xr") {
            if (sense.xr) violation(child, "at most one <xr> per sense");
            sense.xr = read_marker(child);
        } else {
            violation(child, "element is outside the subset");
        }
    }
    if (!have_cit) violation(node, "missing <cit>");
    return sense;
}

inline TeiGramGrp read_gram_grp(const XmlNode& node) {
    expect_attrs(node, {});
    expect_no_text(node);
    TeiGramGrp grp;
    for (const auto& child : node.children) {
        if (child.name == "pos") {
            if (grp.pos) violation(child, "at most one <pos>");
            expect_attrs(child, {});
            grp.pos = leaf_text(child);
        } else if (child.name == "gram") {
            expect_attrs(child, {"type"});
            grp.grams.push_back(TeiGram{attr(child, "type").value_or(""), leaf_text(child)});
        } else {
            violation(child, "element is outside the subset");
        }
    }
    if (!grp.pos && grp.grams.empty()) violation(node, "needs <pos> and/or <gram>");
    return grp;
}

inline TeiEntry read_entry(const XmlNode& node) {
    expect_attrs(node, {"id"});
    expect_no_text(node);
    TeiEntry entry;
    const auto id = attr(node, "id");
    if (!id || text::trim_view(*id).empty()) violation(node, "missing id attribute");
    entry.id = *id;
    bool have_form = false;
    for (const auto& child : node.children) {
        if (child.name == "form") {
            if (have_form) violation(child, "exactly one lemma form per entry");
            have_form = true;
            expect_attrs(child, {"type"});
            expect_no_text(child);
            if (attr(child, "type") != "lemma") violation(child, "type must be 'lemma'");
            if (child.children.size() != 1 || child.children.front().name != "orth") {
                violation(child, "must contain exactly one <orth>");
            }
            expect_attrs(child.children.front(), {});
            entry.orth = leaf_text(child.children.front());
            if (entry.orth.empty()) violation(child.children.front(), "empty orth");
        } else if (child.name == "gramGrp") {
            if (entry.gram_grp) violation(child, "at most one <gramGrp>");
            entry.gram_grp = read_gram_grp(child);
        } else if (child.name == "sense") {
            entry.senses.push_back(read_sense(child));
        } else {
            violation(child, "element is outside the subset");
        }
    }
    if (!have_form) violation(node, "entry " + entry.id + " has no lemma form/orth");
    return entry;
}

inline std::string escape(std::string_view s, bool attribute) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"':
            if (attribute) {
                out += "&quot;";
                break;
            }
            [[fallthrough]];
        default: out.push_back(c);
        }
    }
    return out;
}

inline void write_sense(std::string& out, const TeiSense& sense, std::string_view pad) {
    out += std::string(pad) + "<sense>\n";
    out += std::string(pad) + "  <cit type=\"translation\"";
    if (sense.lang) out += " xml:lang=\"" + escape(*sense.lang, true) + "\"";
    out += ">\n";
    out += std::string(pad) + "    <quote>" + escape(sense.quote, false) + "</quote>\n";
    out += std::string(pad) + "  </cit>\n";
    auto marker = [&](std::string_view name, const TeiMarker& m) {
        out += std::string(pad) + "  <" + std::string(name);
        if (!m.type.empty()) out += " type=\"" + escape(m.type, true) + "\"";
        out += ">" + escape(m.text, false) + "</" + std::string(name) + ">\n";
    };
    if (sense.usg) marker("usg", *sense.usg);
    if (sense.xr) marker("xr", *sense.xr);
    out += std::string(pad) + "</sense>\n";
}

} // namespace tei_detail

/// Every check the parser applies, for documents built in memory.
inline void validate_tei(const TeiDocument& doc) {
    std::set<std::string> ids;
    for (std::size_t i = 0; i < doc.entries.size(); ++i) {
        const auto& e = doc.entries[i];
        if (text::trim_view(e.id).empty()) {
            throw Error(ErrorCode::SubsetViolation, "<entry>: missing id attribute", std::nullopt, i);
        }
        if (!ids.insert(e.id).second) {
            throw Error(ErrorCode::SubsetViolation, "<entry>: duplicate id '" + e.id + "'", std::nullopt, i);
        }
        if (text::trim_view(e.orth).empty()) {
            throw Error(ErrorCode::SubsetViolation, "<orth>: entry " + e.id + " has an empty lemma", std::nullopt, i);
        }
        if (e.gram_grp && !e.gram_grp->pos && e.gram_grp->grams.empty()) {
            throw Error(ErrorCode::SubsetViolation, "<gramGrp>: needs <pos> and/or <gram>", std::nullopt, i);
        }
    }
}

/// Parses and validates a TEI fragment. Throws XmlSyntax for malformed XML
/// and SubsetViolation, naming the element, for anything outside the subset.
inline TeiDocument parse_tei_fragment(std::string_view xml) {
    using namespace tei_detail;
    const XmlNode root = parse_xml(xml);
    if (root.name != "div") violation(root, "root element must be <div>");
    expect_attrs(root, {});
    expect_no_text(root);
    TeiDocument doc;
    std::vector<std::size_t> offsets;
    for (const auto& child : root.children) {
        if (child.name == "entry") {
            doc.entries.push_back(read_entry(child));
            offsets.push_back(child.offset);
        } else if (child.name == "sense") {
            if (!doc.entries.empty()) violation(child, "bare <sense> is only allowed before the first entry");
            doc.leading_senses.push_back(read_sense(child));
        } else {
            violation(child, "element is outside the subset");
        }
    }
    std::set<std::string> ids;
    for (std::size_t i = 0; i < doc.entries.size(); ++i) {
        if (!ids.insert(doc.entries[i].id).second) {
            throw Error(ErrorCode::SubsetViolation, "<entry>: duplicate id '" + doc.entries[i].id + "'",
                        offsets[i], i);
        }
    }
    return doc;
}

/// Canonical form: XML declaration, fixed attribute order, two-space indent,
/// trailing newline.
inline std::string serialize_tei(const TeiDocument& doc) {
    using tei_detail::escape;
    std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    if (doc.entries.empty() && doc.leading_senses.empty()) {
        out += "<div/>\n";
        return out;
    }
    out += "<div>\n";
    for (const auto& sense : doc.leading_senses) tei_detail::write_sense(out, sense, "  ");
    for (const auto& e : doc.entries) {
        out += "  <entry id=\"" + escape(e.id, true) + "\">\n";
        out += "    <form type=\"lemma\">\n";
        out += "      <orth>" + escape(e.orth, false) + "</orth>\n";
        out += "    </form>\n";
        if (e.gram_grp) {
            out += "    <gramGrp>\n";
            if (e.gram_grp->pos) out += "      <pos>" + escape(*e.gram_grp->pos, false) + "</pos>\n";
            for (const auto& g : e.gram_grp->grams) {
                out += "      <gram";
                if (!g.type.empty()) out += " type=\"" + escape(g.type, true) + "\"";
                out += ">" + escape(g.text, false) + "</gram>\n";
            }
            out += "    </gramGrp>\n";
        }
        for (const auto& sense : e.senses) tei_detail::write_sense(out, sense, "    ");
        out += "  </entry>\n";
    }
    out += "</div>\n";
    return out;
}

/// Renumbers entry ids as `{prefix}1..{prefix}N` in document order.
inline void renumber_ids(std::vector<TeiEntry>& entries, std::string_view prefix = "e") {
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i].id = std::string(prefix) + std::to_string(i + 1);
}

// Conversions between the two schemas are lossy: usg and xr have no
// nine-field home, and Latin explanations and multiword units have no TEI one.

inline DictionaryEntry to_dictionary_entry(const TeiEntry& e, EntryProvenance provenance = {}) {
    DictionaryEntry out;
    out.headword_et = e.orth;
    for (const auto& sense : e.senses) {
        if (sense.quote.empty()) continue;
        if (out.equivalent_de.empty()) {
            out.equivalent_de = sense.quote;
        } else if (sense.quote != out.equivalent_de &&
                   std::find(out.synonyms_de.begin(), out.synonyms_de.end(), sense.quote) == out.synonyms_de.end()) {
            out.synonyms_de.push_back(sense.quote);
        }
    }
    if (e.gram_grp) {
        out.part_of_speech = e.gram_grp->pos.value_or("");
        std::vector<std::string> grams;
        for (const auto& g : e.gram_grp->grams) grams.push_back(g.text);
        out.grammar_info = text::join(grams, ", ");
    }
    out.provenance = std::move(provenance);
    return out;
}

inline TeiEntry to_tei_entry(const DictionaryEntry& e, std::string id) {
    TeiEntry out;
    out.id = std::move(id);
    out.orth = e.headword_et;
    if (!e.part_of_speech.empty() || !e.grammar_info.empty()) {
        TeiGramGrp grp;
        if (!e.part_of_speech.empty()) grp.pos = e.part_of_speech;
        if (!e.grammar_info.empty()) grp.grams.push_back(TeiGram{"", e.grammar_info});
        out.gram_grp = std::move(grp);
    }
    if (!e.equivalent_de.empty()) out.senses.push_back(TeiSense{e.equivalent_de, std::nullopt, {}, {}});
    for (const auto& syn : e.synonyms_de) out.senses.push_back(TeiSense{syn, std::nullopt, {}, {}});
    return out;
}

// JSON mirror of the TEI types, used by the HTTP API.

inline void to_json(nlohmann::json& j, const TeiSense& s) {
    j = nlohmann::json{{"quote", s.quote}};
    if (s.lang) j["lang"] = *s.lang;
    if (s.usg) j["usg"] = {{"type", s.usg->type}, {"text", s.usg->text}};
    if (s.xr) j["xr"] = {{"type", s.xr->type}, {"text", s.xr->text}};
}

inline void from_json(const nlohmann::json& j, TeiSense& s) {
    s = TeiSense{};
    s.quote = j.at("quote").get<std::string>();
    if (j.contains("lang")) s.lang = j.at("lang").get<std::string>();
    auto marker = [&](const char* key) -> std::optional<TeiMarker> {
        const auto it = j.find(key);
        if (it == j.end() || it->is_null()) return std::nullopt;
        return TeiMarker{it->value("type", std::string()), it->at("text").get<std::string>()};
    };
    s.usg = marker("usg");
    s.xr = marker("xr");
}

inline void to_json(nlohmann::json& j, const TeiEntry& e) {
    j = nlohmann::json{{"id", e.id}, {"orth", e.orth}, {"senses", e.senses}};
    if (e.gram_grp) {
        nlohmann::json grams = nlohmann::json::array();
        for (const auto& g : e.gram_grp->grams) grams.push_back({{"type", g.type}, {"text", g.text}});
        j["gramGrp"] = {{"grams", grams}};
        if (e.gram_grp->pos) j["gramGrp"]["pos"] = *e.gram_grp->pos;
    }
}

inline void from_json(const nlohmann::json& j, TeiEntry& e) {
    e = TeiEntry{};
    e.id = j.value("id", std::string());
    e.orth = j.at("orth").get<std::string>();
    if (auto it = j.find("gramGrp"); it != j.end() && !it->is_null()) {
        TeiGramGrp grp;
        if (it->contains("pos")) grp.pos = it->at("pos").get<std::string>();
        for (const auto& g : it->value("grams", nlohmann::json::array())) {
            grp.grams.push_back(TeiGram{g.value("type", std::string()), g.at("text").get<std::string>()});
        }
        e.gram_grp = std::move(grp);
    }
    e.senses = j.value("senses", std::vector<TeiSense>{});
}

inline void to_json(nlohmann::json& j, const TeiDocument& d) {
    j = nlohmann::json{{"leading_senses", d.leading_senses}, {"entries", d.entries}};
}

inline void from_json(const nlohmann::json& j, TeiDocument& d) {
    d = TeiDocument{};
    d.leading_senses = j.value("leading_senses", std::vector<TeiSense>{});
    d.entries = j.at("entries").get<std::vector<TeiEntry>>();
}

} // namespace fraktur
