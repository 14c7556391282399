#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraktur/csv.hpp"
#include "fraktur/entry.hpp"
#include "fraktur/error.hpp"
#include "fraktur/metrics.hpp"
#include "fraktur/tei.hpp"
#include "fraktur/text.hpp"
#include "fraktur/usage.hpp"

namespace fraktur {

/// A recognised or reference page in either schema.
using PageContent = std::variant<std::vector<DictionaryEntry>, TeiDocument>;

inline SchemaId schema_of(const PageContent& c) {
    return std::holds_alternative<TeiDocument>(c) ? SchemaId::TeiSubset : SchemaId::NineField;
}

inline std::size_t entry_count(const PageContent& c) {
    if (const auto* doc = std::get_if<TeiDocument>(&c)) return doc->entries.size();
    return std::get<std::vector<DictionaryEntry>>(c).size();
}

// --- sequences compared by the similarity scores -------------------------

namespace eval_detail {

inline std::string token(std::string name, std::vector<std::pair<std::string, std::string>> attrs) {
    std::sort(attrs.begin(), attrs.end());
    for (const auto& [k, v] : attrs) name += " " + k + "=" + v;
    return name;
}

inline void sense_tokens(std::vector<std::string>& out, const TeiSense& s) {
    out.emplace_back("sense");
    std::vector<std::pair<std::string, std::string>> cit{{"type", "translation"}};
    if (s.lang) cit.emplace_back("xml:lang", *s.lang);
    out.push_back(token("cit", cit));
    out.emplace_back("quote");
    if (s.usg) out.push_back(s.usg->type.empty() ? "usg" : token("usg", {{"type", s.usg->type}}));
    if (s.xr) out.push_back(s.xr->type.empty() ? "xr" : token("xr", {{"type", s.xr->type}}));
}

inline void sense_text(std::u32string& out, const TeiSense& s) {
    out += text::to_code_points(s.quote);
    if (s.usg) out += text::to_code_points(s.usg->text);
    if (s.xr) out += text::to_code_points(s.xr->text);
}

} // namespace eval_detail

/// One token per element in pre-order: the element name followed by its
/// attributes as name=value, sorted by name. Text is excluded.
inline std::vector<std::string> structure_sequence(const TeiDocument& doc) {
    using eval_detail::token;
    std::vector<std::string> out{"div"};
    for (const auto& s : doc.leading_senses) eval_detail::sense_tokens(out, s);
    for (const auto& e : doc.entries) {
        out.push_back(token("entry", {{"id", e.id}}));
        out.push_back(token("form", {{"type", "lemma"}}));
        out.emplace_back("orth");
        if (e.gram_grp) {
            out.emplace_back("gramGrp");
            if (e.gram_grp->pos) out.emplace_back("pos");
            for (const auto& g : e.gram_grp->grams) out.push_back(g.type.empty() ? "gram" : token("gram", {{"type", g.type}}));
        }
        for (const auto& s : e.senses) eval_detail::sense_tokens(out, s);
    }
    return out;
}

/// Text nodes in document order, one element per code point. Text values are
/// stored trimmed, so whitespace-only nodes contribute nothing.
inline std::u32string content_sequence(const TeiDocument& doc) {
    std::u32string out;
    for (const auto& s : doc.leading_senses) eval_detail::sense_text(out, s);
    for (const auto& e : doc.entries) {
        out += text::to_code_points(e.orth);
        if (e.gram_grp) {
            if (e.gram_grp->pos) out += text::to_code_points(*e.gram_grp->pos);
            for (const auto& g : e.gram_grp->grams) out += text::to_code_points(g.text);
        }
        for (const auto& s : e.senses) eval_detail::sense_text(out, s);
    }
    return out;
}

/// Nine-field analogue of structure_sequence: "entry" per entry, then the
/// name of every filled field, once per sequence member.
inline std::vector<std::string> structure_sequence(const std::vector<DictionaryEntry>& entries) {
    std::vector<std::string> out{"entries"};
    for (const auto& e : entries) {
        out.emplace_back("entry");
        for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
            if (const auto* s = scalar_field(e, i)) {
                if (!s->empty()) out.emplace_back(kFieldNames[i]);
            } else {
                for (std::size_t k = 0; k < sequence_field(e, i)->size(); ++k) out.emplace_back(kFieldNames[i]);
            }
        }
    }
    return out;
}

inline std::u32string content_sequence(const std::vector<DictionaryEntry>& entries) {
    std::u32string out;
    for (const auto& e : entries) {
        for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
            if (const auto* s = scalar_field(e, i)) {
                out += text::to_code_points(*s);
            } else {
                for (const auto& m : *sequence_field(e, i)) out += text::to_code_points(m);
            }
        }
    }
    return out;
}

// --- page scoring ---------------------------------------------------------

struct EvalReport {
    std::string page_id;
    /// Only fields whose reference text is non-empty are scored.
    std::map<std::string, double> cer;
    double structural_similarity = 0.0;
    double textual_similarity = 0.0;
    std::size_t perfect_entries = 0;
    std::size_t total_entries = 0;
    std::size_t hypothesis_entries = 0;

    double perfect_rate() const {
        if (total_entries == 0) return hypothesis_entries == 0 ? 1.0 : 0.0;
        return static_cast<double>(perfect_entries) / static_cast<double>(total_entries);
    }
};

/// Per-field texts of the TEI schema, keyed with nine-field names where one
/// exists.
inline std::vector<std::pair<std::string, std::string>> tei_fields(const TeiEntry& e) {
    std::vector<std::string> quotes, usgs, xrs, grams;
    for (const auto& s : e.senses) {
        quotes.push_back(s.quote);
        if (s.usg) usgs.push_back(s.usg->text);
        if (s.xr) xrs.push_back(s.xr->text);
    }
    std::string pos;
    if (e.gram_grp) {
        pos = e.gram_grp->pos.value_or("");
        for (const auto& g : e.gram_grp->grams) grams.push_back(g.text);
    }
    return {{"headword_et", e.orth},
            {"equivalent_de", text::join(quotes, kJoinToken)},
            {"part_of_speech", pos},
            {"grammar_info", text::join(grams, kJoinToken)},
            {"usage", text::join(usgs, kJoinToken)},
            {"xref", text::join(xrs, kJoinToken)}};
}

namespace eval_detail {

// Aligned by order index; entries missing on one side contribute "".
template <class Fields>
std::map<std::string, double> field_cers(std::size_t n_hyp, std::size_t n_ref, Fields&& fields_of) {
    using FieldList = std::vector<std::pair<std::string, std::string>>;
    std::map<std::string, std::string> hyp_cat, ref_cat;
    const std::size_t n = std::max(n_hyp, n_ref);
    for (std::size_t i = 0; i < n; ++i) {
        const FieldList hyp = i < n_hyp ? fields_of(true, i) : FieldList{};
        const FieldList ref = i < n_ref ? fields_of(false, i) : FieldList{};
        const FieldList& names = hyp.empty() ? ref : hyp;
        for (std::size_t f = 0; f < names.size(); ++f) {
            auto& h = hyp_cat[names[f].first];
            auto& r = ref_cat[names[f].first];
            if (i > 0) {
                h += '\n';
                r += '\n';
            }
            if (f < hyp.size()) h += hyp[f].second;
            if (f < ref.size()) r += ref[f].second;
        }
    }
    std::map<std::string, double> out;
    for (const auto& [name, ref] : ref_cat) {
        if (text::trim_view(ref).empty()) continue;
        out[name] = cer(hyp_cat[name], ref);
    }
    return out;
}

} // namespace eval_detail

inline EvalReport score_page(const std::vector<DictionaryEntry>& hyp, const std::vector<DictionaryEntry>& ref,
                             std::string page_id = {}) {
    EvalReport report;
    report.page_id = std::move(page_id);
    report.cer = eval_detail::field_cers(hyp.size(), ref.size(), [&](bool is_hyp, std::size_t i) {
        const auto& e = is_hyp ? hyp[i] : ref[i];
        std::vector<std::pair<std::string, std::string>> f;
        for (std::size_t k = 0; k < kFieldNames.size(); ++k) f.emplace_back(kFieldNames[k], field_text(e, k));
        return f;
    });
    report.structural_similarity = ro_ratio(structure_sequence(hyp), structure_sequence(ref));
    report.textual_similarity = ro_ratio(content_sequence(hyp), content_sequence(ref));
    for (std::size_t i = 0; i < std::min(hyp.size(), ref.size()); ++i) {
        if (same_content(hyp[i], ref[i])) ++report.perfect_entries;
    }
    report.total_entries = ref.size();
    report.hypothesis_entries = hyp.size();
    return report;
}

inline EvalReport score_page(const TeiDocument& hyp, const TeiDocument& ref, std::string page_id = {}) {
    EvalReport report;
    report.page_id = std::move(page_id);
    report.cer = eval_detail::field_cers(hyp.entries.size(), ref.entries.size(), [&](bool is_hyp, std::size_t i) {
        return tei_fields(is_hyp ? hyp.entries[i] : ref.entries[i]);
    });
    report.structural_similarity = ro_ratio(structure_sequence(hyp), structure_sequence(ref));
    report.textual_similarity = ro_ratio(content_sequence(hyp), content_sequence(ref));
    for (std::size_t i = 0; i < std::min(hyp.entries.size(), ref.entries.size()); ++i) {
        auto h = hyp.entries[i];
        h.id = ref.entries[i].id;
        if (h == ref.entries[i]) ++report.perfect_entries;
    }
    report.total_entries = ref.entries.size();
    report.hypothesis_entries = hyp.entries.size();
    return report;
}

inline EvalReport score_page(const PageContent& hyp, const PageContent& ref, std::string page_id = {}) {
    if (hyp.index() != ref.index()) {
        throw Error(ErrorCode::SchemaMismatch, "hypothesis and reference use different schemas");
    }
    if (const auto* doc = std::get_if<TeiDocument>(&hyp)) {
        return score_page(*doc, std::get<TeiDocument>(ref), std::move(page_id));
    }
    return score_page(std::get<std::vector<DictionaryEntry>>(hyp), std::get<std::vector<DictionaryEntry>>(ref),
                      std::move(page_id));
}

// --- corpus aggregation and method comparison ----------------------------

/// Raw values of one processing method (one row of a method comparison).
struct MethodRow {
    std::string method;
    double structural = 0.0;
    double textual = 0.0;
    Micros cost = 0;
    std::int64_t input_tokens = 0;
};

/// `value / baseline - 1` as a signed percentage with `decimals` places,
/// e.g. "+15.6%".
inline std::string format_delta(double value, double baseline, int decimals) {
    if (baseline == 0.0) return "n/a";
    const double pct = (value / baseline - 1.0) * 100.0;
    const double scale = std::pow(10.0, decimals);
    // Raw ratios like 0.572/0.495 are not exact in binary; snap before rounding.
    const double snapped = std::round(pct * scale * 1e6) / 1e6;
    const double rounded = std::round(snapped) / scale;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.*f%%", decimals, rounded == 0.0 ? 0.0 : rounded);
    return buf;
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline std::string format_thousands(std::int64_t v) {
    std::string digits = std::to_string(v < 0 ? -v : v);
    std::string out;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (i && (digits.size() - i) % 3 == 0) out += ',';
        out += digits[i];
    }
    return (v < 0 ? "-" : "") + out;
}

/// Rendered comparison row. Similarity deltas carry one decimal, cost and
/// token deltas whole percent; the baseline row carries no deltas.
struct MethodComparison {
    MethodRow raw;
    std::string structural;
    std::string textual;
    std::string cost;
    std::string input_tokens;
};

inline std::vector<MethodComparison> compare_methods(const std::vector<MethodRow>& rows, std::size_t baseline = 0) {
    std::vector<MethodComparison> out;
    if (rows.empty()) return out;
    const MethodRow& base = rows.at(baseline);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        MethodComparison c{r, format_fixed(r.structural, 3), format_fixed(r.textual, 3), format_money(r.cost, 3),
                           format_thousands(r.input_tokens)};
        if (i != baseline) {
            c.structural += " (" + format_delta(r.structural, base.structural, 1) + ")";
            c.textual += " (" + format_delta(r.textual, base.textual, 1) + ")";
            c.cost += " (" + format_delta(static_cast<double>(r.cost), static_cast<double>(base.cost), 0) + ")";
            c.input_tokens += " (" + format_delta(static_cast<double>(r.input_tokens),
                                                  static_cast<double>(base.input_tokens), 0) + ")";
        }
        out.push_back(std::move(c));
    }
    return out;
}

struct CorpusReport {
    std::vector<EvalReport> pages;
    std::map<std::string, double> mean_cer;
    double mean_structural = 0.0;
    double mean_textual = 0.0;
    double perfect_rate = 0.0;
    std::size_t perfect_entries = 0;
    std::size_t total_entries = 0;
    std::vector<MethodRow> methods;
};

/// Means over pages (a field's mean covers the pages that score it) and one
/// method row for this run built from the usage records.
inline CorpusReport aggregate(const std::vector<EvalReport>& reports, const std::vector<UsageRecord>& usage = {},
                              const std::optional<PriceTable>& prices = std::nullopt, std::string method = "run") {
    if (reports.empty()) throw Error(ErrorCode::EmptyInput, "aggregate needs at least one page report");
    CorpusReport out;
    out.pages = reports;
    std::map<std::string, std::pair<double, std::size_t>> sums;
    for (const auto& r : reports) {
        for (const auto& [field, value] : r.cer) {
            sums[field].first += value;
            ++sums[field].second;
        }
        out.mean_structural += r.structural_similarity;
        out.mean_textual += r.textual_similarity;
        out.perfect_entries += r.perfect_entries;
        out.total_entries += r.total_entries;
    }
    for (const auto& [field, s] : sums) out.mean_cer[field] = s.first / static_cast<double>(s.second);
    out.mean_structural /= static_cast<double>(reports.size());
    out.mean_textual /= static_cast<double>(reports.size());
    out.perfect_rate = out.total_entries ? static_cast<double>(out.perfect_entries) / static_cast<double>(out.total_entries) : 1.0;

    MethodRow row;
    row.method = std::move(method);
    row.structural = out.mean_structural;
    row.textual = out.mean_textual;
    row.input_tokens = totals(usage).input_tokens;
    row.cost = prices ? estimate_cost(usage, *prices) : 0;
    out.methods.push_back(std::move(row));
    return out;
}

// --- serialisation and rendering ------------------------------------------

inline void to_json(nlohmann::json& j, const EvalReport& r) {
    j = nlohmann::json{{"page_id", r.page_id},
                       {"cer", r.cer},
                       {"structural_similarity", r.structural_similarity},
                       {"textual_similarity", r.textual_similarity},
                       {"perfect_entries", r.perfect_entries},
                       {"total_entries", r.total_entries},
                       {"hypothesis_entries", r.hypothesis_entries},
                       {"perfect_rate", r.perfect_rate()}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
    r.page_id = j.at("page_id").get<std::string>();
    r.cer = j.at("cer").get<std::map<std::string, double>>();
    r.structural_similarity = j.at("structural_similarity").get<double>();
    r.textual_similarity = j.at("textual_similarity").get<double>();
    r.perfect_entries = j.at("perfect_entries").get<std::size_t>();
    r.total_entries = j.at("total_entries").get<std::size_t>();
    r.hypothesis_entries = j.value("hypothesis_entries", r.total_entries);
}

inline void to_json(nlohmann::json& j, const MethodRow& r) {
    j = nlohmann::json{{"method", r.method},
                       {"structural", r.structural},
                       {"textual", r.textual},
                       {"cost", format_money(r.cost, 6)},
                       {"input_tokens", r.input_tokens}};
}

inline void from_json(const nlohmann::json& j, MethodRow& r) {
    r.method = j.at("method").get<std::string>();
    r.structural = j.at("structural").get<double>();
    r.textual = j.at("textual").get<double>();
    const auto& cost = j.at("cost");
    r.cost = cost.is_string() ? parse_money(cost.get<std::string>()) : parse_money(cost.dump());
    r.input_tokens = j.at("input_tokens").get<std::int64_t>();
}

inline void to_json(nlohmann::json& j, const CorpusReport& r) {
    nlohmann::json series = nlohmann::json::object();
    for (const auto& p : r.pages) {
        for (const auto& [field, v] : p.cer) series[field].push_back({{"page_id", p.page_id}, {"cer", v}});
    }
    j = nlohmann::json{{"pages", r.pages},
                       {"cer_series", series},
                       {"mean_cer", r.mean_cer},
                       {"mean_structural", r.mean_structural},
                       {"mean_textual", r.mean_textual},
                       {"perfect_entries", r.perfect_entries},
                       {"total_entries", r.total_entries},
                       {"perfect_rate", r.perfect_rate},
                       {"methods", r.methods}};
}

/// One row per page: page_id, one CER column per scored field, similarities,
/// perfect/total.
inline std::string report_pages_csv(const CorpusReport& r) {
    std::vector<std::string> fields;
    for (const auto& [f, v] : r.mean_cer) fields.push_back(f);
    std::string out;
    csv::Row header{"page_id"};
    for (const auto& f : fields) header.push_back("cer_" + f);
    for (const char* h : {"structural_similarity", "textual_similarity", "perfect_entries", "total_entries"}) header.emplace_back(h);
    csv::write_row(out, header);
    for (const auto& p : r.pages) {
        csv::Row row{p.page_id};
        for (const auto& f : fields) {
            const auto it = p.cer.find(f);
            row.push_back(it == p.cer.end() ? "" : format_fixed(it->second, 4));
        }
        row.push_back(format_fixed(p.structural_similarity, 4));
        row.push_back(format_fixed(p.textual_similarity, 4));
        row.push_back(std::to_string(p.perfect_entries));
        row.push_back(std::to_string(p.total_entries));
        csv::write_row(out, row);
    }
    return out;
}

inline std::string methods_csv(const std::vector<MethodRow>& rows, std::size_t baseline = 0) {
    std::string out;
    csv::write_row(out, {"method", "structural", "textual", "cost", "input_tokens"});
    for (const auto& c : compare_methods(rows, baseline)) {
        csv::write_row(out, {c.raw.method, c.structural, c.textual, c.cost, c.input_tokens});
    }
    return out;
}

namespace eval_detail {

inline std::string html_escape(std::string_view s) { return tei_detail::escape(s, true); }

// Per-page CER polyline chart; the first series dashed, the rest solid.
inline std::string svg_chart(const CorpusReport& r, const std::vector<std::string>& fields) {
    const double w = 720, h = 300, left = 50, bottom = 30, top = 20, right = 130;
    double ymax = 1.0;
    for (const auto& p : r.pages) {
        for (const auto& f : fields) {
            if (auto it = p.cer.find(f); it != p.cer.end()) ymax = std::max(ymax, it->second);
        }
    }
    const std::size_t n = r.pages.size();
    auto x_of = [&](std::size_t i) { return left + (n > 1 ? (w - left - right) * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0); };
    auto y_of = [&](double v) { return top + (h - top - bottom) * (1.0 - v / ymax); };
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_fixed(w, 0) + "\" height=\"" +
                      format_fixed(h, 0) + "\">\n";
    svg += "<line x1=\"" + format_fixed(left, 0) + "\" y1=\"" + format_fixed(h - bottom, 0) + "\" x2=\"" +
           format_fixed(w - right, 0) + "\" y2=\"" + format_fixed(h - bottom, 0) + "\" stroke=\"#444\"/>\n";
    svg += "<line x1=\"" + format_fixed(left, 0) + "\" y1=\"" + format_fixed(top, 0) + "\" x2=\"" + format_fixed(left, 0) +
           "\" y2=\"" + format_fixed(h - bottom, 0) + "\" stroke=\"#444\"/>\n";
    svg += "<text x=\"4\" y=\"" + format_fixed(top + 4, 0) + "\" font-size=\"11\">" + format_fixed(ymax * 100, 0) + "%</text>\n";
    svg += "<text x=\"4\" y=\"" + format_fixed(h - bottom, 0) + "\" font-size=\"11\">0%</text>\n";
    static constexpr const char* kColors[] = {"#1f4e79", "#b03a2e", "#1e8449", "#7d3c98", "#b9770e", "#5d6d7e"};
    for (std::size_t k = 0; k < fields.size(); ++k) {
        std::string points;
        for (std::size_t i = 0; i < n; ++i) {
            const auto it = r.pages[i].cer.find(fields[k]);
            if (it == r.pages[i].cer.end()) continue;
            points += format_fixed(x_of(i), 1) + "," + format_fixed(y_of(it->second), 1) + " ";
        }
        const char* color = kColors[k % 6];
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\"" +
               (k == 0 ? " stroke-dasharray=\"6,4\"" : "") + " points=\"" + points + "\"/>\n";
        svg += "<text x=\"" + format_fixed(w - right + 8, 0) + "\" y=\"" + format_fixed(top + 14 + 16 * static_cast<double>(k), 0) +
               "\" font-size=\"11\" fill=\"" + color + "\">" + html_escape(fields[k]) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace eval_detail

/// Self-contained HTML page: summary table, per-page CER chart for the
/// headword and equivalent fields, per-page table, method comparison.
inline std::string report_html(const CorpusReport& r, std::string_view title = "Recognition report") {
    using eval_detail::html_escape;
    std::vector<std::string> chart_fields;
    for (const char* f : {"headword_et", "equivalent_de"}) {
        if (r.mean_cer.contains(f)) chart_fields.emplace_back(f);
    }
    std::string out = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + html_escape(title) +
                      "</title>\n<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}"
                      "td,th{border:1px solid #ccc;padding:2px 8px;text-align:right}</style></head><body>\n";
    out += "<h1>" + html_escape(title) + "</h1>\n<table>\n<tr><th>pages</th><td>" + std::to_string(r.pages.size()) +
           "</td></tr>\n<tr><th>perfect entries</th><td>" + std::to_string(r.perfect_entries) + " / " +
           std::to_string(r.total_entries) + " (" + format_fixed(r.perfect_rate * 100, 1) + "%)</td></tr>\n";
    out += "<tr><th>structural similarity</th><td>" + format_fixed(r.mean_structural, 3) + "</td></tr>\n";
    out += "<tr><th>textual similarity</th><td>" + format_fixed(r.mean_textual, 3) + "</td></tr>\n";
    for (const auto& [f, v] : r.mean_cer) {
        out += "<tr><th>mean CER " + html_escape(f) + "</th><td>" + format_fixed(v * 100, 1) + "%</td></tr>\n";
    }
    out += "</table>\n<h2>CER by page</h2>\n" + eval_detail::svg_chart(r, chart_fields);
    out += "<h2>Pages</h2>\n<table>\n<tr><th>page</th>";
    for (const auto& [f, v] : r.mean_cer) out += "<th>" + html_escape(f) + "</th>";
    out += "<th>structural</th><th>textual</th><th>perfect</th></tr>\n";
    for (const auto& p : r.pages) {
        out += "<tr><td>" + html_escape(p.page_id) + "</td>";
        for (const auto& [f, v] : r.mean_cer) {
            const auto it = p.cer.find(f);
            out += "<td>" + (it == p.cer.end() ? std::string() : format_fixed(it->second * 100, 1) + "%") + "</td>";
        }
        out += "<td>" + format_fixed(p.structural_similarity, 3) + "</td><td>" + format_fixed(p.textual_similarity, 3) +
               "</td><td>" + std::to_string(p.perfect_entries) + "/" + std::to_string(p.total_entries) + "</td></tr>\n";
    }
    out += "</table>\n";
    if (!r.methods.empty()) {
        out += "<h2>Methods</h2>\n<table>\n<tr><th>method</th><th>structural</th><th>textual</th><th>cost</th><th>input tokens</th></tr>\n";
        for (const auto& c : compare_methods(r.methods)) {
            out += "<tr><td>" + html_escape(c.raw.method) + "</td><td>" + html_escape(c.structural) + "</td><td>" +
                   html_escape(c.textual) + "</td><td>" + html_escape(c.cost) + "</td><td>" + html_escape(c.input_tokens) +
                   "</td></tr>\n";
        }
        out += "</table>\n";
    }
    out += "</body></html>\n";
    return out;
}

} // namespace fraktur
