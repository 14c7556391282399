#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraktur/csv.hpp"
#include "fraktur/error.hpp"
#include "fraktur/gateway.hpp"
#include "fraktur/metrics.hpp"
#include "fraktur/payload.hpp"
#include "fraktur/prompts.hpp"
#include "fraktur/text.hpp"

namespace fraktur {

enum class Lang { Et, De };

/// Matching key for a historical word form. Keys are for lookup only and
/// never shown as forms.
inline std::string normalize_form(std::string_view w, Lang lang) {
    std::string s = text::fold_diacritics(text::nfc(text::lower(w)));

    std::string collapsed;
    bool pending_space = false;
    for (char c : s) {
        if (text::is_space(c)) {
            pending_space = !collapsed.empty();
            continue;
        }
        if (pending_space) collapsed += ' ';
        pending_space = false;
        collapsed += c;
    }
    s = std::move(collapsed);

    if (lang == Lang::De) {
        for (;;) {
            bool stripped = false;
            for (std::string_view article : {"der ", "die ", "das "}) {
                if (s.size() > article.size() && s.compare(0, article.size(), article) == 0) {
                    s.erase(0, article.size());
                    stripped = true;
                }
            }
            if (!stripped) break;
        }
        return s;
    }

    std::replace(s.begin(), s.end(), 'w', 'v');
    const auto cps = text::to_code_points(s);
    std::u32string runs;
    for (char32_t c : cps) {
        if (runs.empty() || runs.back() != c) runs += c;
    }
    return text::to_utf8(runs);
}

/// Order-independent similarity of two keys: the larger of the two
/// directional gestalt ratios.
inline double key_similarity(std::string_view a, std::string_view b) {
    if (a == b) return 1.0;
    return std::max(text_ratio(a, b), text_ratio(b, a));
}

struct SourceRow {
    std::string source_id;
    std::string headword;
    std::string equivalent;
    /// Further columns: modernized form, example, example translation.
    std::vector<std::pair<std::string, std::string>> extra;

    bool operator==(const SourceRow&) const = default;
};

/// Column names of one source CSV. Columns not named here are carried as
/// extras when `keep_other_columns` is set.
struct ColumnMapping {
    std::string headword = "headword";
    std::string equivalent = "equivalent";
    std::vector<std::pair<std::string, std::string>> extra;
    bool keep_other_columns = true;
};

inline std::vector<SourceRow> load_source_csv(std::string_view data, const std::string& source_id,
                                              const ColumnMapping& mapping = {}) {
    const auto rows = csv::parse(data);
    if (rows.empty()) throw Error(ErrorCode::EmptyInput, "source '" + source_id + "' has no header row");
    const auto& header = rows.front();
    auto column = [&](const std::string& name) -> std::optional<std::size_t> {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto hw = column(mapping.headword);
    if (!hw) throw Error(ErrorCode::InvalidConfig, "source '" + source_id + "' lacks column '" + mapping.headword + "'");
    const auto eq = column(mapping.equivalent);

    std::vector<std::pair<std::string, std::size_t>> extras;
    for (const auto& [name, col] : mapping.extra) {
        if (const auto c = column(col)) extras.emplace_back(name, *c);
    }
    if (mapping.keep_other_columns) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c == *hw || (eq && c == *eq)) continue;
            const bool taken = std::any_of(extras.begin(), extras.end(), [&](const auto& e) { return e.second == c; });
            if (!taken) extras.emplace_back(header[c], c);
        }
    }

    std::vector<SourceRow> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        auto cell = [&](std::size_t c) { return c < row.size() ? text::nfc(text::trim_view(row[c])) : std::string(); };
        SourceRow s{source_id, cell(*hw), eq ? cell(*eq) : std::string(), {}};
        if (s.headword.empty()) continue;
        for (const auto& [name, c] : extras) s.extra.emplace_back(name, cell(c));
        out.push_back(std::move(s));
    }
    return out;
}

enum class MatchStatus { Exact, Fuzzy, Llm, None };

inline std::string_view status_name(MatchStatus s) {
    switch (s) {
    case MatchStatus::Exact: return "exact";
    case MatchStatus::Fuzzy: return "fuzzy";
    case MatchStatus::Llm: return "llm";
    case MatchStatus::None: return "none";
    }
    return "none";
}

struct Candidate {
    std::size_t row_index = 0;
    double score = 0.0;
    bool exact = false;
    /// "et" or "de": which side produced the match.
    std::string via;
};

struct SourceRows {
    std::string source_id;
    std::vector<SourceRow> rows;
};

/// Per source, rows whose Estonian key or German-equivalent key equals the
/// anchor's (exact) or reaches `threshold` (fuzzy). Sorted best first:
/// score, then exact before fuzzy, then row order.
inline std::vector<std::vector<Candidate>> candidate_matches(const SourceRow& anchor, const std::vector<SourceRows>& others,
                                                             double threshold = 0.75) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold must lie in [0, 1]");
    const std::string a_et = normalize_form(anchor.headword, Lang::Et);
    const std::string a_de = normalize_form(anchor.equivalent, Lang::De);
    std::vector<std::vector<Candidate>> out;
    for (const auto& source : others) {
        std::vector<Candidate> found;
        for (std::size_t i = 0; i < source.rows.size(); ++i) {
            const auto& row = source.rows[i];
            Candidate best{i, 0.0, false, ""};
            auto consider = [&](const std::string& x, const std::string& y, const char* via) {
                if (x.empty() || y.empty()) return;
                const bool exact = x == y;
                const double score = exact ? 1.0 : key_similarity(x, y);
                if (score < threshold) return;
                if (score > best.score || (score == best.score && exact && !best.exact)) best = {i, score, exact, via};
            };
            consider(a_et, normalize_form(row.headword, Lang::Et), "et");
            consider(a_de, normalize_form(row.equivalent, Lang::De), "de");
            if (!best.via.empty()) found.push_back(best);
        }
        std::stable_sort(found.begin(), found.end(), [](const Candidate& x, const Candidate& y) {
            if (x.score != y.score) return x.score > y.score;
            return x.exact && !y.exact;
        });
        out.push_back(std::move(found));
    }
    return out;
}

struct MatchCell {
    std::optional<SourceRow> row;
    MatchStatus status = MatchStatus::None;
    double score = 0.0;
};

struct MappingRow {
    SourceRow anchor;
    /// One cell per source, in source order.
    std::vector<std::pair<std::string, MatchCell>> matches;
    std::vector<std::string> warnings;
};

namespace enrich_detail {

inline nlohmann::json row_json(const SourceRow& r) {
    nlohmann::json extra = nlohmann::json::object();
    for (const auto& [k, v] : r.extra) extra[k] = v;
    return {{"source", r.source_id}, {"headword", r.headword}, {"equivalent", r.equivalent}, {"extra", extra}};
}

inline std::string body_of(std::string_view reply) { return std::string(strip_code_fence(reply)); }

} // namespace enrich_detail

/// Chooses one candidate per source. Without a gateway, or when the
/// candidates are unambiguous, the best-ranked candidate wins. With a
/// gateway, a source with two or more candidates, or with fuzzy ones only,
/// is decided by the model; any failure there falls back to the ranking.
inline MappingRow adjudicate(const SourceRow& anchor, const std::vector<SourceRows>& others,
                             const std::vector<std::vector<Candidate>>& candidates, Gateway* gateway = nullptr,
                             const PromptAsset* prompt = nullptr, const ModelParams& params = {}) {
    MappingRow out;
    out.anchor = anchor;
    for (std::size_t s = 0; s < others.size(); ++s) {
        const auto& cands = s < candidates.size() ? candidates[s] : std::vector<Candidate>{};
        const auto& rows = others[s].rows;
        MatchCell cell;
        if (!cands.empty()) {
            const Candidate& top = cands.front();
            cell = MatchCell{rows[top.row_index], top.exact ? MatchStatus::Exact : MatchStatus::Fuzzy, top.score};
            const bool ambiguous = cands.size() >= 2 || !top.exact;
            if (gateway && prompt && ambiguous) {
                nlohmann::json payload{{"anchor", enrich_detail::row_json(anchor)},
                                       {"source", others[s].source_id},
                                       {"candidates", nlohmann::json::array()}};
                for (std::size_t k = 0; k < cands.size(); ++k) {
                    auto c = enrich_detail::row_json(rows[cands[k].row_index]);
                    c["index"] = k;
                    c["score"] = cands[k].score;
                    c["match"] = cands[k].exact ? "exact" : "fuzzy";
                    payload["candidates"].push_back(c);
                }
                try {
                    const auto req = build_text_request(*prompt, payload.dump(2), params,
                                                        "adjudicate_" + anchor.headword + "_" + others[s].source_id);
                    const auto resp = expect_ok(gateway->submit(req));
                    const auto reply = nlohmann::json::parse(enrich_detail::body_of(resp.body));
                    const auto& choice = reply.at("choice");
                    if (choice.is_null()) {
                        cell = MatchCell{std::nullopt, MatchStatus::Llm, 0.0};
                    } else {
                        const auto k = choice.get<std::size_t>();
                        if (k >= cands.size()) throw Error(ErrorCode::MalformedPayload, "choice out of range");
                        cell = MatchCell{rows[cands[k].row_index], MatchStatus::Llm, cands[k].score};
                    }
                } catch (const std::exception& err) {
                    out.warnings.push_back("adjudication for source '" + others[s].source_id +
                                           "' failed; ranked candidate used: " + err.what());
                }
            }
        }
        out.matches.emplace_back(others[s].source_id, std::move(cell));
    }
    return out;
}

/// Candidate generation plus adjudication for every anchor row.
inline std::vector<MappingRow> map_sources(const std::vector<SourceRow>& anchors, const std::vector<SourceRows>& others,
                                           double threshold = 0.75, Gateway* gateway = nullptr,
                                           const PromptAsset* prompt = nullptr, const ModelParams& params = {}) {
    std::vector<MappingRow> out;
    out.reserve(anchors.size());
    for (const auto& a : anchors) {
        out.push_back(adjudicate(a, others, candidate_matches(a, others, threshold), gateway, prompt, params));
    }
    return out;
}

/// Mapping table in the layout of a cross-source comparison: anchor
/// headword and equivalent, then per source its matched cells and status.
inline std::string mapping_csv(const std::vector<MappingRow>& rows) {
    std::vector<std::string> sources;
    std::map<std::string, std::vector<std::string>> extra_keys;
    for (const auto& r : rows) {
        for (const auto& [src, cell] : r.matches) {
            if (std::find(sources.begin(), sources.end(), src) == sources.end()) sources.push_back(src);
            if (!cell.row) continue;
            auto& keys = extra_keys[src];
            for (const auto& [k, v] : cell.row->extra) {
                if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
            }
        }
    }
    const std::string anchor_id = rows.empty() ? "anchor" : rows.front().anchor.source_id;
    csv::Row header{anchor_id + "_headword", anchor_id + "_equivalent"};
    for (const auto& src : sources) {
        header.push_back(src + "_headword");
        header.push_back(src + "_equivalent");
        for (const auto& k : extra_keys[src]) header.push_back(src + "_" + k);
        header.push_back(src + "_status");
    }
    std::string out;
    csv::write_row(out, header);
    for (const auto& r : rows) {
        csv::Row row{r.anchor.headword, r.anchor.equivalent};
        for (const auto& src : sources) {
            const auto it = std::find_if(r.matches.begin(), r.matches.end(), [&](const auto& m) { return m.first == src; });
            const MatchCell* cell = it == r.matches.end() ? nullptr : &it->second;
            const SourceRow* m = cell && cell->row ? &*cell->row : nullptr;
            row.push_back(m ? m->headword : "");
            row.push_back(m ? m->equivalent : "");
            for (const auto& k : extra_keys[src]) {
                std::string v;
                if (m) {
                    for (const auto& [ek, ev] : m->extra) {
                        if (ek == k) v = ev;
                    }
                }
                row.push_back(v);
            }
            row.emplace_back(status_name(cell ? cell->status : MatchStatus::None));
        }
        csv::write_row(out, row);
    }
    return out;
}

struct EnrichmentRow {
    std::string old_et;
    std::string modern_et;
    std::string old_de;
    std::string modern_de;
    std::string comment;

    bool operator==(const EnrichmentRow&) const = default;
};

inline constexpr std::string_view kParseFailed = "PARSE-FAILED";

inline void to_json(nlohmann::json& j, const EnrichmentRow& r) {
    j = nlohmann::json{{"old_et", r.old_et},
                       {"modern_et", r.modern_et},
                       {"old_de", r.old_de},
                       {"modern_de", r.modern_de},
                       {"comment", r.comment}};
}

inline void from_json(const nlohmann::json& j, EnrichmentRow& r) {
    r.old_et = j.at("old_et").get<std::string>();
    r.modern_et = j.value("modern_et", std::string());
    r.old_de = j.at("old_de").get<std::string>();
    r.modern_de = j.value("modern_de", std::string());
    r.comment = j.value("comment", std::string());
}

inline std::string enrichment_csv(const std::vector<EnrichmentRow>& rows) {
    std::string out;
    csv::write_row(out, {"old_et", "modern_et", "old_de", "modern_de", "comment"});
    for (const auto& r : rows) csv::write_row(out, {r.old_et, r.modern_et, r.old_de, r.modern_de, r.comment});
    return out;
}

struct EnrichOptions {
    std::size_t batch_size = 25;
    /// Completed batches are appended here and skipped on the next run.
    std::optional<std::filesystem::path> checkpoint;
    ModelParams params{};
};

namespace enrich_detail {

inline EnrichmentRow failed_row(const MappingRow& m) {
    return EnrichmentRow{m.anchor.headword, "", m.anchor.equivalent, "", std::string(kParseFailed)};
}

inline std::map<std::size_t, std::vector<EnrichmentRow>> read_checkpoint(const std::filesystem::path& path) {
    std::map<std::size_t, std::vector<EnrichmentRow>> done;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (text::trim_view(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            done[j.at("batch").get<std::size_t>()] = j.at("rows").get<std::vector<EnrichmentRow>>();
        } catch (const std::exception&) {
            break; // torn final line
        }
    }
    return done;
}

// One row per batch member; members the reply does not cover, or covers
// with unusable values, become PARSE-FAILED rows.
inline std::vector<EnrichmentRow> parse_batch(const std::string& body, const std::vector<const MappingRow*>& batch) {
    std::vector<EnrichmentRow> out;
    for (const auto* m : batch) out.push_back(failed_row(*m));
    nlohmann::json reply;
    try {
        reply = nlohmann::json::parse(strip_code_fence(body));
    } catch (const std::exception&) {
        return out;
    }
    if (!reply.is_array()) return out;
    for (std::size_t k = 0; k < reply.size(); ++k) {
        const auto& obj = reply[k];
        if (!obj.is_object()) continue;
        std::size_t idx = k;
        if (auto it = obj.find("index"); it != obj.end()) {
            if (!it->is_number_unsigned()) continue;
            idx = it->get<std::size_t>();
        }
        if (idx >= batch.size()) continue;
        auto text_of = [&](const char* key) -> std::optional<std::string> {
            const auto it = obj.find(key);
            if (it == obj.end() || it->is_null()) return std::string();
            if (!it->is_string()) return std::nullopt;
            return text::nfc(text::trim_view(it->get<std::string>()));
        };
        const auto modern_et = text_of("modern_et");
        const auto modern_de = text_of("modern_de");
        const auto comment = text_of("comment");
        if (!modern_et || !modern_de || !comment || (modern_et->empty() && modern_de->empty())) continue;
        out[idx] = EnrichmentRow{batch[idx]->anchor.headword, *modern_et, batch[idx]->anchor.equivalent, *modern_de,
                                 *comment};
    }
    return out;
}

} // namespace enrich_detail

/// Asks the model for modern forms, batch by batch. Output has one row per
/// input row, in input order. A gateway error stops the run after the
/// completed batches were checkpointed; rerunning resumes from there.
inline std::vector<EnrichmentRow> enrich(const std::vector<MappingRow>& rows, Gateway& gateway, const PromptAsset& prompt,
                                         const EnrichOptions& options = {}) {
    if (options.batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    std::map<std::size_t, std::vector<EnrichmentRow>> done;
    if (options.checkpoint) done = enrich_detail::read_checkpoint(*options.checkpoint);

    std::vector<EnrichmentRow> out;
    out.reserve(rows.size());
    for (std::size_t start = 0, batch_no = 0; start < rows.size(); start += options.batch_size, ++batch_no) {
        const std::size_t end = std::min(rows.size(), start + options.batch_size);
        std::vector<const MappingRow*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&rows[i]);

        if (auto it = done.find(batch_no); it != done.end() && it->second.size() == batch.size()) {
            out.insert(out.end(), it->second.begin(), it->second.end());
            continue;
        }
        nlohmann::json payload = nlohmann::json::array();
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const auto& m = *batch[k];
            nlohmann::json context = nlohmann::json::array();
            for (const auto& [src, cell] : m.matches) {
                if (cell.row) context.push_back(enrich_detail::row_json(*cell.row));
            }
            payload.push_back({{"index", k},
                               {"old_et", m.anchor.headword},
                               {"old_de", m.anchor.equivalent},
                               {"context", context}});
        }
        const auto req = build_text_request(prompt, payload.dump(2), options.params, "enrich_" + std::to_string(batch_no));
        const auto resp = gateway.submit(req);
        std::vector<EnrichmentRow> parsed = resp.refused() ? std::vector<EnrichmentRow>{}
                                                           : enrich_detail::parse_batch(resp.body, batch);
        if (parsed.empty()) {
            for (const auto* m : batch) parsed.push_back(enrich_detail::failed_row(*m));
        }
        if (options.checkpoint) {
            std::ofstream ck(*options.checkpoint, std::ios::app);
            ck << nlohmann::json{{"batch", batch_no}, {"rows", parsed}}.dump() << '\n';
            ck.flush();
            if (!ck) throw Error(ErrorCode::IoError, "cannot write checkpoint " + options.checkpoint->string());
        }
        out.insert(out.end(), parsed.begin(), parsed.end());
    }
    return out;
}

enum class TriageLabel { Correct, MinorEdit, FullRevision };

inline std::string_view triage_name(TriageLabel l) {
    switch (l) {
    case TriageLabel::Correct: return "correct";
    case TriageLabel::MinorEdit: return "minor_edit";
    case TriageLabel::FullRevision: return "full_revision";
    }
    return "correct";
}

inline TriageLabel parse_triage(std::string_view s) {
    const std::string k = text::ascii_lower(text::trim_view(s));
    if (k == "correct") return TriageLabel::Correct;
    if (k == "minor_edit" || k == "minor" || k == "minoredit") return TriageLabel::MinorEdit;
    if (k == "full_revision" || k == "revision" || k == "fullrevision") return TriageLabel::FullRevision;
    throw Error(ErrorCode::InvalidArgument, "unknown triage label '" + std::string(s) + "'");
}

struct TriageStats {
    std::size_t total = 0;
    std::size_t correct = 0;
    std::size_t minor = 0;
    std::size_t revision = 0;
    /// Percentages in tenths of a percent, rounded half up: 810 = 81.0%.
    std::int64_t correct_tenths = 0;
    std::int64_t minor_tenths = 0;
    std::int64_t revision_tenths = 0;

    static std::string render(std::int64_t tenths) {
        return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
    }
};

inline TriageStats triage_stats(const std::vector<TriageLabel>& labels) {
    if (labels.empty()) throw Error(ErrorCode::EmptyInput, "no triage labels");
    TriageStats t;
    t.total = labels.size();
    for (auto l : labels) {
        if (l == TriageLabel::Correct) ++t.correct;
        else if (l == TriageLabel::MinorEdit) ++t.minor;
        else ++t.revision;
    }
    const auto n = static_cast<std::int64_t>(t.total);
    auto tenths = [n](std::size_t count) { return (2 * static_cast<std::int64_t>(count) * 1000 + n) / (2 * n); };
    t.correct_tenths = tenths(t.correct);
    t.minor_tenths = tenths(t.minor);
    t.revision_tenths = tenths(t.revision);
    return t;
}

inline nlohmann::json triage_json(const TriageStats& t) {
    return {{"total", t.total},
            {"correct", t.correct},
            {"minor_edit", t.minor},
            {"full_revision", t.revision},
            {"correct_pct", TriageStats::render(t.correct_tenths)},
            {"minor_edit_pct", TriageStats::render(t.minor_tenths)},
            {"full_revision_pct", TriageStats::render(t.revision_tenths)}};
}

} // namespace fraktur
