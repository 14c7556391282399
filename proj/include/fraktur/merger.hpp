#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraktur/entry.hpp"
#include "fraktur/error.hpp"
#include "fraktur/gateway.hpp"
#include "fraktur/metrics.hpp"
#include "fraktur/payload.hpp"
#include "fraktur/tei.hpp"
#include "fraktur/tiler.hpp"

namespace fraktur {

/// Recognition output of one tile. `continuation` holds headword-less
/// material at the top of the tile: the tail of an entry cut by the tile's
/// upper edge. For TEI it is an entry with empty orth carrying the leading
/// senses.
template <class E>
struct Fragment {
    Tile tile;
    std::vector<E> entries;
    std::optional<E> continuation;
};

template <class E>
struct FragmentSet {
    std::string page_id;
    TilePlan plan;
    /// One fragment per plan tile, in plan order.
    std::vector<Fragment<E>> fragments;
};

inline Fragment<TeiEntry> fragment_from_tei(const Tile& tile, const TeiDocument& doc) {
    Fragment<TeiEntry> f{tile, doc.entries, std::nullopt};
    if (!doc.leading_senses.empty()) f.continuation = TeiEntry{"", "", std::nullopt, doc.leading_senses};
    return f;
}

inline Fragment<DictionaryEntry> fragment_from_payload(const Tile& tile, const PayloadParse& parsed) {
    return Fragment<DictionaryEntry>{tile, parsed.entries, parsed.continuation};
}

enum class DecisionKind { Kept, DroppedDuplicate, Stitched };

inline std::string_view decision_name(DecisionKind k) {
    switch (k) {
    case DecisionKind::Kept: return "kept";
    case DecisionKind::DroppedDuplicate: return "dropped_duplicate";
    case DecisionKind::Stitched: return "stitched";
    }
    return "kept";
}

/// Position of an input entry: fragment index and entry index, with
/// entry == -1 naming the fragment's continuation.
struct EntryRef {
    std::size_t fragment = 0;
    int entry = 0;
    bool operator==(const EntryRef&) const = default;
};

struct MergeDecision {
    DecisionKind kind = DecisionKind::Kept;
    EntryRef source;
    /// The input whose content survives; equals `source` for kept entries.
    EntryRef keeper;
    /// Lower of the headword and full-text ratios for duplicates, 1 otherwise.
    double score = 1.0;
    /// Index of the output entry carrying this input, or nullopt for a
    /// continuation left at the top of the page.
    std::optional<std::size_t> output_index;
};

template <class E>
struct MergeResult {
    std::string page_id;
    std::vector<E> entries;
    /// Material above the page's first headword: the end of an entry begun
    /// on the previous page. Marked, never joined across pages.
    std::optional<E> page_break_continuation;
    std::vector<MergeDecision> decisions;
    std::vector<std::string> warnings;
    /// Set when an LLM merge reply was rejected and the deterministic merge
    /// was used instead.
    bool fallback = false;
};

namespace merge_detail {

inline const std::string& headword(const DictionaryEntry& e) { return e.headword_et; }
inline const std::string& headword(const TeiEntry& e) { return e.orth; }

inline std::string full_text(const DictionaryEntry& e) {
    std::string out;
    for (std::size_t k = 0; k < kFieldNames.size(); ++k) {
        if (k) out += '\n';
        out += field_text(e, k);
    }
    return out;
}

inline std::string full_text(const TeiEntry& e) {
    std::string out = e.orth;
    if (e.gram_grp) {
        out += '\n' + e.gram_grp->pos.value_or("");
        for (const auto& g : e.gram_grp->grams) out += '\n' + g.text;
    }
    for (const auto& s : e.senses) {
        out += '\n' + s.quote;
        if (s.usg) out += '\n' + s.usg->text;
        if (s.xr) out += '\n' + s.xr->text;
    }
    return out;
}

inline std::size_t filled_fields(const DictionaryEntry& e) { return filled_field_count(e); }

inline std::size_t filled_fields(const TeiEntry& e) {
    std::size_t n = e.orth.empty() ? 0 : 1;
    if (e.gram_grp) {
        if (e.gram_grp->pos && !e.gram_grp->pos->empty()) ++n;
        for (const auto& g : e.gram_grp->grams) n += g.text.empty() ? 0 : 1;
    }
    for (const auto& s : e.senses) n += (s.quote.empty() ? 0 : 1) + (s.usg ? 1 : 0) + (s.xr ? 1 : 0);
    return n;
}

/// An entry whose senses were cut off by the tile edge.
inline bool is_open(const DictionaryEntry& e) {
    return e.equivalent_de.empty() && e.synonyms_de.empty() && e.explanation_la.empty() && e.mwe_de.empty();
}
inline bool is_open(const TeiEntry& e) { return e.senses.empty(); }

inline void absorb(DictionaryEntry& target, const DictionaryEntry& cont) {
    for (std::size_t k = 1; k < kFieldNames.size(); ++k) {
        if (auto* s = scalar_field(target, k)) {
            const auto& add = *scalar_field(cont, k);
            if (add.empty() || *s == add) continue;
            *s = s->empty() ? add : *s + " " + add;
        } else {
            auto& seq = *sequence_field(target, k);
            for (const auto& m : *sequence_field(cont, k)) {
                if (std::find(seq.begin(), seq.end(), m) == seq.end()) seq.push_back(m);
            }
        }
    }
}

inline void absorb(TeiEntry& target, const TeiEntry& cont) {
    for (const auto& s : cont.senses) {
        if (std::find(target.senses.begin(), target.senses.end(), s) == target.senses.end()) target.senses.push_back(s);
    }
}

inline void set_order(DictionaryEntry& e, std::size_t i) { e.provenance.order_on_page = static_cast<int>(i); }
inline void set_order(TeiEntry& e, std::size_t i) { e.id = "e" + std::to_string(i + 1); }

/// Number of entries at a tile edge that can fall inside an overlap of
/// `overlap_px` on a tile `height_px` tall holding `count` entries.
inline std::size_t window(std::size_t count, int overlap_px, int height_px) {
    if (count == 0 || overlap_px <= 0 || height_px <= 0) return 0;
    const double share = static_cast<double>(count) * overlap_px / height_px;
    return std::min(count, static_cast<std::size_t>(std::ceil(share)) + 1);
}

} // namespace merge_detail

struct DuplicatePair {
    std::size_t tail_index = 0;
    std::size_t head_index = 0;
    double score = 0.0;
    /// True when the head-side variant holds more fields and is kept.
    bool keep_head = false;
};

/// Duplicate pairs between the last entries of one tile and the first
/// entries of the next. Two entries are duplicates when both their
/// headwords and their full texts reach `threshold`. Pairs are matched
/// greedily and never cross, so reading order is preserved.
template <class E>
std::vector<DuplicatePair> dedupe_pair(const std::vector<E>& tail, const std::vector<E>& head, double threshold = 0.80) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold must lie in [0, 1]");
    std::vector<DuplicatePair> pairs;
    std::size_t next_head = 0;
    for (std::size_t i = 0; i < tail.size() && next_head < head.size(); ++i) {
        const auto tail_text = merge_detail::full_text(tail[i]);
        for (std::size_t j = next_head; j < head.size(); ++j) {
            const double hw = text_ratio(merge_detail::headword(tail[i]), merge_detail::headword(head[j]));
            if (hw < threshold) continue;
            const double full = text_ratio(tail_text, merge_detail::full_text(head[j]));
            if (full < threshold) continue;
            pairs.push_back({i, j, std::min(hw, full),
                             merge_detail::filled_fields(head[j]) > merge_detail::filled_fields(tail[i])});
            next_head = j + 1;
            break;
        }
    }
    return pairs;
}

/// Deterministic page assembly: column-major concatenation, removal of
/// entries repeated across the overlap of vertically adjacent tiles, and
/// stitching of entries split by a tile edge.
template <class E>
MergeResult<E> merge_fragments(const FragmentSet<E>& frags, double threshold = 0.80) {
    if (frags.fragments.empty()) throw Error(ErrorCode::EmptyFragmentSet, "no fragments for page " + frags.page_id);
    if (!frags.plan.tiles.empty() && frags.plan.tiles.size() != frags.fragments.size()) {
        throw Error(ErrorCode::InvalidArgument, "fragment count " + std::to_string(frags.fragments.size()) +
                                                    " does not match the plan's " +
                                                    std::to_string(frags.plan.tiles.size()) + " tiles");
    }

    struct Slot {
        E content;
        EntryRef origin;
    };
    MergeResult<E> result;
    result.page_id = frags.page_id;
    std::vector<Slot> out;
    std::vector<MergeDecision> decisions;
    // Output slot of each entry of the previous fragment, or nullopt if dropped.
    std::vector<std::optional<std::size_t>> prev_slots;
    std::size_t prev_fragment = 0;
    const bool dedupe = frags.plan.overlap_fraction > 0.0;

    for (std::size_t f = 0; f < frags.fragments.size(); ++f) {
        const auto& frag = frags.fragments[f];
        std::vector<std::optional<std::size_t>> slots(frag.entries.size());
        std::vector<bool> handled(frag.entries.size(), false);

        if (frag.continuation) {
            const EntryRef src{f, -1};
            if (out.empty()) {
                result.page_break_continuation = frag.continuation;
                decisions.push_back({DecisionKind::Kept, src, src, 1.0, std::nullopt});
            } else {
                auto& target = out.back();
                if (!merge_detail::is_open(target.content)) {
                    result.warnings.push_back("continuation at the top of fragment " + std::to_string(f) +
                                              " follows a complete entry; appended to '" +
                                              merge_detail::headword(target.content) + "'");
                }
                merge_detail::absorb(target.content, *frag.continuation);
                decisions.push_back({DecisionKind::Stitched, src, target.origin, 1.0, out.size() - 1});
            }
        }

        const bool same_column = f > 0 && frag.tile.column_index == frags.fragments[f - 1].tile.column_index &&
                                 frag.tile.segment_index > 0;
        if (dedupe && same_column && !prev_slots.empty() && !frag.entries.empty()) {
            const auto& prev = frags.fragments[prev_fragment];
            const int overlap = frag.tile.overlap_above_px;
            const std::size_t tail_n = merge_detail::window(prev.entries.size(), overlap, prev.tile.bbox.height());
            const std::size_t head_n = merge_detail::window(frag.entries.size(), overlap, frag.tile.bbox.height());
            // Compare against the surviving content of the previous tile.
            std::vector<E> tail;
            std::vector<std::size_t> tail_slot;
            for (std::size_t i = prev.entries.size() - tail_n; i < prev.entries.size(); ++i) {
                if (!prev_slots[i]) continue;
                tail.push_back(out[*prev_slots[i]].content);
                tail_slot.push_back(*prev_slots[i]);
            }
            const std::vector<E> head(frag.entries.begin(), frag.entries.begin() + static_cast<std::ptrdiff_t>(head_n));
            for (const auto& pair : dedupe_pair(tail, head, threshold)) {
                auto& slot = out[tail_slot[pair.tail_index]];
                const EntryRef head_ref{f, static_cast<int>(pair.head_index)};
                if (pair.keep_head) {
                    // The earlier slot keeps its reading position; the fuller
                    // variant supplies the content.
                    for (auto& d : decisions) {
                        if (d.keeper == slot.origin && d.output_index == tail_slot[pair.tail_index]) d.keeper = head_ref;
                        if (d.source == slot.origin && d.kind == DecisionKind::Kept) {
                            d.kind = DecisionKind::DroppedDuplicate;
                            d.score = pair.score;
                        }
                    }
                    slot.content = frag.entries[pair.head_index];
                    slot.origin = head_ref;
                    decisions.push_back({DecisionKind::Kept, head_ref, head_ref, 1.0, tail_slot[pair.tail_index]});
                } else {
                    decisions.push_back(
                        {DecisionKind::DroppedDuplicate, head_ref, slot.origin, pair.score, tail_slot[pair.tail_index]});
                }
                slots[pair.head_index] = tail_slot[pair.tail_index];
                handled[pair.head_index] = true;
            }
        }

        for (std::size_t i = 0; i < frag.entries.size(); ++i) {
            if (handled[i]) continue;
            const EntryRef src{f, static_cast<int>(i)};
            out.push_back(Slot{frag.entries[i], src});
            slots[i] = out.size() - 1;
            decisions.push_back({DecisionKind::Kept, src, src, 1.0, out.size() - 1});
        }
        prev_slots = std::move(slots);
        prev_fragment = f;
    }

    result.entries.reserve(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        result.entries.push_back(std::move(out[i].content));
        merge_detail::set_order(result.entries.back(), i);
    }
    result.decisions = std::move(decisions);
    return result;
}

inline TeiDocument to_document(const MergeResult<TeiEntry>& r) {
    TeiDocument doc;
    if (r.page_break_continuation) doc.leading_senses = r.page_break_continuation->senses;
    doc.entries = r.entries;
    return doc;
}

/// Serialized fragments handed to a merging model: each fragment is
/// preceded by a comment line naming its tile.
template <class E>
std::string merge_payload(const FragmentSet<E>& frags) {
    std::string out;
    for (const auto& frag : frags.fragments) {
        out += "<!-- tile " + tile_label(frags.page_id, frag.tile) + " -->\n";
        if constexpr (std::is_same_v<E, TeiEntry>) {
            TeiDocument doc;
            if (frag.continuation) doc.leading_senses = frag.continuation->senses;
            doc.entries = frag.entries;
            out += serialize_tei(doc);
        } else {
            nlohmann::json arr = nlohmann::json::array();
            auto flat = [](const DictionaryEntry& e) {
                nlohmann::json j = e;
                j.erase("provenance");
                return j;
            };
            if (frag.continuation) arr.push_back(flat(*frag.continuation));
            for (const auto& e : frag.entries) arr.push_back(flat(e));
            out += arr.dump(2) + "\n";
        }
    }
    return out;
}

/// Delegates the merge to a model. A reply that does not parse under the
/// page schema, or a refusal, falls back to merge_fragments with `fallback`
/// set; gateway errors propagate.
template <class E>
MergeResult<E> llm_merge(const FragmentSet<E>& frags, Gateway& gateway, const PromptAsset& prompt,
                         const ModelParams& params, double threshold = 0.80) {
    if (frags.fragments.empty()) throw Error(ErrorCode::EmptyFragmentSet, "no fragments for page " + frags.page_id);
    const auto request = build_text_request(prompt, merge_payload(frags), params, frags.page_id + "_merge");
    const Response response = gateway.submit(request);

    auto fall_back = [&](const std::string& why) {
        auto r = merge_fragments(frags, threshold);
        r.fallback = true;
        r.warnings.push_back("model merge rejected (" + why + "); deterministic merge used");
        return r;
    };
    if (response.refused()) return fall_back("refusal");

    MergeResult<E> result;
    result.page_id = frags.page_id;
    try {
        if constexpr (std::is_same_v<E, TeiEntry>) {
            const auto doc = parse_tei_fragment(strip_code_fence(response.body));
            result.entries = doc.entries;
            if (!doc.leading_senses.empty()) result.page_break_continuation = TeiEntry{"", "", std::nullopt, doc.leading_senses};
        } else {
            PayloadOptions options;
            options.allow_leading_continuation = true;
            auto parsed = parse_entry_payload(response.body, SchemaId::NineField, options);
            result.entries = std::move(parsed.entries);
            result.page_break_continuation = std::move(parsed.continuation);
            for (const auto& w : parsed.warnings) result.warnings.push_back(w.message);
        }
    } catch (const Error& err) {
        switch (err.code()) {
        case ErrorCode::XmlSyntax:
        case ErrorCode::SubsetViolation:
        case ErrorCode::MalformedPayload:
        case ErrorCode::SchemaViolation:
            return fall_back(std::string(code_name(err.code())) + ": " + err.what());
        default:
            throw;
        }
    }
    for (std::size_t i = 0; i < result.entries.size(); ++i) merge_detail::set_order(result.entries[i], i);
    return result;
}

/// Merge audit, one JSON object per line.
template <class E>
std::string merge_audit_jsonl(const FragmentSet<E>& frags, const MergeResult<E>& result) {
    auto ref_json = [&](const EntryRef& r) {
        const auto& frag = frags.fragments.at(r.fragment);
        nlohmann::json j{{"tile", tile_label(frags.page_id, frag.tile)}, {"fragment", r.fragment}};
        if (r.entry < 0) {
            j["entry"] = "continuation";
        } else {
            j["entry"] = r.entry;
            j["headword"] = merge_detail::headword(frag.entries.at(static_cast<std::size_t>(r.entry)));
        }
        return j;
    };
    std::string out;
    if (result.fallback) out += nlohmann::json{{"kind", "fallback"}, {"page_id", result.page_id}}.dump() + "\n";
    for (const auto& d : result.decisions) {
        nlohmann::json j{{"kind", decision_name(d.kind)},
                         {"source", ref_json(d.source)},
                         {"keeper", ref_json(d.keeper)},
                         {"score", d.score}};
        j["output_index"] = d.output_index ? nlohmann::json(*d.output_index) : nlohmann::json(nullptr);
        out += j.dump() + "\n";
    }
    for (const auto& w : result.warnings) out += nlohmann::json{{"kind", "warning"}, {"message", w}}.dump() + "\n";
    return out;
}

} // namespace fraktur
