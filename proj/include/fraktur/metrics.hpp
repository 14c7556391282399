#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <cstddef>
#include <ranges>
#include <string_view>
#include <utility>
#include <vector>

#include "fraktur/error.hpp"
#include "fraktur/text.hpp"

namespace fraktur {

/// Random-access sequences that are not text. Text goes through the
/// code-point overloads so that "ô" counts as one element, not two bytes.
template <class R>
concept ElementSequence = std::ranges::random_access_range<R> && std::ranges::sized_range<R> &&
                          !std::convertible_to<const R&, std::string_view>;

/// Unit-cost edit distance (substitution, insertion, deletion). Two-row
/// dynamic programme over the shorter sequence: O(|a|·|b|) time,
/// O(min(|a|,|b|)) memory.
template <ElementSequence A, ElementSequence B>
std::size_t edit_distance(const A& a, const B& b) {
    const std::size_t na = std::ranges::size(a);
    const std::size_t nb = std::ranges::size(b);
    if (nb > na) return edit_distance(b, a);
    if (nb == 0) return na;

    constexpr std::size_t kInline = 64;
    std::array<std::size_t, kInline> inline_buf;
    std::vector<std::size_t> heap_buf;
    std::size_t* row = inline_buf.data();
    if (nb + 1 > kInline) {
        heap_buf.resize(nb + 1);
        row = heap_buf.data();
    }
    for (std::size_t j = 0; j <= nb; ++j) row[j] = j;

    auto ai = std::ranges::begin(a);
    const auto b0 = std::ranges::begin(b);
    for (std::size_t i = 1; i <= na; ++i, ++ai) {
        std::size_t diag = row[0];
        std::size_t left = i;
        row[0] = i;
        for (std::size_t j = 1; j <= nb; ++j) {
            const std::size_t up = row[j];
            const std::size_t cost = static_cast<std::size_t>(!(*ai == b0[static_cast<std::ptrdiff_t>(j - 1)]));
            left = std::min(std::min(diag + cost, up + 1), left + 1);
            row[j] = left;
            diag = up;
        }
    }
    return row[nb];
}

/// Edit distance between two UTF-8 strings, counted in code points.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
    return edit_distance(text::to_code_points(a), text::to_code_points(b));
}

/// Character error rate: levenshtein(h, r) / |r| in code points. Not capped
/// at 1.0: a hypothesis much longer than its reference scores above 100%.
inline double cer(std::string_view hypothesis, std::string_view reference) {
    const auto ref = text::to_code_points(reference);
    if (ref.empty()) throw Error(ErrorCode::EmptyReference, "CER needs a non-empty reference");
    return static_cast<double>(edit_distance(text::to_code_points(hypothesis), ref)) /
           static_cast<double>(ref.size());
}

namespace metrics_detail {

struct Block {
    std::size_t a = 0;
    std::size_t b = 0;
    std::size_t size = 0;
};

// Longest common contiguous block of a[alo,ahi) and b[blo,bhi). Among blocks
// of maximal size the one starting earliest in a wins, then earliest in b.
template <class A, class B>
Block longest_block(const A& a, const B& b, std::size_t alo, std::size_t ahi, std::size_t blo, std::size_t bhi,
                    std::size_t* prev, std::size_t* cur) {
    Block best{alo, blo, 0};
    const std::size_t width = bhi - blo;
    std::fill(prev, prev + width + 1, 0);
    cur[0] = 0;
    for (std::size_t i = alo; i < ahi; ++i) {
        const auto& ai = a[i];
        for (std::size_t j = 0; j < width; ++j) {
            const std::size_t k = (prev[j] + 1) & (std::size_t{0} - static_cast<std::size_t>(ai == b[blo + j]));
            cur[j + 1] = k;
            if (k > best.size) best = Block{i + 1 - k, blo + j + 1 - k, k};
        }
        std::swap(prev, cur);
    }
    return best;
}

} // namespace metrics_detail

/// Number of elements matched by Ratcliff-Obershelp gestalt matching: take
/// the longest common block, then recurse on the pieces left and right of it.
template <ElementSequence A, ElementSequence B>
std::size_t gestalt_matches(const A& a, const B& b) {
    const std::size_t na = std::ranges::size(a);
    const std::size_t nb = std::ranges::size(b);
    if (na == 0 || nb == 0) return 0;

    constexpr std::size_t kInline = 64;
    struct Range {
        std::size_t alo, ahi, blo, bhi;
    };
    // At most min(na, nb) + 1 ranges are pending at once.
    std::array<std::size_t, 2 * kInline> inline_buf;
    std::array<Range, kInline> inline_ranges;
    std::vector<std::size_t> heap_buf;
    std::vector<Range> heap_ranges;
    std::size_t* prev = inline_buf.data();
    std::size_t* cur = inline_buf.data() + kInline;
    Range* pending = inline_ranges.data();
    if (nb + 1 > kInline) {
        heap_buf.resize(2 * (nb + 1));
        prev = heap_buf.data();
        cur = heap_buf.data() + nb + 1;
    }
    if (std::min(na, nb) + 1 > kInline) {
        heap_ranges.resize(std::min(na, nb) + 1);
        pending = heap_ranges.data();
    }
    std::size_t top = 0;
    pending[top++] = Range{0, na, 0, nb};
    std::size_t matched = 0;
    const auto ra = std::ranges::begin(a);
    const auto rb = std::ranges::begin(b);
    while (top > 0) {
        const Range r = pending[--top];
        const auto blk = metrics_detail::longest_block(ra, rb, r.alo, r.ahi, r.blo, r.bhi, prev, cur);
        if (blk.size == 0) continue;
        matched += blk.size;
        if (r.alo < blk.a && r.blo < blk.b) pending[top++] = Range{r.alo, blk.a, r.blo, blk.b};
        if (blk.a + blk.size < r.ahi && blk.b + blk.size < r.bhi) {
            pending[top++] = Range{blk.a + blk.size, r.ahi, blk.b + blk.size, r.bhi};
        }
    }
    return matched;
}

/// Gestalt similarity 2·M / (|a| + |b|) in [0, 1]; two empty sequences
/// compare as identical. Order-sensitive and, because of the tie-break,
/// not symmetric in general.
template <ElementSequence A, ElementSequence B>
double ro_ratio(const A& a, const B& b) {
    const std::size_t total = std::ranges::size(a) + std::ranges::size(b);
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(gestalt_matches(a, b)) / static_cast<double>(total);
}

/// ro_ratio over the code points of two UTF-8 strings.
inline double text_ratio(std::string_view a, std::string_view b) {
    return ro_ratio(text::to_code_points(a), text::to_code_points(b));
}

} // namespace fraktur
