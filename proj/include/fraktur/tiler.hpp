#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "fraktur/error.hpp"
#include "fraktur/image.hpp"

namespace fraktur {

/// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct BBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool operator==(const BBox&) const = default;
};

enum class TilingMode { WholePage, TwoColumns, Segments };

inline std::string_view mode_name(TilingMode m) {
    switch (m) {
    case TilingMode::WholePage: return "whole_page";
    case TilingMode::TwoColumns: return "two_columns";
    case TilingMode::Segments: return "segments";
    }
    return "segments";
}

inline TilingMode parse_mode_name(std::string_view name) {
    if (name == "whole_page" || name == "whole") return TilingMode::WholePage;
    if (name == "two_columns" || name == "columns") return TilingMode::TwoColumns;
    if (name == "segments") return TilingMode::Segments;
    throw Error(ErrorCode::InvalidConfig, "unknown tiling mode '" + std::string(name) + "'");
}

struct Tile {
    int column_index = 0;
    int segment_index = 0;
    BBox bbox;
    int overlap_above_px = 0;
    int overlap_below_px = 0;

    bool operator==(const Tile&) const = default;
};

struct TilePlan {
    std::string page_id;
    TilingMode mode = TilingMode::Segments;
    int width_px = 0;
    int height_px = 0;
    int gutter_x = 0;
    int segments_per_column = 1;
    double overlap_fraction = 0.0;
    /// Column-major: column 0 top to bottom, then column 1.
    std::vector<Tile> tiles;

    bool operator==(const TilePlan&) const = default;
};

/// Round half up, the rounding used for all tile geometry.
inline long round_half_up(double v) { return static_cast<long>(std::floor(v + 0.5)); }

struct ColumnSplit {
    int gutter_x = 0;
    BBox left;
    BBox right;
};

inline ColumnSplit split_columns(int width_px, int height_px, double gutter_ratio = 0.5) {
    if (gutter_ratio < 0.25 || gutter_ratio > 0.75) {
        throw Error(ErrorCode::InvalidArgument, "gutter_ratio must lie in [0.25, 0.75]");
    }
    if (width_px < 2 || height_px < 2) throw Error(ErrorCode::InvalidArgument, "page must be at least 2x2 pixels");
    const int gutter = static_cast<int>(round_half_up(width_px * gutter_ratio));
    return ColumnSplit{gutter, BBox{0, 0, gutter, height_px}, BBox{gutter, 0, width_px, height_px}};
}

inline ColumnSplit split_columns(const PageImage& page, double gutter_ratio = 0.5) {
    return split_columns(page.width(), page.height(), gutter_ratio);
}

namespace tiler_detail {

struct Span {
    int start;
    int end;
};

// Vertical segments of one column of height H: h = ceil(H / (n - (n-1)·o)),
// stride = round(h·(1-o)), start_i = i·stride, end_i = min(start_i + h, H),
// last end = H.
inline std::vector<Span> segment_spans(int height, int n, double o) {
    const double denom = n - (n - 1) * o;
    const int h = static_cast<int>(std::ceil(static_cast<double>(height) / denom - 1e-9));
    if (h < 8) {
        throw Error(ErrorCode::DegenerateGeometry,
                    "segment height " + std::to_string(h) + " px is below the 8 px minimum");
    }
    const int stride = static_cast<int>(round_half_up(h * (1.0 - o)));
    std::vector<Span> spans;
    for (int i = 0; i < n; ++i) {
        const int start = std::min(i * stride, height - 1);
        int end = std::min(start + h, height);
        if (i == n - 1) end = height;
        spans.push_back({std::max(start, 0), end});
    }
    return spans;
}

} // namespace tiler_detail

/// Pure function of page dimensions and tiling parameters.
inline TilePlan plan_tiles(std::string page_id, int width_px, int height_px, TilingMode mode, int segments_per_column,
                           double overlap_fraction, double gutter_ratio = 0.5) {
    if (segments_per_column < 1) throw Error(ErrorCode::InvalidArgument, "segments_per_column must be >= 1");
    if (!(overlap_fraction >= 0.0 && overlap_fraction <= 0.5)) {
        throw Error(ErrorCode::InvalidArgument, "overlap_fraction must lie in [0, 0.5]");
    }
    TilePlan plan;
    plan.page_id = std::move(page_id);
    plan.mode = mode;
    plan.width_px = width_px;
    plan.height_px = height_px;
    const auto split = split_columns(width_px, height_px, gutter_ratio);
    plan.gutter_x = split.gutter_x;

    if (mode == TilingMode::WholePage) {
        plan.segments_per_column = 1;
        plan.overlap_fraction = 0.0;
        plan.tiles.push_back(Tile{0, 0, BBox{0, 0, width_px, height_px}, 0, 0});
        return plan;
    }
    const int n = mode == TilingMode::TwoColumns ? 1 : segments_per_column;
    plan.segments_per_column = n;
    plan.overlap_fraction = mode == TilingMode::TwoColumns ? 0.0 : overlap_fraction;
    const auto spans = tiler_detail::segment_spans(height_px, n, plan.overlap_fraction);
    for (int c = 0; c < 2; ++c) {
        const BBox& col = c == 0 ? split.left : split.right;
        for (int s = 0; s < n; ++s) {
            Tile t;
            t.column_index = c;
            t.segment_index = s;
            t.bbox = BBox{col.x0, spans[s].start, col.x1, spans[s].end};
            if (s > 0) t.overlap_above_px = std::max(0, spans[s - 1].end - spans[s].start);
            if (s + 1 < n) t.overlap_below_px = std::max(0, spans[s].end - spans[s + 1].start);
            plan.tiles.push_back(t);
        }
    }
    return plan;
}

inline TilePlan plan_tiles(const PageImage& page, TilingMode mode, int segments_per_column, double overlap_fraction,
                           double gutter_ratio = 0.5) {
    return plan_tiles(page.page_id, page.width(), page.height(), mode, segments_per_column, overlap_fraction,
                      gutter_ratio);
}

/// `{page}_{c}{s}`, the tile's file stem.
inline std::string tile_label(std::string_view page_id, const Tile& t) {
    return std::string(page_id) + "_" + std::to_string(t.column_index) + std::to_string(t.segment_index);
}

struct TileImage {
    cv::Mat raster;
    Bytes png;

    std::string base64() const { return base64_encode(png); }
};

inline TileImage crop(const PageImage& page, const Tile& tile) {
    const BBox& b = tile.bbox;
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > page.width() || b.y1 > page.height() || b.x0 >= b.x1 || b.y0 >= b.y1) {
        throw Error(ErrorCode::OutOfBounds, "tile (" + std::to_string(b.x0) + "," + std::to_string(b.y0) + ")-(" +
                                                std::to_string(b.x1) + "," + std::to_string(b.y1) +
                                                ") lies outside the page or is empty");
    }
    cv::Mat roi = page.pixels(cv::Rect(b.x0, b.y0, b.width(), b.height())).clone();
    Bytes png = encode_png(roi);
    return TileImage{std::move(roi), std::move(png)};
}

inline void to_json(nlohmann::json& j, const BBox& b) { j = nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}); }
inline void from_json(const nlohmann::json& j, BBox& b) {
    b = BBox{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

inline void to_json(nlohmann::json& j, const Tile& t) {
    j = nlohmann::json{{"column_index", t.column_index},
                       {"segment_index", t.segment_index},
                       {"bbox", t.bbox},
                       {"overlap_above_px", t.overlap_above_px},
                       {"overlap_below_px", t.overlap_below_px}};
}
inline void from_json(const nlohmann::json& j, Tile& t) {
    t.column_index = j.at("column_index").get<int>();
    t.segment_index = j.at("segment_index").get<int>();
    t.bbox = j.at("bbox").get<BBox>();
    t.overlap_above_px = j.value("overlap_above_px", 0);
    t.overlap_below_px = j.value("overlap_below_px", 0);
}

inline void to_json(nlohmann::json& j, const TilePlan& p) {
    j = nlohmann::json{{"page_id", p.page_id},
                       {"mode", mode_name(p.mode)},
                       {"width_px", p.width_px},
                       {"height_px", p.height_px},
                       {"gutter_x", p.gutter_x},
                       {"segments_per_column", p.segments_per_column},
                       {"overlap_fraction", p.overlap_fraction},
                       {"tiles", p.tiles}};
}
inline void from_json(const nlohmann::json& j, TilePlan& p) {
    p.page_id = j.at("page_id").get<std::string>();
    p.mode = parse_mode_name(j.at("mode").get<std::string>());
    p.width_px = j.at("width_px").get<int>();
    p.height_px = j.at("height_px").get<int>();
    p.gutter_x = j.at("gutter_x").get<int>();
    p.segments_per_column = j.at("segments_per_column").get<int>();
    p.overlap_fraction = j.at("overlap_fraction").get<double>();
    p.tiles = j.at("tiles").get<std::vector<Tile>>();
}

} // namespace fraktur
