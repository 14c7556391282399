#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "support.hpp"

using namespace fraktur;

namespace {

std::vector<std::pair<int, int>> column_spans(const TilePlan& plan, int column) {
    std::vector<std::pair<int, int>> out;
    for (const auto& t : plan.tiles) {
        if (t.column_index == column) out.emplace_back(t.bbox.y0, t.bbox.y1);
    }
    return out;
}

int segment_height(int height, int n, double o) {
    return static_cast<int>(std::ceil(height / (n - (n - 1) * o) - 1e-9));
}

} // namespace

TEST(Tiler, WorkedCaseStarts) {
    const auto plan = plan_tiles("p", 1200, 2400, TilingMode::Segments, 4, 0.25);
    ASSERT_EQ(plan.tiles.size(), 8u);
    std::vector<int> starts;
    for (const auto& [s, e] : column_spans(plan, 0)) starts.push_back(s);
    EXPECT_EQ(starts, (std::vector<int>{0, 554, 1108, 1662}));
    EXPECT_EQ(plan.tiles[3].bbox.y1, 2400);
    EXPECT_EQ(plan.gutter_x, 600);
    EXPECT_EQ(plan.tiles[4].bbox.x0, 600);
    EXPECT_EQ(plan.tiles[4].column_index, 1);
    EXPECT_EQ(plan.tiles[1].overlap_above_px, 185);
    EXPECT_EQ(plan.tiles[0].overlap_below_px, 185);
}

TEST(Tiler, ModesAndTileCounts) {
    const auto whole = plan_tiles("p", 800, 1000, TilingMode::WholePage, 4, 0.25);
    ASSERT_EQ(whole.tiles.size(), 1u);
    EXPECT_EQ(whole.tiles[0].bbox, (BBox{0, 0, 800, 1000}));
    const auto columns = plan_tiles("p", 800, 1000, TilingMode::TwoColumns, 4, 0.25);
    ASSERT_EQ(columns.tiles.size(), 2u);
    EXPECT_EQ(columns.tiles[0].bbox, (BBox{0, 0, 400, 1000}));
    EXPECT_EQ(columns.tiles[1].bbox, (BBox{400, 0, 800, 1000}));
}

TEST(Tiler, SingleSegmentEqualsColumn) {
    const auto plan = plan_tiles("p", 801, 999, TilingMode::Segments, 1, 0.0);
    ASSERT_EQ(plan.tiles.size(), 2u);
    EXPECT_EQ(plan.tiles[0].bbox, (BBox{0, 0, 401, 999}));
    EXPECT_EQ(plan.tiles[1].bbox, (BBox{401, 0, 801, 999}));
}

TEST(Tiler, InvalidParameters) {
    EXPECT_THROW(plan_tiles("p", 100, 100, TilingMode::Segments, 0, 0.1), Error);
    EXPECT_THROW(plan_tiles("p", 100, 100, TilingMode::Segments, 2, 0.6), Error);
    EXPECT_THROW(plan_tiles("p", 100, 100, TilingMode::Segments, 2, 0.1, 0.9), Error);
    try {
        plan_tiles("p", 100, 20, TilingMode::Segments, 6, 0.0);
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::DegenerateGeometry);
    }
}

TEST(Tiler, RandomPlansCoverAndOverlap) {
    std::mt19937 rng(2024);
    std::uniform_int_distribution<int> height(100, 5000);
    std::uniform_int_distribution<int> segments(1, 6);
    std::uniform_real_distribution<double> overlap(0.0, 0.5);
    for (int round = 0; round < 1000; ++round) {
        const int H = height(rng), n = segments(rng);
        const double o = overlap(rng);
        const auto plan = plan_tiles("p", 600, H, TilingMode::Segments, n, o);
        const int h = segment_height(H, n, o);
        for (int c = 0; c < 2; ++c) {
            const auto spans = column_spans(plan, c);
            ASSERT_EQ(spans.size(), static_cast<std::size_t>(n));
            ASSERT_TRUE(oracle::covers(spans, H)) << H << " " << n << " " << o;
            for (std::size_t s = 0; s + 1 < spans.size(); ++s) {
                const int shared = oracle::shared_rows(spans[s], spans[s + 1]);
                ASSERT_GE(shared, static_cast<int>(std::floor(o * h)) - 1) << H << " " << n << " " << o;
                ASSERT_EQ(shared, plan.tiles[static_cast<std::size_t>(c * n) + s + 1].overlap_above_px);
            }
        }
        ASSERT_EQ(plan, plan_tiles("p", 600, H, TilingMode::Segments, n, o));
    }
}

TEST(Tiler, PlanJsonRoundTrip) {
    const auto plan = plan_tiles("page7", 1200, 2400, TilingMode::Segments, 3, 0.2);
    EXPECT_EQ(nlohmann::json(plan).get<TilePlan>(), plan);
}

TEST(Tiler, Labels) {
    const auto plan = plan_tiles("p12", 1200, 2400, TilingMode::Segments, 4, 0.25);
    EXPECT_EQ(tile_label(plan.page_id, plan.tiles[0]), "p12_00");
    EXPECT_EQ(tile_label(plan.page_id, plan.tiles[7]), "p12_13");
}

TEST(Crop, FullPageTileIsIdentity) {
    support::TempDir dir;
    const auto page = load_page_image(support::write_scan(dir / "p.png", 300, 400), "p");
    const auto plan = plan_tiles(page, TilingMode::WholePage, 1, 0.0);
    const auto tile = crop(page, plan.tiles[0]);
    EXPECT_EQ(cv::countNonZero(tile.raster != page.pixels), 0);
    EXPECT_EQ(cv::countNonZero(decode_image(tile.png) != page.pixels), 0);
}

TEST(Crop, OverlapBandsShareRows) {
    support::TempDir dir;
    const auto page = load_page_image(support::write_scan(dir / "p.png", 1200, 2400), "p");
    const auto plan = plan_tiles(page, TilingMode::Segments, 4, 0.25);
    const auto& upper = plan.tiles[0];
    const auto& lower = plan.tiles[1];
    ASSERT_GE(upper.overlap_below_px, 184);
    const auto a = crop(page, upper), b = crop(page, lower);
    const int band = upper.overlap_below_px;
    const cv::Mat tail = a.raster.rowRange(a.raster.rows - band, a.raster.rows);
    const cv::Mat head = b.raster.rowRange(0, band);
    EXPECT_EQ(cv::countNonZero(tail != head), 0);
}

TEST(Crop, OutOfBounds) {
    support::TempDir dir;
    const auto page = load_page_image(support::write_scan(dir / "p.png", 100, 100), "p");
    Tile t;
    t.bbox = BBox{0, 50, 100, 101};
    try {
        crop(page, t);
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::OutOfBounds);
    }
}
