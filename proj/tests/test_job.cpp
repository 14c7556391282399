#include <gtest/gtest.h>

#include "support.hpp"

using namespace fraktur;
namespace fs = std::filesystem;

namespace {

constexpr int kWidth = 600;
constexpr int kHeight = 1200;

struct Fixture {
    support::TempDir dir;
    fs::path fixtures = dir / "fixtures";
    fs::path audit = dir / "audit.log";
    JobStore store{dir / "jobs"};

    JobConfig config() const {
        JobConfig c;
        c.provider.fixtures = fixtures.string();
        c.provider.audit_log = audit.string();
        c.gateway.max_in_flight = 1;
        c.gateway.backoff_ms = 0;
        c.prices.models["mock-vision"] = ModelPrice{parse_money("3"), parse_money("15")};
        return c;
    }

    // Scans plus scripted replies reassembling to `pages[i]`.
    std::vector<fs::path> scans(const std::vector<TeiDocument>& pages, const JobConfig& c) {
        std::vector<fs::path> out;
        for (std::size_t i = 0; i < pages.size(); ++i) {
            const std::string id = "page" + std::to_string(i + 1);
            out.push_back(support::write_scan(dir / "in" / (id + ".png"), kWidth, kHeight, static_cast<unsigned>(i + 1)));
            const auto plan = plan_tiles(id, kWidth, kHeight, c.tiling.mode, c.tiling.segments, c.tiling.overlap);
            support::write_replies(fixtures, support::script_tiles(plan, pages[i]));
        }
        return out;
    }

    std::size_t audited_calls() const {
        const auto log = support::read_file(audit);
        return static_cast<std::size_t>(std::count(log.begin(), log.end(), '\n'));
    }
};

ErrorCode code_of(auto&& f) {
    try {
        f();
    } catch (const Error& err) {
        return err.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::IoError;
}

} // namespace

TEST(Job, PipelineRunsThroughStates) {
    Fixture fx;
    const auto page = support::tei_page(30, 5);
    const auto config = fx.config();
    const auto job = fx.store.create_job(fx.scans({page}, config), config, "j1");
    EXPECT_EQ(job.pages[0].page_id, "page1");
    EXPECT_EQ(fx.store.advance("j1", 1, PageState::Tiled), PageState::Tiled);
    EXPECT_EQ(fx.store.tiles("j1", 1).size(), 8u);
    EXPECT_EQ(fx.store.advance("j1", 1, PageState::Merging), PageState::Merging);
    EXPECT_EQ(fx.audited_calls(), 8u);
    EXPECT_EQ(fx.store.advance("j1", 1), PageState::Recognized);
    EXPECT_EQ(fx.audited_calls(), 8u);
    ASSERT_TRUE(fx.store.merged("j1", 1).has_value());
    EXPECT_EQ(std::get<TeiDocument>(*fx.store.merged("j1", 1)), page);
    EXPECT_TRUE(fs::exists(fx.store.job_dir("j1") / "merged" / "page1.merge.jsonl"));
    EXPECT_EQ(UsageLedger(fx.store.job_dir("j1") / "ledger.jsonl").size(), 8u);
}

TEST(Job, EvaluatesAgainstReferences) {
    Fixture fx;
    const auto page = support::tei_page(30, 5);
    const auto config = fx.config();
    fx.store.create_job(fx.scans({page}, config), config, "j1");
    support::write_file(fx.dir / "refs" / "page1.xml", serialize_tei(page));
    EXPECT_EQ(fx.store.import_references("j1", fx.dir / "refs"), 1u);
    fx.store.advance("j1", 1);
    const auto report = fx.store.report("j1");
    ASSERT_EQ(report.pages.size(), 1u);
    EXPECT_DOUBLE_EQ(report.perfect_rate, 1.0);
    EXPECT_DOUBLE_EQ(report.mean_structural, 1.0);
    EXPECT_EQ(report.methods[0].input_tokens, 8 * 1200);
    EXPECT_EQ(report.methods[0].cost, 8 * (1200 * 3 + 900 * 15));
    EXPECT_TRUE(fs::exists(fx.store.job_dir("j1") / "eval" / "report.html"));
}

TEST(Job, RefusalFailsStageAndRetrySucceeds) {
    Fixture fx;
    const auto page = support::tei_page(16, 6);
    const auto config = fx.config();
    const auto scans = fx.scans({page}, config);
    const auto good = support::read_file(fx.fixtures / "page1_02.json");
    support::write_file(fx.fixtures / "page1_02.json",
                        nlohmann::json{{"body", "I'm sorry, the image is too detailed and contains too much information."}}.dump());
    fx.store.create_job(scans, config, "j1");
    EXPECT_EQ(fx.store.advance("j1", 1), PageState::Failed);
    auto record = fx.store.load("j1").page(1);
    ASSERT_TRUE(record.failure.has_value());
    EXPECT_EQ(record.failure->stage, PageState::Recognizing);
    EXPECT_EQ(record.failure->code, ErrorCode::RefusalDetected);

    // The refusal is a stored response; a changed model gives new request ids.
    support::write_file(fx.fixtures / "page1_02.json", good);
    ModelParams params;
    params.model_id = "mock-vision-2";
    fx.store.set_model("j1", params);
    EXPECT_EQ(fx.store.advance("j1", 1), PageState::Recognized);
    EXPECT_EQ(fx.store.load("j1").page(1).retry_count, 1);
}

TEST(Job, MalformedReplyFailsWithTileLabel) {
    Fixture fx;
    auto config = fx.config();
    config.retry_limit = 0;
    const auto scans = fx.scans({support::tei_page(16, 6)}, config);
    support::write_file(fx.fixtures / "page1_11.json", R"({"body": "<div><entry>"})");
    fx.store.create_job(scans, config, "j1");
    EXPECT_EQ(fx.store.advance("j1", 1), PageState::Failed);
    const auto record = fx.store.load("j1").page(1);
    EXPECT_EQ(record.failure->code, ErrorCode::XmlSyntax);
    EXPECT_NE(record.failure->message.find("page1_11"), std::string::npos);
    EXPECT_EQ(code_of([&] { fx.store.advance("j1", 1); }), ErrorCode::IllegalTransition);
}

TEST(Job, ReviewTransitions) {
    Fixture fx;
    const auto page = support::tei_page(12, 2);
    const auto config = fx.config();
    fx.store.create_job(fx.scans({page, page}, config), config, "j1");
    EXPECT_EQ(code_of([&] { fx.store.approve("j1", 1); }), ErrorCode::IllegalTransition);
    fx.store.advance("j1", 1);
    auto fixed = page;
    fixed.entries[0].orth = "parandatud";
    fx.store.correct("j1", 1, fixed);
    EXPECT_EQ(fx.store.load("j1").page(1).state, PageState::InReview);
    EXPECT_EQ(std::get<TeiDocument>(*fx.store.content("j1", 1)).entries[0].orth, "parandatud");
    EXPECT_EQ(code_of([&] { fx.store.correct("j1", 1, std::vector<DictionaryEntry>{}); }), ErrorCode::SchemaMismatch);
    auto broken = page;
    broken.entries[1].id = broken.entries[0].id;
    EXPECT_EQ(code_of([&] { fx.store.correct("j1", 1, broken); }), ErrorCode::ValidationFailed);
    fx.store.approve("j1", 1);
    EXPECT_EQ(code_of([&] { fx.store.approve("j1", 1); }), ErrorCode::IllegalTransition);
    EXPECT_EQ(code_of([&] { fx.store.advance("j1", 1); }), ErrorCode::IllegalTransition);
    EXPECT_EQ(code_of([&] { fx.store.correct("j1", 2, page); }), ErrorCode::IllegalTransition);
}

TEST(Job, ExportIsDeterministicAndReportsCoverage) {
    Fixture fx;
    const auto a = support::tei_page(12, 2), b = support::tei_page(10, 3);
    const auto config = fx.config();
    fx.store.create_job(fx.scans({a, b, a}, config), config, "j1");
    EXPECT_EQ(code_of([&] { fx.store.export_unified("j1", "tei"); }), ErrorCode::NothingToExport);
    fx.store.advance("j1", 1);
    fx.store.advance("j1", 2);
    const auto first = fx.store.export_unified("j1", "tei");
    const auto bytes = support::read_file(first.path);
    EXPECT_EQ(support::read_file(fx.store.export_unified("j1", "tei").path), bytes);
    EXPECT_EQ(first.included, (std::vector<int>{1, 2}));
    ASSERT_EQ(first.excluded.size(), 1u);
    EXPECT_EQ(first.excluded[0].first, 3);
    EXPECT_NE(bytes.find("coverage: 2 of 3 pages exported"), std::string::npos);
    const auto doc = parse_tei_fragment(bytes);
    EXPECT_EQ(doc.entries.size(), 22u);
    EXPECT_EQ(doc.entries[12].id, "p2.e1");

    const auto csv = fx.store.export_unified("j1", "csv");
    const auto entries = csv_to_entries(support::read_file(csv.path));
    EXPECT_EQ(entries.size(), 22u);
    EXPECT_EQ(entries[12].provenance.page, 2);
    EXPECT_NE(support::read_file(*csv.coverage_path).find("3 (pending)"), std::string::npos);
    EXPECT_EQ(code_of([&] { fx.store.export_unified("j1", "pdf"); }), ErrorCode::InvalidArgument);
}

TEST(Job, NineFieldSchema) {
    Fixture fx;
    auto config = fx.config();
    config.schema = SchemaId::NineField;
    config.tiling.mode = TilingMode::TwoColumns;
    const auto scan = support::write_scan(fx.dir / "in" / "helle12.png", kWidth, kHeight);
    support::write_file(fx.fixtures / "helle12_00.txt",
                        R"([{"headword_et":"lahhutaminne","equivalent_de":"Trennung"},{"headword_et":"kôrts"}])");
    support::write_file(fx.fixtures / "helle12_10.txt", R"([{"equivalent_de":"Krug"},{"headword_et":"tubbakat","equivalent_de":"Tabak"}])");
    fx.store.create_job({scan}, config, "h");
    EXPECT_EQ(fx.store.advance("h", 1), PageState::Recognized);
    const auto entries = std::get<std::vector<DictionaryEntry>>(*fx.store.merged("h", 1));
    ASSERT_EQ(entries.size(), 3u);
    EXPECT_EQ(entries[1].headword_et, "kôrts");
    EXPECT_EQ(entries[1].equivalent_de, "Krug");
    EXPECT_EQ(entries[2].provenance.column, 2);
    EXPECT_EQ(entries[2].provenance.order_on_page, 2);
}

TEST(Job, CreateRejectsBadInput) {
    Fixture fx;
    const auto config = fx.config();
    const auto scan = support::write_scan(fx.dir / "in" / "a.png", 100, 100);
    support::write_file(fx.dir / "other" / "a.png", support::read_file(scan));
    EXPECT_EQ(code_of([&] { fx.store.create_job({scan, fx.dir / "other" / "a.png"}, config); }), ErrorCode::InvalidConfig);
    support::write_file(fx.dir / "in" / "bad.png", "not an image");
    EXPECT_EQ(code_of([&] { fx.store.create_job({fx.dir / "in" / "bad.png"}, config); }), ErrorCode::UnreadableScan);
    EXPECT_EQ(code_of([&] { fx.store.create_job({}, config); }), ErrorCode::InvalidConfig);
    EXPECT_EQ(code_of([&] { fx.store.load("../etc"); }), ErrorCode::NotFound);
    fx.store.create_job({scan}, config, "dup");
    EXPECT_EQ(code_of([&] { fx.store.create_job({scan}, config, "dup"); }), ErrorCode::InvalidConfig);
    EXPECT_EQ(fx.store.list(), std::vector<std::string>{"dup"});
}

TEST(Config, PrecedenceOfFileEnvironmentAndFlags) {
    support::TempDir dir;
    support::write_file(dir / "c.json", R"({"tiling": {"segments": 3, "overlap": 0.1}, "source_id": "hupel"})");
    ::setenv("FRAKTUR_SEGMENTS", "5", 1);
    const auto c = resolve_config(dir / "c.json", {{"/tiling/overlap", "0.3"}});
    ::unsetenv("FRAKTUR_SEGMENTS");
    EXPECT_EQ(c.tiling.segments, 5);
    EXPECT_DOUBLE_EQ(c.tiling.overlap, 0.3);
    EXPECT_EQ(c.source_id, "hupel");
    EXPECT_EQ(c.prompts.recognition, "hupel_tei.v1");
    EXPECT_EQ(code_of([&] { resolve_config(std::nullopt, {{"/tiling/overlap", "0.9"}}); }), ErrorCode::InvalidConfig);
    EXPECT_EQ(code_of([&] { resolve_config(std::nullopt, {{"/tiling/segments", "four"}}); }), ErrorCode::InvalidConfig);
}
