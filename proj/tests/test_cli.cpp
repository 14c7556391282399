#include <gtest/gtest.h>

#include "support.hpp"

using namespace fraktur;
namespace fs = std::filesystem;

namespace {

constexpr int kWidth = 600;
constexpr int kHeight = 1200;

struct Cli {
    support::TempDir dir;
    fs::path fixtures = dir / "fixtures";
    fs::path audit = dir / "audit.log";

    std::map<std::string, std::string> env() const {
        return {{"FRAKTUR_STORE", (dir / "jobs").string()},
                {"FRAKTUR_FIXTURES", fixtures.string()},
                {"FRAKTUR_MOCK_AUDIT", audit.string()},
                {"FRAKTUR_MAX_IN_FLIGHT", "1"}};
    }

    support::RunResult operator()(std::vector<std::string> args, std::map<std::string, std::string> extra = {}) const {
        args.insert(args.begin(), FRAKTUR_CLI_PATH);
        auto e = env();
        e.merge(extra);
        return support::run(args, e, dir.path());
    }

    fs::path page(const std::string& id, const TeiDocument& doc, unsigned seed) const {
        const auto plan = plan_tiles(id, kWidth, kHeight, TilingMode::Segments, 4, 0.25);
        support::write_replies(fixtures, support::script_tiles(plan, doc));
        return support::write_scan(dir / "in" / (id + ".png"), kWidth, kHeight, seed);
    }
};

nlohmann::json parse(const support::RunResult& r) { return nlohmann::json::parse(r.out); }

} // namespace

TEST(Cli, TileWritesPngsAndPlan) {
    Cli cli;
    const auto scan = support::write_scan(cli.dir / "p12.png", kWidth, kHeight);
    const auto r = cli({"tile", scan.string(), "--out", (cli.dir / "tiles").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse(r).at("tiles").size(), 8u);
    std::size_t pngs = 0;
    for (const auto& e : fs::directory_iterator(cli.dir / "tiles")) pngs += e.path().extension() == ".png";
    EXPECT_EQ(pngs, 8u);
    EXPECT_TRUE(fs::exists(cli.dir / "tiles" / "p12_13.png"));
    const auto plan = nlohmann::json::parse(support::read_file(cli.dir / "tiles" / "plan.json")).get<TilePlan>();
    EXPECT_EQ(plan.tiles.size(), 8u);
    EXPECT_EQ(plan.height_px, kHeight);
}

TEST(Cli, JobFromCreateToExport) {
    Cli cli;
    const auto one = support::tei_page(24, 3);
    const auto two = support::tei_page(16, 4);
    const auto s1 = cli.page("page1", one, 1);
    const auto s2 = cli.page("page2", two, 2);

    auto r = cli({"create", s1.string(), s2.string(), "--job", "run"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse(r).at("pages").size(), 2u);
    r = cli({"ocr", "run"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse(r).at("pages")[0].at("state"), "merging");
    r = cli({"merge", "run"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse(r).at("pages")[1].at("state"), "recognized");

    const fs::path refs = cli.dir / "refs";
    support::write_file(refs / "page1.xml", serialize_tei(one));
    support::write_file(refs / "page2.xml", serialize_tei(two));
    r = cli({"eval", "run", "--reference", refs.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse(r).at("references"), 2);
    EXPECT_DOUBLE_EQ(parse(r).at("perfect_rate").get<double>(), 1.0);
    EXPECT_EQ(parse(r).at("total_entries"), 40);
    r = cli({"report", "run"});
    ASSERT_EQ(r.code, 0) << r.err;
    const fs::path report_dir = parse(r).at("report_dir").get<std::string>();
    EXPECT_TRUE(fs::exists(report_dir / "report.html"));
    EXPECT_TRUE(fs::exists(report_dir / "report_pages.csv"));

    auto fixed = one;
    fixed.entries[0].orth = "Kaddakas";
    support::write_file(cli.dir / "fixed.xml", serialize_tei(fixed));
    r = cli({"correct", "run", "--page", "1", "--file", (cli.dir / "fixed.xml").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse(r).at("state"), "in_review");
    r = cli({"approve", "run", "--page", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = cli({"approve", "run", "--page", "1"});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("IllegalTransition: ", 0), 0u) << r.err;

    r = cli({"export", "run", "--format", "tei"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto out = parse(r);
    EXPECT_EQ(out.at("included"), (nlohmann::json{1, 2}));
    const auto tei = support::read_file(out.at("path").get<std::string>());
    EXPECT_NE(tei.find("<orth>Kaddakas</orth>"), std::string::npos);
    std::size_t entries = 0;
    for (auto at = tei.find("<entry"); at != std::string::npos; at = tei.find("<entry", at + 1)) ++entries;
    EXPECT_EQ(entries, 40u);
    r = cli({"export", "run"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(parse(r).at("coverage").get<std::string>()));
    EXPECT_EQ(r.err, "");
}

TEST(Cli, FailedPageSetsExitCode) {
    Cli cli;
    const auto scan = cli.page("page1", support::tei_page(8, 9), 1);
    support::write_file(cli.fixtures / "page1_02.json", R"({"body":"<div><entry>"})");
    ASSERT_EQ(cli({"create", scan.string(), "--job", "bad"}).code, 0);
    const auto r = cli({"ocr", "bad"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("page 1 failed: XmlSyntax"), std::string::npos) << r.err;
    EXPECT_EQ(parse(r).at("pages")[0].at("state"), "failed");
}

TEST(Cli, EnrichPivotWritesMapping) {
    Cli cli;
    const auto out = cli.dir / "enrich";
    support::write_file(cli.dir / "gutsclaff.csv", support::kGutsclaffCsv);
    support::write_file(cli.dir / "stahl.csv", support::kStahlCsv);
    support::write_file(cli.dir / "goseken.csv", support::kGosekenCsv);
    support::write_file(cli.dir / "vestring.csv", support::kVestringCsv);
    const auto r = cli({"enrich", "--anchor", (cli.dir / "gutsclaff.csv").string(), "--sources",
                        (cli.dir / "stahl.csv").string(), (cli.dir / "goseken.csv").string(),
                        (cli.dir / "vestring.csv").string(), "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse(r).at("rows"), 4);
    EXPECT_EQ(parse(r).at("status").at("vestring").at("exact").get<int>() >= 1, true);
    const auto mapping = csv::parse(support::read_file(out / "mapping.csv"));
    ASSERT_GE(mapping.size(), 2u);
    const auto& header = mapping[0];
    const auto col = [&](const std::string& name) {
        return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
    };
    ASSERT_LT(col("vestring_headword"), header.size());
    EXPECT_EQ(mapping[1][col("gutsclaff_headword")], "Ubbene");
    EXPECT_EQ(mapping[1][col("stahl_headword")], "Aun");
    EXPECT_EQ(mapping[1][col("goseken_headword")], "õun");
    EXPECT_EQ(mapping[1][col("vestring_headword")], "Oun");
}

TEST(Cli, TriagePercentages) {
    Cli cli;
    std::string text = "id,label\n";
    for (int i = 0; i < 342; ++i) text += std::to_string(i) + "," + (i < 277 ? "correct" : i < 315 ? "minor_edit" : "full_revision") + "\n";
    support::write_file(cli.dir / "triage.csv", text);
    const auto r = cli({"triage", (cli.dir / "triage.csv").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse(r).at("correct_pct"), "81.0");
    EXPECT_EQ(parse(r).at("minor_edit_pct"), "11.1");
    EXPECT_EQ(parse(r).at("full_revision_pct"), "7.9");
}

TEST(Cli, ExitCodes) {
    Cli cli;
    EXPECT_EQ(cli({}).code, 2);
    EXPECT_EQ(cli({"frobnicate"}).code, 2);
    EXPECT_EQ(cli({"export", "run", "--format", "pdf"}).code, 2);
    EXPECT_EQ(cli({"--help"}).code, 0);
    const auto r = cli({"status", "missing"});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("NotFound: ", 0), 0u) << r.err;
    const auto bad = cli({"tile", (cli.dir / "nothing.png").string()});
    EXPECT_EQ(bad.code, 2);
    const auto cfg = cli({"--overlap", "0.9", "create", support::write_scan(cli.dir / "x.png", 100, 200).string()});
    EXPECT_EQ(cfg.code, 1);
    EXPECT_EQ(cfg.err.rfind("InvalidConfig: ", 0), 0u) << cfg.err;
}
