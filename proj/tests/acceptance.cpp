// One PASS/FAIL line per acceptance criterion. Exit code 1 when any fails.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"

using namespace fraktur;
namespace fs = std::filesystem;

namespace {

// Thrown by a check to report what went wrong.
struct Failure {
    std::string detail;
};

void require(bool ok, const std::string& detail) {
    if (!ok) throw Failure{detail};
}

template <class T>
std::span<const T> sp(const std::vector<T>& v) {
    return {v.data(), v.size()};
}

std::string fixed(double v, int decimals) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(decimals) << v;
    return out.str();
}

std::string metric_oracles() {
    const auto seqs = oracle::all_sequences(3, 8);
    const oracle::GestaltTable table(seqs, 3, 8);
    std::size_t pairs = 0;
    for (std::size_t x = 0; x < seqs.size(); ++x) {
        const auto lev = oracle::levenshtein_to_all(sp(seqs[x]), 3, 8);
        for (std::size_t y = 0; y < seqs.size(); ++y) {
            const std::size_t total = seqs[x].size() + seqs[y].size();
            const double ratio = total == 0 ? 1.0 : 2.0 * static_cast<double>(table.at(x, y)) / static_cast<double>(total);
            if (edit_distance(seqs[x], seqs[y]) != lev[y] || ro_ratio(seqs[x], seqs[y]) != ratio) {
                throw Failure{"mismatch at pair " + std::to_string(x) + "," + std::to_string(y)};
            }
            ++pairs;
        }
    }
    return std::to_string(pairs) + " pairs";
}

std::string cer_fixtures() {
    const double c = cer("lahbutaminne", "lahhutaminne");
    require(std::abs(c - 0.0833) <= 0.0000334 && std::abs(c - 1.0 / 12.0) <= 1e-9, "lahbutaminne CER " + fixed(c, 12));
    require(cer("ababab", "ab") == 2.0, "ababab CER " + fixed(cer("ababab", "ab"), 6));
    return "CER " + fixed(c, 4) + ", 2.0";
}

std::string method_deltas() {
    const std::vector<MethodRow> rows{{"whole_page", 0.495, 0.507, parse_money("0.370"), 7184},
                                      {"two_columns", 0.572, 0.687, parse_money("0.536"), 13988},
                                      {"segments", 0.647, 0.710, parse_money("1.050"), 57186}};
    const auto csv = methods_csv(rows);
    for (const char* delta : {"+15.6%", "+35.5%", "+45%", "+95%", "+30.7%", "+40.0%", "+184%", "+696%"}) {
        require(csv.find(std::string("(") + delta + ")") != std::string::npos, std::string("missing ") + delta);
    }
    return "8 deltas";
}

std::string tiling() {
    const auto worked = plan_tiles("p", 1200, 2400, TilingMode::Segments, 4, 0.25);
    std::vector<int> starts;
    for (int s = 0; s < 4; ++s) starts.push_back(worked.tiles[static_cast<std::size_t>(s)].bbox.y0);
    require(starts == std::vector<int>{0, 554, 1108, 1662}, "worked case starts differ");
    require(worked.tiles[3].bbox.y1 == 2400, "worked case last end");

    std::mt19937 rng(7);
    std::uniform_int_distribution<int> height(100, 5000);
    std::uniform_int_distribution<int> segments(1, 6);
    std::uniform_real_distribution<double> overlap(0.0, 0.5);
    for (int round = 0; round < 1000; ++round) {
        const int H = height(rng), n = segments(rng);
        const double o = overlap(rng);
        const auto plan = plan_tiles("p", 800, H, TilingMode::Segments, n, o);
        const int h = static_cast<int>(std::ceil(H / (n - (n - 1) * o) - 1e-9));
        const std::string tag = "H=" + std::to_string(H) + " n=" + std::to_string(n) + " o=" + fixed(o, 4);
        for (int c = 0; c < 2; ++c) {
            std::vector<std::pair<int, int>> spans;
            for (const auto& t : plan.tiles) {
                if (t.column_index == c) spans.emplace_back(t.bbox.y0, t.bbox.y1);
            }
            require(spans.size() == static_cast<std::size_t>(n), "segment count " + tag);
            require(oracle::covers(spans, H), "coverage " + tag);
            for (std::size_t s = 0; s + 1 < spans.size(); ++s) {
                require(oracle::shared_rows(spans[s], spans[s + 1]) >= static_cast<int>(std::floor(o * h)) - 1, "overlap " + tag);
            }
        }
    }
    return "1000 plans, worked case {0,554,1108,1662}";
}

FragmentSet<TeiEntry> fragments(const TilePlan& plan, const std::map<std::string, TeiDocument>& replies) {
    FragmentSet<TeiEntry> set{plan.page_id, plan, {}};
    for (const auto& tile : plan.tiles) set.fragments.push_back(fragment_from_tei(tile, replies.at(tile_label(plan.page_id, tile))));
    return set;
}

std::string merge_properties() {
    std::mt19937 rng(123);
    for (int round = 0; round < 500; ++round) {
        const auto page = support::tei_page(1 + rng() % 40, 5000u + static_cast<unsigned>(round), rng() % 4 == 0 ? 1 : 0);
        const int segments = 1 + static_cast<int>(rng() % 5);
        const bool overlap = rng() % 2;
        const auto plan = plan_tiles("p", 1000, 2000, TilingMode::Segments, segments, overlap ? 0.25 : 0.0);
        support::ScriptOptions options;
        options.overlap_duplicates = overlap;
        options.split_at_column = rng() % 3 == 0;
        const auto set = fragments(plan, support::script_tiles(plan, page, options));
        const auto r = merge_fragments(set);
        const std::string tag = "round " + std::to_string(round);

        std::map<std::pair<std::size_t, int>, int> seen;
        for (const auto& d : r.decisions) {
            ++seen[{d.source.fragment, d.source.entry}];
            require(!d.output_index || *d.output_index < r.entries.size(), "output index out of range, " + tag);
        }
        std::size_t inputs = 0;
        for (std::size_t f = 0; f < set.fragments.size(); ++f) {
            const auto& frag = set.fragments[f];
            for (int i = 0; i < static_cast<int>(frag.entries.size()); ++i) {
                require(seen[{f, i}] == 1, "entry not accounted for once, " + tag);
            }
            if (frag.continuation) require(seen[{f, -1}] == 1, "continuation not accounted for, " + tag);
            inputs += frag.entries.size() + (frag.continuation ? 1 : 0);
        }
        require(r.decisions.size() == inputs, "decision count, " + tag);

        if (!overlap) {
            std::vector<std::string> concatenated, merged;
            for (const auto& frag : set.fragments) {
                for (const auto& e : frag.entries) concatenated.push_back(e.orth);
            }
            for (const auto& e : r.entries) merged.push_back(e.orth);
            require(merged == concatenated, "o=0 merge is not concatenation, " + tag);
        }
        if (!options.split_at_column) require(to_document(r) == page, "page not reassembled, " + tag);

        const auto once = to_document(r);
        const auto single = plan_tiles("p", 1000, 2000, TilingMode::WholePage, 1, 0.0);
        const auto again = merge_fragments(FragmentSet<TeiEntry>{"p", single, {fragment_from_tei(single.tiles[0], once)}});
        require(to_document(again) == once, "single fragment changed, " + tag);
    }
    return "500 fragment sets";
}

struct Cli {
    fs::path root;
    fs::path fixtures = root / "fixtures";
    fs::path audit = root / "audit.log";

    support::RunResult operator()(std::vector<std::string> args, std::map<std::string, std::string> extra = {}) const {
        args.insert(args.begin(), FRAKTUR_CLI_PATH);
        std::map<std::string, std::string> env{{"FRAKTUR_STORE", (root / "jobs").string()},
                                               {"FRAKTUR_FIXTURES", fixtures.string()},
                                               {"FRAKTUR_MOCK_AUDIT", audit.string()},
                                               {"FRAKTUR_MAX_IN_FLIGHT", "1"}};
        env.merge(extra);
        return support::run(args, env, root);
    }

    // Scan plus scripted tile replies that reassemble into `doc`.
    fs::path page(const std::string& id, const TeiDocument& doc, unsigned seed) const {
        const auto plan = plan_tiles(id, 800, 1600, TilingMode::Segments, 4, 0.25);
        support::write_replies(fixtures, support::script_tiles(plan, doc));
        return support::write_scan(root / "scans" / (id + ".png"), 800, 1600, seed);
    }
};

nlohmann::json run_ok(const Cli& cli, const std::vector<std::string>& args) {
    const auto r = cli(args);
    require(r.code == 0, args[0] + " exited " + std::to_string(r.code) + ": " + r.err);
    return nlohmann::json::parse(r.out);
}

std::string offline_end_to_end() {
    support::TempDir dir("fraktur-e2e");
    const Cli cli{dir.path()};
    const auto perfect = support::ground_truth_86();
    const auto reference = support::tei_page(100, 41);
    const auto corrupted = support::corrupt(reference, support::spread(41, 100));
    const auto continued = support::tei_page(30, 7, 1);
    const std::vector<fs::path> scans{cli.page("page1", perfect, 1), cli.page("page2", corrupted, 2),
                                      cli.page("page3", continued, 3)};
    const fs::path refs = dir / "references";
    support::write_file(refs / "page1.xml", serialize_tei(perfect));
    support::write_file(refs / "page2.xml", serialize_tei(reference));
    support::write_file(refs / "page3.xml", serialize_tei(continued));

    run_ok(cli, {"create", scans[0].string(), scans[1].string(), scans[2].string(), "--job", "e2e"});
    for (const auto& p : run_ok(cli, {"ocr", "e2e"}).at("pages")) require(p.at("state") == "merging", "ocr left a page unrecognized");
    for (const auto& p : run_ok(cli, {"merge", "e2e"}).at("pages")) require(p.at("state") == "recognized", "merge left a page unmerged");
    const auto report = run_ok(cli, {"eval", "e2e", "--reference", refs.string()});
    require(report.at("references") == 3, "references not imported");
    std::map<std::string, nlohmann::json> pages;
    for (const auto& p : report.at("pages")) pages[p.at("page_id").get<std::string>()] = p;
    require(pages.size() == 3, "report covers " + std::to_string(pages.size()) + " pages");

    const auto& one = pages.at("page1");
    for (const auto& [field, v] : one.at("cer").items()) require(v.get<double>() == 0.0, "page1 CER " + field + " not 0");
    require(one.at("structural_similarity") == 1.0 && one.at("textual_similarity") == 1.0, "page1 similarity below 1");
    require(one.at("perfect_rate") == 1.0, "page1 perfect rate below 1");
    const double rate = pages.at("page2").at("perfect_rate").get<double>();
    require(rate == 0.41, "page2 perfect rate " + fixed(rate, 4));
    require(pages.at("page3").at("perfect_rate") == 1.0, "page3 perfect rate below 1");

    const auto exported = run_ok(cli, {"export", "e2e", "--format", "tei"});
    require(exported.at("included") == nlohmann::json({1, 2, 3}), "export coverage " + exported.at("banner").get<std::string>());
    const auto tei = support::read_file(exported.at("path").get<std::string>());
    std::size_t entries = 0;
    for (auto at = tei.find("<entry "); at != std::string::npos; at = tei.find("<entry ", at + 1)) ++entries;
    require(entries == 216, "exported " + std::to_string(entries) + " entries");
    return "perfect page 0/1.0/1.0, corrupted page " + fixed(rate, 2);
}

std::string triage() {
    std::vector<TriageLabel> labels(277, TriageLabel::Correct);
    labels.insert(labels.end(), 38, TriageLabel::MinorEdit);
    labels.insert(labels.end(), 27, TriageLabel::FullRevision);
    const auto j = triage_json(triage_stats(labels));
    const std::string got = j.at("correct_pct").get<std::string>() + "/" + j.at("minor_edit_pct").get<std::string>() + "/" +
                            j.at("full_revision_pct").get<std::string>();
    require(got == "81.0/11.1/7.9", got);
    return got;
}

std::string crash_safety() {
    const std::vector<std::string> points{"tile:persisted#1",      "tile:persisted#2",      "gateway:stored#1",
                                          "gateway:stored#9",      "gateway:recorded#1",    "gateway:recorded#16",
                                          "recognize:persisted#1", "recognize:persisted#2", "merge:persisted#1",
                                          "merge:persisted#2",     "manifest:written#1",    "manifest:written#4",
                                          "manifest:written#6"};
    const std::vector<TeiDocument> pages{support::tei_page(24, 11), support::tei_page(18, 12)};
    for (const auto& point : points) {
        support::TempDir dir("fraktur-crash");
        const Cli cli{dir.path()};
        const auto one = cli.page("page1", pages[0], 1);
        const auto two = cli.page("page2", pages[1], 2);
        run_ok(cli, {"create", one.string(), two.string(), "--job", "c"});
        bool crashed = false;
        for (const char* stage : {"ocr", "merge"}) {
            const auto r = cli({stage, "c"}, {{"FRAKTUR_CRASH_AT", point}});
            if (r.code != 0) {
                require(r.code == 137, point + ": " + stage + " exited " + std::to_string(r.code) + ": " + r.err);
                crashed = true;
                break;
            }
        }
        require(crashed, point + " never reached");
        run_ok(cli, {"ocr", "c"});
        const auto merged = run_ok(cli, {"merge", "c"});
        const auto status = run_ok(cli, {"status", "c"});
        JobStore store(dir / "jobs");
        for (int n = 1; n <= 2; ++n) {
            const auto i = static_cast<std::size_t>(n - 1);
            require(merged.at("pages")[i].at("state") == "recognized", point + ": resumed page not recognized");
            require(status.at("pages")[i].at("state") == "recognized", point + ": manifest state");
            require(std::get<TeiDocument>(*store.merged("c", n)) == pages[i], point + ": merged page differs");
        }

        std::set<std::string> ids;
        std::istringstream lines(support::read_file(cli.audit));
        std::size_t calls = 0;
        for (std::string line; std::getline(lines, line);) {
            ++calls;
            require(ids.insert(line.substr(0, line.find('\t'))).second, point + ": duplicate provider call " + line);
        }
        require(calls == 16, point + ": " + std::to_string(calls) + " provider calls");
    }
    return std::to_string(points.size()) + " crash points, no duplicate calls";
}

std::string enrichment_pivot() {
    const std::vector<SourceRows> sources{{"stahl", load_source_csv(support::kStahlCsv, "stahl")},
                                          {"goseken", load_source_csv(support::kGosekenCsv, "goseken")},
                                          {"vestring", load_source_csv(support::kVestringCsv, "vestring")}};
    const auto rows = map_sources(load_source_csv(support::kGutsclaffCsv, "gutsclaff"), sources);
    const auto it = std::find_if(rows.begin(), rows.end(), [](const MappingRow& r) { return r.anchor.headword == "Ubbene"; });
    require(it != rows.end(), "no Ubbene row");
    require(normalize_form(it->anchor.equivalent, Lang::De) == "apffel", "pivot key " + normalize_form(it->anchor.equivalent, Lang::De));
    const std::map<std::string, std::string> expected{{"stahl", "Aun"}, {"goseken", "õun"}, {"vestring", "Oun"}};
    for (const auto& [source, cell] : it->matches) {
        require(cell.row && cell.row->headword == expected.at(source) && cell.status == MatchStatus::Exact,
                "Ubbene not linked to " + expected.at(source) + " in " + source);
    }
    return "Ubbene/Apffel -> Aun, õun, Oun";
}

struct Criterion {
    std::string name;
    std::function<std::string()> check;
    double limit_s;
};

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"metric-oracle-equivalence", metric_oracles, 60},
        {"cer-fixtures", cer_fixtures, 1},
        {"method-comparison-deltas", method_deltas, 1},
        {"tiling-properties", tiling, 10},
        {"merge-conservation-idempotence", merge_properties, 30},
        {"offline-end-to-end", offline_end_to_end, 60},
        {"triage-arithmetic", triage, 1},
        {"crash-safety", crash_safety, 30},
        {"enrichment-pivot", enrichment_pivot, 1},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = true;
        try {
            detail = c.check();
        } catch (const Failure& f) {
            ok = false;
            detail = f.detail;
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (ok && secs > c.limit_s) {
            ok = false;
            detail += "; took longer than " + fixed(c.limit_s, 0) + " s";
        }
        failed += !ok;
        std::cout << (ok ? "PASS " : "FAIL ") << c.name << " (" << fixed(secs, 2) << " s): " << detail << std::endl;
    }
    return failed ? 1 : 0;
}
