#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fraktur.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fraktur;

namespace {

struct Globals {
    std::string store = "jobs";
    std::string config_file;
    std::map<std::string, std::string> settings;
};

std::vector<std::pair<std::string_view, std::string>> flag_values(const Globals& g, std::string_view prefix = {}) {
    std::vector<std::pair<std::string_view, std::string>> out;
    for (const auto& s : kSettings) {
        if (!s.pointer.starts_with(prefix)) continue;
        if (auto it = g.settings.find(std::string(s.flag)); it != g.settings.end()) out.emplace_back(s.pointer, it->second);
    }
    return out;
}

JobConfig resolve(const Globals& g) {
    std::optional<fs::path> file;
    if (!g.config_file.empty()) file = g.config_file;
    return resolve_config(file, flag_values(g));
}

// Provider settings from the environment and flags apply to every run
// without changing the job's stored configuration.
ProviderFactory run_factory(const Globals& g) {
    return [g](const JobConfig& stored, const fs::path& dir) {
        json doc = stored;
        for (const auto& s : kSettings) {
            if (!s.pointer.starts_with("/provider/")) continue;
            const char* v = std::getenv(std::string(s.env).c_str());
            if (v && *v) apply_override(doc, s.pointer, v);
        }
        for (const auto& [pointer, value] : flag_values(g, "/provider/")) apply_override(doc, pointer, value);
        return default_provider(doc.get<JobConfig>(), dir);
    };
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

std::vector<int> selected_pages(const Job& job, const std::optional<int>& page) {
    if (page) {
        (void)job.page(*page);
        return {*page};
    }
    std::vector<int> out;
    for (const auto& p : job.pages) out.push_back(p.number);
    return out;
}

// Advances the selected pages; failures go to stderr and make the exit code 1.
int advance_pages(JobStore& store, const std::string& job_id, const std::optional<int>& page, PageState until) {
    const Job before = store.load(job_id);
    int rc = 0;
    for (int n : selected_pages(before, page)) {
        const auto& p = before.page(n);
        if (p.state == PageState::Approved || p.state == PageState::InReview) continue;
        if (until == PageState::Merging && p.state == PageState::Recognized) continue;
        store.advance(job_id, n, until);
    }
    const Job after = store.load(job_id);
    json pages = json::array();
    for (int n : selected_pages(after, page)) {
        const auto& p = after.page(n);
        pages.push_back(p);
        if (p.state == PageState::Failed && p.failure) {
            std::cerr << "page " << n << " failed: " << code_name(p.failure->code) << ": " << p.failure->message << '\n';
            rc = 1;
        }
    }
    print({{"job_id", job_id}, {"pages", pages}});
    return rc;
}

PageContent read_content(SchemaId schema, const fs::path& path) {
    return job_detail::parse_content(schema, job_detail::read_file(path), path.extension().string());
}

std::pair<std::string, int> parse_bind(const std::string& bind) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "bind address must be host:port");
    try {
        return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, "bad port in '" + bind + "'");
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dictionary scan recognition pipeline"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--store", g.store, "job store directory")->envname("FRAKTUR_STORE")->capture_default_str();
    app.add_option("--config", g.config_file, "JSON configuration file")->envname("FRAKTUR_CONFIG");
    for (const auto& s : kSettings) {
        app.add_option_function<std::string>(
               "--" + std::string(s.flag), [&g, flag = std::string(s.flag)](const std::string& v) { g.settings[flag] = v; },
               std::string(s.help) + " (env " + std::string(s.env) + ")")
            ->group("Settings");
    }

    std::string scan, out_dir, job_id, reference, format = "csv", bind = "127.0.0.1:8080", file, anchor, column = "label";
    std::vector<std::string> scans, sources;
    std::optional<int> page;
    bool llm = false, adjudicate = false, modernize = false;
    double threshold = 0.75;
    std::size_t batch_size = 25;
    std::string prompt_dir = default_prompt_dir().string();

    auto* tile = app.add_subcommand("tile", "cut a scan into tiles and write them with a plan file");
    tile->add_option("scan", scan, "page scan")->required()->check(CLI::ExistingFile);
    tile->add_option("--out", out_dir, "output directory (default: <scan stem>.tiles)");

    auto* create = app.add_subcommand("create", "create a job from page scans");
    create->add_option("scans", scans, "page scans in page order")->required()->check(CLI::ExistingFile);
    create->add_option("--job", job_id, "job id");
    create->add_option("--prompts", prompt_dir, "prompt asset directory")->capture_default_str();

    auto* status = app.add_subcommand("status", "print a job manifest");
    status->add_option("job", job_id)->required();

    auto* ocr = app.add_subcommand("ocr", "tile and recognize pages");
    ocr->add_option("job", job_id)->required();
    ocr->add_option("--page", page, "page number (default: all)");

    auto* merge = app.add_subcommand("merge", "merge recognized tiles into page documents");
    merge->add_option("job", job_id)->required();
    merge->add_option("--page", page, "page number (default: all)");
    merge->add_flag("--llm", llm, "merge with the model instead of the overlap rules");

    auto* eval = app.add_subcommand("eval", "score pages against reference transcriptions");
    eval->add_option("job", job_id)->required();
    eval->add_option("--reference", reference, "directory of <page>.xml|.json|.csv references")
        ->required()
        ->check(CLI::ExistingDirectory);

    auto* report = app.add_subcommand("report", "write the corpus report of a job");
    report->add_option("job", job_id)->required();

    auto* exp = app.add_subcommand("export", "write one file with all exportable pages");
    exp->add_option("job", job_id)->required();
    exp->add_option("--format", format, "csv or tei")->check(CLI::IsMember({"csv", "tei"}))->capture_default_str();

    auto* correct = app.add_subcommand("correct", "replace a page's entries with a corrected file");
    correct->add_option("job", job_id)->required();
    correct->add_option("--page", page, "page number")->required();
    correct->add_option("--file", file, "corrected entries (.xml, .json or .csv)")->required()->check(CLI::ExistingFile);

    auto* approve = app.add_subcommand("approve", "approve a page");
    approve->add_option("job", job_id)->required();
    approve->add_option("--page", page, "page number")->required();

    auto* enrich_cmd = app.add_subcommand("enrich", "map entries across source dictionaries and add modern forms");
    enrich_cmd->add_option("--anchor", anchor, "anchor source CSV")->required()->check(CLI::ExistingFile);
    enrich_cmd->add_option("--sources", sources, "other source CSVs")->required()->check(CLI::ExistingFile);
    enrich_cmd->add_option("--threshold", threshold, "fuzzy key threshold")->capture_default_str();
    enrich_cmd->add_flag("--adjudicate", adjudicate, "let the model decide ambiguous matches");
    enrich_cmd->add_flag("--modernize", modernize, "add modern forms and comments with the model");
    enrich_cmd->add_option("--batch-size", batch_size, "rows per model request")->capture_default_str();
    enrich_cmd->add_option("--out", out_dir, "output directory")->required();
    enrich_cmd->add_option("--prompts", prompt_dir, "prompt asset directory")->capture_default_str();

    auto* triage = app.add_subcommand("triage", "percentages of triage labels in a CSV column");
    triage->add_option("file", file, "CSV with a label column")->required()->check(CLI::ExistingFile);
    triage->add_option("--column", column, "label column")->capture_default_str();

    auto* serve = app.add_subcommand("serve", "serve the job store over HTTP");
    serve->add_option("--bind", bind, "host:port")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : 2;
    }

    try {
        JobStore store(g.store, run_factory(g));

        if (*tile) {
            const fs::path path = scan;
            const auto cfg = resolve(g);
            const auto image = load_page_image(path, path.stem().string());
            const auto& t = cfg.tiling;
            const auto plan = plan_tiles(image, t.mode, t.segments, t.overlap, t.gutter_ratio);
            const fs::path dir = out_dir.empty() ? fs::path(path.stem().string() + ".tiles") : fs::path(out_dir);
            fs::create_directories(dir);
            json files = json::array();
            for (const auto& tl : plan.tiles) {
                const auto img = crop(image, tl);
                const auto name = tile_label(plan.page_id, tl) + ".png";
                job_detail::write_atomic(dir / name, std::string_view(reinterpret_cast<const char*>(img.png.data()), img.png.size()));
                files.push_back((dir / name).string());
            }
            job_detail::write_atomic(dir / "plan.json", json(plan).dump(2) + "\n");
            print({{"plan", (dir / "plan.json").string()}, {"tiles", files}});
        } else if (*create) {
            std::vector<fs::path> paths(scans.begin(), scans.end());
            std::optional<std::string> id;
            if (!job_id.empty()) id = job_id;
            print(store.create_job(paths, resolve(g), id, prompt_dir));
        } else if (*status) {
            print(store.load(job_id));
        } else if (*ocr) {
            return advance_pages(store, job_id, page, PageState::Merging);
        } else if (*merge) {
            store.set_merge_llm(job_id, llm);
            return advance_pages(store, job_id, page, PageState::Recognized);
        } else if (*eval) {
            const auto imported = store.import_references(job_id, reference);
            auto corpus = store.report(job_id);
            json out = corpus;
            out["references"] = imported;
            out["report_dir"] = (store.job_dir(job_id) / "eval").string();
            print(out);
        } else if (*report) {
            json out = store.report(job_id);
            out["report_dir"] = (store.job_dir(job_id) / "eval").string();
            print(out);
        } else if (*exp) {
            const auto r = store.export_unified(job_id, format);
            json excluded = json::array();
            for (const auto& [n, s] : r.excluded) excluded.push_back({{"page", n}, {"state", state_name(s)}});
            print({{"path", r.path.string()},
                   {"coverage", r.coverage_path ? json(r.coverage_path->string()) : json(nullptr)},
                   {"included", r.included},
                   {"excluded", excluded},
                   {"banner", r.banner}});
        } else if (*correct) {
            const Job job = store.load(job_id);
            store.correct(job_id, *page, read_content(job.config.schema, file));
            print(store.load(job_id).page(*page));
        } else if (*approve) {
            store.approve(job_id, *page);
            print(store.load(job_id).page(*page));
        } else if (*enrich_cmd) {
            auto load = [](const std::string& p) {
                const fs::path path = p;
                return SourceRows{path.stem().string(), load_source_csv(job_detail::read_file(path), path.stem().string())};
            };
            const auto anchors = load(anchor);
            std::vector<SourceRows> others;
            for (const auto& s : sources) others.push_back(load(s));
            const fs::path dir = out_dir;
            fs::create_directories(dir);

            std::unique_ptr<Provider> provider;
            std::unique_ptr<UsageLedger> ledger;
            std::unique_ptr<Gateway> gateway;
            JobConfig cfg;
            if (adjudicate || modernize) {
                cfg = resolve(g);
                provider = default_provider(cfg, dir);
                ledger = std::make_unique<UsageLedger>(dir / "ledger.jsonl");
                GatewayOptions options = cfg.gateway_options();
                options.response_dir = dir / "raw";
                gateway = std::make_unique<Gateway>(*provider, *ledger, options);
            }
            const PromptLibrary prompts(prompt_dir);
            std::optional<PromptAsset> adjudicate_prompt;
            if (adjudicate) adjudicate_prompt = prompts.load("adjudicate.v1");
            const auto rows = map_sources(anchors.rows, others, threshold, adjudicate ? gateway.get() : nullptr,
                                          adjudicate_prompt ? &*adjudicate_prompt : nullptr, cfg.model);
            job_detail::write_atomic(dir / "mapping.csv", mapping_csv(rows));
            json summary{{"mapping", (dir / "mapping.csv").string()}, {"rows", rows.size()}};
            std::map<std::string, std::map<std::string, int>> counts;
            for (const auto& r : rows) {
                for (const auto& w : r.warnings) std::cerr << r.anchor.headword << ": " << w << '\n';
                for (const auto& [src, cell] : r.matches) ++counts[src][std::string(status_name(cell.status))];
            }
            summary["status"] = counts;
            if (modernize) {
                EnrichOptions options;
                options.batch_size = batch_size;
                options.checkpoint = dir / "enrich.checkpoint.jsonl";
                options.params = cfg.model;
                const auto enriched = enrich(rows, *gateway, prompts.load("enrich.v1"), options);
                job_detail::write_atomic(dir / "enrichment.csv", enrichment_csv(enriched));
                summary["enrichment"] = (dir / "enrichment.csv").string();
                summary["parse_failed"] = std::count_if(enriched.begin(), enriched.end(),
                                                        [](const EnrichmentRow& r) { return r.comment == kParseFailed; });
            }
            print(summary);
        } else if (*triage) {
            const auto rows = csv::parse(job_detail::read_file(file));
            if (rows.empty()) throw Error(ErrorCode::EmptyInput, file + " is empty");
            const auto it = std::find(rows.front().begin(), rows.front().end(), column);
            if (it == rows.front().end()) throw Error(ErrorCode::InvalidArgument, file + " has no column '" + column + "'");
            const auto c = static_cast<std::size_t>(it - rows.front().begin());
            std::vector<TriageLabel> labels;
            for (std::size_t r = 1; r < rows.size(); ++r) {
                if (c < rows[r].size() && !text::trim_view(rows[r][c]).empty()) labels.push_back(parse_triage(rows[r][c]));
            }
            print(triage_json(triage_stats(labels)));
        } else if (*serve) {
            const auto [host, port] = parse_bind(bind);
            ApiServer server(store);
            const int bound = server.bind(host, port);
            if (bound < 0) throw Error(ErrorCode::IoError, "cannot bind " + bind);
            std::cout << json{{"listening", host + ":" + std::to_string(bound)}}.dump() << std::endl;
            if (!server.serve()) throw Error(ErrorCode::IoError, "server stopped with an error");
        }
    } catch (const Error& err) {
        std::cerr << code_name(err.code()) << ": " << err.what() << '\n';
        for (const auto& d : err.details()) std::cerr << "  " << d << '\n';
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "IoError: " << err.what() << '\n';
        return 1;
    }
    return 0;
}
