#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "fraktur/config.hpp"
#include "fraktur/csv.hpp"
#include "fraktur/entry.hpp"
#include "fraktur/error.hpp"
#include "fraktur/evaluator.hpp"
#include "fraktur/gateway.hpp"
#include "fraktur/http_provider.hpp"
#include "fraktur/image.hpp"
#include "fraktur/merger.hpp"
#include "fraktur/payload.hpp"
#include "fraktur/prompts.hpp"
#include "fraktur/tei.hpp"
#include "fraktur/tiler.hpp"
#include "fraktur/usage.hpp"

namespace fraktur {

enum class PageState { Pending, Tiled, Recognizing, Merging, Recognized, InReview, Approved, Failed };

inline std::string_view state_name(PageState s) {
    switch (s) {
    case PageState::Pending: return "pending";
    case PageState::Tiled: return "tiled";
    case PageState::Recognizing: return "recognizing";
    case PageState::Merging: return "merging";
    case PageState::Recognized: return "recognized";
    case PageState::InReview: return "in_review";
    case PageState::Approved: return "approved";
    case PageState::Failed: return "failed";
    }
    return "failed";
}

inline PageState parse_state(std::string_view s) {
    for (auto st : {PageState::Pending, PageState::Tiled, PageState::Recognizing, PageState::Merging,
                    PageState::Recognized, PageState::InReview, PageState::Approved, PageState::Failed}) {
        if (state_name(st) == s) return st;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown page state '" + std::string(s) + "'");
}

struct StageFailure {
    /// State in which the failing stage ran: Pending (tiling), Recognizing
    /// or Merging.
    PageState stage = PageState::Pending;
    ErrorCode code = ErrorCode::IoError;
    std::string message;
};

struct PageRecord {
    int number = 1;
    std::string file;
    std::string page_id;
    PageState state = PageState::Pending;
    int retry_count = 0;
    std::optional<StageFailure> failure;
};

struct Job {
    std::string job_id;
    JobConfig config;
    std::string created;
    std::string updated;
    std::vector<PageRecord> pages;

    const PageRecord& page(int number) const {
        for (const auto& p : pages) {
            if (p.number == number) return p;
        }
        throw Error(ErrorCode::NotFound, "job " + job_id + " has no page " + std::to_string(number));
    }
    PageRecord& page(int number) { return const_cast<PageRecord&>(std::as_const(*this).page(number)); }
};

inline void to_json(nlohmann::json& j, const PageRecord& p) {
    j = nlohmann::json{{"number", p.number},
                       {"file", p.file},
                       {"page_id", p.page_id},
                       {"state", state_name(p.state)},
                       {"retry_count", p.retry_count},
                       {"failure", nullptr}};
    if (p.failure) {
        j["failure"] = {{"stage", state_name(p.failure->stage)},
                        {"code", code_name(p.failure->code)},
                        {"message", p.failure->message}};
    }
}

namespace job_detail {

inline ErrorCode parse_code(std::string_view name) {
    for (int c = 0; c <= static_cast<int>(ErrorCode::IoError); ++c) {
        if (code_name(static_cast<ErrorCode>(c)) == name) return static_cast<ErrorCode>(c);
    }
    return ErrorCode::IoError;
}

} // namespace job_detail

inline void from_json(const nlohmann::json& j, PageRecord& p) {
    p.number = j.at("number").get<int>();
    p.file = j.at("file").get<std::string>();
    p.page_id = j.at("page_id").get<std::string>();
    p.state = parse_state(j.at("state").get<std::string>());
    p.retry_count = j.value("retry_count", 0);
    p.failure.reset();
    if (const auto f = j.find("failure"); f != j.end() && f->is_object()) {
        p.failure = StageFailure{parse_state(f->at("stage").get<std::string>()),
                                 job_detail::parse_code(f->at("code").get<std::string>()),
                                 f->at("message").get<std::string>()};
    }
}

inline void to_json(nlohmann::json& j, const Job& job) {
    j = nlohmann::json{{"job_id", job.job_id},
                       {"created", job.created},
                       {"updated", job.updated},
                       {"config", job.config},
                       {"pages", job.pages}};
}

inline void from_json(const nlohmann::json& j, Job& job) {
    job.job_id = j.at("job_id").get<std::string>();
    job.created = j.value("created", std::string());
    job.updated = j.value("updated", std::string());
    job.config = j.at("config").get<JobConfig>();
    job.pages = j.at("pages").get<std::vector<PageRecord>>();
}

/// Test hook: FRAKTUR_CRASH_AT=<point> or <point>#<k> ends the process
/// abruptly at the k-th (default first) pass through `point`.
inline void crash_point(std::string_view point) {
    static const std::string setting = [] {
        const char* v = std::getenv("FRAKTUR_CRASH_AT");
        return std::string(v ? v : "");
    }();
    if (setting.empty()) return;
    static std::mutex m;
    static std::map<std::string, int, std::less<>> seen;
    std::string name = setting;
    int nth = 1;
    if (const auto hash = setting.find('#'); hash != std::string::npos) {
        name = setting.substr(0, hash);
        nth = std::atoi(setting.c_str() + hash + 1);
    }
    if (name != point) return;
    std::lock_guard lock(m);
    if (++seen[name] == nth) std::_Exit(137);
}

namespace job_detail {

inline std::string now_iso() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Bytes read_bytes(const std::filesystem::path& path) {
    const auto s = read_file(path);
    return Bytes(s.begin(), s.end());
}

/// Write to a sibling temporary, flush to disk, then rename over the target.
inline void write_atomic(const std::filesystem::path& path, std::string_view data) {
    std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    std::size_t done = 0;
    while (done < data.size()) {
        const auto n = ::write(fd, data.data() + done, data.size() - done);
        if (n <= 0) {
            ::close(fd);
            throw Error(ErrorCode::IoError, "short write to " + tmp.string());
        }
        done += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
    std::filesystem::rename(tmp, path);
}

/// Exclusive advisory lock on a job directory, held for one mutation.
class JobLock {
public:
    explicit JobLock(const std::filesystem::path& dir) {
        fd_ = ::open((dir / ".lock").c_str(), O_RDWR | O_CREAT, 0644);
        if (fd_ < 0) throw Error(ErrorCode::IoError, "cannot lock " + dir.string());
        ::flock(fd_, LOCK_EX);
    }
    ~JobLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    JobLock(const JobLock&) = delete;
    JobLock& operator=(const JobLock&) = delete;

private:
    int fd_ = -1;
};

inline bool valid_job_id(std::string_view id) {
    if (id.empty() || id.size() > 128 || id.front() == '.') return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    });
}

inline std::string content_extension(SchemaId schema) { return schema == SchemaId::TeiSubset ? ".xml" : ".json"; }

inline std::string serialize_content(const PageContent& c) {
    if (const auto* doc = std::get_if<TeiDocument>(&c)) return serialize_tei(*doc);
    return nlohmann::json(std::get<std::vector<DictionaryEntry>>(c)).dump(2) + "\n";
}

inline PageContent parse_content(SchemaId schema, std::string_view data, std::string_view ext = {}) {
    if (schema == SchemaId::TeiSubset) return parse_tei_fragment(data);
    if (ext == ".csv") return csv_to_entries(data);
    try {
        auto j = nlohmann::json::parse(data);
        if (j.is_object() && j.contains("entries")) j = j.at("entries");
        if (!j.is_array()) throw Error(ErrorCode::MalformedPayload, "expected an array of entries");
        return j.get<std::vector<DictionaryEntry>>();
    } catch (const nlohmann::json::exception& err) {
        throw Error(ErrorCode::MalformedPayload, std::string("entries are not valid JSON: ") + err.what());
    }
}

} // namespace job_detail

/// Throws ValidationFailed listing every problem found in page content.
inline void validate_content(const PageContent& content) {
    std::vector<std::string> problems;
    if (const auto* doc = std::get_if<TeiDocument>(&content)) {
        try {
            validate_tei(*doc);
        } catch (const Error& err) {
            problems.push_back(std::string(err.what()) +
                               (err.index() ? " (entry " + std::to_string(*err.index()) + ")" : std::string()));
        }
    } else {
        const auto& entries = std::get<std::vector<DictionaryEntry>>(content);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            for (const auto& v : validate_entry(entries[i])) problems.push_back("entry " + std::to_string(i) + ": " + to_string(v));
        }
    }
    if (!problems.empty()) {
        throw Error(ErrorCode::ValidationFailed, "page content failed validation").with_details(std::move(problems));
    }
}

struct ExportResult {
    std::filesystem::path path;
    /// Separate coverage note for formats without comments.
    std::optional<std::filesystem::path> coverage_path;
    std::vector<int> included;
    std::vector<std::pair<int, PageState>> excluded;
    std::string banner;
};

/// Builds the provider a job's config names. Replaceable for tests.
using ProviderFactory = std::function<std::unique_ptr<Provider>(const JobConfig&, const std::filesystem::path& job_dir)>;

inline std::unique_ptr<Provider> default_provider(const JobConfig& config, const std::filesystem::path& job_dir) {
    const auto& p = config.provider;
    if (p.id == "mock") {
        std::filesystem::path fixtures = p.fixtures.empty() ? job_dir / "fixtures" : std::filesystem::path(p.fixtures);
        std::optional<std::filesystem::path> audit;
        if (!p.audit_log.empty()) audit = p.audit_log;
        return std::make_unique<MockProvider>(fixtures, audit);
    }
    HttpProviderConfig http;
    if (p.style.empty() && p.base_url.empty()) {
        http = default_provider_config(p.id);
    } else {
        http.id = p.id;
        http.style = p.style == "openai" ? ApiStyle::OpenAi : ApiStyle::Anthropic;
        http.base_url = p.base_url;
    }
    http.id = p.id;
    return std::make_unique<HttpProvider>(http);
}

/// File-based job store: `{root}/{job_id}/` holds manifest.json, scans/,
/// tiles/, raw/, merged/, corrected/, references/, eval/, exports/,
/// prompts/ and ledger.jsonl.
class JobStore {
public:
    explicit JobStore(std::filesystem::path root, ProviderFactory factory = default_provider)
        : root_(std::move(root)), factory_(std::move(factory)) {
        std::filesystem::create_directories(root_);
    }

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path job_dir(const std::string& job_id) const { return root_ / job_id; }

    std::vector<std::string> list() const {
        std::vector<std::string> ids;
        for (const auto& e : std::filesystem::directory_iterator(root_)) {
            if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.json")) ids.push_back(e.path().filename());
        }
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    Job load(const std::string& job_id) const {
        if (!job_detail::valid_job_id(job_id)) throw Error(ErrorCode::NotFound, "no job '" + job_id + "'");
        const auto path = job_dir(job_id) / "manifest.json";
        if (!std::filesystem::exists(path)) throw Error(ErrorCode::NotFound, "no job '" + job_id + "'");
        try {
            return nlohmann::json::parse(job_detail::read_file(path)).get<Job>();
        } catch (const nlohmann::json::exception& err) {
            throw Error(ErrorCode::IoError, "corrupt manifest for job " + job_id + ": " + err.what());
        }
    }

    /// Registers scans as the pages of a new job, in the given order.
    Job create_job(const std::vector<std::filesystem::path>& scans, JobConfig config,
                   std::optional<std::string> job_id = std::nullopt,
                   const std::filesystem::path& prompt_dir = default_prompt_dir()) {
        config.validate();
        if (scans.empty()) throw Error(ErrorCode::InvalidConfig, "a job needs at least one page");
        std::set<std::string> names, ids;
        for (const auto& s : scans) {
            const auto name = s.filename().string();
            if (!names.insert(name).second) throw Error(ErrorCode::InvalidConfig, "duplicate page file '" + name + "'");
            if (!ids.insert(s.stem().string()).second) {
                throw Error(ErrorCode::InvalidConfig, "duplicate page name '" + s.stem().string() + "'");
            }
        }
        const PromptLibrary prompts(prompt_dir);
        const auto recognition = prompts.load(config.prompts.recognition);
        const auto merge = prompts.load(config.prompts.merge);

        Job job;
        job.job_id = job_id ? *job_id : "job-" + sha256_hex(job_detail::now_iso() + scans.front().string()).substr(0, 12);
        if (!job_detail::valid_job_id(job.job_id)) throw Error(ErrorCode::InvalidConfig, "invalid job id '" + job.job_id + "'");
        const auto dir = job_dir(job.job_id);
        if (std::filesystem::exists(dir / "manifest.json")) {
            throw Error(ErrorCode::InvalidConfig, "job '" + job.job_id + "' already exists");
        }
        for (const auto& s : scans) {
            try {
                (void)load_page_image(s, s.stem().string());
            } catch (const Error& err) {
                throw Error(ErrorCode::UnreadableScan, err.what());
            }
        }
        for (const char* sub : {"scans", "tiles", "raw", "merged", "corrected", "references", "eval", "exports", "prompts"}) {
            std::filesystem::create_directories(dir / sub);
        }
        for (const auto& asset : {recognition, merge}) {
            job_detail::write_atomic(dir / "prompts" / (asset.id + ".txt"), asset.text);
        }
        int number = 1;
        for (const auto& s : scans) {
            std::filesystem::copy_file(s, dir / "scans" / s.filename(), std::filesystem::copy_options::overwrite_existing);
            job.pages.push_back(PageRecord{number++, s.filename().string(), s.stem().string(), PageState::Pending, 0, {}});
        }
        job.config = std::move(config);
        job.created = job.updated = job_detail::now_iso();
        save(job);
        return job;
    }

    /// Allowed after creation, so a failed page can be retried with
    /// different model settings.
    void set_model(const std::string& job_id, const ModelParams& params) {
        params.validate();
        job_detail::JobLock lock(job_dir(job_id));
        Job job = load(job_id);
        job.config.model = params;
        save(job);
    }

    /// Chooses model-based or deterministic merging for pages not merged yet.
    void set_merge_llm(const std::string& job_id, bool llm) {
        job_detail::JobLock lock(job_dir(job_id));
        Job job = load(job_id);
        if (job.config.merge.llm == llm) return;
        job.config.merge.llm = llm;
        save(job);
    }

    /// Runs the page's stages until it reaches `until` (Merging: tiled and
    /// recognized; Recognized: merged and, with a reference, evaluated).
    /// Stage errors leave the page Failed; advancing a Failed page retries
    /// the failed stage while retry_count < retry_limit.
    PageState advance(const std::string& job_id, int page_number, PageState until = PageState::Recognized) {
        if (until != PageState::Merging && until != PageState::Recognized && until != PageState::Tiled) {
            throw Error(ErrorCode::InvalidArgument, "advance can stop at tiled, merging or recognized");
        }
        job_detail::JobLock lock(job_dir(job_id));
        Job job = load(job_id);
        PageRecord* page = &job.page(page_number);

        if (page->state == PageState::Approved) {
            throw Error(ErrorCode::IllegalTransition, "page " + std::to_string(page_number) + " is approved");
        }
        if (page->state == PageState::Failed) {
            if (page->retry_count >= job.config.retry_limit) {
                throw Error(ErrorCode::IllegalTransition, "page " + std::to_string(page_number) + " exhausted its " +
                                                              std::to_string(job.config.retry_limit) + " retries");
            }
            ++page->retry_count;
            const PageState stage = page->failure ? page->failure->stage : PageState::Pending;
            page->state = stage == PageState::Recognizing ? PageState::Tiled : stage;
            page->failure.reset();
            save(job);
        }
        auto rank = [](PageState s) {
            switch (s) {
            case PageState::Pending: return 0;
            case PageState::Tiled: return 1;
            case PageState::Recognizing: return 2;
            case PageState::Merging: return 3;
            default: return 4;
            }
        };
        while (rank(page->state) < rank(until)) {
            const PageState running = page->state == PageState::Tiled ? PageState::Recognizing : page->state;
            try {
                switch (page->state) {
                case PageState::Pending: tile_stage(job, *page); break;
                case PageState::Tiled:
                case PageState::Recognizing: recognize_stage(job, *page); break;
                case PageState::Merging: merge_stage(job, *page); break;
                default: break;
                }
            } catch (const Error& err) {
                fail(job, *page, running, err.code(), err.what());
                break;
            } catch (const std::exception& err) {
                fail(job, *page, running, ErrorCode::IoError, err.what());
                break;
            }
        }
        return page->state;
    }

    /// Tile images of a page as (label, path), in plan order.
    std::vector<std::pair<std::string, std::filesystem::path>> tiles(const std::string& job_id, int page_number) const {
        const Job job = load(job_id);
        const auto& page = job.page(page_number);
        std::vector<std::pair<std::string, std::filesystem::path>> out;
        const auto plan_path = job_dir(job_id) / "tiles" / page.page_id / "plan.json";
        if (!std::filesystem::exists(plan_path)) return out;
        const auto plan = nlohmann::json::parse(job_detail::read_file(plan_path)).get<TilePlan>();
        for (const auto& t : plan.tiles) {
            const auto label = tile_label(page.page_id, t);
            out.emplace_back(label, job_dir(job_id) / "tiles" / page.page_id / (label + ".png"));
        }
        return out;
    }

    std::optional<PageContent> merged(const std::string& job_id, int page_number) const {
        const Job job = load(job_id);
        return read_content(job, "merged", job.page(page_number).page_id);
    }

    std::optional<PageContent> corrected(const std::string& job_id, int page_number) const {
        const Job job = load(job_id);
        return read_content(job, "corrected", job.page(page_number).page_id);
    }

    /// Corrected content when present, else the merged result.
    std::optional<PageContent> content(const std::string& job_id, int page_number) const {
        if (auto c = corrected(job_id, page_number)) return c;
        return merged(job_id, page_number);
    }

    /// Replaces the page's entries with a human correction; the page moves
    /// to InReview.
    void correct(const std::string& job_id, int page_number, const PageContent& content) {
        job_detail::JobLock lock(job_dir(job_id));
        Job job = load(job_id);
        auto& page = job.page(page_number);
        if (schema_of(content) != job.config.schema) {
            throw Error(ErrorCode::SchemaMismatch, "correction does not use the job's schema");
        }
        if (page.state != PageState::Recognized && page.state != PageState::InReview) {
            throw Error(ErrorCode::IllegalTransition, "page " + std::to_string(page_number) + " is " +
                                                          std::string(state_name(page.state)) +
                                                          "; corrections need a recognized page");
        }
        validate_content(content);
        job_detail::write_atomic(job_dir(job_id) / "corrected" / (page.page_id + job_detail::content_extension(job.config.schema)),
                                 job_detail::serialize_content(content));
        page.state = PageState::InReview;
        save(job);
    }

    void approve(const std::string& job_id, int page_number) {
        job_detail::JobLock lock(job_dir(job_id));
        Job job = load(job_id);
        auto& page = job.page(page_number);
        if (page.state != PageState::Recognized && page.state != PageState::InReview) {
            throw Error(ErrorCode::IllegalTransition, "cannot approve page " + std::to_string(page_number) + " in state " +
                                                          std::string(state_name(page.state)));
        }
        page.state = PageState::Approved;
        save(job);
    }

    void set_reference(const std::string& job_id, int page_number, const PageContent& reference) {
        job_detail::JobLock lock(job_dir(job_id));
        const Job job = load(job_id);
        if (schema_of(reference) != job.config.schema) {
            throw Error(ErrorCode::SchemaMismatch, "reference does not use the job's schema");
        }
        job_detail::write_atomic(
            job_dir(job_id) / "references" / (job.page(page_number).page_id + job_detail::content_extension(job.config.schema)),
            job_detail::serialize_content(reference));
    }

    /// Copies `{page_id}.xml|.json|.csv` files from `dir` as references.
    /// Returns the number of pages given a reference.
    std::size_t import_references(const std::string& job_id, const std::filesystem::path& dir) {
        if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::InvalidArgument, dir.string() + " is not a directory");
        const Job job = load(job_id);
        std::size_t count = 0;
        for (const auto& page : job.pages) {
            for (const char* ext : {".xml", ".json", ".csv"}) {
                const auto path = dir / (page.page_id + ext);
                if (!std::filesystem::exists(path)) continue;
                set_reference(job_id, page.number, job_detail::parse_content(job.config.schema, job_detail::read_file(path), ext));
                ++count;
                break;
            }
        }
        return count;
    }

    /// Scores a recognized page against its reference and stores the report.
    std::optional<EvalReport> evaluate(const std::string& job_id, int page_number) {
        const Job job = load(job_id);
        return evaluate(job, job.page(page_number));
    }

    /// Evaluates every page with a reference and content, and writes
    /// eval/report.json, report_pages.csv, methods.csv and report.html.
    CorpusReport report(const std::string& job_id) {
        const Job job = load(job_id);
        std::vector<EvalReport> reports;
        for (const auto& page : job.pages) {
            if (auto r = evaluate(job, page)) reports.push_back(std::move(*r));
        }
        const UsageLedger ledger(job_dir(job_id) / "ledger.jsonl");
        std::optional<PriceTable> prices;
        if (!job.config.prices.models.empty()) prices = job.config.prices;
        const auto records = ledger.records();
        if (prices) {
            for (const auto& r : records) (void)prices->at(r.model_id);
        }
        auto corpus = aggregate(reports, records, prices, std::string(mode_name(job.config.tiling.mode)));
        const auto dir = job_dir(job_id) / "eval";
        job_detail::write_atomic(dir / "report.json", nlohmann::json(corpus).dump(2) + "\n");
        job_detail::write_atomic(dir / "report_pages.csv", report_pages_csv(corpus));
        job_detail::write_atomic(dir / "methods.csv", methods_csv(corpus.methods));
        job_detail::write_atomic(dir / "report.html", report_html(corpus, "Recognition report: " + job_id));
        return corpus;
    }

    /// One file with every exportable page in page order. Approved pages
    /// contribute their corrected content, other recognized pages their
    /// current content; the rest are listed in a coverage banner.
    ExportResult export_unified(const std::string& job_id, const std::string& format) {
        if (format != "csv" && format != "tei") throw Error(ErrorCode::InvalidArgument, "export format must be csv or tei");
        job_detail::JobLock lock(job_dir(job_id));
        const Job job = load(job_id);
        ExportResult result;
        std::vector<std::pair<const PageRecord*, PageContent>> pages;
        for (const auto& page : job.pages) {
            const bool eligible = page.state == PageState::Recognized || page.state == PageState::InReview ||
                                  page.state == PageState::Approved;
            std::optional<PageContent> c;
            if (eligible) {
                c = read_content(job, "corrected", page.page_id);
                if (!c) c = read_content(job, "merged", page.page_id);
            }
            if (!c) {
                result.excluded.emplace_back(page.number, page.state);
                continue;
            }
            result.included.push_back(page.number);
            pages.emplace_back(&page, std::move(*c));
        }
        if (pages.empty()) throw Error(ErrorCode::NothingToExport, "job " + job_id + " has no recognized pages");

        std::vector<int> unjoined;
        std::string body;
        if (format == "csv") {
            std::vector<DictionaryEntry> all;
            for (const auto& [page, c] : pages) {
                std::vector<DictionaryEntry> entries;
                if (const auto* doc = std::get_if<TeiDocument>(&c)) {
                    if (!doc->leading_senses.empty()) unjoined.push_back(page->number);
                    for (const auto& e : doc->entries) entries.push_back(to_dictionary_entry(e));
                } else {
                    entries = std::get<std::vector<DictionaryEntry>>(c);
                }
                for (std::size_t i = 0; i < entries.size(); ++i) {
                    auto& p = entries[i].provenance;
                    p.source_id = job.config.source_id;
                    p.page = page->number;
                    p.order_on_page = static_cast<int>(i);
                    all.push_back(std::move(entries[i]));
                }
            }
            body = entries_to_csv(all);
        } else {
            TeiDocument doc;
            for (const auto& [page, c] : pages) {
                std::vector<TeiEntry> entries;
                if (const auto* d = std::get_if<TeiDocument>(&c)) {
                    if (!d->leading_senses.empty()) {
                        if (doc.entries.empty() && doc.leading_senses.empty()) {
                            doc.leading_senses = d->leading_senses;
                        } else {
                            unjoined.push_back(page->number);
                        }
                    }
                    entries = d->entries;
                } else {
                    for (const auto& e : std::get<std::vector<DictionaryEntry>>(c)) entries.push_back(to_tei_entry(e, ""));
                }
                for (std::size_t i = 0; i < entries.size(); ++i) {
                    entries[i].id = "p" + std::to_string(page->number) + ".e" + std::to_string(i + 1);
                    doc.entries.push_back(std::move(entries[i]));
                }
            }
            validate_tei(doc);
            body = serialize_tei(doc);
        }

        std::string banner = "coverage: " + std::to_string(result.included.size()) + " of " +
                             std::to_string(job.pages.size()) + " pages exported";
        if (!result.excluded.empty()) {
            banner += "; excluded:";
            for (const auto& [n, st] : result.excluded) banner += " " + std::to_string(n) + " (" + std::string(state_name(st)) + ")";
        }
        if (!unjoined.empty()) {
            banner += "; page-break continuations not joined on pages:";
            for (int n : unjoined) banner += " " + std::to_string(n);
        }
        result.banner = banner;

        const auto dir = job_dir(job_id) / "exports";
        if (format == "csv") {
            result.path = dir / (job_id + ".csv");
            result.coverage_path = dir / (job_id + ".coverage.txt");
            job_detail::write_atomic(result.path, body);
            job_detail::write_atomic(*result.coverage_path, banner + "\n");
        } else {
            result.path = dir / (job_id + ".xml");
            std::string safe = banner;
            for (std::size_t p; (p = safe.find("--")) != std::string::npos;) safe.replace(p, 2, "- -");
            const auto decl_end = body.find('\n') + 1;
            body.insert(decl_end, "<!-- " + safe + " -->\n");
            job_detail::write_atomic(result.path, body);
        }
        return result;
    }

private:
    void save(Job& job) {
        job.updated = job_detail::now_iso();
        const auto path = job_dir(job.job_id) / "manifest.json";
        const std::string data = nlohmann::json(job).dump(2) + "\n";
        auto tmp = path;
        tmp += ".tmp";
        std::filesystem::create_directories(path.parent_path());
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << data;
            out.flush();
            if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
        }
        crash_point("manifest:written");
        std::filesystem::rename(tmp, path);
    }

    void fail(Job& job, PageRecord& page, PageState stage, ErrorCode code, const std::string& message) {
        page.state = PageState::Failed;
        page.failure = StageFailure{stage, code, message};
        save(job);
    }

    std::optional<PageContent> read_content(const Job& job, const char* sub, const std::string& page_id) const {
        const auto path = job_dir(job.job_id) / sub / (page_id + job_detail::content_extension(job.config.schema));
        if (!std::filesystem::exists(path)) return std::nullopt;
        return job_detail::parse_content(job.config.schema, job_detail::read_file(path));
    }

    std::optional<EvalReport> evaluate(const Job& job, const PageRecord& page) const {
        const auto reference = read_content(job, "references", page.page_id);
        if (!reference) return std::nullopt;
        std::optional<PageContent> hyp = read_content(job, "merged", page.page_id);
        if (!hyp) return std::nullopt;
        const auto report = score_page(*hyp, *reference, page.page_id);
        job_detail::write_atomic(job_dir(job.job_id) / "eval" / (page.page_id + ".json"),
                                 nlohmann::json(report).dump(2) + "\n");
        return report;
    }

    void tile_stage(Job& job, PageRecord& page) {
        const auto dir = job_dir(job.job_id);
        PageImage image;
        try {
            image = load_page_image(dir / "scans" / page.file, page.page_id);
        } catch (const Error& err) {
            throw Error(ErrorCode::UnreadableScan, err.what());
        }
        const auto& t = job.config.tiling;
        const auto plan = plan_tiles(image, t.mode, t.segments, t.overlap, t.gutter_ratio);
        const auto tile_dir = dir / "tiles" / page.page_id;
        std::filesystem::create_directories(tile_dir);
        for (const auto& tile : plan.tiles) {
            const auto img = crop(image, tile);
            job_detail::write_atomic(tile_dir / (tile_label(page.page_id, tile) + ".png"),
                                     std::string_view(reinterpret_cast<const char*>(img.png.data()), img.png.size()));
        }
        job_detail::write_atomic(tile_dir / "plan.json", nlohmann::json(plan).dump(2) + "\n");
        crash_point("tile:persisted");
        page.state = PageState::Tiled;
        save(job);
    }

    struct Recognition {
        TilePlan plan;
        std::vector<Response> responses;
    };

    // Builds the page's tile requests and submits them. Completed requests
    // are answered from raw/ without a provider call.
    Recognition recognize(const Job& job, const PageRecord& page) {
        const auto dir = job_dir(job.job_id);
        const auto tile_dir = dir / "tiles" / page.page_id;
        Recognition rec;
        rec.plan = nlohmann::json::parse(job_detail::read_file(tile_dir / "plan.json")).get<TilePlan>();
        const PromptLibrary prompts(dir / "prompts");
        std::vector<VisionRequest> requests;
        for (const auto& tile : rec.plan.tiles) {
            const auto label = tile_label(page.page_id, tile);
            requests.push_back(build_vision_request(job_detail::read_bytes(tile_dir / (label + ".png")), prompts,
                                                    job.config.prompts.recognition, job.config.model, label));
        }
        auto provider = factory_(job.config, dir);
        UsageLedger ledger(dir / "ledger.jsonl");
        GatewayOptions options = job.config.gateway_options();
        options.response_dir = dir / "raw";
        options.on_event = [](std::string_view event) { crash_point("gateway:" + std::string(event)); };
        Gateway gateway(*provider, ledger, options);
        rec.responses = gateway.submit_all(requests);
        for (std::size_t i = 0; i < rec.responses.size(); ++i) {
            if (rec.responses[i].refused()) {
                throw Error(ErrorCode::RefusalDetected, "tile " + requests[i].label + " refused: " + rec.responses[i].body);
            }
        }
        return rec;
    }

    void recognize_stage(Job& job, PageRecord& page) {
        if (page.state == PageState::Tiled) {
            page.state = PageState::Recognizing;
            save(job);
        }
        const auto rec = recognize(job, page);
        // Parse now so malformed replies fail this stage, not the merge.
        if (job.config.schema == SchemaId::TeiSubset) {
            (void)fragments<TeiEntry>(job, page, rec);
        } else {
            (void)fragments<DictionaryEntry>(job, page, rec);
        }
        crash_point("recognize:persisted");
        page.state = PageState::Merging;
        save(job);
    }

    template <class E>
    FragmentSet<E> fragments(const Job& job, const PageRecord& page, const Recognition& rec) const {
        FragmentSet<E> set{page.page_id, rec.plan, {}};
        for (std::size_t i = 0; i < rec.plan.tiles.size(); ++i) {
            const auto& tile = rec.plan.tiles[i];
            const auto& body = rec.responses[i].body;
            try {
                if constexpr (std::is_same_v<E, TeiEntry>) {
                    set.fragments.push_back(fragment_from_tei(tile, parse_tei_fragment(strip_code_fence(body))));
                } else {
                    PayloadOptions options;
                    options.allow_leading_continuation = true;
                    options.provenance.source_id = job.config.source_id;
                    options.provenance.page = page.number;
                    options.provenance.column = tile.column_index + 1;
                    if (rec.plan.mode != TilingMode::WholePage) options.provenance.segment = tile.segment_index;
                    set.fragments.push_back(
                        fragment_from_payload(tile, parse_entry_payload(body, SchemaId::NineField, options)));
                }
            } catch (const Error& err) {
                throw Error(err.code(), "tile " + tile_label(page.page_id, tile) + ": " + err.what(), err.offset(),
                            err.index());
            }
        }
        return set;
    }

    template <class E>
    MergeResult<E> run_merge(const Job& job, const PageRecord& page, const Recognition& rec) {
        const auto frags = fragments<E>(job, page, rec);
        if (!job.config.merge.llm) return merge_fragments(frags, job.config.merge.threshold);
        const auto dir = job_dir(job.job_id);
        auto provider = factory_(job.config, dir);
        UsageLedger ledger(dir / "ledger.jsonl");
        GatewayOptions options = job.config.gateway_options();
        options.response_dir = dir / "raw";
        Gateway gateway(*provider, ledger, options);
        const auto prompt = PromptLibrary(dir / "prompts").load(job.config.prompts.merge);
        return llm_merge(frags, gateway, prompt, job.config.merge.model.value_or(job.config.model),
                         job.config.merge.threshold);
    }

    void merge_stage(Job& job, PageRecord& page) {
        const auto rec = recognize(job, page);
        const auto dir = job_dir(job.job_id);
        std::string audit;
        PageContent content;
        if (job.config.schema == SchemaId::TeiSubset) {
            const auto result = run_merge<TeiEntry>(job, page, rec);
            audit = merge_audit_jsonl(fragments<TeiEntry>(job, page, rec), result);
            content = to_document(result);
        } else {
            const auto result = run_merge<DictionaryEntry>(job, page, rec);
            audit = merge_audit_jsonl(fragments<DictionaryEntry>(job, page, rec), result);
            auto entries = result.entries;
            for (std::size_t i = 0; i < entries.size(); ++i) {
                entries[i].provenance.source_id = job.config.source_id;
                entries[i].provenance.page = page.number;
            }
            content = std::move(entries);
        }
        job_detail::write_atomic(dir / "merged" / (page.page_id + ".merge.jsonl"), audit);
        job_detail::write_atomic(dir / "merged" / (page.page_id + job_detail::content_extension(job.config.schema)),
                                 job_detail::serialize_content(content));
        crash_point("merge:persisted");
        (void)evaluate(job, page);
        page.state = PageState::Recognized;
        save(job);
    }

    std::filesystem::path root_;
    ProviderFactory factory_;
};

} // namespace fraktur
