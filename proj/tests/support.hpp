#pragma once

// Fixture builders shared by the unit tests and the acceptance run.

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fraktur.hpp"

namespace support {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& prefix = "fraktur") {
        std::random_device rd;
        for (int attempt = 0; attempt < 100; ++attempt) {
            path_ = fs::temp_directory_path() / (prefix + "-" + std::to_string(rd()));
            if (fs::create_directory(path_)) return;
        }
        throw std::runtime_error("cannot create a temporary directory");
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void write_file(const fs::path& path, std::string_view data) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << data;
}

inline std::string read_file(const fs::path& path) { return fraktur::job_detail::read_file(path); }

/// A grey two-column page with script-face text lines, written as PNG.
inline fs::path write_scan(const fs::path& path, int width, int height, unsigned seed = 1) {
    cv::Mat page(height, width, CV_8UC1, cv::Scalar(236));
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> letter('a', 'z');
    const int line = 36;
    for (int col = 0; col < 2; ++col) {
        const int x = col * width / 2 + 24;
        for (int y = 48; y + 8 < height; y += line) {
            std::string words;
            for (int k = 0; k < 14; ++k) words += static_cast<char>(letter(rng));
            cv::putText(page, words, {x, y}, cv::FONT_HERSHEY_SCRIPT_COMPLEX | cv::FONT_ITALIC, 0.9, cv::Scalar(30), 2);
        }
    }
    cv::line(page, {width / 2, 0}, {width / 2, height - 1}, cv::Scalar(200), 1);
    fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), page)) throw std::runtime_error("cannot write " + path.string());
    return path;
}

/// Distinct headword-like forms built from Estonian-looking syllables.
inline std::vector<std::string> headwords(std::size_t count, unsigned seed) {
    static const std::vector<std::string> syllables = {
        "ka", "lah", "hu", "ta", "min", "ne", "tub", "bak", "at", "kôr", "ts", "ou", "na", "süd", "da", "ef",
        "far", "ma", "wa", "ri", "ge", "mö", "tas", "pä", "lik", "kül", "la", "ru", "ja", "wei", "sel", "ke"};
    std::mt19937 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, syllables.size() - 1);
    std::uniform_int_distribution<int> len(2, 4);
    std::vector<std::string> out;
    std::set<std::string> seen;
    while (out.size() < count) {
        std::string w;
        for (int k = len(rng); k > 0; --k) w += syllables[pick(rng)];
        if (fraktur::text::length(w) < 5 || !seen.insert(w).second) continue;
        const bool close = std::any_of(out.begin(), out.end(), [&](const std::string& o) {
            return fraktur::text_ratio(o, w) >= 0.6 || fraktur::text_ratio(w, o) >= 0.6;
        });
        if (!close) out.push_back(w);
    }
    return out;
}

inline const std::vector<std::string>& german_words() {
    static const std::vector<std::string> words = {
        "Apffel", "Ehre", "drohen", "Tabak", "Krug", "Schenke", "Korn", "Hauß", "Weib", "Mann", "Brodt", "Wasser",
        "Feuer", "Erde", "Himmel", "Pferd", "Kuh", "Schaaf", "Baum", "Wald", "Feld", "Acker", "Weg", "Stein"};
    return words;
}

/// A TEI page of `count` entries with one or two senses each.
inline fraktur::TeiDocument tei_page(std::size_t count, unsigned seed, std::size_t leading_senses = 0) {
    using namespace fraktur;
    const auto words = headwords(count + leading_senses, seed);
    const auto& de = german_words();
    std::mt19937 rng(seed * 7919u + 1);
    TeiDocument doc;
    for (std::size_t i = 0; i < leading_senses; ++i) {
        doc.leading_senses.push_back(TeiSense{de[rng() % de.size()] + " " + words[count + i], "de", {}, {}});
    }
    for (std::size_t i = 0; i < count; ++i) {
        TeiEntry e;
        e.id = "e" + std::to_string(i + 1);
        e.orth = words[i];
        if (i % 3 == 0) e.gram_grp = TeiGramGrp{i % 2 ? "v" : "s", {TeiGram{"gen", words[i] + "se"}}};
        const std::size_t senses = 1 + (rng() % 2);
        for (std::size_t s = 0; s < senses; ++s) {
            TeiSense sense{de[rng() % de.size()] + (s ? " und " + de[(i + s) % de.size()] : std::string()), "de", {}, {}};
            if (i % 5 == 1 && s == 0) sense.usg = TeiMarker{"dom", "Bauer"};
            if (i % 7 == 2 && s == 0) sense.xr = TeiMarker{"syn", words[(i + 1) % count]};
            e.senses.push_back(std::move(sense));
        }
        doc.entries.push_back(std::move(e));
    }
    return doc;
}

/// The 86-entry reference page.
inline fraktur::TeiDocument ground_truth_86() { return tei_page(86, 86); }

/// One corrupted character in each orth outside `perfect`.
inline fraktur::TeiDocument corrupt(fraktur::TeiDocument doc, const std::set<std::size_t>& perfect) {
    for (std::size_t i = 0; i < doc.entries.size(); ++i) {
        if (perfect.contains(i)) continue;
        auto cps = fraktur::text::to_code_points(doc.entries[i].orth);
        const std::size_t at = cps.size() / 2;
        cps[at] = cps[at] == U'b' ? U'h' : U'b';
        doc.entries[i].orth = fraktur::text::to_utf8(cps);
    }
    return doc;
}

/// The indices of `k` evenly spread entries among `n`.
inline std::set<std::size_t> spread(std::size_t k, std::size_t n) {
    std::set<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.insert(i * n / k);
    return out;
}

struct ScriptOptions {
    /// Repeat each tile's last entry at the top of the next segment of the
    /// same column, as an overlapping segment shows it.
    bool overlap_duplicates = true;
    /// Cut the last entry of the left column after its headword; its senses
    /// open the right column.
    bool split_at_column = false;
    std::int64_t input_tokens = 1200;
    std::int64_t output_tokens = 900;
};

/// TEI replies per tile label that merge back into `page`.
inline std::map<std::string, fraktur::TeiDocument> script_tiles(const fraktur::TilePlan& plan,
                                                                const fraktur::TeiDocument& page,
                                                                const ScriptOptions& options = {}) {
    using namespace fraktur;
    const std::size_t tiles = plan.tiles.size();
    const std::size_t n = page.entries.size();
    std::vector<std::vector<TeiEntry>> chunks(tiles);
    for (std::size_t t = 0; t < tiles; ++t) {
        chunks[t].assign(page.entries.begin() + static_cast<std::ptrdiff_t>(t * n / tiles),
                         page.entries.begin() + static_cast<std::ptrdiff_t>((t + 1) * n / tiles));
    }
    std::map<std::string, TeiDocument> out;
    for (std::size_t t = 0; t < tiles; ++t) {
        const Tile& tile = plan.tiles[t];
        TeiDocument frag;
        if (t == 0) frag.leading_senses = page.leading_senses;
        if (options.overlap_duplicates && tile.segment_index > 0 && !chunks[t - 1].empty()) {
            frag.entries.push_back(chunks[t - 1].back());
        }
        frag.entries.insert(frag.entries.end(), chunks[t].begin(), chunks[t].end());
        const bool column_start = t > 0 && tile.column_index != plan.tiles[t - 1].column_index;
        if (options.split_at_column && column_start && !chunks[t - 1].empty()) {
            frag.leading_senses = chunks[t - 1].back().senses;
        }
        const bool column_end = t + 1 < tiles && plan.tiles[t + 1].column_index != tile.column_index;
        if (options.split_at_column && column_end && !frag.entries.empty()) frag.entries.back().senses.clear();
        renumber_ids(frag.entries);
        out[tile_label(plan.page_id, tile)] = std::move(frag);
    }
    return out;
}

/// Writes scripted mock replies `{label}.json` with token counts.
inline void write_replies(const fs::path& fixtures, const std::map<std::string, fraktur::TeiDocument>& replies,
                          const ScriptOptions& options = {}) {
    for (const auto& [label, doc] : replies) {
        const nlohmann::json j{{"body", fraktur::serialize_tei(doc)},
                               {"input_tokens", options.input_tokens},
                               {"output_tokens", options.output_tokens}};
        write_file(fixtures / (label + ".json"), j.dump());
    }
}

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

inline std::string shell_quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

/// Runs a command with extra environment variables, capturing its output.
inline RunResult run(const std::vector<std::string>& argv, const std::map<std::string, std::string>& env = {},
                     const fs::path& scratch = fs::temp_directory_path()) {
    static int counter = 0;
    const auto tag = std::to_string(::getpid()) + "-" + std::to_string(counter++);
    const fs::path out = scratch / ("run-" + tag + ".out");
    const fs::path err = scratch / ("run-" + tag + ".err");
    std::string cmd = "env";
    for (const auto& [k, v] : env) cmd += " " + k + "=" + shell_quote(v);
    for (const auto& a : argv) cmd += " " + shell_quote(a);
    cmd += " >" + shell_quote(out.string()) + " 2>" + shell_quote(err.string());
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    fs::remove(out);
    fs::remove(err);
    return r;
}

// Cross-dictionary rows in the shape of the headword mapping table.
inline constexpr std::string_view kGutsclaffCsv =
    "headword,equivalent\n"
    "Ubbene,Apffel\n"
    "Auw,Ehre\n"
    "effardama,Dräuwen\n"
    "Kaal,Kohl\n";
inline constexpr std::string_view kStahlCsv =
    "headword,modern,equivalent\n"
    "Kaddakas,kadakas,Wacholder\n"
    "Aun,õun,Apffel\n"
    "Au,au,Ehre\n";
inline constexpr std::string_view kGosekenCsv =
    "headword,word_form,equivalent\n"
    "maggama,maggan,schlaffen\n"
    "õun,Oun,apffel\n";
inline constexpr std::string_view kVestringCsv =
    "headword,equivalent,example,example_translation\n"
    "Kurri,Der Kranich,,\n"
    "Oun,Der Apffel,Ouna Südda.,Das Korn gehäuse im Apffel\n"
    "Ähwardama,Dräuen,,\n";

} // namespace support
