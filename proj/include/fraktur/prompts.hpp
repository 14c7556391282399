#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fraktur/error.hpp"
#include "fraktur/text.hpp"

namespace fraktur {

/// A prompt shipped as an editable text file. Sections start with "## ".
struct PromptAsset {
    std::string id;
    std::string text;

    std::vector<std::pair<std::string, std::string>> sections() const {
        std::vector<std::pair<std::string, std::string>> out;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.rfind("## ", 0) == 0) {
                out.emplace_back(text::trim(line.substr(3)), std::string());
            } else if (!out.empty()) {
                out.back().second += line + "\n";
            }
        }
        return out;
    }
};

/// Prompt assets of one directory; `{id}.txt` holds asset `id`.
class PromptLibrary {
public:
    explicit PromptLibrary(std::filesystem::path dir) : dir_(std::move(dir)) {}

    const std::filesystem::path& dir() const { return dir_; }

    PromptAsset load(const std::string& id) const {
        const auto path = dir_ / (id + ".txt");
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::MissingPromptAsset, "prompt asset '" + id + "' not found in " + dir_.string());
        std::stringstream ss;
        ss << in.rdbuf();
        PromptAsset asset{id, ss.str()};
        if (text::trim_view(asset.text).empty()) {
            throw Error(ErrorCode::MissingPromptAsset, "prompt asset '" + id + "' is empty");
        }
        return asset;
    }

    bool contains(const std::string& id) const { return std::filesystem::exists(dir_ / (id + ".txt")); }

private:
    std::filesystem::path dir_;
};

/// Directory of the prompt assets installed with the sources; overridable
/// through FRAKTUR_PROMPT_DIR.
inline std::filesystem::path default_prompt_dir() {
    if (const char* env = std::getenv("FRAKTUR_PROMPT_DIR"); env && *env) return env;
#ifdef FRAKTUR_PROMPT_DIR
    return FRAKTUR_PROMPT_DIR;
#else
    return "assets/prompts";
#endif
}

} // namespace fraktur
