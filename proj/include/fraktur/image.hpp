#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <openssl/evp.h>
#include <openssl/sha.h>

#include "fraktur/error.hpp"

namespace fraktur {

using Bytes = std::vector<std::uint8_t>;

/// A scanned page. `pixels` is grayscale or BGR(A); 8-bit or 16-bit depth as
/// decoded.
struct PageImage {
    std::string page_id;
    cv::Mat pixels;

    int width() const { return pixels.cols; }
    int height() const { return pixels.rows; }
};

/// Decodes a PNG, JPEG or TIFF scan.
inline PageImage load_page_image(const std::filesystem::path& path, std::string page_id) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw Error(ErrorCode::UnreadableScan, "cannot decode scan " + path.string());
    if (m.cols < 2 || m.rows < 2) throw Error(ErrorCode::UnreadableScan, "scan smaller than 2x2: " + path.string());
    return PageImage{std::move(page_id), std::move(m)};
}

inline Bytes encode_png(const cv::Mat& raster) {
    Bytes out;
    // Fixed compression level keeps the encoding, and thus request ids, stable.
    if (!cv::imencode(".png", raster, out, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
        throw Error(ErrorCode::IoError, "PNG encoding failed");
    }
    return out;
}

inline cv::Mat decode_image(const Bytes& data) {
    cv::Mat m = cv::imdecode(data, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw Error(ErrorCode::UnreadableScan, "image bytes do not decode");
    return m;
}

inline std::string base64_encode(const Bytes& data) {
    if (data.empty()) return {};
    std::string out(4 * ((data.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(), static_cast<int>(data.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline Bytes base64_decode(std::string_view b64) {
    if (b64.empty()) return {};
    if (b64.size() % 4 != 0) throw Error(ErrorCode::InvalidArgument, "base64 length is not a multiple of 4");
    Bytes out(3 * b64.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(b64.data()), static_cast<int>(b64.size()));
    if (n < 0) throw Error(ErrorCode::InvalidArgument, "invalid base64");
    std::size_t size = static_cast<std::size_t>(n);
    // EVP_DecodeBlock counts padding bytes as zeros.
    if (b64.size() >= 1 && b64.back() == '=') --size;
    if (b64.size() >= 2 && b64[b64.size() - 2] == '=') --size;
    out.resize(size);
    return out;
}

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * SHA256_DIGEST_LENGTH);
    for (unsigned char c : digest) {
        out.push_back(kHex[c >> 4]);
        out.push_back(kHex[c & 0xF]);
    }
    return out;
}

} // namespace fraktur
