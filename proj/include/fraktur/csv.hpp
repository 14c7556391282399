#pragma once

#include <charconv>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fraktur/entry.hpp"
#include "fraktur/error.hpp"
#include "fraktur/text.hpp"

namespace fraktur::csv {

using Row = std::vector<std::string>;

inline std::string quote_cell(std::string_view cell) {
    const bool needs = cell.find_first_of(",\"\r\n") != std::string_view::npos ||
                       (!cell.empty() && (cell.front() == ' ' || cell.back() == ' '));
    if (!needs) return std::string(cell);
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

/// RFC 4180 record: comma separated, CRLF terminated.
inline void write_row(std::string& out, const Row& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += quote_cell(row[i]);
    }
    out += "\r\n";
}

/// Parses RFC 4180 text. Accepts LF or CRLF line ends and a UTF-8 BOM.
inline std::vector<Row> parse(std::string_view data) {
    if (data.rfind("\xEF\xBB\xBF", 0) == 0) data.remove_prefix(3);
    std::vector<Row> rows;
    Row row;
    std::string cell;
    bool in_quotes = false;
    bool cell_started = false;
    std::size_t i = 0;
    auto end_cell = [&] {
        row.push_back(std::move(cell));
        cell.clear();
        cell_started = false;
    };
    auto end_row = [&] {
        end_cell();
        rows.push_back(std::move(row));
        row.clear();
    };
    while (i < data.size()) {
        const char c = data[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < data.size() && data[i + 1] == '"') {
                    cell += '"';
                    i += 2;
                    continue;
                }
                in_quotes = false;
                ++i;
                continue;
            }
            cell += c;
            ++i;
            continue;
        }
        if (c == '"' && !cell_started) {
            in_quotes = true;
            cell_started = true;
            ++i;
        } else if (c == ',') {
            end_cell();
            ++i;
        } else if (c == '\r' || c == '\n') {
            end_row();
            i += (c == '\r' && i + 1 < data.size() && data[i + 1] == '\n') ? 2 : 1;
        } else {
            cell += c;
            cell_started = true;
            ++i;
        }
    }
    if (in_quotes) throw Error(ErrorCode::MalformedPayload, "unterminated quoted CSV cell", data.size());
    if (cell_started || !row.empty()) end_row();
    return rows;
}

/// Rows as header-name -> value maps.
inline std::vector<std::map<std::string, std::string>> parse_records(std::string_view data) {
    const auto rows = parse(data);
    std::vector<std::map<std::string, std::string>> out;
    if (rows.empty()) return out;
    const Row& header = rows.front();
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() == 1 && rows[r][0].empty()) continue;
        std::map<std::string, std::string> rec;
        for (std::size_t c = 0; c < header.size(); ++c) rec[header[c]] = c < rows[r].size() ? rows[r][c] : "";
        out.push_back(std::move(rec));
    }
    return out;
}

inline Row entry_header() {
    Row header(kFieldNames.begin(), kFieldNames.end());
    for (const char* p : {"source_id", "page", "column", "segment", "order_on_page"}) header.emplace_back(p);
    return header;
}

} // namespace fraktur::csv

namespace fraktur {

/// One header row then one row per entry; sequences joined with "; ".
inline std::string entries_to_csv(const std::vector<DictionaryEntry>& entries) {
    std::string out;
    csv::write_row(out, csv::entry_header());
    for (const auto& e : entries) {
        csv::Row row;
        for (std::size_t i = 0; i < kFieldNames.size(); ++i) row.push_back(field_text(e, i));
        row.push_back(e.provenance.source_id);
        row.push_back(std::to_string(e.provenance.page));
        row.push_back(std::to_string(e.provenance.column));
        row.push_back(segment_label(e.provenance.segment));
        row.push_back(std::to_string(e.provenance.order_on_page));
        csv::write_row(out, row);
    }
    return out;
}

namespace csv_detail {

inline int to_int(const std::string& s, const char* what, std::size_t row) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw Error(ErrorCode::MalformedPayload, std::string("column ") + what + " is not an integer: '" + s + "'",
                    std::nullopt, row);
    }
    return v;
}

} // namespace csv_detail

/// Inverse of entries_to_csv. Provenance columns are optional.
inline std::vector<DictionaryEntry> csv_to_entries(std::string_view data) {
    const auto rows = csv::parse(data);
    std::vector<DictionaryEntry> out;
    if (rows.empty()) return out;
    std::map<std::string, std::size_t> col;
    for (std::size_t c = 0; c < rows.front().size(); ++c) col[rows.front()[c]] = c;
    if (!col.contains("headword_et")) {
        throw Error(ErrorCode::MalformedPayload, "CSV header lacks headword_et", 0);
    }
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && row[0].empty()) continue;
        auto cell = [&](const std::string& name) -> std::string {
            const auto it = col.find(name);
            return it != col.end() && it->second < row.size() ? row[it->second] : std::string();
        };
        DictionaryEntry e;
        for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
            const std::string value = text::nfc(cell(std::string(kFieldNames[i])));
            if (auto* s = scalar_field(e, i)) {
                *s = value;
            } else {
                *sequence_field(e, i) = text::split(value, kJoinToken);
            }
        }
        e.provenance.source_id = cell("source_id");
        if (auto s = cell("page"); !s.empty()) e.provenance.page = csv_detail::to_int(s, "page", r);
        if (auto s = cell("column"); !s.empty()) e.provenance.column = csv_detail::to_int(s, "column", r);
        if (auto s = cell("segment"); !s.empty() && s != "whole") e.provenance.segment = csv_detail::to_int(s, "segment", r);
        if (auto s = cell("order_on_page"); !s.empty()) e.provenance.order_on_page = csv_detail::to_int(s, "order_on_page", r);
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace fraktur
