// SPDX-License-Identifier: Apache-2.0
//
// Reader for AOL-format tab-separated query logs:
//
//   AnonID  Query  QueryTime  ItemRank  ClickURL
//
// QueryTime is `YYYY-MM-DD HH:MM:SS` (interpreted as UTC). ItemRank and
// ClickURL are empty on lines without a click.

#pragma once

#include <cctype>
#include <charconv>
#include <chrono>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ahnqs/querylog/types.hpp"

namespace ahnqs {

/// Lowercase (ASCII), trim, collapse internal whitespace runs to one space.
inline std::string normalize_query(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto uch = static_cast<unsigned char>(ch);
    if (std::isspace(uch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(uch)));
  }
  return out;
}

namespace detail {

inline std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

} // namespace detail

/// Parses `YYYY-MM-DD HH:MM:SS` as UTC seconds since the epoch.
inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
  if (s.size() != 19 || s[4] != '-' || s[7] != '-' || s[10] != ' ' || s[13] != ':' ||
      s[16] != ':')
    return std::nullopt;
  auto field = [&](std::size_t pos, std::size_t len) { return detail::parse_int(s.substr(pos, len)); };
  const auto y = field(0, 4), mo = field(5, 2), d = field(8, 2);
  const auto h = field(11, 2), mi = field(14, 2), sec = field(17, 2);
  if (!y || !mo || !d || !h || !mi || !sec)
    return std::nullopt;
  if (*h < 0 || *h > 23 || *mi < 0 || *mi > 59 || *sec < 0 || *sec > 59)
    return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)},
                           day{static_cast<unsigned>(*d)}};
  if (!ymd.ok())
    return std::nullopt;
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<Timestamp>(days) * 86400 + *h * 3600 + *mi * 60 + *sec;
}

inline constexpr std::string_view kAolHeader = "AnonID\tQuery\tQueryTime\tItemRank\tClickURL";

struct ParseResult {
  std::vector<RawRecord> records;
  std::size_t data_lines = 0;
  std::size_t malformed = 0;
  std::vector<std::size_t> malformed_lines; // first few, for diagnostics
};

/// Parses a single data line; nullopt when malformed.
inline std::optional<RawRecord> parse_record(std::string_view line, std::size_t line_no) {
  if (!line.empty() && line.back() == '\r')
    line.remove_suffix(1);
  auto fields = detail::split_tabs(line);
  if (fields.size() != 3 && fields.size() != 5)
    return std::nullopt;
  RawRecord rec;
  rec.line = line_no;
  rec.user_id = std::string(fields[0]);
  rec.query_text = normalize_query(fields[1]);
  if (rec.user_id.empty() || rec.query_text.empty())
    return std::nullopt;
  auto ts = parse_timestamp(fields[2]);
  if (!ts)
    return std::nullopt;
  rec.timestamp = *ts;
  if (fields.size() == 5) {
    if (!fields[3].empty()) {
      rec.click_rank = detail::parse_int(fields[3]);
      if (!rec.click_rank)
        return std::nullopt;
    }
    if (!fields[4].empty())
      rec.click_url = std::string(fields[4]);
  }
  return rec;
}

/// Reads an AOL log. Malformed lines are counted and skipped; more than half
/// malformed is a format error. Blank lines are ignored.
inline ParseResult parse_log(std::istream &in) {
  if (!in)
    throw std::ios_base::failure("query log stream is not readable");
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line))
    throw FormatError("missing header row", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  if (line != kAolHeader)
    throw FormatError("expected header '" + std::string(kAolHeader) + "'", 1);

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r")
      continue;
    ++result.data_lines;
    if (auto rec = parse_record(line, line_no)) {
      result.records.push_back(std::move(*rec));
    } else {
      ++result.malformed;
      if (result.malformed_lines.size() < 10)
        result.malformed_lines.push_back(line_no);
    }
  }
  if (in.bad())
    throw std::ios_base::failure("error while reading query log");
  if (result.malformed * 2 > result.data_lines) {
    std::string lines;
    for (auto l : result.malformed_lines)
      lines += (lines.empty() ? "" : ", ") + std::to_string(l);
    throw FormatError(std::to_string(result.malformed) + " of " +
                      std::to_string(result.data_lines) +
                      " data lines are malformed (first at lines " + lines + ")");
  }
  return result;
}

} // namespace ahnqs
