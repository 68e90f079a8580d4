// SPDX-License-Identifier: Apache-2.0
//
// Hand-enumerated expectations for tests/data/fixture50.tsv, processed with
// gap 1800 s, min query count 3, min session length 2, min user sessions 2,
// test window 1 day and no validation window.
//
// Walkthrough:
//   * 52 data lines, 2 malformed (bad timestamp, blank query) -> 50 records.
//   * user 100: 10:29 -> 10:59 is exactly 1800 s (same session); 10:59:00 ->
//     11:30:01 is 1861 s (new session); "apple","Apple " collapse.
//   * pass 1: xylophone (2 occurrences) removed; user 200's lone "apple"
//     session dropped; users 300 and 600 have one session and are dropped.
//   * pass 2: yam falls to 1 occurrence and is removed, so user 400's
//     [yam, cherry] shrinks to [cherry] and is dropped.
//   * cutoff = last record (2006-03-05 16:00:00) - 1 day; user 200's session
//     starting exactly at 2006-03-04 16:00:00 goes to test.
//   * zucchini never occurs in training and is removed from test; user 400's
//     [zucchini, apple] becomes [apple] and is dropped.
//   * training counts: apple 7, banana 7, cherry 5, date 5.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ahnqs/querylog/preprocess.hpp"

namespace fixture50 {

inline ahnqs::PreprocessOptions options() {
  ahnqs::PreprocessOptions o;
  o.sessionize.gap_secs = 1800;
  o.filter.min_query_count = 3;
  o.filter.min_session_len = 2;
  o.filter.min_user_sessions = 2;
  o.test_window_days = 1;
  o.valid_window_days = 0;
  return o;
}

struct ExpectedSession {
  std::string user;
  std::uint64_t session_id;
  std::vector<ahnqs::TokenId> queries;
};

inline constexpr std::size_t kRecords = 50;
inline constexpr std::size_t kMalformed = 2;

// vocabulary: apple=0 banana=1 cherry=2 date=3
inline const std::vector<std::string> kVocab = {"apple", "banana", "cherry", "date"};
inline const std::vector<std::uint64_t> kCounts = {7, 7, 5, 5};

inline const std::vector<ExpectedSession> kTrain = {
    {"100", 0, {0, 1, 2}}, {"100", 1, {0, 1}}, {"100", 2, {1, 2, 3}}, {"100", 3, {0, 3}},
    {"200", 5, {0, 1}},    {"200", 6, {2, 3}}, {"200", 7, {1, 2}},
    {"400", 9, {0, 1}},    {"400", 10, {2, 3}},
    {"500", 13, {3, 0}},   {"500", 14, {1, 0}},
};

inline const std::vector<ExpectedSession> kTest = {
    {"100", 4, {0, 1}},
    {"200", 8, {2, 3}},
    {"400", 12, {1, 3}},
    {"500", 15, {2, 0, 1}},
};

inline std::vector<ExpectedSession> flatten(const ahnqs::Histories &hs) {
  std::vector<ExpectedSession> out;
  for (const auto &u : hs)
    for (const auto &s : u.sessions)
      out.push_back({u.user_id, s.session_id, s.queries});
  return out;
}

inline bool operator==(const ExpectedSession &a, const ExpectedSession &b) {
  return a.user == b.user && a.session_id == b.session_id && a.queries == b.queries;
}

} // namespace fixture50
