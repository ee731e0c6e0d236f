#ifndef SETMARGIN_KEYSTROKE_HPP
#define SETMARGIN_KEYSTROKE_HPP

// Keystroke log import, temporal feature extraction, synthetic users and
// open-set dataset splitting.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "setmargin/common.hpp"

namespace setmargin {

struct KeystrokeEvent {
  int keycode = 0;
  double press_time = 0.0;    // seconds
  double release_time = 0.0;  // seconds
};

struct SessionLog {
  std::string subject_id;
  std::string session_id;
  std::vector<KeystrokeEvent> events;
};

struct ParseResult {
  std::vector<SessionLog> sessions;
  std::size_t rejected_rows = 0;  // rows with release < press
};

inline constexpr int kFeatureChannels = 5;
inline constexpr int kDefaultMaxLen = 50;

enum Channel : int { kHold = 0, kInterKey = 1, kPress = 2, kRelease = 3, kKeycode = 4 };

using FeatureRow = std::array<double, kFeatureChannels>;

/// Fixed-length M x 5 sequence. Rows at or beyond valid_len are all zero.
struct FeatureSequence {
  std::vector<FeatureRow> rows;
  int valid_len = 0;
  std::string subject_id;
  std::string session_id;

  int max_len() const { return static_cast<int>(rows.size()); }
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

inline bool parse_int(std::string_view s, long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Millisecond text <-> seconds by moving the decimal point, so the
// conversion is exact: seconds_from_ms(ms_repr(t)) == t for every finite t.
inline std::string ms_repr(double t) {
  char buf[400];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, t, std::chars_format::fixed);
  std::string s(buf, ptr);
  std::string sign;
  if (!s.empty() && s[0] == '-') {
    sign = "-";
    s.erase(0, 1);
  }
  const std::size_t dot = s.find('.');
  std::string whole = dot == std::string::npos ? s : s.substr(0, dot);
  std::string frac = dot == std::string::npos ? "" : s.substr(dot + 1);
  frac.resize(std::max<std::size_t>(frac.size(), 3), '0');
  whole += frac.substr(0, 3);
  frac.erase(0, 3);
  whole.erase(0, std::min(whole.find_first_not_of('0'), whole.size() - 1));
  while (!frac.empty() && frac.back() == '0') frac.pop_back();
  std::string out = sign + whole;
  if (!frac.empty()) out += "." + frac;
  return out == "-0" ? "0" : out;
}

/// Seconds from a millisecond field, correctly rounded from the decimal text.
inline bool seconds_from_ms(std::string_view field, double& out) {
  double ms = 0.0;
  if (!parse_double(field, ms)) return false;
  std::string text(field);
  if (!text.empty() && text[0] == '+') text.erase(0, 1);
  const std::size_t e = text.find_first_of("eE");
  long exp10 = -3;
  if (e != std::string::npos) {
    long given = 0;
    std::string_view tail(text.data() + e + 1, text.size() - e - 1);
    if (!tail.empty() && tail[0] == '+') tail.remove_prefix(1);
    if (!parse_int(tail, given)) return false;
    exp10 += given;
    text.resize(e);
  }
  text += "e" + std::to_string(exp10);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

inline std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Parses the normalized TSV import format:
/// SUBJECT_ID, SESSION_ID, KEYCODE, PRESS_MS, RELEASE_MS.
///
/// An optional header is recognized on the first non-empty line by a
/// non-numeric third column. Events are grouped by (subject, session) in
/// order of first appearance and sorted by press time. Rows whose release
/// precedes their press are dropped and counted.
inline ParseResult parse_log(std::string_view text) {
  ParseResult result;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::size_t line_no = 0;
  bool seen_content = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = detail::trim_cr(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto fields = detail::split_tabs(line);
    if (!seen_content) {
      seen_content = true;
      long probe = 0;
      if (fields.size() >= 3 && !detail::parse_int(fields[2], probe)) continue;  // header
    }
    if (fields.size() != 5) {
      throw ParseError(line_no, "expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError(line_no, "empty subject or session id");
    long keycode = 0;
    if (!detail::parse_int(fields[2], keycode)) throw ParseError(line_no, "keycode is not an integer");
    if (keycode < 0 || keycode > 255) throw ParseError(line_no, "keycode outside [0, 255]");
    double press = 0.0;
    double release = 0.0;
    if (!detail::seconds_from_ms(fields[3], press)) throw ParseError(line_no, "bad press timestamp");
    if (!detail::seconds_from_ms(fields[4], release)) throw ParseError(line_no, "bad release timestamp");
    if (release < press) {
      ++result.rejected_rows;
      continue;
    }
    auto key = std::make_pair(std::string(fields[0]), std::string(fields[1]));
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, result.sessions.size()).first;
      result.sessions.push_back(SessionLog{key.first, key.second, {}});
    }
    result.sessions[it->second].events.push_back(
        KeystrokeEvent{static_cast<int>(keycode), press, release});
    if (end == text.size()) break;
  }
  for (auto& s : result.sessions) {
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const KeystrokeEvent& a, const KeystrokeEvent& b) { return a.press_time < b.press_time; });
  }
  return result;
}

/// Writes sessions in the import format, with a header line.
inline std::string serialize_log(const std::vector<SessionLog>& sessions) {
  std::string out = "SUBJECT_ID\tSESSION_ID\tKEYCODE\tPRESS_MS\tRELEASE_MS\n";
  for (const auto& s : sessions) {
    for (const auto& e : s.events) {
      out += s.subject_id;
      out += '\t';
      out += s.session_id;
      out += '\t';
      out += std::to_string(e.keycode);
      out += '\t';
      out += detail::ms_repr(e.press_time);
      out += '\t';
      out += detail::ms_repr(e.release_time);
      out += '\n';
    }
  }
  return out;
}

/// Builds the masked M x 5 feature sequence of a session.
///
/// Row k holds (hold, inter-key, press, release, keycode/255). The first key
/// has no predecessor, so its three inter-event latencies are zero. Negative
/// inter-key latencies (rollover) are kept as-is.
inline FeatureSequence extract_features(const SessionLog& session, int max_len = kDefaultMaxLen) {
  if (max_len < 1) throw ConfigError("sequence length M must be >= 1");
  if (session.events.empty()) throw DataError("session " + session.subject_id + "/" + session.session_id + " is empty");
  FeatureSequence seq;
  seq.subject_id = session.subject_id;
  seq.session_id = session.session_id;
  seq.rows.assign(static_cast<std::size_t>(max_len), FeatureRow{});
  const std::size_t n = std::min<std::size_t>(session.events.size(), static_cast<std::size_t>(max_len));
  seq.valid_len = static_cast<int>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& e = session.events[k];
    FeatureRow& row = seq.rows[k];
    row[kHold] = e.release_time - e.press_time;
    if (k > 0) {
      const auto& p = session.events[k - 1];
      row[kInterKey] = e.press_time - p.release_time;
      row[kPress] = e.press_time - p.press_time;
      row[kRelease] = e.release_time - p.release_time;
    }
    row[kKeycode] = static_cast<double>(e.keycode) / 255.0;
  }
  return seq;
}

inline std::vector<FeatureSequence> extract_all(const std::vector<SessionLog>& sessions, int max_len = kDefaultMaxLen) {
  std::vector<FeatureSequence> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) out.push_back(extract_features(s, max_len));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic users

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Parametric typist population. Each subject draws a hold and an inter-key
/// (flight) latency model once; sessions then sample keys around it.
struct SyntheticUserSpec {
  int n_subjects = 10;
  int sessions_per_subject = 15;
  int keys_min = 20;
  int keys_max = 30;
  Range hold_mean{0.070, 0.160};
  Range hold_std{0.015, 0.035};
  Range flight_mean{0.060, 0.300};
  Range flight_std{0.040, 0.100};
  // Per-subject key-dependent hold offsets (seconds, std of the offset table).
  double key_effect_std = 0.012;
  // Per-session shift of both channel means, in units of the subject's std.
  double session_drift = 0.35;
  double noise_scale = 1.0;
  std::uint64_t seed = 1;
};

struct SubjectModel {
  std::string subject_id;
  double hold_mean = 0.0;
  double hold_std = 0.0;
  double flight_mean = 0.0;
  double flight_std = 0.0;
  std::array<double, 27> key_offsets{};  // A..Z, space
};

namespace detail {

inline void check_spec(const SyntheticUserSpec& spec) {
  if (spec.n_subjects < 1) throw ConfigError("synthetic spec: n_subjects must be >= 1");
  if (spec.sessions_per_subject < 1) throw ConfigError("synthetic spec: sessions_per_subject must be >= 1");
  if (spec.keys_min < 1 || spec.keys_max < spec.keys_min) throw ConfigError("synthetic spec: bad keys_per_session range");
  auto positive = [](const Range& r) { return r.lo > 0.0 && r.hi >= r.lo; };
  if (!positive(spec.hold_std) || !positive(spec.flight_std)) throw ConfigError("synthetic spec: standard deviations must be > 0");
  if (!(spec.hold_mean.hi >= spec.hold_mean.lo) || !(spec.flight_mean.hi >= spec.flight_mean.lo))
    throw ConfigError("synthetic spec: bad mean range");
  if (spec.noise_scale <= 0.0 || spec.key_effect_std < 0.0 || spec.session_drift < 0.0)
    throw ConfigError("synthetic spec: noise parameters must be non-negative (noise_scale > 0)");
}

inline int key_slot(int keycode) { return keycode == 32 ? 26 : keycode - 65; }

inline std::string subject_name(int i) {
  std::string s = std::to_string(i);
  return "u" + std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

}  // namespace detail

/// Per-subject latency models, in subject order. Deterministic in spec.seed.
inline std::vector<SubjectModel> synthesize_subject_models(const SyntheticUserSpec& spec) {
  detail::check_spec(spec);
  std::vector<SubjectModel> models;
  models.reserve(static_cast<std::size_t>(spec.n_subjects));
  Rng rng(Rng::mix(spec.seed, 0xA11CE));
  for (int i = 0; i < spec.n_subjects; ++i) {
    SubjectModel m;
    m.subject_id = detail::subject_name(i);
    m.hold_mean = rng.uniform(spec.hold_mean.lo, spec.hold_mean.hi);
    m.hold_std = rng.uniform(spec.hold_std.lo, spec.hold_std.hi);
    m.flight_mean = rng.uniform(spec.flight_mean.lo, spec.flight_mean.hi);
    m.flight_std = rng.uniform(spec.flight_std.lo, spec.flight_std.hi);
    for (auto& o : m.key_offsets) o = rng.normal(0.0, spec.key_effect_std);
    models.push_back(m);
  }
  return models;
}

/// Generates sessions for every subject (subject-major, session order s01..).
/// Timestamps are on a millisecond grid; hold latencies are at least 1 ms.
inline std::vector<SessionLog> synthesize_dataset(const SyntheticUserSpec& spec) {
  const auto models = synthesize_subject_models(spec);
  std::vector<SessionLog> out;
  out.reserve(models.size() * static_cast<std::size_t>(spec.sessions_per_subject));
  for (std::size_t si = 0; si < models.size(); ++si) {
    const SubjectModel& m = models[si];
    for (int s = 0; s < spec.sessions_per_subject; ++s) {
      Rng rng(Rng::mix(spec.seed, (si << 20) + static_cast<std::uint64_t>(s) + 1));
      SessionLog log;
      log.subject_id = m.subject_id;
      log.session_id = "s" + std::string(s + 1 < 10 ? "0" : "") + std::to_string(s + 1);
      const int n_keys = spec.keys_min + static_cast<int>(rng.below(static_cast<std::size_t>(spec.keys_max - spec.keys_min + 1)));
      const double hold_shift = spec.session_drift * m.hold_std * rng.normal();
      const double flight_shift = spec.session_drift * m.flight_std * rng.normal();
      long long prev_press = -1;
      long long prev_release = 0;
      long long t0 = 500 + static_cast<long long>(rng.below(1000));
      for (int k = 0; k < n_keys; ++k) {
        // Roughly one key in six is a space.
        const int keycode = rng.below(6) == 0 ? 32 : 65 + static_cast<int>(rng.below(26));
        const double hold = m.hold_mean + hold_shift + m.key_offsets[static_cast<std::size_t>(detail::key_slot(keycode))] +
                            spec.noise_scale * m.hold_std * rng.normal();
        const double flight = m.flight_mean + flight_shift + spec.noise_scale * m.flight_std * rng.normal();
        long long press = (k == 0) ? t0 : prev_release + std::llround(flight * 1000.0);
        if (k > 0) press = std::max(press, prev_press + 1);
        const long long release = press + std::max(1LL, std::llround(hold * 1000.0));
        log.events.push_back(KeystrokeEvent{keycode, static_cast<double>(press) / 1000.0, static_cast<double>(release) / 1000.0});
        prev_press = press;
        prev_release = release;
      }
      out.push_back(std::move(log));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Open-set split

struct SplitSpec {
  std::vector<std::string> train_subjects;
  std::vector<std::string> background_subjects;
  // Subset of the background that contributes queries. Empty means all of it.
  std::vector<std::string> query_subjects;
  int gallery_size = 10;
  int query_size = 5;
};

struct SubjectSequences {
  std::string subject_id;
  std::vector<FeatureSequence> sequences;
};

struct DatasetSplit {
  std::vector<FeatureSequence> train;
  std::vector<SubjectSequences> background;  // gallery sessions per subject
  std::vector<SubjectSequences> query;       // query sessions per subject
};

/// Subjects in order of first appearance.
inline std::vector<std::string> subjects_in_order(const std::vector<FeatureSequence>& seqs) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& s : seqs) {
    if (seen.insert(s.subject_id).second) out.push_back(s.subject_id);
  }
  return out;
}

/// Counts-based split: the first n_train subjects train, the next
/// n_background form the background, the first n_query of those also query.
inline SplitSpec make_split_spec(const std::vector<FeatureSequence>& seqs, int n_train, int n_background, int n_query,
                                 int gallery_size, int query_size) {
  const auto subjects = subjects_in_order(seqs);
  if (n_train < 0 || n_background < 1 || n_query < 0 || n_query > n_background)
    throw ConfigError("split: need n_train >= 0, n_background >= 1, 0 <= n_query <= n_background");
  if (static_cast<std::size_t>(n_train + n_background) > subjects.size()) {
    throw DataError("split: requested " + std::to_string(n_train + n_background) + " subjects but data has " +
                    std::to_string(subjects.size()));
  }
  SplitSpec spec;
  spec.train_subjects.assign(subjects.begin(), subjects.begin() + n_train);
  spec.background_subjects.assign(subjects.begin() + n_train, subjects.begin() + n_train + n_background);
  spec.query_subjects.assign(spec.background_subjects.begin(), spec.background_subjects.begin() + n_query);
  spec.gallery_size = gallery_size;
  spec.query_size = query_size;
  return spec;
}

/// Partitions sequences into train / background gallery / query.
///
/// Per test subject the first gallery_size sessions (in input order) become
/// the gallery and the last query_size sessions the query. Training subjects
/// must be disjoint from test subjects.
inline DatasetSplit split_dataset(const std::vector<FeatureSequence>& seqs, const SplitSpec& spec) {
  if (spec.gallery_size < 1 || spec.query_size < 1) throw ConfigError("split: gallery and query sizes must be >= 1");
  const std::set<std::string> train(spec.train_subjects.begin(), spec.train_subjects.end());
  const auto& queries = spec.query_subjects.empty() ? spec.background_subjects : spec.query_subjects;
  const std::set<std::string> background(spec.background_subjects.begin(), spec.background_subjects.end());
  for (const auto& id : spec.background_subjects) {
    if (train.count(id)) throw ConfigError("split: subject " + id + " is both a training and a background subject");
  }
  for (const auto& id : queries) {
    if (train.count(id)) throw ConfigError("split: training subject " + id + " appears in the query set");
    if (!background.count(id)) throw ConfigError("split: query subject " + id + " is not in the background");
  }

  std::unordered_map<std::string, std::vector<const FeatureSequence*>> by_subject;
  for (const auto& s : seqs) by_subject[s.subject_id].push_back(&s);

  DatasetSplit out;
  for (const auto& s : seqs) {
    if (train.count(s.subject_id)) out.train.push_back(s);
  }
  for (const auto& id : spec.train_subjects) {
    if (!by_subject.count(id)) throw DataError("split: training subject " + id + " has no sessions");
  }
  const std::set<std::string> query_set(queries.begin(), queries.end());
  const std::size_t need = static_cast<std::size_t>(spec.gallery_size + spec.query_size);
  for (const auto& id : spec.background_subjects) {
    auto it = by_subject.find(id);
    const std::size_t have = it == by_subject.end() ? 0 : it->second.size();
    if (have < need) {
      throw DataError("split: subject " + id + " has " + std::to_string(have) + " sessions, needs " + std::to_string(need));
    }
    const auto& list = it->second;
    SubjectSequences gallery{id, {}};
    for (std::size_t k = 0; k < static_cast<std::size_t>(spec.gallery_size); ++k) gallery.sequences.push_back(*list[k]);
    out.background.push_back(std::move(gallery));
    if (query_set.count(id)) {
      SubjectSequences q{id, {}};
      for (std::size_t k = list.size() - static_cast<std::size_t>(spec.query_size); k < list.size(); ++k) q.sequences.push_back(*list[k]);
      out.query.push_back(std::move(q));
    }
  }
  return out;
}

}  // namespace setmargin

#endif  // SETMARGIN_KEYSTROKE_HPP
