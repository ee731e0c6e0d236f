#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <string>

#include "setmargin/keystroke.hpp"

using namespace setmargin;

namespace {

SessionLog make_session(std::vector<KeystrokeEvent> events) {
  return SessionLog{"u1", "s1", std::move(events)};
}

SessionLog random_session(Rng& rng, int keys) {
  SessionLog s{"r", "x", {}};
  double t = rng.uniform(0.0, 2.0);
  for (int k = 0; k < keys; ++k) {
    const double hold = rng.uniform(0.001, 0.3);
    s.events.push_back(KeystrokeEvent{static_cast<int>(rng.below(256)), t, t + hold});
    t += rng.uniform(0.0, 0.4);  // overlaps allowed
  }
  return s;
}

}  // namespace

TEST(ParseLog, SingleLineConvertsMilliseconds) {
  const auto r = parse_log("u1\ts1\t65\t0\t100");
  ASSERT_EQ(r.sessions.size(), 1u);
  ASSERT_EQ(r.sessions[0].events.size(), 1u);
  EXPECT_EQ(r.sessions[0].subject_id, "u1");
  EXPECT_EQ(r.sessions[0].events[0].keycode, 65);
  EXPECT_DOUBLE_EQ(r.sessions[0].events[0].press_time, 0.0);
  EXPECT_DOUBLE_EQ(r.sessions[0].events[0].release_time, 0.1);
}

TEST(ParseLog, EmptyInput) {
  EXPECT_TRUE(parse_log("").sessions.empty());
  EXPECT_TRUE(parse_log("\n\n").sessions.empty());
}

TEST(ParseLog, GroupsBySession) {
  const auto r = parse_log("u1\ts1\t65\t0\t100\nu1\ts2\t66\t10\t90\n");
  ASSERT_EQ(r.sessions.size(), 2u);
  EXPECT_EQ(r.sessions[0].session_id, "s1");
  EXPECT_EQ(r.sessions[1].session_id, "s2");
}

TEST(ParseLog, HeaderAndSorting) {
  const auto r = parse_log("SUBJECT_ID\tSESSION_ID\tKEYCODE\tPRESS_MS\tRELEASE_MS\r\nu\ts\t66\t200\t260\r\nu\ts\t65\t100\t150\r\n");
  ASSERT_EQ(r.sessions.size(), 1u);
  ASSERT_EQ(r.sessions[0].events.size(), 2u);
  EXPECT_EQ(r.sessions[0].events[0].keycode, 65);
  EXPECT_EQ(r.sessions[0].events[1].keycode, 66);
}

TEST(ParseLog, MalformedLineCarriesLineNumber) {
  try {
    parse_log("u\ts\t65\t0\t100\nu\ts\t65\t0\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line, 2u);
  }
  EXPECT_THROW(parse_log("u\ts\t300\t0\t1"), ParseError);
  EXPECT_THROW(parse_log("u\ts\t65\tabc\t1\nu\ts\t65\t0\tx"), ParseError);
}

TEST(ParseLog, ReleaseBeforePressIsRejectedAndCounted) {
  const auto r = parse_log("u\ts\t65\t100\t50\nu\ts\t66\t0\t10\n");
  EXPECT_EQ(r.rejected_rows, 1u);
  ASSERT_EQ(r.sessions.size(), 1u);
  EXPECT_EQ(r.sessions[0].events.size(), 1u);
}

TEST(ExtractFeatures, TwoKeyExample) {
  const auto f = extract_features(make_session({{65, 0.00, 0.10}, {66, 0.15, 0.30}}), 50);
  ASSERT_EQ(f.valid_len, 2);
  ASSERT_EQ(f.max_len(), 50);
  const FeatureRow r0{0.10, 0.0, 0.0, 0.0, 65.0 / 255.0};
  for (int c = 0; c < kFeatureChannels; ++c) EXPECT_NEAR(f.rows[0][c], r0[c], 1e-15) << c;
  const FeatureRow r1{0.15, 0.05, 0.15, 0.20, 66.0 / 255.0};
  for (int c = 0; c < kFeatureChannels; ++c) EXPECT_NEAR(f.rows[1][c], r1[c], 1e-15) << c;
  for (int t = 2; t < 50; ++t) {
    for (double v : f.rows[t]) EXPECT_EQ(v, 0.0);
  }
}

TEST(ExtractFeatures, TruncatesEnd) {
  std::vector<KeystrokeEvent> ev;
  for (int k = 0; k < 60; ++k) ev.push_back({65 + k % 26, 0.2 * k, 0.2 * k + 0.05 + 0.001 * k});
  const auto f = extract_features(make_session(ev), 50);
  EXPECT_EQ(f.valid_len, 50);
  EXPECT_EQ(f.max_len(), 50);
  EXPECT_NEAR(f.rows[49][kHold], 0.05 + 0.049, 1e-12);
}

TEST(ExtractFeatures, OverlappedKeysKeepNegativeInterKey) {
  // B pressed before A is released.
  const auto f = extract_features(make_session({{65, 0.00, 0.20}, {66, 0.15, 0.30}}), 10);
  EXPECT_NEAR(f.rows[1][kInterKey], -0.05, 1e-15);
}

TEST(ExtractFeatures, Errors) {
  EXPECT_THROW(extract_features(make_session({}), 50), DataError);
  EXPECT_THROW(extract_features(make_session({{65, 0, 1}}), 0), ConfigError);
}

TEST(ExtractFeatures, LatencyIdentitiesAndPadding) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int keys = 1 + static_cast<int>(rng.below(80));
    const int M = 1 + static_cast<int>(rng.below(70));
    const auto f = extract_features(random_session(rng, keys), M);
    ASSERT_EQ(f.valid_len, std::min(keys, M));
    for (int k = 0; k < f.valid_len; ++k) {
      EXPECT_GE(f.rows[k][kHold], 0.0);
      if (k == 0) continue;
      EXPECT_NEAR(f.rows[k][kPress], f.rows[k][kInterKey] + f.rows[k - 1][kHold], 1e-12);
      EXPECT_NEAR(f.rows[k][kRelease], f.rows[k][kHold] + f.rows[k][kInterKey], 1e-12);
    }
    for (int k = f.valid_len; k < M; ++k) {
      for (double v : f.rows[k]) ASSERT_EQ(v, 0.0);
    }
  }
}

TEST(SerializeLog, ParseInvertsSerialize) {
  SyntheticUserSpec spec;
  spec.n_subjects = 4;
  spec.sessions_per_subject = 3;
  spec.seed = 5;
  const auto logs = synthesize_dataset(spec);
  const auto back = parse_log(serialize_log(logs));
  EXPECT_EQ(back.rejected_rows, 0u);
  ASSERT_EQ(back.sessions.size(), logs.size());
  for (std::size_t s = 0; s < logs.size(); ++s) {
    EXPECT_EQ(back.sessions[s].subject_id, logs[s].subject_id);
    EXPECT_EQ(back.sessions[s].session_id, logs[s].session_id);
    ASSERT_EQ(back.sessions[s].events.size(), logs[s].events.size());
    for (std::size_t k = 0; k < logs[s].events.size(); ++k) {
      EXPECT_EQ(back.sessions[s].events[k].keycode, logs[s].events[k].keycode);
      EXPECT_EQ(back.sessions[s].events[k].press_time, logs[s].events[k].press_time);
      EXPECT_EQ(back.sessions[s].events[k].release_time, logs[s].events[k].release_time);
    }
  }
}

TEST(SerializeLog, SubMillisecondTimesRoundTrip) {
  Rng rng(3);
  std::vector<SessionLog> logs{random_session(rng, 40)};
  const auto back = parse_log(serialize_log(logs));
  ASSERT_EQ(back.sessions.size(), 1u);
  for (std::size_t k = 0; k < logs[0].events.size(); ++k) {
    EXPECT_EQ(back.sessions[0].events[k].press_time, logs[0].events[k].press_time);
    EXPECT_EQ(back.sessions[0].events[k].release_time, logs[0].events[k].release_time);
  }
}

TEST(Synthesize, DeterministicPerSeed) {
  SyntheticUserSpec spec;
  spec.n_subjects = 2;
  spec.sessions_per_subject = 15;
  spec.seed = 7;
  EXPECT_EQ(serialize_log(synthesize_dataset(spec)), serialize_log(synthesize_dataset(spec)));
  spec.seed = 8;
  const auto other = serialize_log(synthesize_dataset(spec));
  spec.seed = 7;
  EXPECT_NE(other, serialize_log(synthesize_dataset(spec)));
}

TEST(Synthesize, SingleSession) {
  SyntheticUserSpec spec;
  spec.n_subjects = 1;
  spec.sessions_per_subject = 1;
  const auto logs = synthesize_dataset(spec);
  ASSERT_EQ(logs.size(), 1u);
  for (const auto& e : logs[0].events) {
    EXPECT_GE(e.release_time - e.press_time, 0.001 - 1e-12);
    EXPECT_GE(e.keycode, 0);
    EXPECT_LE(e.keycode, 255);
  }
  for (std::size_t k = 1; k < logs[0].events.size(); ++k) EXPECT_GE(logs[0].events[k].press_time, logs[0].events[k - 1].press_time);
}

TEST(Synthesize, InvalidSpec) {
  SyntheticUserSpec spec;
  spec.n_subjects = 0;
  EXPECT_THROW(synthesize_dataset(spec), ConfigError);
  spec.n_subjects = 3;
  spec.sessions_per_subject = 0;
  EXPECT_THROW(synthesize_dataset(spec), ConfigError);
  spec.sessions_per_subject = 3;
  spec.hold_std = {0.0, 0.01};
  EXPECT_THROW(synthesize_dataset(spec), ConfigError);
}

// Effective hold mean of a subject: base mean plus its key offsets averaged
// under the synthetic key mix (space 1/6, each letter 5/156).
static double effective_hold_mean(const SubjectModel& m) {
  double k = m.key_offsets[26] / 6.0;
  for (int i = 0; i < 26; ++i) k += m.key_offsets[static_cast<std::size_t>(i)] * 5.0 / 156.0;
  return m.hold_mean + k;
}

static std::map<std::string, std::pair<double, double>> observed_hold(const std::vector<SessionLog>& logs) {
  std::map<std::string, std::pair<double, double>> acc;  // hold sum, key count
  for (const auto& s : logs) {
    auto& a = acc[s.subject_id];
    for (const auto& e : s.events) a.first += e.release_time - e.press_time;
    a.second += static_cast<double>(s.events.size());
  }
  return acc;
}

TEST(Synthesize, DrawnMeansAreDistinct) {
  SyntheticUserSpec spec;
  spec.n_subjects = 100;
  spec.seed = 1;
  const auto models = synthesize_subject_models(spec);
  std::set<double> hold, flight;
  for (const auto& m : models) {
    hold.insert(m.hold_mean);
    flight.insert(m.flight_mean);
  }
  EXPECT_EQ(hold.size(), models.size());
  EXPECT_EQ(flight.size(), models.size());
}

// Observed hold means agree with the model within their sampling error
// (session drift, per-key noise and the random key mix).
TEST(Synthesize, ObservedHoldMeanMatchesModel) {
  SyntheticUserSpec spec;
  spec.n_subjects = 100;
  spec.seed = 1;
  const auto models = synthesize_subject_models(spec);
  const auto acc = observed_hold(synthesize_dataset(spec));
  for (const auto& m : models) {
    const auto& [sum, n] = acc.at(m.subject_id);
    const double se = std::sqrt(std::pow(spec.session_drift * m.hold_std, 2) / spec.sessions_per_subject +
                                (m.hold_std * m.hold_std + spec.key_effect_std * spec.key_effect_std) / n);
    EXPECT_LT(std::abs(sum / n - effective_hold_mean(m)), 6.0 * se) << m.subject_id;
  }
}

// Each subject's observed mean hold latency should be nearest to its own
// drawn mean among all 100 subjects, for at least 95 of them.
TEST(Synthesize, SubjectsAreDistinguishableByMeanHoldLatency) {
  SyntheticUserSpec spec;
  spec.n_subjects = 100;
  spec.sessions_per_subject = 15;
  spec.seed = 1;
  const auto models = synthesize_subject_models(spec);
  const auto acc = observed_hold(synthesize_dataset(spec));
  int correct = 0;
  for (const auto& m : models) {
    const auto& [sum, n] = acc.at(m.subject_id);
    const double h = sum / n;
    const SubjectModel* best = nullptr;
    for (const auto& o : models) {
      if (!best || std::abs(h - effective_hold_mean(o)) < std::abs(h - effective_hold_mean(*best))) best = &o;
    }
    correct += best->subject_id == m.subject_id;
  }
  EXPECT_GE(correct, 95);
}

namespace {

std::vector<FeatureSequence> sequences(int subjects, int sessions) {
  SyntheticUserSpec spec;
  spec.n_subjects = subjects;
  spec.sessions_per_subject = sessions;
  spec.keys_min = 3;
  spec.keys_max = 5;
  return extract_all(synthesize_dataset(spec), 10);
}

}  // namespace

TEST(SplitDataset, IdentificationProtocol) {
  const auto seqs = sequences(5, 15);
  const auto spec = make_split_spec(seqs, 2, 3, 3, 10, 5);
  const auto split = split_dataset(seqs, spec);
  EXPECT_EQ(split.train.size(), 30u);
  ASSERT_EQ(split.background.size(), 3u);
  ASSERT_EQ(split.query.size(), 3u);
  EXPECT_EQ(split.background[0].subject_id, "u00002");
  ASSERT_EQ(split.background[0].sequences.size(), 10u);
  EXPECT_EQ(split.background[0].sequences.front().session_id, "s01");
  EXPECT_EQ(split.background[0].sequences.back().session_id, "s10");
  ASSERT_EQ(split.query[0].sequences.size(), 5u);
  EXPECT_EQ(split.query[0].sequences.front().session_id, "s11");
  EXPECT_EQ(split.query[0].sequences.back().session_id, "s15");
  for (const auto& t : split.train) EXPECT_TRUE(t.subject_id == "u00000" || t.subject_id == "u00001");
}

TEST(SplitDataset, VerificationProtocol) {
  const auto seqs = sequences(3, 15);
  const auto split = split_dataset(seqs, make_split_spec(seqs, 1, 2, 2, 5, 5));
  EXPECT_EQ(split.background[0].sequences.back().session_id, "s05");
  EXPECT_EQ(split.query[0].sequences.front().session_id, "s11");
}

TEST(SplitDataset, TrainSubjectInQueryIsRejected) {
  const auto seqs = sequences(3, 15);
  SplitSpec spec;
  spec.train_subjects = {"u00000"};
  spec.background_subjects = {"u00001", "u00002"};
  spec.query_subjects = {"u00000"};
  EXPECT_THROW(split_dataset(seqs, spec), ConfigError);
  spec.query_subjects = {};
  spec.background_subjects = {"u00000", "u00001"};
  EXPECT_THROW(split_dataset(seqs, spec), ConfigError);
}

TEST(SplitDataset, TooFewSessionsNamesSubject) {
  const auto seqs = sequences(3, 12);
  try {
    split_dataset(seqs, make_split_spec(seqs, 1, 2, 2, 10, 5));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("u00001"), std::string::npos);
  }
}
