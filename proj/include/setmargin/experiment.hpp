#ifndef SETMARGIN_EXPERIMENT_HPP
#define SETMARGIN_EXPERIMENT_HPP

// Experiment configuration and the in-memory pipeline:
// data -> split -> train -> identification / verification / space analysis.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "setmargin/checkpoint.hpp"
#include "setmargin/encoder.hpp"
#include "setmargin/eval.hpp"
#include "setmargin/keystroke.hpp"
#include "setmargin/losses.hpp"
#include "setmargin/space.hpp"
#include "setmargin/training.hpp"

namespace setmargin {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Synthetic point-cloud classes (2-D embedding experiments)

/// Gaussian classes in the 5-channel input space, one point per sample. Each
/// sample becomes a length-1 sequence so it runs through the same encoder.
struct ClusterSpec {
  int n_classes = 12;
  int samples_per_class = 30;
  double separation = 1.0;  // std of class centers
  double spread = 0.35;     // within-class std
  std::uint64_t seed = 1;
};

inline std::vector<FeatureSequence> synthesize_clusters(const ClusterSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("clusters: n_classes must be >= 2");
  if (spec.samples_per_class < 1) throw ConfigError("clusters: samples_per_class must be >= 1");
  if (!(spec.spread > 0.0) || !(spec.separation > 0.0)) throw ConfigError("clusters: spread and separation must be > 0");
  Rng rng(Rng::mix(spec.seed, 0xC1A55));
  std::vector<FeatureSequence> out;
  for (int c = 0; c < spec.n_classes; ++c) {
    FeatureRow center{};
    for (auto& v : center) v = rng.normal(0.0, spec.separation);
    const std::string label = "c" + std::string(c < 10 ? "0" : "") + std::to_string(c);
    for (int s = 0; s < spec.samples_per_class; ++s) {
      FeatureSequence seq;
      seq.subject_id = label;
      seq.session_id = "p" + std::to_string(s);
      FeatureRow row{};
      for (std::size_t k = 0; k < row.size(); ++k) row[k] = center[k] + rng.normal(0.0, spec.spread);
      seq.rows = {row};
      seq.valid_len = 1;
      out.push_back(std::move(seq));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config

struct DataConfig {
  std::string source = "synthetic";  // synthetic | tsv | clusters
  std::string tsv_path;
  SyntheticUserSpec synthetic{.n_subjects = 140};
  ClusterSpec clusters;
  int max_len = kDefaultMaxLen;
};

struct SplitConfig {
  int train_subjects = 100;
  int background_subjects = 40;
  int query_subjects = 40;
  int gallery_sessions = 10;
  int query_sessions = 5;
};

struct EncoderConfig {
  EncoderArch arch;
  bool input_standardization = true;
};

struct EvaluationConfig {
  std::vector<int> ranks{1, 5, 20};
  bool verification = true;
  int verification_gallery = 5;
  int verification_query = 5;
  std::string identification_mode = "query_set";  // query_set | query_sample
  int impostor_query_index = 0;
  int max_impostors_per_subject = 0;
  bool score_dump = true;
};

struct ExperimentConfig {
  DataConfig data;
  SplitConfig split;
  EncoderConfig encoder;
  LossSpec loss;
  TrainingConfig training;
  EvaluationConfig evaluation;
  std::string output_dir = "runs/default";
  bool deterministic = true;

  void validate() const {
    encoder.arch.validate();
    loss.validate();
    training.validate();
    if (data.source != "synthetic" && data.source != "tsv" && data.source != "clusters")
      throw ConfigError("data.source must be synthetic, tsv or clusters");
    if (data.max_len < 1) throw ConfigError("data.max_len must be >= 1");
    for (int r : evaluation.ranks) {
      if (r < 1) throw ConfigError("evaluation.ranks entries must be >= 1");
    }
    if (evaluation.identification_mode != "query_set" && evaluation.identification_mode != "query_sample")
      throw ConfigError("evaluation.identification_mode must be query_set or query_sample");
  }

  /// Applies a global seed to training and to the data generators.
  void apply_seed(std::uint64_t seed) {
    training.seed = seed;
    data.synthetic.seed = seed;
    data.clusters.seed = seed;
  }
};

namespace detail {

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

inline void read_range(const json& j, const char* key, Range& r) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 2) throw ConfigError(std::string("synthetic.") + key + " must be [lo, hi]");
  r = Range{v[0], v[1]};
}

}  // namespace detail

inline json to_json(const SyntheticUserSpec& s) {
  return {{"n_subjects", s.n_subjects},
          {"sessions_per_subject", s.sessions_per_subject},
          {"keys_per_session", {s.keys_min, s.keys_max}},
          {"hold_mean", {s.hold_mean.lo, s.hold_mean.hi}},
          {"hold_std", {s.hold_std.lo, s.hold_std.hi}},
          {"flight_mean", {s.flight_mean.lo, s.flight_mean.hi}},
          {"flight_std", {s.flight_std.lo, s.flight_std.hi}},
          {"key_effect_std", s.key_effect_std},
          {"session_drift", s.session_drift},
          {"noise_scale", s.noise_scale},
          {"seed", s.seed}};
}

inline SyntheticUserSpec synthetic_from_json(const json& j) {
  SyntheticUserSpec s;
  detail::read(j, "n_subjects", s.n_subjects);
  detail::read(j, "sessions_per_subject", s.sessions_per_subject);
  if (j.contains("keys_per_session")) {
    const auto v = j.at("keys_per_session").get<std::vector<int>>();
    if (v.size() != 2) throw ConfigError("synthetic.keys_per_session must be [min, max]");
    s.keys_min = v[0];
    s.keys_max = v[1];
  }
  detail::read_range(j, "hold_mean", s.hold_mean);
  detail::read_range(j, "hold_std", s.hold_std);
  detail::read_range(j, "flight_mean", s.flight_mean);
  detail::read_range(j, "flight_std", s.flight_std);
  detail::read(j, "key_effect_std", s.key_effect_std);
  detail::read(j, "session_drift", s.session_drift);
  detail::read(j, "noise_scale", s.noise_scale);
  detail::read(j, "seed", s.seed);
  return s;
}

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["data"] = {{"source", c.data.source},
               {"tsv_path", c.data.tsv_path},
               {"max_len", c.data.max_len},
               {"synthetic", to_json(c.data.synthetic)},
               {"clusters",
                {{"n_classes", c.data.clusters.n_classes},
                 {"samples_per_class", c.data.clusters.samples_per_class},
                 {"separation", c.data.clusters.separation},
                 {"spread", c.data.clusters.spread},
                 {"seed", c.data.clusters.seed}}}};
  j["split"] = {{"train_subjects", c.split.train_subjects},
                {"background_subjects", c.split.background_subjects},
                {"query_subjects", c.split.query_subjects},
                {"gallery_sessions", c.split.gallery_sessions},
                {"query_sessions", c.split.query_sessions}};
  j["encoder"] = arch_to_json(c.encoder.arch);
  j["encoder"]["input_standardization"] = c.encoder.input_standardization;
  j["loss"] = {{"name", to_string(c.loss.kind)},
               {"alpha", c.loss.alpha},
               {"beta", c.loss.beta ? json(*c.loss.beta) : json(nullptr)},
               {"G", c.loss.G},
               {"symmetrized", c.loss.symmetrized}};
  j["training"] = {{"batches_per_epoch", c.training.batches_per_epoch},
                   {"pairs_per_batch", c.training.pairs_per_batch},
                   {"epochs", c.training.epochs},
                   {"optimizer", c.training.optimizer},
                   {"lr", c.training.lr},
                   {"momentum", c.training.momentum},
                   {"seed", c.training.seed}};
  j["evaluation"] = {{"ranks", c.evaluation.ranks},
                     {"verification", c.evaluation.verification},
                     {"verification_gallery", c.evaluation.verification_gallery},
                     {"verification_query", c.evaluation.verification_query},
                     {"identification_mode", c.evaluation.identification_mode},
                     {"impostor_query_index", c.evaluation.impostor_query_index},
                     {"max_impostors_per_subject", c.evaluation.max_impostors_per_subject},
                     {"score_dump", c.evaluation.score_dump}};
  j["output_dir"] = c.output_dir;
  j["deterministic"] = c.deterministic;
  return j;
}

/// Reads a config document; absent keys keep their defaults.
inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      detail::read(d, "source", c.data.source);
      detail::read(d, "tsv_path", c.data.tsv_path);
      detail::read(d, "max_len", c.data.max_len);
      if (d.contains("synthetic")) c.data.synthetic = synthetic_from_json(d.at("synthetic"));
      if (d.contains("clusters")) {
        const auto& cl = d.at("clusters");
        detail::read(cl, "n_classes", c.data.clusters.n_classes);
        detail::read(cl, "samples_per_class", c.data.clusters.samples_per_class);
        detail::read(cl, "separation", c.data.clusters.separation);
        detail::read(cl, "spread", c.data.clusters.spread);
        detail::read(cl, "seed", c.data.clusters.seed);
      }
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      detail::read(s, "train_subjects", c.split.train_subjects);
      detail::read(s, "background_subjects", c.split.background_subjects);
      detail::read(s, "query_subjects", c.split.query_subjects);
      detail::read(s, "gallery_sessions", c.split.gallery_sessions);
      detail::read(s, "query_sessions", c.split.query_sessions);
    }
    if (j.contains("encoder")) {
      c.encoder.arch = arch_from_json(j.at("encoder"));
      detail::read(j.at("encoder"), "input_standardization", c.encoder.input_standardization);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      if (l.contains("name")) c.loss.kind = loss_from_string(l.at("name").get<std::string>());
      detail::read(l, "alpha", c.loss.alpha);
      if (l.contains("beta") && !l.at("beta").is_null()) c.loss.beta = l.at("beta").get<double>();
      detail::read(l, "G", c.loss.G);
      detail::read(l, "symmetrized", c.loss.symmetrized);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      detail::read(t, "batches_per_epoch", c.training.batches_per_epoch);
      detail::read(t, "pairs_per_batch", c.training.pairs_per_batch);
      detail::read(t, "epochs", c.training.epochs);
      detail::read(t, "optimizer", c.training.optimizer);
      detail::read(t, "lr", c.training.lr);
      detail::read(t, "momentum", c.training.momentum);
      detail::read(t, "seed", c.training.seed);
    }
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      detail::read(e, "ranks", c.evaluation.ranks);
      detail::read(e, "verification", c.evaluation.verification);
      detail::read(e, "verification_gallery", c.evaluation.verification_gallery);
      detail::read(e, "verification_query", c.evaluation.verification_query);
      detail::read(e, "identification_mode", c.evaluation.identification_mode);
      detail::read(e, "impostor_query_index", c.evaluation.impostor_query_index);
      detail::read(e, "max_impostors_per_subject", c.evaluation.max_impostors_per_subject);
      detail::read(e, "score_dump", c.evaluation.score_dump);
    }
    detail::read(j, "output_dir", c.output_dir);
    detail::read(j, "deterministic", c.deterministic);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Pipeline

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Sequences for the configured data source.
inline std::vector<FeatureSequence> load_sequences(const DataConfig& d) {
  if (d.source == "clusters") return synthesize_clusters(d.clusters);
  std::vector<SessionLog> sessions;
  if (d.source == "tsv") {
    if (d.tsv_path.empty()) throw ConfigError("data.tsv_path is required for source tsv");
    sessions = parse_log(read_file(d.tsv_path)).sessions;
  } else {
    sessions = synthesize_dataset(d.synthetic);
  }
  return extract_all(sessions, d.max_len);
}

/// Training sequences: all of them for cluster data (closed set), otherwise
/// the training subjects of the split.
inline std::vector<FeatureSequence> training_sequences(const ExperimentConfig& cfg, const std::vector<FeatureSequence>& seqs) {
  if (cfg.data.source == "clusters") return seqs;
  const auto spec = make_split_spec(seqs, cfg.split.train_subjects, cfg.split.background_subjects, cfg.split.query_subjects,
                                    cfg.split.gallery_sessions, cfg.split.query_sessions);
  return split_dataset(seqs, spec).train;
}

inline ModelParams initial_model(const ExperimentConfig& cfg, std::span<const FeatureSequence> train) {
  ModelParams p = init_params(cfg.encoder.arch, cfg.training.seed);
  if (cfg.encoder.input_standardization) p.input_norm = InputNormalizer::fit(train);
  return p;
}

struct EvalOutcome {
  std::vector<int> ranks;
  std::vector<double> rank_accuracy;
  std::optional<VerificationResult> verification;
  std::vector<ScoreRecord> identification_scores;
  int background_size = 0;
  int query_trials = 0;
};

inline std::vector<Vec> embed_all(const ModelParams& p, const std::vector<FeatureSequence>& seqs) { return encode_batch(p, seqs); }

/// Identification on the configured background / query split, and
/// verification on gallery / query sessions of the same test subjects.
inline EvalOutcome evaluate_model(const ExperimentConfig& cfg, const ModelParams& params, const std::vector<FeatureSequence>& seqs) {
  EvalOutcome out;
  const auto spec = make_split_spec(seqs, cfg.split.train_subjects, cfg.split.background_subjects, cfg.split.query_subjects,
                                    cfg.split.gallery_sessions, cfg.split.query_sessions);
  const auto split = split_dataset(seqs, spec);
  IdentificationRun run;
  run.mode = cfg.evaluation.identification_mode == "query_sample" ? IdentificationMode::query_sample : IdentificationMode::query_set;
  for (const auto& b : split.background) run.background.push_back(SubjectGallery{b.subject_id, embed_all(params, b.sequences)});
  for (const auto& q : split.query) run.queries.push_back(QuerySubject{q.subject_id, embed_all(params, q.sequences)});
  out.ranks = cfg.evaluation.ranks;
  out.rank_accuracy = rank_n_accuracy(run, out.ranks);
  out.background_size = static_cast<int>(run.background.size());
  out.query_trials = static_cast<int>(true_subject_ranks(run).size());
  if (cfg.evaluation.score_dump) {
    for (const auto& q : run.queries) {
      for (const auto& g : run.background) {
        double sum = 0.0;
        for (const auto& e : q.embeddings) sum += score(g, e);
        out.identification_scores.push_back(
            ScoreRecord{q.subject_id, g.subject_id, sum / static_cast<double>(q.embeddings.size()), q.subject_id == g.subject_id});
      }
    }
  }

  if (cfg.evaluation.verification && run.background.size() >= 2) {
    SplitSpec vspec = spec;
    vspec.query_subjects.clear();
    vspec.gallery_size = cfg.evaluation.verification_gallery;
    vspec.query_size = cfg.evaluation.verification_query;
    const auto vsplit = split_dataset(seqs, vspec);
    std::vector<VerificationSubject> subjects;
    for (std::size_t k = 0; k < vsplit.background.size(); ++k) {
      subjects.push_back(VerificationSubject{vsplit.background[k].subject_id, embed_all(params, vsplit.background[k].sequences),
                                             embed_all(params, vsplit.query[k].sequences)});
    }
    VerificationOptions vo;
    vo.impostor_query_index = static_cast<std::size_t>(cfg.evaluation.impostor_query_index);
    vo.max_impostors_per_subject = static_cast<std::size_t>(cfg.evaluation.max_impostors_per_subject);
    vo.seed = cfg.training.seed;
    out.verification = run_verification(subjects, vo);
  }
  return out;
}

/// Embeds every cluster sample and groups the embeddings by class.
inline LabeledCloud embed_cloud(const ModelParams& params, const std::vector<FeatureSequence>& seqs) {
  LabeledCloud cloud;
  std::map<std::string, std::size_t> index;
  for (const auto& s : seqs) {
    auto [it, inserted] = index.emplace(s.subject_id, cloud.size());
    if (inserted) cloud.push_back(ClassCloud{s.subject_id, {}});
    cloud[it->second].points.push_back(encode(params, s));
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Report serialization

inline json to_json(const PackingReference& r) {
  return {{"N", r.n}, {"ratio", r.ratio}, {"R_paper", r.r_paper}, {"delta_cp", r.delta_cp}, {"delta_max", r.delta_max}};
}

inline json to_json(const SpaceReport& r) {
  json j;
  j["N"] = r.n_classes;
  j["dim"] = r.dim;
  j["delta"] = r.delta;
  j["rho"] = r.rho;
  j["rho_convention"] = "raw (tables often print rho x 100)";
  if (r.normalized) {
    j["normalization"] = {{"method", "smallest enclosing disk mapped to diameter 1"},
                          {"center", r.normalized->center},
                          {"raw_radius", r.normalized->radius}};
    j["delta_normalized"] = r.normalized->delta;
    j["rho_normalized"] = r.normalized->rho;
  } else {
    j["normalization"] = nullptr;
  }
  if (r.bounds) {
    j["delta_cp"] = r.bounds->delta_cp;
    j["delta_max"] = r.bounds->delta_max;
    j["packing"] = to_json(*r.bounds);
  }
  j["in_bound_scope"] = r.in_bound_scope;
  if (!r.note.empty()) j["note"] = r.note;
  json cents = json::array();
  for (std::size_t k = 0; k < r.centroids.size(); ++k) cents.push_back({{"label", r.labels[k]}, {"centroid", r.centroids[k]}});
  j["centroids"] = cents;
  return j;
}

inline json to_json(const EvalOutcome& e) {
  json j;
  json ranks = json::object();
  for (std::size_t k = 0; k < e.ranks.size(); ++k) ranks["rank_" + std::to_string(e.ranks[k])] = e.rank_accuracy[k];
  j["identification"] = {{"background_size", e.background_size}, {"trials", e.query_trials}, {"rank_accuracy", ranks}};
  if (e.verification) {
    auto v = e.verification->per_subject_eer;
    std::sort(v.begin(), v.end());
    const double median = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    j["verification"] = {{"mean_eer", e.verification->mean_eer},
                         {"genuine_count", e.verification->genuine_count},
                         {"impostor_count", e.verification->impostor_count},
                         {"per_subject_eer", {{"min", v.front()}, {"median", median}, {"max", v.back()}}}};
  }
  return j;
}

inline std::string scores_csv(const std::vector<ScoreRecord>& scores) {
  std::ostringstream os;
  os.precision(17);
  os << "query_id,subject_id,distance,label\n";
  for (const auto& s : scores) os << s.query_id << ',' << s.subject_id << ',' << s.distance << ',' << (s.genuine ? "genuine" : "impostor") << '\n';
  return os.str();
}

inline std::string cloud_csv(const LabeledCloud& cloud) {
  std::ostringstream os;
  os.precision(17);
  std::size_t dim = cloud.empty() || cloud[0].points.empty() ? 0 : cloud[0].points[0].size();
  os << "label";
  for (std::size_t k = 0; k < dim; ++k) os << ",e" << k;
  os << '\n';
  for (const auto& c : cloud) {
    for (const auto& p : c.points) {
      os << c.label;
      for (double v : p) os << ',' << v;
      os << '\n';
    }
  }
  return os.str();
}

/// Reads a labeled embedding CSV (label,e0,e1,...; header optional).
inline LabeledCloud parse_cloud_csv(std::string_view text) {
  LabeledCloud cloud;
  std::map<std::string, std::size_t> index;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() < 2) throw ParseError(line_no, "expected label and at least one coordinate");
    Vec p;
    bool numeric = true;
    for (std::size_t k = 1; k < fields.size(); ++k) {
      double v = 0.0;
      if (!detail::parse_double(fields[k], v)) {
        numeric = false;
        break;
      }
      p.push_back(v);
    }
    if (!numeric) {
      if (line_no == 1 || cloud.empty()) continue;  // header
      throw ParseError(line_no, "non-numeric coordinate");
    }
    if (dim == 0) dim = p.size();
    if (p.size() != dim) throw ParseError(line_no, "inconsistent dimension");
    auto [it, inserted] = index.emplace(fields[0], cloud.size());
    if (inserted) cloud.push_back(ClassCloud{fields[0], {}});
    cloud[it->second].points.push_back(std::move(p));
  }
  return cloud;
}

}  // namespace setmargin

#endif  // SETMARGIN_EXPERIMENT_HPP
