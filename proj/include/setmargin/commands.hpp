#ifndef SETMARGIN_COMMANDS_HPP
#define SETMARGIN_COMMANDS_HPP

// The subcommands behind the CLI. Each one writes its artifacts under the
// output directory and returns the JSON report it wrote.
//
// Reports split into a deterministic part ("config", "results") and run
// metadata (wall clock). The checksum covers the deterministic part only.
// Artifact names in results are relative to the output directory.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>

#include "setmargin/experiment.hpp"

namespace setmargin {

struct CommandContext {
  ExperimentConfig config;
  std::string out_dir;
};

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) { return (std::filesystem::path(dir) / name).string(); }

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("failed writing " + path);
}

inline json finish_report(json results, const ExperimentConfig& cfg, double seconds) {
  json r;
  r["config"] = to_json(cfg);
  r["seed"] = cfg.training.seed;
  r["results"] = std::move(results);
  r["checksum"] = hex64(fnv1a64(r["config"].dump() + r["results"].dump()));
  r["wall_clock_seconds"] = seconds;
  return r;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string loss_trace_csv(const TrainingResult& r, int batches_per_epoch) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,batch,loss\n";
  for (std::size_t k = 0; k < r.batch_loss.size(); ++k) {
    os << k / static_cast<std::size_t>(batches_per_epoch) << ',' << k % static_cast<std::size_t>(batches_per_epoch) << ','
       << r.batch_loss[k] << '\n';
  }
  return os.str();
}

}  // namespace detail

/// Writes the synthetic keystroke corpus as TSV.
inline json cmd_synth(const CommandContext& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = ctx.config;
  if (cfg.data.source != "synthetic") throw ConfigError("synth: data.source must be synthetic");
  detail::ensure_dir(ctx.out_dir);
  const auto logs = synthesize_dataset(cfg.data.synthetic);
  const std::string text = serialize_log(logs);
  const std::string path = detail::join(ctx.out_dir, "dataset.tsv");
  detail::write_text(path, text);
  std::size_t events = 0;
  for (const auto& s : logs) events += s.events.size();
  json results = {{"dataset", "dataset.tsv"},
                  {"subjects", cfg.data.synthetic.n_subjects},
                  {"sessions", logs.size()},
                  {"events", events},
                  {"dataset_checksum", hex64(fnv1a64(text))}};
  auto report = detail::finish_report(results, cfg, detail::seconds_since(t0));
  detail::write_text(detail::join(ctx.out_dir, "synth_report.json"), report.dump(2) + "\n");
  return report;
}

/// Trains from the configured initialization and saves checkpoint.json.
inline json cmd_train(const CommandContext& ctx, const std::function<void(int, double)>& on_epoch = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = ctx.config;
  detail::ensure_dir(ctx.out_dir);
  const auto seqs = load_sequences(cfg.data);
  const auto train_seqs = training_sequences(cfg, seqs);
  const auto init = initial_model(cfg, train_seqs);
  const auto res = train(init, train_seqs, cfg.loss, cfg.training, on_epoch);
  const std::string ckpt = checkpoint_text(res.params);
  const std::string ckpt_path = detail::join(ctx.out_dir, "checkpoint.json");
  detail::write_text(ckpt_path, ckpt);
  detail::write_text(detail::join(ctx.out_dir, "loss_trace.csv"), detail::loss_trace_csv(res, cfg.training.batches_per_epoch));
  json results = {{"checkpoint", "checkpoint.json"},
                  {"checkpoint_checksum", hex64(fnv1a64(ckpt))},
                  {"parameters", res.params.size()},
                  {"training_samples", train_seqs.size()},
                  {"optimizer", cfg.training.optimizer},
                  {"lr", cfg.training.lr},
                  {"epoch_mean_loss", res.epoch_mean_loss}};
  auto report = detail::finish_report(results, cfg, detail::seconds_since(t0));
  detail::write_text(detail::join(ctx.out_dir, "train_report.json"), report.dump(2) + "\n");
  return report;
}

/// Space report of the 2-D (or higher) embeddings of every cluster sample.
inline json space_results(const LabeledCloud& cloud) { return to_json(analyze_space(cloud)); }

/// Evaluates a checkpoint. Keystroke data gets identification and
/// verification; cluster data gets an embedding dump and a space report.
inline json cmd_eval(const CommandContext& ctx, const std::string& checkpoint_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& cfg = ctx.config;
  detail::ensure_dir(ctx.out_dir);
  const std::string ckpt_text = read_file(checkpoint_path);
  const auto params = load_checkpoint(checkpoint_path);
  if (!(params.arch == cfg.encoder.arch)) throw ConfigError("eval: checkpoint architecture does not match the config");
  const auto seqs = load_sequences(cfg.data);
  json results;
  results["checkpoint_checksum"] = hex64(fnv1a64(ckpt_text));
  if (cfg.data.source == "clusters") {
    const auto cloud = embed_cloud(params, seqs);
    detail::write_text(detail::join(ctx.out_dir, "embeddings.csv"), cloud_csv(cloud));
    results["space"] = space_results(cloud);
  } else {
    const auto ev = evaluate_model(cfg, params, seqs);
    results["evaluation"] = to_json(ev);
    if (cfg.evaluation.score_dump) {
      detail::write_text(detail::join(ctx.out_dir, "identification_scores.csv"), scores_csv(ev.identification_scores));
      if (ev.verification) detail::write_text(detail::join(ctx.out_dir, "scores.csv"), scores_csv(ev.verification->scores));
    }
  }
  auto report = detail::finish_report(results, cfg, detail::seconds_since(t0));
  detail::write_text(detail::join(ctx.out_dir, "eval_report.json"), report.dump(2) + "\n");
  return report;
}

struct PackRequest {
  int n_min = 12;
  int n_max = 12;
  bool solve = false;
  PackingOptions options;
};

/// Reference bounds for each N in range, plus optimizer solutions and
/// their coordinate layouts when requested.
inline json cmd_pack(const CommandContext& ctx, const PackRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  if (req.n_min < 2 || req.n_max < req.n_min) throw ConfigError("pack: need 2 <= N_min <= N_max");
  detail::ensure_dir(ctx.out_dir);
  json rows = json::array();
  for (int n = req.n_min; n <= req.n_max; ++n) {
    json row = {{"N", n}};
    if (n <= kPackingTableMax) {
      row["reference"] = to_json(packing_reference(n));
      row["optimal_point_spacing"] = optimal_point_spacing(n);
    }
    if (req.solve) {
      const auto sol = solve_point_packing(n, req.options);
      std::ostringstream os;
      os.precision(17);
      os << "index,x,y\n";
      for (std::size_t k = 0; k < sol.points.size(); ++k) os << k << ',' << sol.points[k][0] << ',' << sol.points[k][1] << '\n';
      const std::string path = detail::join(ctx.out_dir, "packing_" + std::to_string(n) + ".csv");
      detail::write_text(path, os.str());
      row["solution"] = {{"min_distance", sol.min_distance}, {"best_restart", sol.best_restart}, {"layout", std::filesystem::path(path).filename().string()}};
      if (n <= kPackingTableMax) row["solution"]["relative_gap"] = 1.0 - sol.min_distance / optimal_point_spacing(n);
    }
    rows.push_back(row);
  }
  json results = {{"solver",
                   {{"restarts", req.options.restarts}, {"max_iters", req.options.max_iters}, {"seed", req.options.seed}, {"enabled", req.solve}}},
                  {"packings", rows}};
  json report;
  report["results"] = results;
  report["checksum"] = hex64(fnv1a64(results.dump()));
  report["wall_clock_seconds"] = detail::seconds_since(t0);
  detail::write_text(detail::join(ctx.out_dir, "pack_report.json"), report.dump(2) + "\n");
  return report;
}

/// Space report for a labeled embedding CSV.
inline json cmd_analyze(const CommandContext& ctx, const std::string& embeddings_path) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::ensure_dir(ctx.out_dir);
  const auto cloud = parse_cloud_csv(read_file(embeddings_path));
  if (cloud.size() < 2) throw DataError("analyze: need at least 2 classes, found " + std::to_string(cloud.size()));
  json results = {{"embeddings", std::filesystem::path(embeddings_path).filename().string()}, {"space", space_results(cloud)}};
  json report;
  report["results"] = results;
  report["checksum"] = hex64(fnv1a64(results.dump()));
  report["wall_clock_seconds"] = detail::seconds_since(t0);
  detail::write_text(detail::join(ctx.out_dir, "space_report.json"), report.dump(2) + "\n");
  return report;
}

}  // namespace setmargin

#endif  // SETMARGIN_COMMANDS_HPP
