// setmargin: synth | train | eval | pack | analyze
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.

#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "setmargin/commands.hpp"

using namespace setmargin;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumerical = 4 };

void print_summary(const json& report) {
  const auto& r = report.at("results");
  if (r.contains("evaluation")) {
    for (const auto& [k, v] : r["evaluation"]["identification"]["rank_accuracy"].items()) std::printf("%s %.4f\n", k.c_str(), v.get<double>());
    if (r["evaluation"].contains("verification")) std::printf("mean_eer %.4f\n", r["evaluation"]["verification"]["mean_eer"].get<double>());
  }
  if (r.contains("space")) {
    const auto& s = r["space"];
    std::printf("N %d delta %.6f rho %.6f\n", s["N"].get<int>(), s["delta"].get<double>(), s["rho"].get<double>());
    if (s.contains("delta_normalized")) {
      std::printf("normalized delta %.4f rho %.4f\n", s["delta_normalized"].get<double>(), s["rho_normalized"].get<double>());
    }
    if (s.contains("delta_max")) std::printf("delta_cp %.4f delta_max %.4f\n", s["delta_cp"].get<double>(), s["delta_max"].get<double>());
  }
  if (r.contains("packings")) {
    for (const auto& p : r["packings"]) {
      std::printf("N=%d", p["N"].get<int>());
      if (p.contains("reference")) {
        std::printf(" delta_cp %.4f delta_max %.4f spacing %.6f", p["reference"]["delta_cp"].get<double>(),
                    p["reference"]["delta_max"].get<double>(), p["optimal_point_spacing"].get<double>());
      }
      if (p.contains("solution")) std::printf(" solved %.6f", p["solution"]["min_distance"].get<double>());
      std::printf("\n");
    }
  }
  if (r.contains("epoch_mean_loss")) std::printf("final epoch loss %.6f\n", r["epoch_mean_loss"].empty() ? 0.0 : r["epoch_mean_loss"].back().get<double>());
  if (r.contains("dataset_checksum")) std::printf("dataset %s\n", r["dataset_checksum"].get<std::string>().c_str());
  if (report.contains("checksum")) std::printf("checksum %s\n", report["checksum"].get<std::string>().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Set-based metric learning for keystroke biometrics"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool deterministic = true;
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--seed", seed, "seed for training and data generation");
  app.add_option("--out", out_dir, "output directory (overrides output_dir)");
  app.add_flag("--deterministic,!--no-deterministic", deterministic, "fixed reduction order (default on)");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "no progress output");

  auto* synth = app.add_subcommand("synth", "write a synthetic keystroke corpus");
  auto* train_cmd = app.add_subcommand("train", "train an encoder and save checkpoint.json");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/checkpoint.json)");
  auto* pack = app.add_subcommand("pack", "packing bounds and point-packing solutions");
  int n = 12;
  std::vector<int> range;
  PackRequest req;
  pack->add_option("-n,--n", n, "class count");
  pack->add_option("--range", range, "N_min N_max")->expected(2);
  pack->add_flag("--solve", req.solve, "run the point-packing optimizer");
  pack->add_option("--restarts", req.options.restarts, "optimizer restarts");
  pack->add_option("--iters", req.options.max_iters, "iterations per restart");
  pack->add_option("--solver-seed", req.options.seed, "optimizer seed");
  auto* analyze = app.add_subcommand("analyze", "space report for an embedding CSV");
  std::string embeddings;
  analyze->add_option("embeddings", embeddings, "CSV with label,e0,e1,...")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    CommandContext ctx;
    if (!config_path.empty()) ctx.config = load_config(config_path);
    if (seed) ctx.config.apply_seed(*seed);
    ctx.config.deterministic = deterministic;
    ctx.config.validate();
    ctx.out_dir = out_dir.empty() ? ctx.config.output_dir : out_dir;

    json report;
    if (*synth) {
      report = cmd_synth(ctx);
    } else if (*train_cmd) {
      report = cmd_train(ctx, [&](int epoch, double loss) {
        if (!quiet) std::fprintf(stderr, "epoch %d mean loss %.6f\n", epoch + 1, loss);
      });
    } else if (*eval) {
      report = cmd_eval(ctx, checkpoint.empty() ? detail::join(ctx.out_dir, "checkpoint.json") : checkpoint);
    } else if (*pack) {
      req.n_min = range.empty() ? n : range[0];
      req.n_max = range.empty() ? n : range[1];
      report = cmd_pack(ctx, req);
    } else if (*analyze) {
      report = cmd_analyze(ctx, embeddings);
    }
    if (!quiet) print_summary(report);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}
