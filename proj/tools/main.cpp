#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <auvire/cli.hpp>

namespace {

std::vector<double> parse_double_csv(const std::string& s) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    const std::string tok = s.substr(pos, comma - pos);
    if (!tok.empty()) {
      try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        out.push_back(v);
      } catch (const std::exception&) {
        throw auvire::config_error("cannot parse number \"" + tok + "\"");
      }
    }
    pos = comma + 1;
  }
  return out;
}

std::vector<int> parse_int_csv(const std::string& s) {
  std::vector<int> out;
  for (double v : parse_double_csv(s)) out.push_back(static_cast<int>(v));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace auvire;

  CLI::App app{"audio-visual temporal forgery localization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "run config JSON file");
  auto* seed_opt = app.add_option("--seed", seed, "override every seed in the config");

  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "synthesize a labelled dataset");
  gen->add_option("--out", gen_out, "output directory")->required();

  std::string train_manifest, train_out;
  auto* train = app.add_subcommand("train", "train a model and report test metrics");
  train->add_option("--manifest", train_manifest, "dataset manifest")->required();
  train->add_option("--out", train_out, "output directory")->required();

  std::string score_ckpt, score_features, score_validity, score_mode = "psi_m", score_out;
  double score_theta = -1.0, score_chunk = -1.0, score_min_seg = -1.0;
  bool score_no_chunking = false;
  auto* score = app.add_subcommand("score", "score wild videos with a trained model");
  score->add_option("--checkpoint", score_ckpt, "model checkpoint")->required();
  score->add_option("--features", score_features, "feature file or directory")->required();
  score->add_option("--validity", score_validity, "per-video validity file");
  score->add_option("--mode", score_mode, "psi_m, psi_s or video")
      ->check(CLI::IsMember({"psi_m", "psi_s", "video"}));
  auto* theta_opt = score->add_option("--theta", score_theta, "activity threshold for psi_m");
  auto* chunk_opt = score->add_option("--chunk-seconds", score_chunk, "chunk window length");
  auto* minseg_opt =
      score->add_option("--min-segment-seconds", score_min_seg, "minimum valid segment length");
  score->add_flag("--no-chunking", score_no_chunking, "run the whole video in one pass");
  score->add_option("--out", score_out, "score file (default: print to stdout)");

  std::string cal_ckpt, cal_manifest, cal_validity, cal_split = "test", cal_out;
  std::string cal_thetas = "0.001,0.002,0.005,0.01,0.02,0.05,0.1,0.2,0.5";
  auto* cal = app.add_subcommand("calibrate-theta", "sweep theta and report AUC/AP per value");
  cal->add_option("--checkpoint", cal_ckpt, "model checkpoint")->required();
  cal->add_option("--manifest", cal_manifest, "labelled dataset manifest")->required();
  cal->add_option("--validity", cal_validity, "per-video validity file");
  cal->add_option("--split", cal_split, "manifest split to calibrate on");
  cal->add_option("--thetas", cal_thetas, "comma-separated theta grid");
  cal->add_option("--out", cal_out, "table output file");

  std::string sweep_manifest, sweep_out;
  std::string sweep_da, sweep_recon, sweep_enc;
  auto* sweep = app.add_subcommand("sweep", "grid-search architecture widths and depths");
  sweep->add_option("--manifest", sweep_manifest, "dataset manifest")->required();
  sweep->add_option("--out", sweep_out, "output directory")->required();
  sweep->add_option("--grid-d-a", sweep_da, "comma-separated d_a values");
  sweep->add_option("--grid-recon-depth", sweep_recon, "comma-separated recon depths");
  sweep->add_option("--grid-encoder-depth", sweep_enc, "comma-separated encoder depths");

  try {
    app.parse(argc, argv);

    RunConfig cfg = load_run_config(config_path);
    if (seed_opt->count() > 0) {
      cfg.seed = seed;
      cfg.train.seed = seed;
      cfg.synthetic.seed = seed;
    }

    if (app.got_subcommand(gen)) {
      const auto manifest = cmd_generate(cfg, gen_out);
      int n_train = 0, n_val = 0, n_test = 0;
      for (const auto& e : manifest) (e.split == "train" ? n_train : e.split == "val" ? n_val : n_test)++;
      std::printf("wrote %zu samples to %s (train/val/test = %d/%d/%d)\n", manifest.size(),
                  gen_out.c_str(), n_train, n_val, n_test);
    } else if (app.got_subcommand(train)) {
      const TrainOutcome out = cmd_train(cfg, train_manifest, train_out);
      std::printf("trained %d epochs, best validation criterion %.6f%s\n", out.result.epochs_completed,
                  out.result.best_criterion, out.result.early_stopped ? " (early stop)" : "");
      for (const auto& [k, v] : out.test_report) std::printf("%s %.6f\n", k.c_str(), v);
    } else if (app.got_subcommand(score)) {
      ScoreSettings s;
      s.validity = cfg.validity;
      s.decode = cfg.eval.decode;
      s.nms_sigma = cfg.eval.nms_sigma;
      s.nms_min_score = cfg.eval.nms_min_score;
      s.theta = cfg.eval.theta;
      if (theta_opt->count() > 0) s.theta = score_theta;
      if (chunk_opt->count() > 0) s.validity.chunk_s = score_chunk;
      if (minseg_opt->count() > 0) s.validity.min_segment_s = score_min_seg;
      s.chunked = !score_no_chunking;
      const auto results = cmd_score(score_ckpt, score_features, score_validity,
                                     score_mode_from_name(score_mode), s, score_out);
      if (score_out.empty()) {
        for (const auto& r : results) {
          ordered_json j;
          j["id"] = r.id;
          if (score_mode == "psi_m") {
            if (r.psi_m)
              j["score"] = *r.psi_m;
            else
              j["score"] = nullptr;
          } else if (score_mode == "psi_s") {
            j["score"] = r.psi_s;
          } else {
            j["score"] = r.video;
          }
          j["n_segments"] = r.predictions.size();
          std::printf("%s\n", j.dump().c_str());
        }
      } else {
        std::printf("scored %zu videos into %s\n", results.size(), score_out.c_str());
      }
    } else if (app.got_subcommand(cal)) {
      ScoreSettings s;
      s.validity = cfg.validity;
      s.decode = cfg.eval.decode;
      s.nms_sigma = cfg.eval.nms_sigma;
      s.nms_min_score = cfg.eval.nms_min_score;
      s.theta = cfg.eval.theta;
      const auto grid = parse_double_csv(cal_thetas);
      const auto out = cmd_calibrate_theta(cal_ckpt, cal_manifest, cal_validity, cal_split, grid, s, cal_out);
      std::printf("theta        auc     ap\n");
      for (const auto& r : out.rows) std::printf("%-10g %.4f %.4f\n", r.theta, r.auc, r.ap);
      std::printf("best theta by AUC: %g\n", out.best_theta);
    } else if (app.got_subcommand(sweep)) {
      SweepGrid grid;
      if (!sweep_da.empty()) grid.d_a = parse_int_csv(sweep_da);
      if (!sweep_recon.empty()) grid.recon_depth = parse_int_csv(sweep_recon);
      if (!sweep_enc.empty()) grid.encoder_depth = parse_int_csv(sweep_enc);
      const SweepResult res = cmd_sweep(cfg, sweep_manifest, sweep_out, grid);
      for (const auto& c : res.cells) {
        if (c.error.empty())
          std::printf("%-16s avg_rank %.2f criterion %.4f\n", c.name.c_str(), c.avg_rank, c.criterion);
        else
          std::printf("%-16s FAILED: %s\n", c.name.c_str(), c.error.c_str());
      }
      std::printf("best cell: %s\n", res.best.c_str());
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const config_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
