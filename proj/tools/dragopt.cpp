// Command-line driver: dataset generation, training, model comparison,
// latent-space optimisation, candidate re-evaluation and reporting.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dragopt/error.hpp"
#include "dragopt/latentnet.hpp"
#include "dragopt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dragopt;

namespace {

pipeline::Config load_config(const std::string& path) {
  return path.empty() ? pipeline::Config{} : pipeline::Config::load(path);
}

void log_line(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Drag-minimising shape design in a learned latent space"};
  app.require_subcommand(1);

  std::string config_path, out, data_dir, mode = "joint", ckpt, contours_dir, campaign_dir, metrics_path;
  int n_shapes = 512;
  std::uint64_t seed = 1;
  bool seed_given = false;

  auto* gen = app.add_subcommand("gen-dataset", "Sample shapes, simulate them and write a dataset directory");
  gen->add_option("--config", config_path, "Config file (key = value)")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Dataset directory")->required();
  gen->add_option("--n", n_shapes, "Number of shapes")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Master seed (default: config seed)")->each([&](const std::string&) {
    seed_given = true;
  });

  auto* train = app.add_subcommand("train", "Train the autoencoder and drag network");
  train->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  train->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--mode", mode, "joint or separate")->check(CLI::IsMember({"joint", "separate"}));
  train->add_option("--out", ckpt, "Checkpoint file")->required();
  train->add_option("--metrics", metrics_path, "Per-epoch metrics file (default: <out>.metrics.tsv)");

  auto* compare = app.add_subcommand("compare", "Train and compare the eight model variants");
  compare->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  compare->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  compare->add_option("--out", out, "Table file")->required();
  compare->add_option("--seed", seed, "Training seed (default: config seed)")->each([&](const std::string&) {
    seed_given = true;
  });

  auto* optimize = app.add_subcommand("optimize", "Maximise expected improvement in latent space");
  optimize->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  optimize->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  optimize->add_option("--ckpt", ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  optimize->add_option("--out", out, "Campaign directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Simulate every *.contour file in a directory");
  evaluate->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  evaluate->add_option("--contours", contours_dir, "Directory of contour files")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--out", out, "Output table")->required();

  auto* rep = app.add_subcommand("report", "Write summary.csv and PGM renderings for a campaign");
  rep->add_option("--campaign", campaign_dir, "Campaign directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const auto cfg = load_config(config_path);
      const auto d = pipeline::generate_dataset(cfg, out, n_shapes, seed_given ? seed : cfg.seed, log_line);
      std::printf("%zu shapes, %zu train / %zu test usable, cd mean %.6f std %.6f\n", d.rows.size(),
                  d.usable(pipeline::Split::kTrain).size(), d.usable(pipeline::Split::kTest).size(), d.labels.mean,
                  d.labels.std);
    } else if (*train) {
      const auto cfg = load_config(config_path);
      const auto dataset = pipeline::load_dataset(data_dir);
      const auto tc = cfg.training(latentnet::parse_mode(mode));
      const auto result = latentnet::train(pipeline::training_data(dataset), tc, [](const latentnet::EpochMetrics& m) {
        char msg[200];
        std::snprintf(msg, sizeof msg, "stage %d epoch %d recon %.5f kl %.4f dn %.5f", m.stage, m.epoch,
                      m.loss_recon, m.loss_kl, m.loss_dn);
        log_line(msg);
      });
      latentnet::save_checkpoint(ckpt, result.params,
                                 {{"mode", mode}, {"seed", std::to_string(tc.seed)}, {"epochs", std::to_string(tc.epochs)}});
      latentnet::write_metrics(metrics_path.empty() ? ckpt + ".metrics.tsv" : metrics_path, result.metrics);
      const auto& last = result.metrics.epochs.back();
      std::printf("trained %s: loss_recon %.6f loss_kl %.6f loss_dn %.6f\n", mode.c_str(), last.loss_recon,
                  last.loss_kl, last.loss_dn);
    } else if (*compare) {
      const auto cfg = load_config(config_path);
      const auto dataset = pipeline::load_dataset(data_dir);
      const auto table =
          pipeline::run_model_comparison(dataset, cfg, pipeline::comparison_models(), seed_given ? seed : cfg.seed, log_line);
      pipeline::write_comparison(out, table);
      const bool all_ok = std::all_of(table.models.begin(), table.models.end(), [](const auto& m) { return m.ok; });
      std::printf("wrote %s%s\n", out.c_str(), all_ok ? "" : " (some models failed)");
    } else if (*optimize) {
      const auto cfg = load_config(config_path);
      const auto dataset = pipeline::load_dataset(data_dir);
      const auto params = latentnet::load_checkpoint(ckpt);
      const auto report = pipeline::run_optimization(dataset, params, cfg, out, log_line);
      const auto& best = report.candidates.front();
      std::printf("best training cd %.6f, best candidate cd %.6f (improvement %.2f%%), %zu evaluated, %zu skipped\n",
                  report.best_train_cd, best.record.cd, 100.0 * best.improvement, report.candidates.size(),
                  report.skipped.size());
    } else if (*evaluate) {
      const auto cfg = load_config(config_path);
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(contours_dir)) {
        if (e.path().extension() == ".contour") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      std::vector<std::pair<std::string, shapegen::ShapeContour>> contours;
      for (const auto& f : files) contours.emplace_back(f.stem().string(), shapegen::read_contour(f));
      const auto records = pipeline::evaluate_candidates(contours, cfg.grid(), cfg.fluid(), cfg.solver());
      pipeline::write_drag_records(out, records);
      const auto failed = std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.converged; });
      std::printf("evaluated %zu contours, %td failed\n", records.size(), failed);
    } else if (*rep) {
      pipeline::report(campaign_dir);
      std::printf("wrote %s\n", (fs::path(campaign_dir) / "report").c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.is_numerical() ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
