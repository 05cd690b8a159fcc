// safire: multi-source forgery localization pipeline driver.
//
// Subcommands: gen, pretrain, train, infer, eval, robustness, gradcheck.
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
// failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "safire/gradcheck.hpp"
#include "safire/inference.hpp"
#include "safire/io.hpp"
#include "safire/metrics.hpp"
#include "safire/rng.hpp"
#include "safire/synth.hpp"
#include "safire/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace safire;

namespace {

// Configuration file (JSON): every key optional, flags override config,
// config overrides the built-in defaults. Schema:
// {
//   "trainer": { "lr", "momentum", "batch_size", "pairs_per_image", "tau",
//                "pretrain_crop", "c_aass", "lambda_conf",
//                "normalize_embeddings", "augment_enabled" },
//   "augment": { "p_blur", "p_noise", "p_gamma", "p_contrast", "p_jpeg",
//                "blur_sigma_lo", "blur_sigma_hi", "noise_sigma_lo",
//                "noise_sigma_hi", "gamma_lo", "gamma_hi", "contrast_lo",
//                "contrast_hi", "jpeg_quality_lo", "jpeg_quality_hi" },
//   "gen":     { "min_margin" },
//   "infer":   { "grid", "dbscan_eps", "dbscan_min_pts" }
// }
struct Config {
  trainer::TrainConfig trainer;
  synth::GenConfig gen;
  inference::InferOptions infer;
};

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

Config load_config(const std::string& path) {
  Config cfg;
  if (path.empty()) return cfg;
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }
  if (j.contains("trainer")) {
    const auto& t = j["trainer"];
    maybe(t, "lr", cfg.trainer.lr);
    maybe(t, "momentum", cfg.trainer.momentum);
    maybe(t, "batch_size", cfg.trainer.batch_size);
    maybe(t, "pairs_per_image", cfg.trainer.pairs_per_image);
    maybe(t, "tau", cfg.trainer.tau);
    maybe(t, "pretrain_crop", cfg.trainer.pretrain_crop);
    maybe(t, "c_aass", cfg.trainer.c_aass);
    maybe(t, "lambda_conf", cfg.trainer.lambda_conf);
    maybe(t, "normalize_embeddings", cfg.trainer.normalize_embeddings);
    maybe(t, "augment_enabled", cfg.trainer.augment_enabled);
  }
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    auto& g = cfg.trainer.augment;
    maybe(a, "p_blur", g.p_blur);
    maybe(a, "p_noise", g.p_noise);
    maybe(a, "p_gamma", g.p_gamma);
    maybe(a, "p_contrast", g.p_contrast);
    maybe(a, "p_jpeg", g.p_jpeg);
    maybe(a, "blur_sigma_lo", g.blur_sigma_lo);
    maybe(a, "blur_sigma_hi", g.blur_sigma_hi);
    maybe(a, "noise_sigma_lo", g.noise_sigma_lo);
    maybe(a, "noise_sigma_hi", g.noise_sigma_hi);
    maybe(a, "gamma_lo", g.gamma_lo);
    maybe(a, "gamma_hi", g.gamma_hi);
    maybe(a, "contrast_lo", g.contrast_lo);
    maybe(a, "contrast_hi", g.contrast_hi);
    maybe(a, "jpeg_quality_lo", g.jpeg_quality_lo);
    maybe(a, "jpeg_quality_hi", g.jpeg_quality_hi);
  }
  if (j.contains("gen")) maybe(j["gen"], "min_margin", cfg.gen.min_margin);
  if (j.contains("infer")) {
    const auto& i = j["infer"];
    maybe(i, "grid", cfg.infer.grid);
    maybe(i, "dbscan_eps", cfg.infer.dbscan_eps);
    maybe(i, "dbscan_min_pts", cfg.infer.dbscan_min_pts);
  }
  return cfg;
}

std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc - 1; ++i)
    if (std::string(argv[i]) == "--config") return argv[i + 1];
  return "";
}

std::string stem5(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", index);
  return buf;
}

int run_gen(const Config& cfg, const std::string& out, int count, int size, int sources,
            Seed seed) {
  fs::create_directories(fs::path(out) / "images");
  fs::create_directories(fs::path(out) / "partitions");
  fs::create_directories(fs::path(out) / "binary");
  json manifest;
  manifest["master_seed"] = seed;
  manifest["samples"] = json::array();
  for (int i = 0; i < count; ++i) {
    const Seed s = Rng::mix(seed, uint64_t(i));
    auto sample = synth::generate_sample(s, size, sources, cfg.gen);
    const std::string stem = stem5(i);
    io::write_image_png(sample.image, out + "/images/" + stem + ".png");
    io::write_partition_png(sample.partition, out + "/partitions/" + stem + ".png");
    io::write_mask_png(synth::partition_to_binary(sample.partition),
                       out + "/binary/" + stem + ".png");
    json sigs = json::array();
    for (const auto& g : sample.signatures)
      sigs.push_back({{"noise_sigma", g.noise_sigma},
                      {"color_gain", {g.color_gain[0], g.color_gain[1], g.color_gain[2]}},
                      {"quant_step", g.quant_step},
                      {"blur_sigma", g.blur_sigma}});
    manifest["samples"].push_back(
        {{"index", i}, {"seed", s}, {"n_sources", sources}, {"signatures", sigs}});
  }
  std::ofstream os(out + "/manifest.json");
  os << manifest.dump(2) << "\n";
  std::cout << "wrote " << count << " samples to " << out << "\n";
  return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& metric,
             const std::string& out_csv) {
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(gt_dir)) {
    const auto ext = e.path().extension();
    if (ext == ".png") stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw ConfigError("no ground-truth PNGs in " + gt_dir);

  std::ofstream os(out_csv);
  if (!os) throw IoError("cannot write " + out_csv);
  os << "name,score\n";
  os.precision(10);
  double sum = 0;
  for (const auto& s : stems) {
    double score = 0;
    if (metric == "f1_fixed" || metric == "f1_best") {
      BinaryMask gt = io::read_mask_png(gt_dir + "/" + s + ".png");
      PredictionMap pred = io::read_prediction(pred_dir + "/" + s + ".safr");
      if (gt.height != pred.height || gt.width != pred.width)
        throw FormatError("shape mismatch for " + s + ": gt " + std::to_string(gt.height) + "x" +
                          std::to_string(gt.width) + " vs pred " + std::to_string(pred.height) +
                          "x" + std::to_string(pred.width));
      score = metric == "f1_fixed" ? metrics::permuted_f1_fixed(gt, pred)
                                   : metrics::permuted_f1_best(gt, pred);
    } else if (metric == "pmiou" || metric == "ari") {
      SourcePartition gt = io::read_partition_png(gt_dir + "/" + s + ".png");
      SourcePartition pred = io::read_partition_png(pred_dir + "/" + s + ".png");
      if (gt.height != pred.height || gt.width != pred.width)
        throw FormatError("shape mismatch for " + s + ": gt " + std::to_string(gt.height) + "x" +
                          std::to_string(gt.width) + " vs pred " + std::to_string(pred.height) +
                          "x" + std::to_string(pred.width));
      score = metric == "pmiou" ? metrics::permuted_miou(gt, pred) : metrics::ari(gt, pred);
    } else {
      throw ArgumentError("unknown metric: " + metric);
    }
    os << s << "," << score << "\n";
    sum += score;
  }
  const double mean = sum / double(stems.size());
  os << "MEAN," << mean << "\n";
  std::cout << metric << " mean over " << stems.size() << " items: " << mean << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"safire: point-prompted multi-source forgery localization"};
  app.require_subcommand(1);
  app.footer("Unknown flag? Run the subcommand with --help for the full list.");

  Config cfg;
  try {
    cfg = load_config(find_config_arg(argc, argv));
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::string config_path;
  Seed seed = 0;
  int jobs = 1;

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic multi-source dataset");
  std::string gen_out = "dataset";
  int gen_count = 10, gen_size = 256, gen_sources = 2;
  gen->add_option("--out", gen_out, "Output directory");
  gen->add_option("--count", gen_count, "Number of samples");
  gen->add_option("--size", gen_size, "Square image size (multiple of 8)");
  gen->add_option("--sources", gen_sources, "Sources per image (1..6)");
  gen->add_option("--margin", cfg.gen.min_margin, "Minimum signature separation");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Contrastive encoder pretraining");
  std::string pre_data, pre_out = "pretrained.ckpt";
  int pre_epochs = 20;
  pre->add_option("--data", pre_data, "Dataset directory (from gen)")->required();
  pre->add_option("--out", pre_out, "Output checkpoint");
  pre->add_option("--epochs", pre_epochs, "Training epochs");
  pre->add_option("--lr", cfg.trainer.lr, "Learning rate");

  // train
  auto* tr = app.add_subcommand("train", "Point-prompt decoder training");
  std::string tr_data, tr_pre, tr_out = "trained.ckpt";
  int tr_epochs = 30;
  bool tr_baseline = false;
  double tr_lr = 0.02;
  tr->add_option("--data", tr_data, "Dataset directory (from gen)")->required();
  tr->add_option("--pretrained", tr_pre, "Pretrained checkpoint")->required();
  tr->add_option("--out", tr_out, "Output checkpoint");
  tr->add_option("--epochs", tr_epochs, "Training epochs");
  tr->add_option("--lr", tr_lr, "Learning rate");
  tr->add_flag("--baseline", tr_baseline, "Train the unprompted plain-BCE baseline");

  // infer
  auto* inf = app.add_subcommand("infer", "Run grid-prompt inference on one image");
  std::string inf_ckpt, inf_image, inf_out = "infer_out", inf_mode = "binary",
              inf_cluster = "kmeans";
  int inf_m = 2;
  bool inf_baseline = false;
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint")->required();
  inf->add_option("--image", inf_image, "Input image (PNG)")->required();
  inf->add_option("--grid", cfg.infer.grid, "Prompt grid side");
  inf->add_option("--mode", inf_mode, "binary|multi")
      ->check(CLI::IsMember({"binary", "multi"}));
  inf->add_option("--cluster", inf_cluster, "kmeans|dbscan")
      ->check(CLI::IsMember({"kmeans", "dbscan"}));
  inf->add_option("--m", inf_m, "Cluster count (kmeans)");
  inf->add_option("--eps", cfg.infer.dbscan_eps, "DBSCAN eps");
  inf->add_option("--min-pts", cfg.infer.dbscan_min_pts, "DBSCAN min points");
  inf->add_option("--out", inf_out, "Output directory");
  inf->add_flag("--baseline", inf_baseline, "Unprompted baseline heatmap");

  // eval
  auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  std::string ev_pred, ev_gt, ev_metric = "f1_fixed", ev_out = "report.csv";
  ev->add_option("--pred", ev_pred, "Prediction directory")->required();
  ev->add_option("--gt", ev_gt, "Ground-truth directory")->required();
  ev->add_option("--metric", ev_metric, "f1_fixed|f1_best|pmiou|ari")
      ->check(CLI::IsMember({"f1_fixed", "f1_best", "pmiou", "ari"}));
  ev->add_option("--out", ev_out, "Report CSV path");

  // robustness
  auto* rob = app.add_subcommand("robustness", "Post-processing robustness sweep");
  std::string rob_ckpt, rob_data, rob_transform = "blur", rob_levels = "0,0.5,1.0",
              rob_out = "robustness.csv";
  rob->add_option("--ckpt", rob_ckpt, "Checkpoint")->required();
  rob->add_option("--data", rob_data, "Dataset directory (needs images/ and binary/)")->required();
  rob->add_option("--transform", rob_transform, "blur|noise|jpeg|gamma")
      ->check(CLI::IsMember({"blur", "noise", "jpeg", "gamma"}));
  rob->add_option("--levels", rob_levels, "Comma-separated levels");
  rob->add_option("--out", rob_out, "Report CSV path");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  int gc_coords = 100;
  gc->add_option("--coords", gc_coords, "Coordinates to sample per mode");

  for (auto* sub : {gen, pre, tr, inf, ev, rob, gc}) {
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--jobs", jobs, "Parallel workers where supported");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  try {
    if (*gen) return run_gen(cfg, gen_out, gen_count, gen_size, gen_sources, seed);

    if (*pre) {
      auto data = trainer::load_dataset(pre_data);
      trainer::TrainConfig tc = cfg.trainer;
      tc.epochs = pre_epochs;
      auto outc = trainer::pretrain(tc, data, seed);
      net::save_checkpoint(outc.params, pre_out);
      trainer::write_log_csv(outc.log, pre_out + ".log.csv");
      std::cout << "pretrain done: loss " << outc.log.front().loss << " -> "
                << outc.log.back().loss << "\n";
      return 0;
    }

    if (*tr) {
      auto data = trainer::load_dataset(tr_data);
      trainer::TrainConfig tc = cfg.trainer;
      tc.epochs = tr_epochs;
      tc.lr = tr_lr;
      auto pretrained = net::load_checkpoint(tr_pre);
      auto outc = tr_baseline ? trainer::train_baseline(tc, data, pretrained, seed)
                              : trainer::train(tc, data, pretrained, seed);
      net::save_checkpoint(outc.params, tr_out);
      trainer::write_log_csv(outc.log, tr_out + ".log.csv");
      std::cout << "train done: loss " << outc.log.front().loss << " -> " << outc.log.back().loss
                << ", acc " << outc.log.back().acc << "\n";
      return 0;
    }

    if (*inf) {
      auto params = net::load_checkpoint(inf_ckpt);
      Image img = io::read_image_png(inf_image);
      fs::create_directories(inf_out);
      const std::string stem = fs::path(inf_image).stem().string();
      if (inf_baseline) {
        auto heat = inference::infer_baseline(params, img);
        io::write_prediction(heat, inf_out + "/" + stem + ".safr");
        io::write_heatmap_png(heat, inf_out + "/" + stem + "_heat.png");
        return 0;
      }
      inference::InferOptions opts = cfg.infer;
      opts.multi = inf_mode == "multi";
      opts.cluster = inf_cluster == "dbscan" ? inference::ClusterMethod::kDbscan
                                             : inference::ClusterMethod::kKMeans;
      opts.m = inf_m;
      opts.seed = seed;
      auto res = inference::infer(params, img, opts);
      if (!opts.multi) {
        io::write_prediction(res.heatmap, inf_out + "/" + stem + ".safr");
        io::write_heatmap_png(res.heatmap, inf_out + "/" + stem + "_heat.png");
      } else {
        io::write_partition_png(res.partition, inf_out + "/" + stem + ".png");
        for (size_t k = 0; k < res.soft_maps.size(); ++k)
          io::write_prediction(res.soft_maps[k],
                               inf_out + "/" + stem + "_soft_" + std::to_string(k) + ".safr");
      }
      inference::write_sidecar_json(res, inf_out + "/" + stem + ".json");
      std::cout << "clusters: " << res.clusters << "\n";
      return 0;
    }

    if (*ev) return run_eval(ev_pred, ev_gt, ev_metric, ev_out);

    if (*rob) {
      auto params = net::load_checkpoint(rob_ckpt);
      std::vector<double> levels;
      std::stringstream ss(rob_levels);
      std::string tok;
      while (std::getline(ss, tok, ',')) levels.push_back(std::stod(tok));
      auto rows = metrics::robustness_report(params, rob_data, rob_transform, levels, seed, jobs);
      metrics::write_robustness_csv(rows, rob_out);
      for (const auto& r : rows)
        std::cout << r.transform << " level " << r.level << ": F1 " << r.score << "\n";
      return 0;
    }

    if (*gc) {
      auto pre_rep = gradcheck::check_pretrain(seed, gc_coords);
      auto tr_rep = gradcheck::check_train(seed, gc_coords);
      std::cout << "pretrain loss: max relative error " << pre_rep.max_rel_error << " over "
                << pre_rep.coords_checked << " coords\n";
      std::cout << "train loss:    max relative error " << tr_rep.max_rel_error << " over "
                << tr_rep.coords_checked << " coords (" << tr_rep.coords_skipped
                << " discontinuous skipped)\n";
      if (!pre_rep.passed() || !tr_rep.passed()) {
        std::cerr << "gradcheck FAILED (tolerance 1e-4)\n";
        return 3;
      }
      std::cout << "gradcheck passed (tolerance 1e-4)\n";
      return 0;
    }
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
