// Acceptance suite: one pass/fail line per criterion, exit nonzero if any
// fails. Criteria 5-7 share one end-to-end training run, so the binary takes
// a while (bounded by the criterion-5 runtime budget).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "safire/gradcheck.hpp"
#include "safire/inference.hpp"
#include "safire/io.hpp"
#include "safire/losses.hpp"
#include "safire/maskops.hpp"
#include "safire/metrics.hpp"
#include "safire/net.hpp"
#include "safire/rng.hpp"
#include "safire/synth.hpp"
#include "safire/trainer.hpp"

using namespace safire;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& what, bool ok, const std::string& detail) {
  std::printf("criterion %d [%s]: %s — %s\n", criterion, ok ? "PASS" : "FAIL", what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------- criterion 1: gradient verification ----------

void criterion1() {
  const auto t0 = Clock::now();
  auto pre = gradcheck::check_pretrain(2024, 100);
  auto tr = gradcheck::check_train(2024, 100);
  const double elapsed = seconds_since(t0);
  const bool ok = pre.passed() && tr.passed() && pre.coords_checked >= 100 &&
                  tr.coords_checked >= 100 && elapsed < 120.0;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "max rel err pretrain %.3e, train %.3e (%d+%d coords, %.1fs)", pre.max_rel_error,
                tr.max_rel_error, pre.coords_checked, tr.coords_checked, elapsed);
  report(1, "analytic gradients vs finite differences", ok, buf);
}

// ---------- criterion 2: point-mask trichotomy vs independent oracle ----------

struct Oracle {
  std::vector<int> label;
  int count = 0;
  std::set<std::pair<int, int>> adj;
};

Oracle oracle_components(const BinaryMask& m) {
  Oracle o;
  o.label.assign(m.data.size(), -1);
  const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c) {
      if (o.label[size_t(r) * m.width + c] >= 0) continue;
      const int id = o.count++;
      std::queue<std::pair<int, int>> q;
      q.push({r, c});
      o.label[size_t(r) * m.width + c] = id;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dr[k], nx = x + dc[k];
          if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
          if (m.at(ny, nx) != m.at(y, x) || o.label[size_t(ny) * m.width + nx] >= 0) continue;
          o.label[size_t(ny) * m.width + nx] = id;
          q.push({ny, nx});
        }
      }
    }
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = r + dy, nx = c + dx;
          if ((!dy && !dx) || ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
          const int a = o.label[size_t(r) * m.width + c];
          const int b = o.label[size_t(ny) * m.width + nx];
          if (a != b) o.adj.insert({std::min(a, b), std::max(a, b)});
        }
  return o;
}

void criterion2() {
  Rng rng(777);
  int failures = 0;
  const int cases = 1000;
  for (int iter = 0; iter < cases; ++iter) {
    const int h = 3 + int(rng.below(14)), w = 3 + int(rng.below(14));
    BinaryMask m(h, w);
    for (auto& v : m.data) v = uint8_t(rng.below(2));
    const PointPrompt p{int(rng.below(uint64_t(h))), int(rng.below(uint64_t(w)))};
    auto pm = maskops::point_mask(m, p);
    auto o = oracle_components(m);
    const int home = o.label[size_t(p.row) * w + p.col];
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const int lab = o.label[size_t(r) * w + c];
        const bool nb = lab != home && o.adj.count({std::min(home, lab), std::max(home, lab)});
        const int expect = lab == home ? 1 : (nb ? 0 : -1);
        if (pm.at(r, c) != expect) ++failures;
      }
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%d cases, %d pixel mismatches", cases, failures);
  report(2, "point-mask trichotomy vs flood-fill oracle", failures == 0, buf);
}

// ---------- criterion 3: metric oracle equivalence ----------

double ari_oracle(const SourcePartition& y, const SourcePartition& x) {
  const size_t n = y.data.size();
  double a = 0, b = 0, c = 0, d = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const bool sy = y.data[i] == y.data[j], sx = x.data[i] == x.data[j];
      if (sy && sx) ++a;
      else if (sy) ++b;
      else if (sx) ++c;
      else ++d;
    }
  const double total = a + b + c + d;
  const double expected = (a + b) * (a + c) / total;
  const double maxi = 0.5 * ((a + b) + (a + c));
  if (maxi == expected) return 1.0;
  return (a - expected) / (maxi - expected);
}

void criterion3() {
  Rng rng(333);
  int miou_bad = 0, overflow_cases = 0;
  double worst_ari = 0;
  const int cases = 200;
  for (int iter = 0; iter < cases; ++iter) {
    const int h = 4 + int(rng.below(9)), w = 4 + int(rng.below(9));
    const int ny = 2 + int(rng.below(4));  // 2..5 labels
    const int nx = 2 + int(rng.below(4));
    if (nx > ny) ++overflow_cases;
    auto fill = [&](SourcePartition& p, int labels) {
      for (int r = 0; r < p.height; ++r)
        for (int c = 0; c < p.width; ++c)
          p.at(r, c) = uint8_t((r * labels / p.height + c * labels / p.width + int(rng.below(2))) %
                               labels);
      for (int l = 0; l < labels; ++l) p.data[size_t(l)] = uint8_t(l);
    };
    SourcePartition y(h, w, ny), x(h, w, nx);
    fill(y, ny);
    fill(x, nx);
    if (metrics::permuted_miou(y, x) != metrics::brute_force_pmiou(y, x)) ++miou_bad;
    worst_ari = std::max(worst_ari, std::abs(metrics::ari(y, x) - ari_oracle(y, x)));
  }
  const bool ok = miou_bad == 0 && overflow_cases > 0 && worst_ari < 1e-12;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "%d pairs (%d with N_pred>N), %d pmiou mismatches, max ARI delta %.2e", cases,
                overflow_cases, miou_bad, worst_ari);
  report(3, "permuted mIoU vs brute force, ARI vs pair counting", ok, buf);
}

// ---------- criterion 4: loss closed forms ----------

void criterion4() {
  bool ok = true;
  std::string detail;

  // r2r on two orthogonal constant regions, tau = 0.1, 3 cells each:
  // every anchor sees positive dot 1 and 3 negatives at dot 0.
  {
    std::vector<double> emb;
    std::vector<int32_t> labels;
    for (int i = 0; i < 3; ++i) {
      emb.insert(emb.end(), {1, 0, 0, 0});
      labels.push_back(0);
    }
    for (int i = 0; i < 3; ++i) {
      emb.insert(emb.end(), {0, 1, 0, 0});
      labels.push_back(1);
    }
    losses::R2RBatch b;
    b.dim = 4;
    b.cells = 6;
    b.embeddings = emb.data();
    b.labels = labels.data();
    b.tau = 0.1;
    const double expect = -std::log(std::exp(10.0) / (std::exp(10.0) + 3.0));
    const double got = *losses::r2r_loss(b);
    if (std::abs(got - expect) > 1e-9) {
      ok = false;
      detail += "r2r closed form off; ";
    }
  }

  // AASS weights for 1 one vs 99 zeros, all-zero logits.
  {
    PointMask yp(10, 10);
    for (auto& v : yp.data) v = 0;
    yp.at(0, 0) = 1;
    std::vector<double> logits(100, 0.0);
    const double w1 = 10.0, w0 = 100.0 / 99.0;
    const double expect = (w1 + 99.0 * w0) * std::log(2.0) / 100.0;
    if (std::abs(losses::aass_loss(logits, yp, 10.0) - expect) > 1e-12) {
      ok = false;
      detail += "aass 1-vs-99 off; ";
    }
  }

  // Confidence loss (acc=1, s=0.5) = 0.25.
  {
    PointMask yp(1, 2);
    yp.data = {1, 0};
    std::vector<double> logits = {4.0, -4.0};
    if (std::abs(losses::confidence_loss(logits, yp, 0.5) - 0.25) > 1e-12) {
      ok = false;
      detail += "confidence 0.25 off; ";
    }
  }
  if (detail.empty()) detail = "r2r orthogonal form, w1=10/w0=100/99, conf (1-0.5)^2 all exact";
  report(4, "loss closed forms", ok, detail);
}

// ---------- criteria 5-7: shared end-to-end run ----------

struct E2E {
  trainer::Dataset train_set;
  trainer::Dataset test_set;
  net::ModelParams model;
  net::ModelParams baseline;
  double train_seconds = 0;
};

trainer::Dataset make_dataset(int count, int size, int sources, Seed seed) {
  trainer::Dataset d;
  for (int i = 0; i < count; ++i) {
    auto s = synth::generate_sample(Rng::mix(seed, uint64_t(i)), size, sources);
    d.images.push_back(std::move(s.image));
    d.binaries.push_back(synth::partition_to_binary(s.partition));
    d.partitions.push_back(std::move(s.partition));
  }
  return d;
}

E2E run_e2e() {
  const auto t0 = Clock::now();
  E2E e;
  e.train_set = make_dataset(500, 256, 2, 0xACCE5501);
  e.test_set = make_dataset(100, 256, 2, 0xACCE5502);

  trainer::TrainConfig pre_cfg;
  pre_cfg.epochs = 20;
  auto pre = trainer::pretrain(pre_cfg, e.train_set, 0xACCE5503);

  trainer::TrainConfig tr_cfg;
  tr_cfg.epochs = 30;
  tr_cfg.lr = 0.02;
  auto tr = trainer::train(tr_cfg, e.train_set, pre.params, 0xACCE5504);
  e.model = tr.params;

  auto base = trainer::train_baseline(tr_cfg, e.train_set, pre.params, 0xACCE5505);
  e.baseline = base.params;

  e.train_seconds = seconds_since(t0);
  return e;
}

void criteria567(const E2E& e) {
  // Criterion 5: binary quality on the test split.
  const auto t0 = Clock::now();
  double f1_sum = 0, pmiou_sum = 0, base_sum = 0;
  inference::InferOptions opts;
  opts.seed = 0xACCE5506;
  for (size_t i = 0; i < e.test_set.images.size(); ++i) {
    auto res = inference::infer(e.model, e.test_set.images[i], opts);
    f1_sum += metrics::permuted_f1_fixed(e.test_set.binaries[i], res.heatmap);

    SourcePartition pred(res.heatmap.height, res.heatmap.width, 2);
    int nonzero = 0;
    for (size_t p = 0; p < pred.data.size(); ++p) {
      pred.data[p] = res.heatmap.data[p] > 0.5f ? 1 : 0;
      nonzero += pred.data[p];
    }
    pred.sources = nonzero == 0 || nonzero == int(pred.data.size()) ? 1 : 2;
    if (pred.sources == 1) std::fill(pred.data.begin(), pred.data.end(), uint8_t(0));
    pmiou_sum += metrics::permuted_miou(e.test_set.partitions[i], pred);

    auto bh = inference::infer_baseline(e.baseline, e.test_set.images[i]);
    base_sum += metrics::permuted_f1_fixed(e.test_set.binaries[i], bh);
  }
  const double n = double(e.test_set.images.size());
  const double f1 = f1_sum / n, pmiou = pmiou_sum / n, base_f1 = base_sum / n;
  const double total_seconds = e.train_seconds + seconds_since(t0);
  const bool ok5 = f1 >= 0.80 && pmiou >= 0.75 && total_seconds <= 1800.0;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "F1 fixed %.3f (>=0.80), p_mIoU %.3f (>=0.75), %.0fs (<=1800)",
                f1, pmiou, total_seconds);
  report(5, "end-to-end binary localization", ok5, buf);

  // Criterion 6: multi-source on 50 fresh 3-source images, same model.
  auto multi = make_dataset(50, 256, 3, 0xACCE5507);
  double ari_sum = 0;
  int dbscan_m3 = 0;
  for (size_t i = 0; i < multi.images.size(); ++i) {
    inference::InferOptions mo;
    mo.multi = true;
    mo.m = 3;
    mo.seed = Rng::mix(0xACCE5508, i);
    auto res = inference::infer(e.model, multi.images[i], mo);
    ari_sum += metrics::ari(multi.partitions[i], res.partition);

    inference::InferOptions dbo;
    dbo.multi = true;
    dbo.cluster = inference::ClusterMethod::kDbscan;
    dbo.seed = Rng::mix(0xACCE5509, i);
    auto dres = inference::infer(e.model, multi.images[i], dbo);
    if (dres.clusters == 3) ++dbscan_m3;
  }
  const double mean_ari = ari_sum / double(multi.images.size());
  const double dbscan_frac = double(dbscan_m3) / double(multi.images.size());
  const bool ok6 = mean_ari >= 0.6 && dbscan_frac >= 0.6;
  std::snprintf(buf, sizeof(buf), "kmeans m=3 mean ARI %.3f (>=0.6), DBSCAN M=3 on %.0f%% (>=60%%)",
                mean_ari, dbscan_frac * 100.0);
  report(6, "end-to-end multi-source partitioning", ok6, buf);

  // Criterion 7: the unprompted baseline scores strictly lower F1.
  std::snprintf(buf, sizeof(buf), "prompted %.3f vs unprompted baseline %.3f", f1, base_f1);
  report(7, "ablation: prompting beats plain segmentation", base_f1 < f1, buf);
}

// ---------- criterion 8: pipeline contracts ----------

void criterion8() {
  bool ok = true;
  std::string detail;

  auto params = net::ModelParams::init(808);
  auto sample = synth::generate_sample(809, 64, 2);

  // Batching equality: N-prompt decode == N single decodes bit-exactly.
  {
    auto grid = net::encode_image(params, sample.image);
    std::vector<net::PromptEmbedding> prompts;
    for (int i = 0; i < 6; ++i)
      prompts.push_back(net::encode_prompt(params, {i * 9, i * 5}, 64, 64));
    auto batched = net::decode(params, grid, prompts);
    for (size_t i = 0; i < prompts.size(); ++i) {
      auto single = net::decode(params, grid, {prompts[i]});
      if (single[0].map.data != batched[i].map.data ||
          single[0].confidence != batched[i].confidence) {
        ok = false;
        detail += "batching mismatch; ";
        break;
      }
    }
  }

  // Seed determinism: two full runs produce byte-identical artifacts.
  {
    const fs::path dir = fs::temp_directory_path() / "safire_acceptance_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto run = [&](const std::string& name) {
      inference::InferOptions opts;
      opts.grid = 8;
      opts.seed = 811;
      auto res = inference::infer(params, sample.image, opts);
      io::write_prediction(res.heatmap, (dir / name).string());
    };
    run("a.safr");
    run("b.safr");
    std::ifstream fa((dir / "a.safr").string(), std::ios::binary);
    std::ifstream fb((dir / "b.safr").string(), std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    if (ba.empty() || ba != bb) {
      ok = false;
      detail += "seed determinism broken; ";
    }
    fs::remove_all(dir);
  }

  // combine_binary antisymmetry.
  {
    Rng rng(812);
    PredictionMap a(8, 8), b(8, 8);
    for (auto& v : a.data) v = float(rng.normal());
    for (auto& v : b.data) v = float(rng.normal());
    auto ab = inference::combine_binary(a, b);
    auto ba = inference::combine_binary(b, a);
    for (size_t i = 0; i < ab.data.size(); ++i)
      if (std::abs(double(ab.data[i]) + double(ba.data[i]) - 1.0) > 1e-6) {
        ok = false;
        detail += "combine antisymmetry broken; ";
        break;
      }
  }

  // Robustness identity levels equal the unperturbed score exactly.
  {
    const fs::path dir = fs::temp_directory_path() / "safire_acceptance_rob";
    fs::remove_all(dir);
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "binary");
    for (int i = 0; i < 4; ++i) {
      auto s = synth::generate_sample(Rng::mix(813, uint64_t(i)), 64, 2);
      const std::string stem = std::to_string(i);
      io::write_image_png(s.image, (dir / "images" / (stem + ".png")).string());
      io::write_mask_png(synth::partition_to_binary(s.partition),
                         (dir / "binary" / (stem + ".png")).string());
    }
    struct IdCase {
      const char* transform;
      double level;
    };
    for (const IdCase& c : {IdCase{"blur", 0.0}, IdCase{"noise", 0.0}, IdCase{"gamma", 1.0},
                            IdCase{"jpeg", 100.0}}) {
      auto rows = metrics::robustness_report(params, dir.string(), c.transform, {c.level}, 814);
      // Reference: unperturbed inference with the same per-image seeds.
      double ref = 0;
      for (int i = 0; i < 4; ++i) {
        Image img = io::read_image_png((dir / "images" / (std::to_string(i) + ".png")).string());
        BinaryMask gt = io::read_mask_png((dir / "binary" / (std::to_string(i) + ".png")).string());
        inference::InferOptions opts;
        opts.seed = Rng::mix(814, 0x1000 + uint64_t(i));
        ref += metrics::permuted_f1_fixed(gt, inference::infer(params, img, opts).heatmap);
      }
      ref /= 4.0;
      if (rows.size() != 1 || rows[0].score != ref) {
        ok = false;
        detail += std::string("robustness identity row differs (") + c.transform + "); ";
      }
    }
    fs::remove_all(dir);
  }

  if (detail.empty())
    detail = "batching bit-exact, runs byte-identical, antisymmetry and identity rows hold";
  report(8, "pipeline contracts", ok, detail);
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  auto e2e = run_e2e();
  criteria567(e2e);
  criterion8();
  if (g_failures) {
    std::printf("%d criteria FAILED\n", g_failures);
    return 1;
  }
  std::printf("all 8 criteria passed\n");
  return 0;
}
