#include "safire/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "safire/io.hpp"
#include "safire/maskops.hpp"
#include "safire/rng.hpp"

namespace safire::trainer {

namespace fs = std::filesystem;

void write_log_csv(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "epoch,loss,acc\n";
  os.precision(10);
  for (const auto& e : log) {
    os << e.epoch << "," << e.loss << ",";
    if (e.acc >= 0) os << e.acc;
    os << "\n";
  }
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  const fs::path images = fs::path(dir) / "images";
  if (!fs::is_directory(images)) throw ConfigError("no images/ directory under " + dir);
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(images))
    if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw ConfigError("dataset is empty: " + dir);
  const bool have_parts = fs::is_directory(fs::path(dir) / "partitions");
  const bool have_binary = fs::is_directory(fs::path(dir) / "binary");
  for (const auto& s : stems) {
    ds.images.push_back(io::read_image_png((images / (s + ".png")).string()));
    if (have_parts)
      ds.partitions.push_back(io::read_partition_png((fs::path(dir) / "partitions" / (s + ".png")).string()));
    if (have_binary)
      ds.binaries.push_back(io::read_mask_png((fs::path(dir) / "binary" / (s + ".png")).string()));
  }
  return ds;
}

void sgd_step(net::ModelParams& params, const std::vector<double>& grad,
              std::vector<float>& momentum, double lr, double beta) {
  if (grad.size() != params.size() || momentum.size() != params.size())
    throw ArgumentError("sgd_step: size mismatch");
  for (size_t i = 0; i < grad.size(); ++i) {
    // Double math, f32 storage: checkpoints round-trip losslessly.
    const double v = beta * double(momentum[i]) - lr * grad[i];
    momentum[i] = float(v);
    params.values[i] = float(double(params.values[i]) + double(momentum[i]));
  }
}

namespace {

std::vector<size_t> shuffled_indices(size_t n, Rng rng) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

// A crop is usable for the contrastive loss when at least two sources each
// keep a non-trivial share of its pixels.
bool crop_has_two_sources(const SourcePartition& p, int r0, int c0, int crop) {
  std::vector<size_t> counts(size_t(p.sources), 0);
  for (int r = r0; r < r0 + crop; ++r)
    for (int c = c0; c < c0 + crop; ++c) ++counts[p.at(r, c)];
  const size_t min_px = size_t(crop) * crop / 50;
  int live = 0;
  for (size_t n : counts)
    if (n >= min_px) ++live;
  return live >= 2;
}

}  // namespace

namespace {

TrainOutcome pretrain_impl(const TrainConfig& cfg, const Dataset& data, Seed seed,
                           const net::ModelParams* init_params,
                           const std::vector<float>* init_momentum) {
  if (data.images.empty() || data.partitions.size() != data.images.size())
    throw ConfigError("pretrain needs (image, partition) pairs");
  std::vector<size_t> usable;
  for (size_t i = 0; i < data.partitions.size(); ++i)
    if (data.partitions[i].sources >= 2) usable.push_back(i);
  if (usable.empty()) throw ConfigError("pretrain: every image is single-source");

  TrainOutcome out;
  out.params = init_params ? *init_params : net::ModelParams::init(seed);
  out.momentum.assign(out.params.size(), 0.f);
  if (init_momentum) {
    if (init_momentum->size() != out.params.size())
      throw ConfigError("resume momentum has the wrong size");
    out.momentum = *init_momentum;
  }
  std::vector<float>& momentum = out.momentum;
  Rng root(Rng::mix(seed, 0x70726574));

  std::vector<double> grad;
  for (int epoch = cfg.start_epoch; epoch < cfg.epochs; ++epoch) {
    auto order = shuffled_indices(usable.size(), root.split(uint64_t(epoch)));
    double loss_sum = 0;
    int batches = 0;
    for (size_t b = 0; b < order.size(); b += size_t(cfg.batch_size)) {
      std::vector<Image> augmented;
      std::vector<SourcePartition> part_store;
      std::vector<net::PretrainItem> items;
      const size_t end = std::min(order.size(), b + size_t(cfg.batch_size));
      augmented.reserve(end - b);
      part_store.reserve(end - b);
      for (size_t k = b; k < end; ++k) {
        const size_t i = usable[order[k]];
        if (cfg.augment_enabled) {
          augmented.push_back(
              synth::postprocess(data.images[i], cfg.augment,
                                 Rng::mix(Rng::mix(seed, uint64_t(epoch)), i)));
        } else {
          augmented.push_back(data.images[i]);
        }
        const SourcePartition* part = &data.partitions[i];
        const int crop = cfg.pretrain_crop;
        if (crop > 0 && augmented.back().height > crop && augmented.back().width > crop) {
          // Random cell-aligned crop; retry a few times for one that still
          // shows at least two sources, else fall back to the full image.
          Rng crng(Rng::mix(Rng::mix(Rng::mix(seed, uint64_t(epoch)), i), 0x63726f70));
          const Image& full = augmented.back();
          for (int attempt = 0; attempt < 4; ++attempt) {
            const int r0 =
                int(crng.below(uint64_t((full.height - crop) / kDownsample + 1))) * kDownsample;
            const int c0 =
                int(crng.below(uint64_t((full.width - crop) / kDownsample + 1))) * kDownsample;
            if (!crop_has_two_sources(*part, r0, c0, crop)) continue;
            Image ci(crop, crop);
            SourcePartition cp(crop, crop, part->sources);
            for (int r = 0; r < crop; ++r)
              for (int c = 0; c < crop; ++c) {
                for (int ch = 0; ch < 3; ++ch) ci.at(r, c, ch) = full.at(r0 + r, c0 + c, ch);
                cp.at(r, c) = part->at(r0 + r, c0 + c);
              }
            augmented.back() = std::move(ci);
            part_store.push_back(std::move(cp));
            part = &part_store.back();
            break;
          }
        }
        items.push_back({&augmented.back(), part});
      }
      loss_sum += net::pretrain_loss_and_grad(out.params, items, cfg.tau,
                                              cfg.normalize_embeddings, grad);
      ++batches;
      sgd_step(out.params, grad, momentum, cfg.lr, cfg.momentum);
    }
    out.log.push_back({epoch, loss_sum / std::max(batches, 1), -1.0});
  }
  return out;
}

TrainOutcome train_impl(const TrainConfig& cfg, const Dataset& data,
                        const net::ModelParams& pretrained, Seed seed, bool baseline,
                        const std::vector<float>* init_momentum) {
  if (data.images.empty() || data.binaries.size() != data.images.size())
    throw ConfigError("train needs (image, binary mask) pairs");

  TrainOutcome out;
  out.params = pretrained;
  out.params.frozen[net::kGroupEncoder] = true;
  out.params.frozen[net::kGroupPrompt] = true;
  out.momentum.assign(out.params.size(), 0.f);
  if (init_momentum) {
    if (init_momentum->size() != out.params.size())
      throw ConfigError("resume momentum has the wrong size");
    out.momentum = *init_momentum;
  }
  std::vector<float>& momentum = out.momentum;

  // Encoder is frozen: embeddings and components are fixed for the run.
  std::vector<EmbeddingGrid> grids;
  grids.reserve(data.images.size());
  for (const auto& img : data.images) grids.push_back(net::encode_image(out.params, img));
  std::vector<maskops::ComponentPartition> comps;
  if (!baseline) {
    comps.reserve(data.binaries.size());
    for (const auto& m : data.binaries) comps.push_back(maskops::connected_components(m));
  }
  std::vector<PointMask> binary_as_mask;
  if (baseline) {
    binary_as_mask.reserve(data.binaries.size());
    for (const auto& m : data.binaries) {
      PointMask pm(m.height, m.width);
      for (size_t i = 0; i < m.data.size(); ++i) pm.data[i] = int8_t(m.data[i]);
      binary_as_mask.push_back(std::move(pm));
    }
  }

  losses::LossSpec spec;
  spec.lambda_conf = cfg.lambda_conf;
  spec.c_max = cfg.c_aass;
  spec.plain_bce = baseline;

  Rng root(Rng::mix(seed, baseline ? 0x62617365 : 0x747261696e));
  std::vector<double> grad;
  for (int epoch = cfg.start_epoch; epoch < cfg.epochs; ++epoch) {
    auto order = shuffled_indices(data.images.size(), root.split(uint64_t(epoch)));
    double loss_sum = 0, acc_sum = 0;
    int batches = 0;
    for (size_t b = 0; b < order.size(); b += size_t(cfg.batch_size)) {
      const size_t end = std::min(order.size(), b + size_t(cfg.batch_size));
      std::vector<net::PromptEmbedding> prompt_store;
      std::vector<PointMask> mask_store;
      prompt_store.reserve((end - b) * 2 * size_t(cfg.pairs_per_image));
      mask_store.reserve(prompt_store.capacity());
      std::vector<net::TrainItem> items;
      for (size_t k = b; k < end; ++k) {
        const size_t i = order[k];
        if (baseline) {
          items.push_back({&grids[i], nullptr, &binary_as_mask[i]});
          continue;
        }
        const auto& mask = data.binaries[i];
        auto pairs = maskops::sample_point_pairs(
            mask, cfg.pairs_per_image, Rng::mix(Rng::mix(seed, uint64_t(epoch)), i));
        for (const auto& [pa, pb] : pairs) {
          for (const PointPrompt& pt : {pa, pb}) {
            prompt_store.push_back(net::encode_prompt(out.params, pt, grids[i]));
            mask_store.push_back(maskops::point_mask(comps[i], pt));
          }
        }
        for (size_t j = items.size(); j < prompt_store.size(); ++j)
          items.push_back({&grids[i], nullptr, nullptr});
      }
      if (!baseline) {
        // Resolve pointers now that the stores are stable.
        size_t j = 0;
        for (size_t k = b; k < end; ++k) {
          const size_t i = order[k];
          for (int q = 0; q < 2 * cfg.pairs_per_image; ++q, ++j) {
            items[j].grid = &grids[i];
            items[j].prompt = &prompt_store[j];
            items[j].mask = &mask_store[j];
          }
        }
      }
      double acc = 0;
      loss_sum += net::train_loss_and_grad(out.params, items, spec, grad, &acc);
      acc_sum += acc;
      ++batches;
      sgd_step(out.params, grad, momentum, cfg.lr, cfg.momentum);
    }
    out.log.push_back({epoch, loss_sum / std::max(batches, 1), acc_sum / std::max(batches, 1)});
  }
  return out;
}

}  // namespace

TrainOutcome pretrain(const TrainConfig& cfg, const Dataset& data, Seed seed) {
  return pretrain_impl(cfg, data, seed, nullptr, nullptr);
}

TrainOutcome pretrain_resume(const TrainConfig& cfg, const Dataset& data,
                             const net::ModelParams& params, const std::vector<float>& momentum,
                             Seed seed) {
  return pretrain_impl(cfg, data, seed, &params, &momentum);
}

TrainOutcome train(const TrainConfig& cfg, const Dataset& data, const net::ModelParams& pretrained,
                   Seed seed) {
  return train_impl(cfg, data, pretrained, seed, false, nullptr);
}

TrainOutcome train_resume(const TrainConfig& cfg, const Dataset& data,
                          const net::ModelParams& params, const std::vector<float>& momentum,
                          Seed seed) {
  return train_impl(cfg, data, params, seed, false, &momentum);
}

TrainOutcome train_baseline(const TrainConfig& cfg, const Dataset& data,
                            const net::ModelParams& pretrained, Seed seed) {
  return train_impl(cfg, data, pretrained, seed, true, nullptr);
}

}  // namespace safire::trainer
