#include "safire/gradcheck.hpp"

#include <cmath>

#include "safire/maskops.hpp"
#include "safire/rng.hpp"
#include "safire/synth.hpp"

namespace safire::gradcheck {

namespace {

constexpr double kEps = 1e-4;

std::vector<size_t> eligible_coords(const net::ModelParams& p) {
  std::vector<size_t> out;
  for (const auto& b : p.blocks) {
    if (p.frozen[size_t(b.group)]) continue;
    for (size_t i = 0; i < b.size; ++i) out.push_back(b.offset + i);
  }
  return out;
}

double rel_error(double a, double f) {
  const double scale = std::max(std::abs(a), std::abs(f));
  if (scale < 1e-8) return 0.0;  // both effectively zero
  return std::abs(a - f) / scale;
}

}  // namespace

Report check_pretrain(Seed seed, int coords, int image_size) {
  auto sample_a = synth::generate_sample(Rng::mix(seed, 1), image_size, 3);
  auto sample_b = synth::generate_sample(Rng::mix(seed, 2), image_size, 2);
  std::vector<net::PretrainItem> batch = {{&sample_a.image, &sample_a.partition},
                                          {&sample_b.image, &sample_b.partition}};

  net::ModelParams params = net::ModelParams::init(Rng::mix(seed, 3));
  const double tau = 0.1;
  std::vector<double> grad;
  net::pretrain_loss_and_grad(params, batch, tau, true, grad);

  auto loss_at = [&](net::ModelParams& p) {
    std::vector<double> g;
    return net::pretrain_loss_and_grad(p, batch, tau, true, g);
  };

  const auto idx = eligible_coords(params);
  Rng rng(Rng::mix(seed, 4));
  Report rep;
  for (int k = 0; k < coords; ++k) {
    const size_t i = idx[rng.below(idx.size())];
    net::ModelParams pp = params;
    const double base = double(params.values[i]);
    pp.values[i] = float(base + kEps);
    const double hi = double(pp.values[i]);
    const double f_hi = loss_at(pp);
    pp.values[i] = float(base - kEps);
    const double lo = double(pp.values[i]);
    const double f_lo = loss_at(pp);
    const double fd = (f_hi - f_lo) / (hi - lo);
    rep.max_rel_error = std::max(rep.max_rel_error, rel_error(grad[i], fd));
    ++rep.coords_checked;
  }
  return rep;
}

Report check_train(Seed seed, int coords, int image_size) {
  auto sample = synth::generate_sample(Rng::mix(seed, 11), image_size, 2);
  BinaryMask mask = synth::partition_to_binary(sample.partition);

  net::ModelParams params = net::ModelParams::init(Rng::mix(seed, 12));
  params.frozen[net::kGroupEncoder] = true;
  EmbeddingGrid grid = net::encode_image(params, sample.image);

  auto pairs = maskops::sample_point_pairs(mask, 2, Rng::mix(seed, 13));
  std::vector<net::PromptEmbedding> prompts;
  std::vector<PointMask> masks;
  for (const auto& [a, b] : pairs) {
    for (const PointPrompt& pt : {a, b}) {
      prompts.push_back(net::encode_prompt(params, pt, grid));
      masks.push_back(maskops::point_mask(mask, pt));
    }
  }
  std::vector<net::TrainItem> batch;
  for (size_t i = 0; i < prompts.size(); ++i) batch.push_back({&grid, &prompts[i], &masks[i]});

  losses::LossSpec spec;
  std::vector<double> grad;
  net::train_loss_and_grad(params, batch, spec, grad);

  auto eval_at = [&](net::ModelParams& p, std::vector<double>& accs) {
    std::vector<double> g;
    return net::train_loss_and_grad(p, batch, spec, g, nullptr, &accs);
  };

  const auto idx = eligible_coords(params);
  Rng rng(Rng::mix(seed, 14));
  Report rep;
  int checked = 0;
  int guard = 0;
  while (checked < coords && guard < coords * 20) {
    ++guard;
    const size_t i = idx[rng.below(idx.size())];
    net::ModelParams pp = params;
    const double base = double(params.values[i]);
    std::vector<double> acc_hi, acc_lo;
    pp.values[i] = float(base + kEps);
    const double hi = double(pp.values[i]);
    const double f_hi = eval_at(pp, acc_hi);
    pp.values[i] = float(base - kEps);
    const double lo = double(pp.values[i]);
    const double f_lo = eval_at(pp, acc_lo);
    if (acc_hi != acc_lo) {
      // bin() flipped inside the secant; FD is not a derivative here.
      ++rep.coords_skipped;
      continue;
    }
    const double fd = (f_hi - f_lo) / (hi - lo);
    rep.max_rel_error = std::max(rep.max_rel_error, rel_error(grad[i], fd));
    ++checked;
  }
  rep.coords_checked = checked;
  return rep;
}

}  // namespace safire::gradcheck
