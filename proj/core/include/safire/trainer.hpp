#pragma once

#include <string>
#include <vector>

#include "safire/net.hpp"
#include "safire/synth.hpp"
#include "safire/types.hpp"

namespace safire::trainer {

struct TrainConfig {
  int epochs = 20;
  int start_epoch = 0;  // resume point; epoch RNG streams are keyed by index
  double lr = 0.005;           // pretrain default; train uses 0.02
  double momentum = 0.9;
  int batch_size = 8;
  int pairs_per_image = 4;
  double tau = 0.1;
  // Pretraining runs on random cell-aligned square crops of this side to
  // bound the per-epoch encoder cost; 0 disables cropping.
  int pretrain_crop = 128;
  bool normalize_embeddings = true;
  double c_aass = 10.0;
  double lambda_conf = 0.1;
  synth::PostProcessConfig augment;  // pretrain only
  bool augment_enabled = true;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0;   // exact mean of per-batch losses
  double acc = -1;   // mean training pixel accuracy; -1 when not applicable
};

void write_log_csv(const std::vector<EpochLog>& log, const std::string& path);

/// (image, partition, binary) triples loaded from a `gen` output directory.
struct Dataset {
  std::vector<Image> images;
  std::vector<SourcePartition> partitions;
  std::vector<BinaryMask> binaries;
};

Dataset load_dataset(const std::string& dir);

struct TrainOutcome {
  net::ModelParams params;
  std::vector<EpochLog> log;
  std::vector<float> momentum;  // optimizer state, for resumable checkpoints
};

/// Encoder pretraining with the region-to-region contrastive loss on
/// multi-source data, augmentation applied per image per epoch. The prompt
/// projection stays frozen. Deterministic given the seed.
TrainOutcome pretrain(const TrainConfig& cfg, const Dataset& data, Seed seed);

/// Main training: encoder and prompt projection frozen, decoder and
/// confidence head trained on the paired-prompt point-mask loss.
TrainOutcome train(const TrainConfig& cfg, const Dataset& data, const net::ModelParams& pretrained,
                   Seed seed);

/// Unprompted baseline: same architecture, zero prompt embedding, plain BCE
/// against the binary mask.
TrainOutcome train_baseline(const TrainConfig& cfg, const Dataset& data,
                            const net::ModelParams& pretrained, Seed seed);

/// Resume variants: continue from a mid-run checkpoint (params + optimizer
/// momentum) at cfg.start_epoch. Epoch RNG streams are derived from
/// (seed, epoch index), so a resumed run is bit-identical to the
/// uninterrupted one.
TrainOutcome pretrain_resume(const TrainConfig& cfg, const Dataset& data,
                             const net::ModelParams& params, const std::vector<float>& momentum,
                             Seed seed);
TrainOutcome train_resume(const TrainConfig& cfg, const Dataset& data,
                          const net::ModelParams& params, const std::vector<float>& momentum,
                          Seed seed);

// Single SGD-with-momentum step, exposed for the resume test. Updates are
// computed in double and rounded back to f32 storage so checkpoints are
// lossless.
void sgd_step(net::ModelParams& params, const std::vector<double>& grad, std::vector<float>& momentum,
              double lr, double beta);

}  // namespace safire::trainer
