#pragma once

#include <optional>
#include <span>
#include <vector>

#include "safire/types.hpp"

namespace safire::losses {

// All loss math runs in double regardless of tensor storage precision; the
// finite-difference gradient checks need the headroom.

/// InfoNCE with log-sum-exp stabilization. Vectors must be comparable under
/// plain dot products (the r2r caller normalizes first).
double info_nce(std::span<const double> q, std::span<const double> p,
                const std::vector<std::vector<double>>& negatives, double tau);

/// Per-cell source labels for an embedding grid, plus the contrastive
/// temperature. Embeddings are cell-major, `dim` doubles per cell.
struct R2RBatch {
  int dim = 0;
  int cells = 0;
  const double* embeddings = nullptr;   // cells × dim
  const int32_t* labels = nullptr;      // per cell
  double tau = 0.1;
  bool normalize = true;
};

/// Region-to-region contrastive loss: mean over anchor cells of
/// InfoNCE(anchor, mean of its region excluding itself, all other-region
/// cells). Anchors in singleton regions are skipped. Returns nullopt when
/// fewer than two regions are present (skip signal, not an error).
/// When grad_out is non-null it receives d loss / d embeddings (cells × dim,
/// caller-zeroed not required).
std::optional<double> r2r_loss(const R2RBatch& batch, double* grad_out = nullptr);

/// Binarize logits: 1 where value > 0.
BinaryMask bin(const PredictionMap& x);

struct MaskedLoss {
  double loss = 0.0;
  double d_conf = 0.0;  // d loss / d confidence score
};

/// Area-adaptive weighted binary cross-entropy over the valid ({0,1}) pixels
/// of the point mask. Class weight = min(|valid|/|class|, c_max); ignore
/// pixels are excluded from the expectation entirely.
double aass_loss(std::span<const double> logits, const PointMask& yp, double c_max,
                 double* grad_logits = nullptr);

/// (acc - s)^2 where acc is the pixel accuracy of bin(x) against yp over
/// valid pixels. acc is piecewise constant, so the loss's logit gradient is
/// zero almost everywhere; only d/ds is reported.
double confidence_loss(std::span<const double> logits, const PointMask& yp, double s,
                       double* d_conf = nullptr);

/// aass + lambda_conf * confidence. With plain_bce set, weights are forced
/// to 1 and the confidence term is dropped (the unprompted baseline).
struct LossSpec {
  double lambda_conf = 0.1;
  double c_max = 10.0;
  bool plain_bce = false;
};

double total_loss(std::span<const double> logits, const PointMask& yp, double s,
                  const LossSpec& spec, double* grad_logits = nullptr, double* d_conf = nullptr);

// Convenience overloads on the float-facing types.
double aass_loss(const PredictionMap& x, const PointMask& yp, double c_max);
double confidence_loss(const PredictionMap& x, const PointMask& yp, double s);
double total_loss(const PredictionMap& x, const PointMask& yp, double s, double lambda_conf,
                  double c_max);

/// Majority label per k×k cell; exact ties broken toward the smaller label.
std::vector<int32_t> downsample_partition(const SourcePartition& p, int k);

}  // namespace safire::losses
