#pragma once

#include <string>
#include <vector>

#include "safire/net.hpp"
#include "safire/types.hpp"

namespace safire::metrics {

/// F1 of class 1 after thresholding the heatmap at t (strictly greater).
/// Empty ground truth and empty prediction scores 1; no true positives with
/// any error scores 0.
double f1(const BinaryMask& y, const PredictionMap& x, double t);

/// max(f1 at 0.5, f1 of the complement at 0.5).
double permuted_f1_fixed(const BinaryMask& y, const PredictionMap& x);

/// Best permuted F1 over thresholds k/256, k = 1..255.
double permuted_f1_best(const BinaryMask& y, const PredictionMap& x);

/// Permuted mean IoU over GT classes, maximized over injective label
/// assignments (Hungarian). When the prediction has more labels than the
/// ground truth, only the largest N predicted regions are candidates; ties
/// in size break toward the lower label.
double permuted_miou(const SourcePartition& y, const SourcePartition& x);

/// Exhaustive-assignment oracle for permuted_miou; effective label count
/// must be <= 6.
double brute_force_pmiou(const SourcePartition& y, const SourcePartition& x);

/// Adjusted Rand Index over pixels, in [-1, 1].
double ari(const SourcePartition& y, const SourcePartition& x);

struct RobustnessRow {
  std::string transform;
  double level = 0;
  double score = 0;  // mean permuted F1 (fixed) over the dataset
  int n_images = 0;
};

/// Applies one global transform at each level to every test image (masks
/// untouched), runs binary inference, and reports mean permuted F1 fixed.
/// `transform` is one of blur|noise|jpeg|gamma; the identity levels are
/// sigma 0, sigma 0, quality 100, and gamma 1 respectively.
std::vector<RobustnessRow> robustness_report(const net::ModelParams& params,
                                             const std::string& dataset_dir,
                                             const std::string& transform,
                                             const std::vector<double>& levels, Seed seed,
                                             int jobs = 1);

void write_robustness_csv(const std::vector<RobustnessRow>& rows, const std::string& path);

}  // namespace safire::metrics
