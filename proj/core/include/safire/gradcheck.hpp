#pragma once

#include <string>
#include <vector>

#include "safire/net.hpp"

namespace safire::gradcheck {

struct Report {
  double max_rel_error = 0;
  int coords_checked = 0;
  int coords_skipped = 0;  // FD secant crossed a bin() discontinuity
  bool passed(double tol = 1e-4) const { return max_rel_error < tol; }
};

/// Central finite differences (nominal step 1e-4, actual step measured in
/// f32 storage) on `coords` random coordinates of the non-frozen groups.
/// The pretrain check covers the contrastive loss through the encoder; the
/// train check covers the point-mask loss through the decoder and
/// confidence head. Train-mode coordinates whose perturbation flips the
/// binarized map are resampled: finite differences only estimate the
/// derivative where the confidence term's accuracy is locally constant.
Report check_pretrain(Seed seed, int coords = 100, int image_size = 32);
Report check_train(Seed seed, int coords = 100, int image_size = 32);

}  // namespace safire::gradcheck
