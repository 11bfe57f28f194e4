// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "engage/ops.hpp"

namespace engage {

// Concordance correlation: 2*cov / (var_p + var_l + (mu_p - mu_l)^2), with
// population moments and a 1e-8 denominator regularizer. When both series
// are constant the value is 0 and *degenerate is set.
Tensor ccc(const Tensor& pred, const Tensor& label, bool* degenerate = nullptr);
Tensor ccc_loss(const Tensor& pred, const Tensor& label);
// Convenience metric on raw series, no graph involvement.
double ccc_value(const std::vector<double>& pred, const std::vector<double>& label);

struct AlignmentConfig {
  double tau = 0.07;
  std::int64_t negatives = 0; // 0 = all other frames in the window
  void validate() const;
};

// Symmetric frame-wise InfoNCE over per-participant (audio, visual)
// embedding pairs. Embeddings are l2-normalized inside; the positive for
// frame r is the same frame in the other modality, negatives are other
// frames of the same participant. Averaged over both directions, all
// participants and frames.
Tensor infonce_alignment_loss(const std::vector<std::pair<Tensor, Tensor>>& pairs,
                              const AlignmentConfig& cfg, std::uint64_t negative_seed = 0);

struct LossWeights {
  double lambda_ccc = 1.0;
  double lambda_align = 0.4;
};

// Exact weighted sum; both weights must be positive.
Tensor total_loss(const Tensor& ccc_l, const Tensor& align_l, const LossWeights& w);

// Debug alternative (mean squared error), kept off the main path.
Tensor mse_loss(const Tensor& pred, const Tensor& label);

} // namespace engage
