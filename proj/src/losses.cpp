// SPDX-License-Identifier: Apache-2.0
#include "engage/losses.hpp"

#include <cmath>

namespace engage {

namespace {
constexpr double kDenomEps = 1e-8;
}

Tensor ccc(const Tensor& pred, const Tensor& label, bool* degenerate) {
  if (pred.numel() != label.numel()) {
    throw DimensionError("ccc: series lengths differ, " + shape_str(pred.shape()) + " vs " +
                         shape_str(label.shape()));
  }
  const std::int64_t n = pred.numel();
  if (n < 2) throw UsageError("ccc: need at least 2 frames");
  Tensor p = pred.rank() == 1 ? pred : reshape(pred, {n});
  Tensor l = label.rank() == 1 ? label : reshape(label, {n});

  Tensor mu_p = mean(p);
  Tensor mu_l = mean(l);
  Tensor dp = sub_scalar(p, mu_p);
  Tensor dl = sub_scalar(l, mu_l);
  Tensor var_p = mean(mul(dp, dp));
  Tensor var_l = mean(mul(dl, dl));
  Tensor cov = mean(mul(dp, dl));
  Tensor dm = sub(mu_p, mu_l);
  Tensor denom = add_const(add(add(var_p, var_l), mul(dm, dm)), kDenomEps);
  if (degenerate) *degenerate = var_p.value() < 1e-15 && var_l.value() < 1e-15;
  return div(scale(cov, 2.0), denom);
}

Tensor ccc_loss(const Tensor& pred, const Tensor& label) {
  return add_const(scale(ccc(pred, label), -1.0), 1.0);
}

double ccc_value(const std::vector<double>& pred, const std::vector<double>& label) {
  NoGradGuard ng;
  const auto n = static_cast<std::int64_t>(pred.size());
  Tensor p = Tensor::from_data({n}, pred);
  Tensor l = Tensor::from_data({n}, label);
  return ccc(p, l).value();
}

void AlignmentConfig::validate() const {
  if (tau <= 0.0) throw ConfigError("alignment: temperature must be positive");
  if (negatives < 0) throw ConfigError("alignment: negative count must be >= 0");
}

Tensor infonce_alignment_loss(const std::vector<std::pair<Tensor, Tensor>>& pairs,
                              const AlignmentConfig& cfg, std::uint64_t negative_seed) {
  cfg.validate();
  if (pairs.empty()) throw UsageError("infonce: no participants");
  const std::int64_t n = pairs[0].first.rows();
  for (const auto& [a, v] : pairs) {
    if (a.rows() != v.rows()) {
      throw DimensionError("infonce: audio/visual frame counts differ, " +
                           shape_str(a.shape()) + " vs " + shape_str(v.shape()));
    }
    if (a.rows() != n) throw DimensionError("infonce: frame counts differ across participants");
    if (a.cols() != v.cols()) {
      throw ConfigError("infonce: embedding widths differ (" + shape_str(a.shape()) + " vs " +
                        shape_str(v.shape()) + "); enable the shared alignment projection");
    }
  }

  Rng rng(negative_seed);
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& [a, v] : pairs) {
    Tensor an = l2_normalize_rows(a);
    Tensor vn = l2_normalize_rows(v);
    Tensor sim = scale(matmul(an, transpose(vn)), 1.0 / cfg.tau);

    // Denominator mask: the positive (diagonal) plus the negative set.
    const auto build_mask = [&](bool all) {
      std::vector<std::uint8_t> mask(static_cast<std::size_t>(n * n), all ? 1 : 0);
      if (!all) {
        for (std::int64_t r = 0; r < n; ++r) {
          mask[static_cast<std::size_t>(r * n + r)] = 1;
          const std::int64_t want = std::min<std::int64_t>(cfg.negatives, n - 1);
          std::int64_t placed = 0;
          while (placed < want) {
            const std::int64_t j = rng.index(n);
            auto& cell = mask[static_cast<std::size_t>(r * n + j)];
            if (j == r || cell) continue;
            cell = 1;
            ++placed;
          }
        }
      }
      return mask;
    };
    const bool all = cfg.negatives == 0 || cfg.negatives >= n - 1;

    Tensor l_av = sum(lse_rows_masked(sim, build_mask(all)));
    Tensor l_va = sum(lse_rows_masked(transpose(sim), build_mask(all)));
    Tensor pos = scale(trace(sim), 2.0);
    acc = add(acc, sub(add(l_av, l_va), pos));
  }
  const double norm = 1.0 / (2.0 * static_cast<double>(n) *
                             static_cast<double>(pairs.size()));
  return scale(acc, norm);
}

Tensor total_loss(const Tensor& ccc_l, const Tensor& align_l, const LossWeights& w) {
  if (w.lambda_ccc <= 0.0 || w.lambda_align <= 0.0) {
    throw ConfigError("total_loss: loss weights must be positive");
  }
  return add(scale(ccc_l, w.lambda_ccc), scale(align_l, w.lambda_align));
}

Tensor mse_loss(const Tensor& pred, const Tensor& label) {
  if (pred.numel() != label.numel()) {
    throw DimensionError("mse_loss: lengths differ");
  }
  Tensor p = pred.rank() == 1 ? pred : reshape(pred, {pred.numel()});
  Tensor l = label.rank() == 1 ? label : reshape(label, {label.numel()});
  Tensor d = sub(p, l);
  return mean(mul(d, d));
}

} // namespace engage
