// SPDX-License-Identifier: Apache-2.0
#include "engage/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace engage {

SsmParams SsmParams::init(std::int64_t width, std::int64_t d_state, Rng& rng) {
  SsmParams p;
  p.d_state = d_state;
  // tanh of [0.5, 2.0] spreads the transition over (0.46, 0.96): a mix of
  // short and long memory lanes.
  p.a_raw = Tensor::uniform({width, d_state}, rng, 0.5, 2.0, true);
  const double s = 1.0 / std::sqrt(static_cast<double>(d_state));
  p.b = Tensor::randn({width, d_state}, rng, s, true);
  p.c = Tensor::randn({width, d_state}, rng, s, true);
  p.d = Tensor::full({width}, 1.0, true);
  return p;
}

namespace {

void validate(const Tensor& x, const SsmCoeffs& p, bool check_stability, const char* op) {
  if (x.rank() != 2) throw DimensionError(std::string(op) + ": input must be 2-D");
  const std::int64_t d = x.cols(), ds = p.d_state();
  if (p.a.rows() != d || p.b.shape() != p.a.shape() || p.c.shape() != p.a.shape() ||
      p.d.rank() != 1 || p.d.dim(0) != d) {
    throw DimensionError(std::string(op) + ": coefficient shapes inconsistent with input " +
                         shape_str(x.shape()));
  }
  (void)ds;
  if (check_stability && checked_mode()) {
    for (std::int64_t i = 0; i < p.a.numel(); ++i) {
      if (std::fabs(p.a.at(i)) >= 1.0) {
        throw ConfigError(std::string(op) + ": unstable transition |a| >= 1 at index " +
                          std::to_string(i));
      }
    }
  }
}

// Shared reverse recurrence. states holds s_t packed [d][n][d_state];
// grads flow into x, a, b, c, d wherever tracked.
void ssm_backward(Tensor& x, SsmCoeffs p, Tensor& out,
                  const std::vector<double>& states) {
  if (!out.has_grad()) return;
  const std::int64_t n = x.rows(), d = x.cols(), ds = p.d_state();
  const double* go = out.grad_data();
  const bool need_x = x.requires_grad();
  const bool need_a = p.a.requires_grad();
  const bool need_b = p.b.requires_grad();
  const bool need_c = p.c.requires_grad();
  const bool need_d = p.d.requires_grad();
  double* gx = need_x ? x.grad_data() : nullptr;
  double* ga = need_a ? p.a.grad_data() : nullptr;
  double* gb = need_b ? p.b.grad_data() : nullptr;
  double* gc = need_c ? p.c.grad_data() : nullptr;
  double* gd = need_d ? p.d.grad_data() : nullptr;

  std::vector<double> dstate(static_cast<std::size_t>(ds));
  for (std::int64_t c = 0; c < d; ++c) {
    const double* ac = p.a.data() + c * ds;
    const double* bc = p.b.data() + c * ds;
    const double* cc = p.c.data() + c * ds;
    const double* sc = states.data() + c * n * ds;
    std::fill(dstate.begin(), dstate.end(), 0.0);
    for (std::int64_t t = n - 1; t >= 0; --t) {
      const double dy = go[t * d + c];
      const double xv = x.at(t, c);
      if (gd) gd[c] += dy * xv;
      double dx_acc = p.d.at(c) * dy;
      const double* st = sc + t * ds;
      const double* sprev = t > 0 ? sc + (t - 1) * ds : nullptr;
      for (std::int64_t j = 0; j < ds; ++j) {
        double dsj = dstate[static_cast<std::size_t>(j)] + cc[j] * dy;
        if (gc) gc[c * ds + j] += st[j] * dy;
        if (ga && sprev) ga[c * ds + j] += dsj * sprev[j];
        if (gb) gb[c * ds + j] += dsj * xv;
        dx_acc += dsj * bc[j];
        dstate[static_cast<std::size_t>(j)] = dsj * ac[j];
      }
      if (gx) gx[t * d + c] += dx_acc;
    }
  }
}

bool scan_tracked(const Tensor& x, const SsmCoeffs& p) {
  return grad_enabled() && (x.requires_grad() || p.a.requires_grad() || p.b.requires_grad() ||
                            p.c.requires_grad() || p.d.requires_grad());
}

void register_scan_backward(const Tensor& x, const SsmCoeffs& p, Tensor& out,
                            std::vector<double> states) {
  out.set_requires_grad(true);
  Tensor tx = x, to = out;
  SsmCoeffs tp = p;
  detail::tape_push([tx, tp, to, states = std::move(states)]() mutable {
    ssm_backward(tx, tp, to, states);
  });
}

} // namespace

Tensor ssm_scan_naive(const Tensor& x, const SsmCoeffs& p, bool check_stability) {
  validate(x, p, check_stability, "ssm_scan_naive");
  const std::int64_t n = x.rows(), d = x.cols(), ds = p.d_state();
  Tensor out = Tensor::zeros({n, d});
  const bool tracked = scan_tracked(x, p);
  std::vector<double> states;
  if (tracked) states.assign(static_cast<std::size_t>(n * d * ds), 0.0);

  std::vector<double> s(static_cast<std::size_t>(d * ds), 0.0);
  for (std::int64_t t = 0; t < n; ++t) {
    for (std::int64_t c = 0; c < d; ++c) {
      const double u = x.at(t, c);
      const double* ac = p.a.data() + c * ds;
      const double* bc = p.b.data() + c * ds;
      const double* cc = p.c.data() + c * ds;
      double* sc = s.data() + c * ds;
      double acc = 0.0;
      for (std::int64_t j = 0; j < ds; ++j) {
        sc[j] = ac[j] * sc[j] + bc[j] * u;
        acc += cc[j] * sc[j];
      }
      if (tracked) {
        std::copy(sc, sc + ds, states.data() + (c * n + t) * ds);
      }
      out.mut(t, c) = acc + p.d.at(c) * u;
    }
  }
  detail::check_finite(out, "ssm_scan_naive");
  if (tracked) register_scan_backward(x, p, out, std::move(states));
  return out;
}

Tensor ssm_scan(const Tensor& x, const SsmCoeffs& p, bool check_stability) {
  validate(x, p, check_stability, "ssm_scan");
  const std::int64_t n = x.rows(), d = x.cols(), ds = p.d_state();
  constexpr std::int64_t kBlock = 64;
  Tensor out = Tensor::zeros({n, d});
  const bool tracked = scan_tracked(x, p);
  std::vector<double> states;
  if (tracked) states.assign(static_cast<std::size_t>(n * d * ds), 0.0);

  std::vector<double> local(static_cast<std::size_t>(kBlock * ds));
  std::vector<double> carry(static_cast<std::size_t>(ds));
  std::vector<double> apow(static_cast<std::size_t>(ds));
  std::vector<double> cur(static_cast<std::size_t>(ds));

  for (std::int64_t c = 0; c < d; ++c) {
    const double* ac = p.a.data() + c * ds;
    const double* bc = p.b.data() + c * ds;
    const double* cc = p.c.data() + c * ds;
    const double dc = p.d.at(c);
    std::fill(carry.begin(), carry.end(), 0.0);
    for (std::int64_t t0 = 0; t0 < n; t0 += kBlock) {
      const std::int64_t len = std::min<std::int64_t>(kBlock, n - t0);
      // pass 1: block-local prefix from a zero state
      std::fill(cur.begin(), cur.end(), 0.0);
      for (std::int64_t t = 0; t < len; ++t) {
        const double u = x.at(t0 + t, c);
        double* lt = local.data() + t * ds;
        for (std::int64_t j = 0; j < ds; ++j) {
          cur[static_cast<std::size_t>(j)] =
              ac[j] * cur[static_cast<std::size_t>(j)] + bc[j] * u;
          lt[j] = cur[static_cast<std::size_t>(j)];
        }
      }
      // pass 2: fold in the decayed carry and emit outputs
      std::copy(ac, ac + ds, apow.begin());
      for (std::int64_t t = 0; t < len; ++t) {
        const double* lt = local.data() + t * ds;
        double acc = 0.0;
        for (std::int64_t j = 0; j < ds; ++j) {
          const double sj = lt[j] + apow[static_cast<std::size_t>(j)] * carry[static_cast<std::size_t>(j)];
          cur[static_cast<std::size_t>(j)] = sj;
          acc += cc[j] * sj;
        }
        if (tracked) {
          std::copy(cur.begin(), cur.end(), states.data() + (c * n + t0 + t) * ds);
        }
        out.mut(t0 + t, c) = acc + dc * x.at(t0 + t, c);
        for (std::int64_t j = 0; j < ds; ++j) apow[static_cast<std::size_t>(j)] *= ac[j];
      }
      std::swap(carry, cur);
    }
  }
  detail::check_finite(out, "ssm_scan");
  if (tracked) register_scan_backward(x, p, out, std::move(states));
  return out;
}

} // namespace engage
