// SPDX-License-Identifier: Apache-2.0
#include "engage/attention.hpp"

#include <cmath>

namespace engage {

AttnParams AttnParams::init(std::int64_t d, int heads, Rng& rng) {
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("attention: head count " + std::to_string(heads) +
                      " must divide width " + std::to_string(d));
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  AttnParams p;
  p.wq = Tensor::randn({d, d}, rng, s, true);
  p.wk = Tensor::randn({d, d}, rng, s, true);
  p.wv = Tensor::randn({d, d}, rng, s, true);
  p.wo = Tensor::randn({d, d}, rng, s, true);
  p.heads = heads;
  return p;
}

void AttnParams::visit_params(const std::string& prefix,
                              const std::function<void(const std::string&, Tensor)>& fn) const {
  fn(prefix + ".wq", wq);
  fn(prefix + ".wk", wk);
  fn(prefix + ".wv", wv);
  fn(prefix + ".wo", wo);
}

namespace {

// Attention without the output projection; caller applies wo.
Tensor attention_core(const Tensor& q_in, const Tensor& kv_in, const AttnParams& p) {
  const std::int64_t d = q_in.cols();
  if (kv_in.cols() != d) {
    throw DimensionError("attention: query width " + shape_str(q_in.shape()) +
                         " vs context width " + shape_str(kv_in.shape()));
  }
  if (p.wq.rows() != d) {
    throw DimensionError("attention: weights " + shape_str(p.wq.shape()) +
                         " vs input width " + std::to_string(d));
  }
  Tensor q = matmul(q_in, p.wq);
  Tensor k = matmul(kv_in, p.wk);
  Tensor v = matmul(kv_in, p.wv);
  const std::int64_t dh = d / p.heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  if (p.heads == 1) {
    Tensor probs = softmax_rows(scale(matmul(q, transpose(k)), sc));
    return matmul(probs, v);
  }
  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<std::size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    const std::int64_t c0 = h * dh, c1 = (h + 1) * dh;
    Tensor qh = slice_cols(q, c0, c1);
    Tensor kh = slice_cols(k, c0, c1);
    Tensor vh = slice_cols(v, c0, c1);
    Tensor probs = softmax_rows(scale(matmul(qh, transpose(kh)), sc));
    head_outs.push_back(matmul(probs, vh));
  }
  return concat_cols(head_outs);
}

} // namespace

Tensor projected_attention(const Tensor& q_in, const Tensor& kv_in, const AttnParams& p) {
  return matmul(attention_core(q_in, kv_in, p), p.wo);
}

Tensor chunked_local_attention(const Tensor& x, const AttnParams& p, std::int64_t chunk_size) {
  if (chunk_size <= 0) {
    throw ConfigError("chunked_local_attention: chunk size must be positive, got " +
                      std::to_string(chunk_size));
  }
  const std::int64_t n = x.rows();
  if (chunk_size >= n) return projected_attention(x, x, p);
  std::vector<Tensor> chunks;
  chunks.reserve(static_cast<std::size_t>((n + chunk_size - 1) / chunk_size));
  for (std::int64_t r0 = 0; r0 < n; r0 += chunk_size) {
    const std::int64_t r1 = std::min(n, r0 + chunk_size);
    Tensor xc = slice_rows(x, r0, r1);
    chunks.push_back(attention_core(xc, xc, p));
  }
  return matmul(concat_rows(chunks), p.wo);
}

} // namespace engage
