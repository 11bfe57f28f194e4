// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "engage/ops.hpp"
#include "engage/tensor.hpp"

namespace engage {

struct AttnParams {
  Tensor wq, wk, wv, wo; // each [d x d]
  int heads = 1;

  static AttnParams init(std::int64_t d, int heads, Rng& rng);
  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor)>& fn) const;
};

// Scaled dot-product attention with all four projections applied here.
// Queries come from q_in [n x d], keys/values from kv_in [c x d]; multi-head
// by contiguous column split. q_in == kv_in gives self-attention.
Tensor projected_attention(const Tensor& q_in, const Tensor& kv_in, const AttnParams& p);

// Self-attention applied independently within non-overlapping chunks of
// chunk_size frames (the final chunk may be short). No information crosses
// a chunk boundary.
Tensor chunked_local_attention(const Tensor& x, const AttnParams& p, std::int64_t chunk_size);

} // namespace engage
