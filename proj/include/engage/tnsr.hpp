// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "engage/tensor.hpp"

namespace engage {

// TNSR/1 file format: one ASCII header line
//   TNSR v1 <dtype> <ndims> <d0> <d1> ...
// followed by the raw little-endian scalar buffer. dtype is f64 or f32;
// f32 data is widened to double on load.
void save_tnsr(const std::string& path, const Tensor& t, const std::string& dtype = "f64");
Tensor load_tnsr(const std::string& path);

// A named set of tensors as a directory: <dir>/manifest.txt lists
// `<name> <ndims> <d0> ...` per line, each tensor stored as <dir>/<name>.tnsr.
void save_tensor_dir(const std::string& dir,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensor_dir(const std::string& dir);

// Plain `key=value` text files (session meta, checkpoint state).
void save_kv(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv);
std::map<std::string, std::string> load_kv(const std::string& path);

} // namespace engage
