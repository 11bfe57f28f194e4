// SPDX-License-Identifier: Apache-2.0
#include "engage/tnsr.hpp"

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "TNSR/1 I/O assumes a little-endian host");

namespace engage {

namespace fs = std::filesystem;

void save_tnsr(const std::string& path, const Tensor& t, const std::string& dtype) {
  if (dtype != "f64" && dtype != "f32") {
    throw UsageError("save_tnsr: unsupported dtype " + dtype);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_tnsr: cannot open " + path);
  out << "TNSR v1 " << dtype << " " << t.rank();
  for (auto d : t.shape()) out << " " << d;
  out << "\n";
  if (dtype == "f64") {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  } else {
    std::vector<float> narrow(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i) narrow[static_cast<std::size_t>(i)] = static_cast<float>(t.at(i));
    out.write(reinterpret_cast<const char*>(narrow.data()),
              static_cast<std::streamsize>(narrow.size() * sizeof(float)));
  }
  if (!out) throw DataError("save_tnsr: write failed for " + path);
}

Tensor load_tnsr(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_tnsr: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("load_tnsr: missing header in " + path);
  std::istringstream hs(header);
  std::string magic, version, dtype;
  std::int64_t ndims = 0;
  hs >> magic >> version >> dtype >> ndims;
  if (magic != "TNSR" || version != "v1") {
    throw DataError("load_tnsr: bad header '" + header + "' in " + path);
  }
  if (dtype != "f64" && dtype != "f32") {
    throw DataError("load_tnsr: unsupported dtype " + dtype + " in " + path);
  }
  if (ndims < 1 || ndims > 8) throw DataError("load_tnsr: bad rank in " + path);
  Shape shape(static_cast<std::size_t>(ndims));
  std::int64_t numel = 1;
  for (auto& d : shape) {
    if (!(hs >> d) || d <= 0) throw DataError("load_tnsr: bad extent in " + path);
    numel *= d;
  }
  Tensor t = Tensor::zeros(shape);
  if (dtype == "f64") {
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
  } else {
    std::vector<float> narrow(static_cast<std::size_t>(numel));
    in.read(reinterpret_cast<char*>(narrow.data()),
            static_cast<std::streamsize>(narrow.size() * sizeof(float)));
    for (std::int64_t i = 0; i < numel; ++i) t.mut(i) = static_cast<double>(narrow[static_cast<std::size_t>(i)]);
  }
  if (!in) throw DataError("load_tnsr: truncated data in " + path);
  for (std::int64_t i = 0; i < numel; ++i) {
    if (!std::isfinite(t.at(i))) throw DataError("load_tnsr: non-finite value in " + path);
  }
  return t;
}

namespace {
void check_name(const std::string& name) {
  if (name.empty()) throw UsageError("tensor name empty");
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '.' || c == '-';
    if (!ok) throw UsageError("tensor name '" + name + "' has unsafe characters");
  }
}
} // namespace

void save_tensor_dir(const std::string& dir,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  fs::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.txt");
  if (!manifest) throw DataError("save_tensor_dir: cannot open manifest in " + dir);
  for (const auto& [name, t] : tensors) {
    check_name(name);
    manifest << name << " " << t.rank();
    for (auto d : t.shape()) manifest << " " << d;
    manifest << "\n";
    save_tnsr(dir + "/" + name + ".tnsr", t);
  }
}

std::vector<std::pair<std::string, Tensor>> load_tensor_dir(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.txt");
  if (!manifest) throw DataError("load_tensor_dir: missing manifest in " + dir);
  std::vector<std::pair<std::string, Tensor>> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    std::int64_t ndims = 0;
    ls >> name >> ndims;
    Shape shape(static_cast<std::size_t>(ndims));
    for (auto& d : shape) ls >> d;
    Tensor t = load_tnsr(dir + "/" + name + ".tnsr");
    if (t.shape() != shape) {
      throw DataError("load_tensor_dir: manifest/file shape mismatch for " + name);
    }
    out.emplace_back(name, std::move(t));
  }
  return out;
}

void save_kv(const std::string& path, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ofstream out(path);
  if (!out) throw DataError("save_kv: cannot open " + path);
  for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
}

std::map<std::string, std::string> load_kv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_kv: cannot open " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("load_kv: bad line '" + line + "' in " + path);
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

} // namespace engage
