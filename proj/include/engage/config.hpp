// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "engage/model.hpp"
#include "engage/train.hpp"

namespace engage {

// Plain-text config: one `key = value` per line, '#' comments, dotted keys.
// Every key is schema-checked (type + known-key) both when read from a file
// and when applied as a CLI override.
class Config {
 public:
  enum class Type { Int, Float, Bool, Str };
  struct SchemaEntry {
    std::string key;
    Type type;
    std::string def;
    std::string description;
  };

  static const std::vector<SchemaEntry>& schema();

  Config(); // defaults

  void load_file(const std::string& path);
  // "key=value" pair, e.g. from --override
  void apply_override(const std::string& kv);

  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_str(const std::string& key) const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;

  static void print_help(std::ostream& os);

 private:
  void set_checked(const std::string& key, const std::string& value, const std::string& where);
  std::map<std::string, std::string> values_;
};

} // namespace engage
