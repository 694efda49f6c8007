#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "bayernet/errors.hpp"

namespace bayernet {

// Parses "key = value" lines ('#' starts a comment). Malformed lines and
// repeated keys throw ConfigError.
std::map<std::string, std::string> parse_key_values(const std::string& text);

// Named bindings from config keys to struct fields.
class KeyTable {
 public:
  using Field = std::variant<int*, double*, float*, bool*, std::uint64_t*, std::string*>;

  KeyTable& add(std::string name, Field field);

  bool contains(const std::string& key) const;
  Field field(const std::string& key) const;  // throws ConfigError when unknown
  // Parses `value` into the bound field. Unknown keys and unparsable or
  // non-finite values throw ConfigError.
  void set(const std::string& key, const std::string& value) const;
  std::string get(const std::string& key) const;
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::vector<std::string> names() const;

 private:
  std::vector<std::pair<std::string, Field>> fields_;
};

}  // namespace bayernet
