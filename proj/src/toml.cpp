#include <sstream>

#include <fmt/format.h>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "kvsim/config.hpp"
#include "kvsim/errors.hpp"

namespace kvsim {

using nlohmann::json;

namespace {

json node_to_json(const toml::node& n, const std::string& path) {
  if (const auto* t = n.as_table()) {
    json o = json::object();
    for (const auto& [k, v] : *t) {
      const std::string key(k.str());
      o[key] = node_to_json(v, path.empty() ? key : path + "." + key);
    }
    return o;
  }
  if (const auto* a = n.as_array()) {
    json arr = json::array();
    for (const auto& v : *a) arr.push_back(node_to_json(v, path));
    return arr;
  }
  if (const auto* v = n.as_integer()) return v->get();
  if (const auto* v = n.as_floating_point()) return v->get();
  if (const auto* v = n.as_boolean()) return v->get();
  if (const auto* v = n.as_string()) return v->get();
  throw ConfigError("key '" + path + "': dates and times are not supported");
}

void insert(toml::table& t, const std::string& key, const json& v);

toml::array to_array(const json& arr) {
  toml::array a;
  for (const auto& v : arr) {
    if (v.is_number_integer()) a.push_back(v.get<std::int64_t>());
    else if (v.is_number()) a.push_back(v.get<double>());
    else if (v.is_boolean()) a.push_back(v.get<bool>());
    else if (v.is_string()) a.push_back(v.get<std::string>());
    else if (v.is_array()) a.push_back(to_array(v));
    else if (v.is_object()) {
      toml::table sub;
      for (const auto& [k, x] : v.items()) insert(sub, k, x);
      a.push_back(std::move(sub));
    }
  }
  return a;
}

void insert(toml::table& t, const std::string& key, const json& v) {
  if (v.is_null()) return;
  if (v.is_object()) {
    toml::table sub;
    for (const auto& [k, x] : v.items()) insert(sub, k, x);
    t.insert_or_assign(key, std::move(sub));
  } else if (v.is_array()) {
    t.insert_or_assign(key, to_array(v));
  } else if (v.is_number_integer()) {
    t.insert_or_assign(key, v.get<std::int64_t>());
  } else if (v.is_number()) {
    t.insert_or_assign(key, v.get<double>());
  } else if (v.is_boolean()) {
    t.insert_or_assign(key, v.get<bool>());
  } else {
    t.insert_or_assign(key, v.get<std::string>());
  }
}

}  // namespace

json parse_toml(std::string_view text, std::string_view source) {
  try {
    const toml::table t = toml::parse(text, source);
    return node_to_json(t, "");
  } catch (const toml::parse_error& e) {
    const auto& b = e.source().begin;
    throw ConfigError(fmt::format("{}:{}:{}: {}", source, b.line, b.column, e.description()));
  }
}

std::string emit_toml(const json& tree) {
  toml::table t;
  for (const auto& [k, v] : tree.items()) insert(t, k, v);
  std::ostringstream out;
  out << toml::toml_formatter(t, toml::toml_formatter::default_flags &
                                     ~toml::format_flags::allow_literal_strings);
  out << '\n';
  return out.str();
}

}  // namespace kvsim
