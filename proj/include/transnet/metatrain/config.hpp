#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>

#include "transnet/numkit/errors.hpp"

namespace transnet::metatrain {

// The TOML subset used for configs: `[section]` headers, `key = value` with
// strings, booleans, integers and floats, and `#` comments. Keys are stored
// as "section.key" (or bare "key" before any header).
using TomlValue = std::variant<bool, long long, double, std::string>;
using TomlTable = std::map<std::string, TomlValue>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

inline TomlValue parse_value(const std::string& raw, const std::string& where) {
  const std::string v = trim(raw);
  if (v.empty()) throw UsageError(where + ": missing value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw UsageError(where + ": unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] == '\\' && i + 2 < v.size()) {
        const char c = v[++i];
        out += c == 'n' ? '\n' : c == 't' ? '\t' : c;
      } else {
        out += v[i];
      }
    }
    return out;
  }
  if (v == "true") return true;
  if (v == "false") return false;
  std::string digits;
  for (char c : v)
    if (c != '_') digits += c;
  const bool floating = digits.find_first_of(".eE") != std::string::npos || digits == "inf" || digits == "nan";
  if (!floating) {
    long long n = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (ec == std::errc() && p == digits.data() + digits.size()) return n;
  } else {
    double x = 0.0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), x);
    if (ec == std::errc() && p == digits.data() + digits.size()) return x;
  }
  throw UsageError(where + ": cannot parse value '" + v + "'");
}

}  // namespace detail

inline TomlTable parse_toml(const std::string& text, const std::string& source = "config") {
  TomlTable out;
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError(where + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw UsageError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw UsageError(where + ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (out.contains(key)) throw UsageError(where + ": duplicate key '" + key + "'");
    out[key] = detail::parse_value(line.substr(eq + 1), where);
  }
  return out;
}

inline TomlTable read_toml(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_toml(ss.str(), path.filename().string());
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

struct TrainConfig {
  std::size_t shots = 5;
  std::size_t dim = 100;
  double margin = 1.0;
  double lambda = 0.05;
  double tau = 0.5;
  std::size_t wl_depth = 2;
  double lr = 0.001;
  double inner_lr = 0.1;
  std::size_t batch = 1024;
  std::size_t warmup_steps = 0;
  std::size_t max_steps = 30000;
  std::size_t eval_every = 1000;
  std::uint64_t seed = 1;
  bool transfer = true;
  bool meta = true;  // inner adaptation step; off for the meta-disabled ablation
  std::size_t query_size = 10;
  std::size_t context_cap = 50;
  std::size_t false_contexts = 1;
  std::size_t mp_fanout = 8;
  std::size_t heads = 4;
  std::size_t mrl_layers = 1;
  std::size_t transe_epochs = 100;
  double transe_lr = 0.01;
  std::string transfer_pool = "batch";  // batch | all

  void validate() const {
    auto fail = [](const std::string& m) { throw UsageError("invalid configuration: " + m); };
    if (shots == 0) fail("shots must be at least 1");
    if (dim == 0) fail("dim must be positive");
    if (!(lr > 0.0)) fail("lr must be positive");
    if (!(inner_lr > 0.0)) fail("inner_lr must be positive");
    if (!(transe_lr > 0.0)) fail("transe_lr must be positive");
    if (!(tau > 0.0)) fail("tau must be positive");
    if (margin < 0.0) fail("margin must be non-negative");
    if (lambda < 0.0) fail("lambda must be non-negative");
    if (batch == 0) fail("batch must be positive");
    if (eval_every == 0) fail("eval_every must be positive");
    if (warmup_steps > max_steps) fail("warmup_steps exceeds max_steps");
    if (false_contexts == 0) fail("false_contexts must be at least 1");
    if (heads == 0 || mrl_layers == 0) fail("heads and mrl_layers must be positive");
    if (transfer_pool != "batch" && transfer_pool != "all") fail("transfer_pool must be 'batch' or 'all'");
  }

  // Reads keys from the [train] section (or top level). Unknown keys there
  // are rejected so typos do not pass silently.
  void apply(const TomlTable& table) {
    for (const auto& [full, value] : table) {
      std::string key = full;
      if (key.starts_with("train.")) key = key.substr(6);
      else if (key.find('.') != std::string::npos) continue;
      if (!set(key, value)) throw UsageError("unknown configuration key '" + full + "'");
    }
  }

  bool set(const std::string& key, const TomlValue& value) {
    auto as_size = [&](std::size_t& f) {
      if (const auto* n = std::get_if<long long>(&value); n && *n >= 0) {
        f = static_cast<std::size_t>(*n);
        return true;
      }
      throw UsageError("configuration key '" + key + "' needs a non-negative integer");
    };
    auto as_double = [&](double& f) {
      if (const auto* n = std::get_if<long long>(&value)) f = static_cast<double>(*n);
      else if (const auto* x = std::get_if<double>(&value)) f = *x;
      else throw UsageError("configuration key '" + key + "' needs a number");
      return true;
    };
    auto as_bool = [&](bool& f) {
      if (const auto* b = std::get_if<bool>(&value)) {
        f = *b;
        return true;
      }
      throw UsageError("configuration key '" + key + "' needs true or false");
    };
    if (key == "shots") return as_size(shots);
    if (key == "dim") return as_size(dim);
    if (key == "margin") return as_double(margin);
    if (key == "lambda") return as_double(lambda);
    if (key == "tau") return as_double(tau);
    if (key == "wl_depth") return as_size(wl_depth);
    if (key == "lr") return as_double(lr);
    if (key == "inner_lr") return as_double(inner_lr);
    if (key == "batch") return as_size(batch);
    if (key == "warmup_steps") return as_size(warmup_steps);
    if (key == "max_steps") return as_size(max_steps);
    if (key == "eval_every") return as_size(eval_every);
    if (key == "seed") {
      std::size_t s = 0;
      as_size(s);
      seed = s;
      return true;
    }
    if (key == "transfer") return as_bool(transfer);
    if (key == "meta") return as_bool(meta);
    if (key == "query_size") return as_size(query_size);
    if (key == "context_cap") return as_size(context_cap);
    if (key == "false_contexts") return as_size(false_contexts);
    if (key == "mp_fanout") return as_size(mp_fanout);
    if (key == "heads") return as_size(heads);
    if (key == "mrl_layers") return as_size(mrl_layers);
    if (key == "transe_epochs") return as_size(transe_epochs);
    if (key == "transe_lr") return as_double(transe_lr);
    if (key == "transfer_pool") {
      if (const auto* s = std::get_if<std::string>(&value)) {
        transfer_pool = *s;
        return true;
      }
      throw UsageError("configuration key 'transfer_pool' needs a string");
    }
    return false;
  }

  std::string to_toml() const {
    std::ostringstream os;
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "[train]\n"
       << "shots = " << shots << "\n"
       << "dim = " << dim << "\n"
       << "margin = " << format_double(margin) << "\n"
       << "lambda = " << format_double(lambda) << "\n"
       << "tau = " << format_double(tau) << "\n"
       << "wl_depth = " << wl_depth << "\n"
       << "lr = " << format_double(lr) << "\n"
       << "inner_lr = " << format_double(inner_lr) << "\n"
       << "batch = " << batch << "\n"
       << "warmup_steps = " << warmup_steps << "\n"
       << "max_steps = " << max_steps << "\n"
       << "eval_every = " << eval_every << "\n"
       << "seed = " << seed << "\n"
       << "transfer = " << b(transfer) << "\n"
       << "meta = " << b(meta) << "\n"
       << "query_size = " << query_size << "\n"
       << "context_cap = " << context_cap << "\n"
       << "false_contexts = " << false_contexts << "\n"
       << "mp_fanout = " << mp_fanout << "\n"
       << "heads = " << heads << "\n"
       << "mrl_layers = " << mrl_layers << "\n"
       << "transe_epochs = " << transe_epochs << "\n"
       << "transe_lr = " << format_double(transe_lr) << "\n"
       << "transfer_pool = \"" << transfer_pool << "\"\n";
    return os.str();
  }

  bool operator==(const TrainConfig&) const = default;
};

}  // namespace transnet::metatrain
