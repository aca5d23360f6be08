// Copyright (c) 2026 The DVFL Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dvfl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "dvfl/error.hpp"
#include "dvfl/paillier.hpp"

namespace dvfl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::kConfig, "bad value '" + value + "' for " + key);
}

template <typename T>
T number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value);
  return out;
}

std::uint64_t seed_value(const std::string& key, const std::string& value) {
  if (value.rfind("0x", 0) == 0) {
    std::uint64_t out = 0;
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data() + 2, end, out, 16);
    if (ec != std::errc() || ptr != end) bad_value(key, value);
    return out;
  }
  return number<std::uint64_t>(key, value);
}

bool flag(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  bad_value(key, value);
}

std::vector<std::size_t> sizes(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(number<std::size_t>(key, item));
  }
  return out;
}

Activation activation(const std::string& key, const std::string& value) {
  try {
    return parse_activation(value);
  } catch (const Error&) {
    bad_value(key, value);
  }
}

}  // namespace

Role parse_role(const std::string& s) {
  if (s == "active") return Role::kActive;
  if (s == "passive") return Role::kPassive;
  if (s == "local" || s == "single-process") return Role::kLocal;
  throw Error(ErrorCode::kConfig, "role must be active, passive or local");
}

const char* role_name(Role r) {
  switch (r) {
    case Role::kActive: return "active";
    case Role::kPassive: return "passive";
    case Role::kLocal: return "local";
  }
  return "?";
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfig, "line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw Error(ErrorCode::kConfig, "line " + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

void apply_settings(RunConfig& c, const std::map<std::string, std::string>& settings) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"role", [&](auto&, auto& v) { c.role = parse_role(v); }},
      {"n_workers", [&](auto& k, auto& v) { c.n_workers = number<std::size_t>(k, v); }},
      {"he", [&](auto& k, auto& v) { c.he = flag(k, v); }},
      {"key_bits", [&](auto& k, auto& v) { c.key_bits = number<unsigned>(k, v); }},
      {"frac_bits", [&](auto& k, auto& v) { c.frac_bits = number<unsigned>(k, v); }},
      {"bottom_hidden", [&](auto& k, auto& v) { c.model.bottom_hidden = sizes(k, v); }},
      {"bottom_activation", [&](auto& k, auto& v) { c.model.bottom_activation = activation(k, v); }},
      {"interactive_out", [&](auto& k, auto& v) { c.model.interactive_out = number<std::size_t>(k, v); }},
      {"top_hidden", [&](auto& k, auto& v) { c.model.top_hidden = sizes(k, v); }},
      {"top_activation", [&](auto& k, auto& v) { c.model.top_activation = activation(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.model.seed = seed_value(k, v); }},
      {"lr", [&](auto& k, auto& v) { c.lr = number<double>(k, v); }},
      {"batch", [&](auto& k, auto& v) { c.batch = number<std::size_t>(k, v); }},
      {"epochs", [&](auto& k, auto& v) { c.epochs = number<std::size_t>(k, v); }},
      {"stop_loss_below",
       [&](auto& k, auto& v) {
         c.stop.kind = StopCondition::Kind::kLossBelow;
         c.stop.threshold = number<double>(k, v);
       }},
      {"aggregation",
       [&](auto& k, auto& v) {
         if (v == "batch") {
           c.aggregation = Aggregation::kPerBatch;
         } else if (v == "epoch") {
           c.aggregation = Aggregation::kPerEpoch;
         } else {
           bad_value(k, v);
         }
       }},
      {"max_rounds", [&](auto& k, auto& v) { c.max_rounds = number<std::size_t>(k, v); }},
      {"train", [&](auto&, auto& v) { c.train_libsvm = v; }},
      {"active_data", [&](auto&, auto& v) { c.active_csv = v; }},
      {"passive_data", [&](auto&, auto& v) { c.passive_csv = v; }},
      {"test", [&](auto&, auto& v) { c.test_libsvm = v; }},
      {"active_cols", [&](auto&, auto& v) { c.active_cols = v; }},
      {"feature_dim", [&](auto& k, auto& v) { c.feature_dim = number<std::size_t>(k, v); }},
      {"replicate", [&](auto& k, auto& v) { c.replicate = number<std::size_t>(k, v); }},
      {"max_rows", [&](auto& k, auto& v) { c.max_rows = number<std::size_t>(k, v); }},
      {"transport",
       [&](auto& k, auto& v) {
         if (v == "inproc") {
           c.transport = TransportKind::kInProcess;
         } else if (v == "tcp") {
           c.transport = TransportKind::kTcp;
         } else {
           bad_value(k, v);
         }
       }},
      {"listen", [&](auto&, auto& v) { c.listen = parse_endpoint(v); }},
      {"peer", [&](auto&, auto& v) { c.peer = parse_endpoint(v); }},
      {"psi_bucket_seed", [&](auto& k, auto& v) { c.psi_bucket_seed = seed_value(k, v); }},
      {"psi_hash_seed", [&](auto& k, auto& v) { c.psi_hash_seed = seed_value(k, v); }},
      {"psi_rng_seed", [&](auto& k, auto& v) { c.psi_rng_seed = seed_value(k, v); }},
      {"psi_fp", [&](auto& k, auto& v) { c.psi_fp = number<double>(k, v); }},
      {"he_seed", [&](auto& k, auto& v) { c.he_seed = seed_value(k, v); }},
      {"metrics_out", [&](auto&, auto& v) { c.metrics_out = v; }},
      {"checkpoint_out", [&](auto&, auto& v) { c.checkpoint_out = v; }},
  };
  for (const auto& [key, value] : settings) {
    auto it = setters.find(key);
    if (it == setters.end()) throw Error(ErrorCode::kConfig, "unknown config key '" + key + "'");
    it->second(key, value);
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  apply_settings(c, parse_key_values(ss.str()));
  validate(c);
  return c;
}

void validate(const RunConfig& c) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfig, what); };
  if (c.n_workers == 0) fail("n_workers must be >= 1");
  if (c.epochs == 0) fail("epochs must be >= 1");
  if (c.batch == 0) fail("batch must be >= 1");
  if (!(c.lr >= 0)) fail("lr must be non-negative");
  if (c.replicate == 0) fail("replicate must be >= 1");
  if (c.frac_bits == 0 || c.frac_bits > 24) fail("frac_bits must be in [1, 24]");
  if (c.he && (c.key_bits < paillier::kMinKeyBits || c.key_bits % 2 != 0)) fail("key_bits must be even and >= 64");
  if (c.model.bottom_hidden.empty()) fail("bottom_hidden needs at least one layer");
  if (c.model.interactive_out == 0) fail("interactive_out must be positive");
  if (!(c.psi_fp > 0 && c.psi_fp < 1)) fail("psi_fp must lie in (0, 1)");
}

}  // namespace dvfl
