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

#pragma once

// Run configuration. The on-disk form is "key = value" lines; '#' starts a
// comment. Unknown keys are rejected.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dvfl/nn.hpp"
#include "dvfl/transport.hpp"

namespace dvfl {

enum class Role { kActive, kPassive, kLocal };
enum class TransportKind { kInProcess, kTcp };
enum class Aggregation { kPerBatch, kPerEpoch };

struct StopCondition {
  enum class Kind { kEpochs, kLossBelow };
  Kind kind = Kind::kEpochs;
  double threshold = 0;  // mean round loss for kLossBelow
};

struct RunConfig {
  Role role = Role::kLocal;
  std::size_t n_workers = 1;
  bool he = true;
  unsigned key_bits = 128;
  unsigned frac_bits = 16;

  ModelConfig model;  // active_in / passive_in come from the data
  double lr = 0.05;
  std::size_t batch = 16;
  std::size_t epochs = 10;
  StopCondition stop;
  Aggregation aggregation = Aggregation::kPerBatch;
  // Cap on aggregation rounds, 0 = no cap. Used by fixed-round benchmarks.
  std::size_t max_rounds = 0;

  // Either a LIBSVM file split locally, or one CSV per party.
  std::string train_libsvm;
  std::string active_csv;
  std::string passive_csv;
  std::string test_libsvm;
  std::string active_cols;  // "begin:end"; empty = first half active
  std::size_t feature_dim = 0;  // 0 = infer from the file
  std::size_t replicate = 1;
  std::size_t max_rows = 0;  // 0 = all rows

  TransportKind transport = TransportKind::kInProcess;
  Endpoint listen{"127.0.0.1", 7000};  // active party
  Endpoint peer{"127.0.0.1", 7000};    // passive party connects here

  std::uint64_t psi_bucket_seed = 0xb0c4e7;
  std::uint64_t psi_hash_seed = 0x5eed0001;
  std::uint64_t psi_rng_seed = 0x5eed0002;
  std::uint64_t he_seed = 0x4e5eed;
  double psi_fp = 1e-6;

  std::string metrics_out;
  std::string checkpoint_out;
};

std::map<std::string, std::string> parse_key_values(const std::string& text);
// Applies key/value overrides onto `config`; throws kConfig on unknown keys
// or bad values.
void apply_settings(RunConfig& config, const std::map<std::string, std::string>& settings);
RunConfig load_run_config(const std::string& path);
// Invariants that do not need the data: n_workers >= 1, epochs >= 1, ...
void validate(const RunConfig& config);

Role parse_role(const std::string& s);
const char* role_name(Role r);

}  // namespace dvfl
