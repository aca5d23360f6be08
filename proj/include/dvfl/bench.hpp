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

// Evaluation, the centralized baseline trainer and the benchmark sweep.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dvfl/config.hpp"
#include "dvfl/data.hpp"
#include "dvfl/nn.hpp"

namespace dvfl {

// Rank-based ROC AUC with tied scores sharing their mean rank. NaN when
// only one class is present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct EvalResult {
  std::size_t rows = 0;
  double accuracy = 0;
  double auc = 0;
  double ms_per_row = 0;  // plaintext forward
  double secure_ms_per_row = std::numeric_limits<double>::quiet_NaN();
};

// Plaintext evaluation over id-aligned party records (same ids, same order).
EvalResult evaluate(const SplitModel& model, const std::vector<Record>& active, const std::vector<Record>& passive,
                    std::size_t batch = 1024);

// Inference with the interactive layer evaluated under encryption, over the
// first `max_rows` rows, one thread per party on an in-process channel.
// Returns the mean milliseconds per row.
double secure_inference_ms_per_row(const SplitModel& model, const std::vector<Record>& active,
                                   const std::vector<Record>& passive, unsigned key_bits, unsigned frac_bits,
                                   std::size_t max_rows, std::size_t batch = 16, std::uint64_t seed = 7);

struct CentralizedResult {
  SplitModel model;
  std::vector<double> losses;  // pre-step loss of every step
};

// Single-process training on the joined table: common ids in id order,
// config.batch rows per step, config.epochs passes. No PSI, no encryption.
CentralizedResult train_centralized(const RunConfig& config, const VerticalParts& parts);

// ---- benchmark sweep ---------------------------------------------------------------

struct BenchSweep {
  std::vector<std::size_t> workers{1};
  std::vector<unsigned> key_bits{0};  // 0 = HE off
  std::vector<std::size_t> scales{1};
  std::vector<std::size_t> psi_ids;  // ids per party for PSI cells; empty = none
};

// Items of the form "workers=1,2,4", "he=off,on,128,1024" ("on" = the base
// key size), "scale=1,2", "psi_ids=1000000".
BenchSweep parse_sweep(const std::vector<std::string>& items, unsigned default_key_bits);

struct BenchRow {
  std::string kind;  // "train" or "psi"
  std::size_t workers = 0;
  bool he = false;
  unsigned key_bits = 0;
  std::size_t rows = 0;  // rows trained, or ids across both parties
  double wall_s = 0;
  double rows_per_s = 0;
  // Mean per active worker step.
  double forward_bottom_ms = 0;
  double he_exchange_ms = 0;
  double top_ms = 0;
  double backward_ms = 0;
  double ps_sync_ms = 0;
  std::string status = "ok";
};

// Training cells run `base` with the cell's workers / HE / replication over
// `parts`; failures are recorded in the row instead of aborting the sweep.
std::vector<BenchRow> run_bench(const RunConfig& base, const BenchSweep& sweep, const VerticalParts& parts);
// Distributed PSI over `ids_per_party` synthetic ids per side with half of
// them shared; rows counts ids of both parties.
BenchRow bench_psi(std::size_t ids_per_party, std::size_t workers, std::uint64_t seed = 1);

// Comment header with the published reference points, then one line per row.
void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);
// Human-readable comparison of the sweep against the scaling targets.
std::string bench_summary(const std::vector<BenchRow>& rows);

}  // namespace dvfl
