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

// Dataset ingestion, vertical splitting into the two parties, alignment to a
// PSI result and sequential sharding across workers.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace dvfl {

struct Record {
  std::string id;
  std::vector<double> features;
  std::optional<int> label;  // 0 or 1; absent on the passive side
};

// Sparse "label idx:val ..." text with 1-based indices. Ids are the
// zero-based row index. When `dim` is given every row is padded to it and
// larger indices are rejected; otherwise the max observed index is used.
std::vector<Record> load_libsvm(const std::string& path, std::optional<std::size_t> dim = std::nullopt);
std::vector<Record> parse_libsvm(const std::string& text, std::optional<std::size_t> dim = std::nullopt);

// Header "id,label,f0,..." when every record is labelled, "id,f0,..." otherwise.
void write_csv(const std::string& path, const std::vector<Record>& records);
std::vector<Record> read_csv(const std::string& path);

struct VerticalSplitSpec {
  std::vector<std::size_t> active_cols;
  std::vector<std::size_t> passive_cols;

  // First ceil(d/2) columns active, the rest passive.
  static VerticalSplitSpec halves(std::size_t dim);
  // Active columns [begin, end) from "begin:end"; the complement is passive.
  static VerticalSplitSpec from_range(const std::string& range, std::size_t dim);
};

struct VerticalParts {
  std::vector<Record> active;
  std::vector<Record> passive;
};

VerticalParts vertical_split(const std::vector<Record>& records, const VerticalSplitSpec& spec);

// Keeps ids present in `intersection` (sorted) and orders them by id bytes.
std::vector<Record> align_to_intersection(const std::vector<Record>& records,
                                          const std::vector<std::string>& intersection);

std::vector<std::string> ids_of(const std::vector<Record>& records);

struct PartitionedDataset {
  std::vector<std::vector<Record>> shards;
  std::size_t n = 0;
  std::size_t feature_dim = 0;
};

// Contiguous shards; the first L mod n shards get one extra row.
PartitionedDataset sequential_partition(const std::vector<Record>& records, std::size_t n);

// K stacked copies; copy c > 0 suffixes every id with "#c".
std::vector<Record> replicate(const std::vector<Record>& records, std::size_t k);

}  // namespace dvfl
