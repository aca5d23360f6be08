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

#include "dvfl/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>

#include "dvfl/error.hpp"

namespace dvfl {

namespace {

[[noreturn]] void parse_error(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kData, "line " + std::to_string(line) + ": " + what);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kData, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

struct SparseRow {
  int label;
  std::vector<std::pair<std::size_t, double>> entries;
};

}  // namespace

std::vector<Record> parse_libsvm(const std::string& text, std::optional<std::size_t> dim) {
  std::vector<SparseRow> rows;
  std::size_t max_index = 0;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string_view> tokens;
    for (auto t : split(line, ' ')) {
      if (!t.empty()) tokens.push_back(t);
    }
    SparseRow row{};
    double label = 0;
    if (!parse_number(tokens[0], label)) parse_error(line_no, "bad label '" + std::string(tokens[0]) + "'");
    if (label == 1) {
      row.label = 1;
    } else if (label == -1 || label == 0) {
      row.label = 0;
    } else {
      parse_error(line_no, "label must be -1, 0 or +1");
    }
    std::size_t prev = 0;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      auto colon = tokens[t].find(':');
      std::size_t idx = 0;
      double value = 0;
      if (colon == std::string_view::npos || !parse_number(tokens[t].substr(0, colon), idx) ||
          !parse_number(tokens[t].substr(colon + 1), value) || !std::isfinite(value)) {
        parse_error(line_no, "malformed entry '" + std::string(tokens[t]) + "'");
      }
      if (idx == 0) parse_error(line_no, "indices are 1-based");
      if (idx <= prev) parse_error(line_no, "indices must be strictly increasing");
      if (dim && idx > *dim) parse_error(line_no, "index " + std::to_string(idx) + " exceeds dimension");
      prev = idx;
      row.entries.emplace_back(idx - 1, value);
    }
    max_index = std::max(max_index, prev);
    rows.push_back(std::move(row));
  }

  const std::size_t d = dim.value_or(max_index);
  std::vector<Record> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Record r{std::to_string(i), std::vector<double>(d, 0.0), rows[i].label};
    for (auto [idx, v] : rows[i].entries) r.features[idx] = v;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Record> load_libsvm(const std::string& path, std::optional<std::size_t> dim) {
  return parse_libsvm(read_file(path), dim);
}

void write_csv(const std::string& path, const std::vector<Record>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kData, "cannot write " + path);
  const bool labelled = !records.empty() && std::all_of(records.begin(), records.end(),
                                                        [](const Record& r) { return r.label.has_value(); });
  const std::size_t d = records.empty() ? 0 : records[0].features.size();
  out << "id";
  if (labelled) out << ",label";
  for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
  out << '\n';
  char buf[32];
  for (const auto& r : records) {
    if (r.id.find_first_of(",\n\r") != std::string::npos) {
      throw Error(ErrorCode::kData, "id '" + r.id + "' cannot be written to CSV");
    }
    out << r.id;
    if (labelled) out << ',' << *r.label;
    for (double v : r.features) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kData, "write failed for " + path);
}

std::vector<Record> read_csv(const std::string& path) {
  std::string text = read_file(path);
  auto lines = split(text, '\n');
  if (lines.empty() || trim(lines[0]).empty()) throw Error(ErrorCode::kData, path + ": missing header");
  auto header = split(trim(lines[0]), ',');
  if (header[0] != "id") parse_error(1, "header must start with 'id'");
  const bool labelled = header.size() > 1 && header[1] == "label";
  const std::size_t first_feature = labelled ? 2 : 1;
  const std::size_t d = header.size() - first_feature;

  std::vector<Record> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto line = trim(lines[i]);
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      parse_error(i + 1, "expected " + std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    }
    Record r;
    r.id = std::string(cells[0]);
    if (labelled) {
      int label = 0;
      if (!parse_number(cells[1], label) || (label != 0 && label != 1)) parse_error(i + 1, "label must be 0 or 1");
      r.label = label;
    }
    r.features.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      if (!parse_number(cells[first_feature + j], r.features[j]) || !std::isfinite(r.features[j])) {
        parse_error(i + 1, "bad value in column " + std::string(header[first_feature + j]));
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

VerticalSplitSpec VerticalSplitSpec::halves(std::size_t dim) {
  VerticalSplitSpec spec;
  const std::size_t cut = (dim + 1) / 2;
  for (std::size_t j = 0; j < dim; ++j) (j < cut ? spec.active_cols : spec.passive_cols).push_back(j);
  return spec;
}

VerticalSplitSpec VerticalSplitSpec::from_range(const std::string& range, std::size_t dim) {
  auto parts = split(range, ':');
  std::size_t begin = 0, end = 0;
  if (parts.size() != 2 || !parse_number(parts[0], begin) || !parse_number(parts[1], end) || begin > end ||
      end > dim) {
    throw Error(ErrorCode::kConfig, "column range must be begin:end within [0, " + std::to_string(dim) + "]");
  }
  VerticalSplitSpec spec;
  for (std::size_t j = 0; j < dim; ++j) (j >= begin && j < end ? spec.active_cols : spec.passive_cols).push_back(j);
  return spec;
}

VerticalParts vertical_split(const std::vector<Record>& records, const VerticalSplitSpec& spec) {
  const std::size_t d = records.empty() ? spec.active_cols.size() + spec.passive_cols.size()
                                        : records[0].features.size();
  std::vector<int> owner(d, 0);
  for (const auto* cols : {&spec.active_cols, &spec.passive_cols}) {
    for (std::size_t c : *cols) {
      if (c >= d) throw Error(ErrorCode::kConfig, "split column " + std::to_string(c) + " out of range");
      if (owner[c]++ != 0) throw Error(ErrorCode::kConfig, "split column " + std::to_string(c) + " assigned twice");
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    if (owner[c] == 0) throw Error(ErrorCode::kConfig, "split leaves column " + std::to_string(c) + " unassigned");
  }

  VerticalParts parts;
  parts.active.reserve(records.size());
  parts.passive.reserve(records.size());
  for (const auto& r : records) {
    if (r.features.size() != d) throw Error(ErrorCode::kData, "record " + r.id + " has a different dimension");
    Record a{r.id, {}, r.label};
    Record p{r.id, {}, std::nullopt};
    a.features.reserve(spec.active_cols.size());
    p.features.reserve(spec.passive_cols.size());
    for (std::size_t c : spec.active_cols) a.features.push_back(r.features[c]);
    for (std::size_t c : spec.passive_cols) p.features.push_back(r.features[c]);
    parts.active.push_back(std::move(a));
    parts.passive.push_back(std::move(p));
  }
  return parts;
}

std::vector<Record> align_to_intersection(const std::vector<Record>& records,
                                          const std::vector<std::string>& intersection) {
  std::vector<Record> out;
  for (const auto& r : records) {
    if (std::binary_search(intersection.begin(), intersection.end(), r.id)) out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(), [](const Record& a, const Record& b) { return a.id < b.id; });
  return out;
}

std::vector<std::string> ids_of(const std::vector<Record>& records) {
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.id);
  return ids;
}

PartitionedDataset sequential_partition(const std::vector<Record>& records, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "worker count must be >= 1");
  const std::size_t total = records.size();
  if (n > total) spdlog::warn("{} workers for {} rows: some shards are empty", n, total);
  PartitionedDataset out;
  out.n = n;
  out.feature_dim = records.empty() ? 0 : records[0].features.size();
  out.shards.resize(n);
  const std::size_t base = total / n;
  const std::size_t extra = total % n;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    out.shards[i].assign(records.begin() + static_cast<std::ptrdiff_t>(pos),
                         records.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return out;
}

std::vector<Record> replicate(const std::vector<Record>& records, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "replication factor must be >= 1");
  std::vector<Record> out;
  out.reserve(records.size() * k);
  for (std::size_t c = 0; c < k; ++c) {
    for (const auto& r : records) {
      out.push_back(r);
      if (c > 0) out.back().id += "#" + std::to_string(c);
    }
  }
  return out;
}

}  // namespace dvfl
