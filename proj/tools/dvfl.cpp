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

// Command-line front end: psi, split, train, bench, eval.
//
// Exit status: 0 ok, 2 configuration error, 3 protocol error, 4 data error,
// 1 anything else.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

#include "dvfl/bench.hpp"
#include "dvfl/config.hpp"
#include "dvfl/data.hpp"
#include "dvfl/error.hpp"
#include "dvfl/orchestrator.hpp"
#include "dvfl/psi.hpp"

namespace {

using namespace dvfl;

std::map<std::string, std::string> overrides(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfig, "--set expects key=value, got '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

RunConfig config_from(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  apply_settings(c, overrides(sets));
  validate(c);
  return c;
}

void print_eval(const EvalResult& r) {
  std::cout << "test rows " << r.rows << "  accuracy " << r.accuracy << "  auc " << r.auc << "  ms/row " << r.ms_per_row;
  if (!std::isnan(r.secure_ms_per_row)) std::cout << "  secure ms/row " << r.secure_ms_per_row;
  std::cout << '\n';
}

int cmd_psi(const std::string& active, const std::string& passive, std::size_t workers, double fp,
            const std::string& out_path) {
  PsiSeeds seeds;
  seeds.params.fp_target = fp;
  const IdSet result =
      distributed_psi(make_id_set(ids_of(read_csv(active))), make_id_set(ids_of(read_csv(passive))), workers, seeds);
  if (out_path.empty()) {
    for (const auto& id : result) std::cout << id << '\n';
  } else {
    std::ofstream out(out_path);
    if (!out) throw Error(ErrorCode::kData, "cannot write " + out_path);
    for (const auto& id : result) out << id << '\n';
  }
  spdlog::info("{} ids in the intersection", result.size());
  return 0;
}

int cmd_split(const std::string& input, std::size_t dim, const std::string& cols, const std::string& active_out,
              const std::string& passive_out) {
  auto rows = load_libsvm(input, dim ? std::optional(dim) : std::nullopt);
  if (rows.empty()) throw Error(ErrorCode::kData, input + " has no rows");
  const std::size_t d = rows.front().features.size();
  auto parts = vertical_split(rows, cols.empty() ? VerticalSplitSpec::halves(d) : VerticalSplitSpec::from_range(cols, d));
  write_csv(active_out, parts.active);
  write_csv(passive_out, parts.passive);
  spdlog::info("wrote {} rows: {} active columns, {} passive columns", rows.size(),
               parts.active.front().features.size(), parts.passive.front().features.size());
  return 0;
}

int cmd_train(const RunConfig& c) {
  if (c.role == Role::kLocal) {
    const RunResult r = run_dvfl(c);
    std::cout << "rounds " << r.rounds << "  intersection " << r.intersection.size() << "  psi " << r.psi_ms / 1000
              << " s  train " << r.train_ms / 1000 << " s  rows/s " << r.rows_processed / (r.train_ms / 1000) << '\n';
    if (!r.round_losses.empty()) std::cout << "final round loss " << r.round_losses.back() << '\n';
    if (!c.checkpoint_out.empty()) save_checkpoint(c.checkpoint_out, r.weights);
    if (!c.metrics_out.empty()) write_metrics_csv(c.metrics_out, r.metrics);
    if (!c.test_libsvm.empty()) {
      const auto test = load_test_parts(c, r.active_dim + r.passive_dim);
      print_eval(evaluate(r.model, test.active, test.passive));
    }
    return 0;
  }
  const PartyOutcome out = run_networked_party(c, c.role);
  std::cout << role_name(c.role) << " party: rounds " << out.rounds << "  intersection " << out.intersection.size()
            << "  train " << out.train_ms / 1000 << " s\n";
  if (!out.round_losses.empty()) std::cout << "final round loss " << out.round_losses.back() << '\n';
  if (!c.checkpoint_out.empty()) save_checkpoint(c.checkpoint_out, out.weights);
  if (!c.metrics_out.empty()) write_metrics_csv(c.metrics_out, out.metrics);
  return 0;
}

int cmd_bench(const RunConfig& c, const std::vector<std::string>& sweep_items, const std::string& out_path) {
  const BenchSweep sweep = parse_sweep(sweep_items, c.key_bits);
  VerticalParts parts;
  if (!c.train_libsvm.empty() || !c.active_csv.empty()) parts = load_training_parts(c);
  if (parts.active.empty() && !sweep.key_bits.empty() && sweep.psi_ids.empty()) {
    throw Error(ErrorCode::kConfig, "training cells need data: set train or active_data/passive_data");
  }
  BenchSweep train_sweep = sweep;
  if (parts.active.empty()) train_sweep.key_bits.clear();
  const auto rows = run_bench(c, train_sweep, parts);
  write_bench_csv(out_path, rows);
  std::cout << bench_summary(rows);
  return 0;
}

int cmd_eval(const std::vector<std::string>& models, const std::string& test_active, const std::string& test_passive,
             std::size_t secure_rows, unsigned key_bits, unsigned frac_bits) {
  WeightVector weights = load_checkpoint(models.front());
  for (std::size_t i = 1; i < models.size(); ++i) weights = merge_weights(weights, load_checkpoint(models[i]));
  const SplitModel model = model_from_weights(weights);
  auto active = read_csv(test_active);
  auto passive = read_csv(test_passive);
  const auto common = make_id_set(ids_of(active));
  passive = align_to_intersection(passive, common);
  active = align_to_intersection(active, make_id_set(ids_of(passive)));
  EvalResult r = evaluate(model, active, passive);
  if (secure_rows > 0) {
    r.secure_ms_per_row = secure_inference_ms_per_row(model, active, passive, key_bits, frac_bits, secure_rows);
  }
  print_eval(r);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-party distributed vertical federated learning"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  auto* psi = app.add_subcommand("psi", "Intersect the ids of two party CSV files");
  std::string psi_active, psi_passive, psi_out;
  std::size_t psi_workers = 1;
  double psi_fp = 1e-6;
  psi->add_option("--active", psi_active, "Active party CSV")->required();
  psi->add_option("--passive", psi_passive, "Passive party CSV")->required();
  psi->add_option("--workers", psi_workers, "Worker pairs (hash buckets)")->check(CLI::PositiveNumber);
  psi->add_option("--fp", psi_fp, "Bloom filter false-positive target");
  psi->add_option("--out", psi_out, "Output file, one id per line (default stdout)");

  auto* split = app.add_subcommand("split", "Split a LIBSVM file into active and passive CSV files");
  std::string split_in, split_cols, split_a, split_p;
  std::size_t split_dim = 0;
  split->add_option("--input", split_in, "LIBSVM file")->required();
  split->add_option("--dim", split_dim, "Feature count (default: largest index)");
  split->add_option("--active-cols", split_cols, "Active columns begin:end (default: first half)");
  split->add_option("--active-out", split_a, "Active CSV")->required();
  split->add_option("--passive-out", split_p, "Passive CSV")->required();

  auto* train = app.add_subcommand("train", "Run PSI and training");
  std::string train_cfg, train_role;
  std::vector<std::string> train_sets;
  train->add_option("--config", train_cfg, "key = value run configuration")->required();
  train->add_option("--role", train_role, "active, passive or local (overrides the file)")
      ->check(CLI::IsMember({"active", "passive", "local"}));
  train->add_option("--set", train_sets, "Override a setting, key=value (repeatable)");

  auto* bench = app.add_subcommand("bench", "Throughput sweep over workers, HE settings and data scales");
  std::string bench_cfg, bench_out = "bench.csv";
  std::vector<std::string> bench_sweep, bench_sets;
  bench->add_option("--config", bench_cfg, "Base run configuration");
  bench->add_option("--sweep", bench_sweep, "workers=1,2,4 he=off,on scale=1,2 psi_ids=1000000")->expected(1, -1);
  bench->add_option("--set", bench_sets, "Override a setting, key=value (repeatable)");
  bench->add_option("--out", bench_out, "CSV report");

  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on a test split");
  std::vector<std::string> eval_models;
  std::string eval_active, eval_passive;
  std::size_t eval_secure_rows = 0;
  unsigned eval_key_bits = 128, eval_frac_bits = 16;
  eval->add_option("--model", eval_models, "Checkpoint; pass one per party to merge")->required();
  eval->add_option("--test-active", eval_active, "Active test CSV")->required();
  eval->add_option("--test-passive", eval_passive, "Passive test CSV")->required();
  eval->add_option("--secure-rows", eval_secure_rows, "Also time encrypted inference on this many rows");
  eval->add_option("--key-bits", eval_key_bits, "Key size for --secure-rows");
  eval->add_option("--frac-bits", eval_frac_bits, "Fixed-point bits for --secure-rows");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (*psi) return cmd_psi(psi_active, psi_passive, psi_workers, psi_fp, psi_out);
    if (*split) return cmd_split(split_in, split_dim, split_cols, split_a, split_p);
    if (*train) {
      if (!train_role.empty()) train_sets.push_back("role=" + train_role);
      return cmd_train(config_from(train_cfg, train_sets));
    }
    if (*bench) {
      if (bench_sweep.empty()) bench_sweep = {"workers=1,2,4", "he=off,on"};
      return cmd_bench(config_from(bench_cfg, bench_sets), bench_sweep, bench_out);
    }
    if (*eval) return cmd_eval(eval_models, eval_active, eval_passive, eval_secure_rows, eval_key_bits, eval_frac_bits);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
