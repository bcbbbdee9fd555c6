// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/multiception.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace multiception::cli {

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kUsage = 2, kIo = 3 };

/// Exit code for a library error kind.
inline int exit_code_for(const Error &e) {
  const std::string k = e.kind();
  if (k == "format" || k == "syntax" || k == "semantic" || k == "input") return kIo;
  if (k == "config" || k == "range") return kUsage;
  return kVerifyFailed;
}

inline std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

inline Shape4 parse_shape(const std::string &text) {
  std::vector<std::size_t> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(part, &pos);
    } catch (const std::exception &) {
      pos = 0;
    }
    if (pos == 0 || pos != part.size() || x == 0) throw ConfigError("bad shape '" + text + "', expected n,c,h,w");
    v.push_back(static_cast<std::size_t>(x));
  }
  if (v.size() != 4) throw ConfigError("bad shape '" + text + "', expected n,c,h,w");
  return {v[0], v[1], v[2], v[3]};
}

inline std::vector<Variant> parse_modes(const std::string &text) {
  std::vector<Variant> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_variant(part));
  if (out.empty()) throw ConfigError("no modes given");
  return out;
}

/// Per-mode totals: `mode  params  flops  diff_pct` (diff against standard convs).
inline std::string analyze_table(const LayerPlan &plan, const std::vector<Variant> &modes, std::size_t input_hw) {
  std::ostringstream os;
  os << "model\tmode\tparams\tflops\tdiff_pct\n";
  for (Variant m : modes) {
    const auto r = model_cost(substitute_convs(plan, m), input_hw);
    os << r.model << '\t' << to_string(m) << '\t' << r.total_params << '\t' << r.total_flops << '\t' << std::fixed
       << std::setprecision(2) << r.reduction_pct << '\n';
  }
  return os.str();
}

/// CIFAR-10 training split from a directory of data_batch_*.bin files or a single .bin file.
inline Dataset load_cifar_train(const std::string &path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw FormatError("no such file or directory '" + path + "'");
  if (!fs::is_directory(path)) return load_cifar10(path);
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i) {
    const fs::path f = fs::path(path) / ("data_batch_" + std::to_string(i) + ".bin");
    if (fs::exists(f)) parts.push_back(load_cifar10(f.string()));
  }
  if (parts.empty()) throw FormatError("no data_batch_*.bin files in '" + path + "'");
  return concat_datasets(parts);
}

struct TrainArgs {
  std::string config;
  std::string data;
  bool synthetic = false;
  std::size_t epochs = 20;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  std::size_t subset = 2000;
  bool augment = false;
  std::string mode;
  double lr_max = 0.1;
  double lr_min = 5e-5;
};

inline int cmd_train(const TrainArgs &a, std::ostream &out) {
  ModelConfig cfg = load_model_config(a.config);
  if (!a.mode.empty()) cfg.conv_mode = parse_variant(a.mode);
  const LayerPlan plan = build_plan(cfg);
  Dataset raw = a.synthetic ? make_synthetic(a.subset, a.seed + 1) : take(load_cifar_train(a.data), a.subset);
  for (int y : raw.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= plan.classes) {
      throw InputError("dataset label " + std::to_string(y) + " exceeds the model's " + std::to_string(plan.classes) +
                       " classes");
    }
  }
  const Dataset data = normalize(std::move(raw));
  auto weights = init_model<float>(plan, a.seed);
  out << "model=" << plan.name << " mode=" << to_string(plan.mode) << " params=" << weights.param_count()
      << " images=" << data.size() << '\n';
  if (a.epochs == 0) {
    out << "no epochs requested; weights unchanged\n";
    return kOk;
  }
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.seed = a.seed;
  tc.augment = a.augment;
  tc.lr_max = a.lr_max;
  tc.lr_min = a.lr_min;
  const auto log = train(plan, weights, data, tc, [&](const EpochMetrics &m) { out << format_metrics(m) << '\n'; });
  out << "final_loss_ratio=" << std::fixed << std::setprecision(6) << log.back().loss / log.front().loss << '\n';
  return kOk;
}

inline int cmd_gradcheck(std::uint64_t seed, std::size_t cases, std::ostream &out) {
  const auto reports = run_gradcheck(seed, cases);
  bool ok = true;
  out << "op\tcases\tchecked\tskipped\tmax_rel_error\ttolerance\tstatus\n";
  for (const auto &r : reports) {
    ok = ok && r.passed();
    out << r.op << '\t' << r.cases << '\t' << r.checked << '\t' << r.skipped << '\t' << std::scientific
        << std::setprecision(3) << r.max_rel_error << '\t' << r.tolerance << std::defaultfloat << '\t'
        << (r.passed() ? "pass" : "FAIL") << '\n';
  }
  return ok ? kOk : kVerifyFailed;
}

inline int cmd_verify(std::ostream &out) {
  bool ok = true;
  for (const auto &c : run_verify()) {
    ok = ok && c.passed;
    out << (c.passed ? "pass" : "FAIL") << '\t' << c.name << '\t' << c.detail << '\n';
  }
  return ok ? kOk : kVerifyFailed;
}

/**
 * Runs the command line and returns the process exit status. Every failure
 * writes exactly one `error: <kind>: <message>` line to `err`.
 */
inline int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"Multiscale depthwise convolution toolkit", "multiception"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  auto *analyze = app.add_subcommand("analyze", "Parameter and FLOP totals per convolution mode");
  std::string an_config, an_modes, an_format = "table";
  std::size_t an_hw = 0;
  analyze->add_option("--config", an_config, "Model config file")->required();
  analyze->add_option("--modes", an_modes, "Comma-separated modes (default: the config's conv_mode)");
  analyze->add_option("--format", an_format, "table | layers | text")->check(CLI::IsMember({"table", "layers", "text"}));
  analyze->add_option("--input-size", an_hw, "Input extent (default: the config's input_size)");

  auto *train_cmd = app.add_subcommand("train", "Train a model on CIFAR-10 or the synthetic set");
  TrainArgs ta;
  train_cmd->add_option("--config", ta.config, "Model config file")->required();
  auto *data_opt = train_cmd->add_option("--data", ta.data, "CIFAR-10 binary file or directory");
  auto *syn_opt = train_cmd->add_flag("--synthetic", ta.synthetic, "Use the generated two-class set");
  data_opt->excludes(syn_opt);
  train_cmd->add_option("--epochs", ta.epochs, "Epochs")->capture_default_str();
  train_cmd->add_option("--batch", ta.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", ta.seed, "Seed")->capture_default_str();
  train_cmd->add_option("--subset", ta.subset, "Number of training images")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_flag("--augment", ta.augment, "Pad-4 random crop and horizontal flip");
  train_cmd->add_option("--mode", ta.mode, "Override the config's conv_mode");
  train_cmd->add_option("--lr-max", ta.lr_max, "Peak learning rate")->capture_default_str();
  train_cmd->add_option("--lr-min", ta.lr_min, "Final learning rate")->capture_default_str();

  auto *grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every backward pass");
  std::uint64_t gc_seed = 1;
  std::size_t gc_cases = 100;
  grad_cmd->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  grad_cmd->add_option("--cases", gc_cases, "Random cases per operation")->capture_default_str();

  auto *verify_cmd = app.add_subcommand("verify", "Counting identities, reconciliation and degeneracy checks");

  auto *bench_cmd = app.add_subcommand("bench", "Time the direct and lowered convolutions");
  std::vector<std::string> b_shapes;
  std::size_t b_kernel = 3, b_repeats = 3;
  bench_cmd->add_option("--shape", b_shapes, "n,c,h,w (repeatable)");
  bench_cmd->add_option("--kernel", b_kernel, "Kernel size")->capture_default_str()->check(CLI::IsMember({1, 3, 5, 7}));
  bench_cmd->add_option("--repeats", b_repeats, "Timing repetitions (best is kept)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError &e) {
    err << "error: usage: " << one_line(e.what()) << '\n';
    return kUsage;
  }

  try {
    if (*analyze) {
      const LayerPlan plan = build_plan(load_model_config(an_config));
      const std::size_t hw = an_hw ? an_hw : plan.input_size;
      const auto modes = an_modes.empty() ? std::vector<Variant>{plan.mode} : parse_modes(an_modes);
      if (an_format == "table") {
        out << analyze_table(plan, modes, hw);
      } else {
        for (Variant m : modes) {
          const auto r = model_cost(substitute_convs(plan, m), hw);
          out << (an_format == "layers" ? to_tsv(r) : to_structured_text(r));
        }
      }
      return kOk;
    }
    if (*train_cmd) {
      if (!ta.synthetic && ta.data.empty()) {
        err << "error: usage: train needs --data PATH or --synthetic\n";
        return kUsage;
      }
      return cmd_train(ta, out);
    }
    if (*grad_cmd) return cmd_gradcheck(gc_seed, gc_cases, out);
    if (*verify_cmd) return cmd_verify(out);
    if (*bench_cmd) {
      std::vector<BenchRow> rows;
      for (const auto &s : b_shapes) rows.push_back(bench_conv(parse_shape(s), b_kernel, b_repeats));
      out << bench_table(rows);
      return kOk;
    }
  } catch (const Error &e) {
    err << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
    return exit_code_for(e);
  } catch (const std::bad_alloc &) {
    err << "error: memory: allocation failed\n";
    return kVerifyFailed;
  } catch (const std::exception &e) {
    err << "error: internal: " << one_line(e.what()) << '\n';
    return kVerifyFailed;
  }
  return kUsage;
}

} // namespace multiception::cli
