// SPDX-License-Identifier: Apache-2.0
// Command-line front end for the distillation laboratory.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure,
// 4 I/O error, 1 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "skd/skd.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "override experiment.run_seed");
  sub->add_option("--out", f.out, "output directory")->required();
  sub->add_flag("--force", f.force, "overwrite a non-empty output directory");
}

skd::ExperimentConfig load(const CommonFlags& f) {
  auto cfg = skd::load_experiment_config(f.config);
  if (f.seed) cfg.train.run_seed = *f.seed;
  return cfg;
}

void print_reports(const std::vector<skd::EvalReport>& reports) {
  for (const auto& r : reports)
    std::printf("%s %s = %.6g (n=%zu, %s)\n", r.task.c_str(), r.metric.c_str(),
                r.value, r.n_examples, r.decode.c_str());
}

int run_command(const std::string& name, const CommonFlags& f) {
  const auto cfg = load(f);
  if (name == "gen-corpus") {
    const auto ws = skd::run_gen_corpus(cfg, f.out, f.force);
    std::printf("wrote %zu/%zu/%zu examples to %s\n", ws.train.size(), ws.dev.size(),
                ws.test.size(), f.out.c_str());
  } else if (name == "train-teacher") {
    const auto s = skd::run_train_teacher(cfg, f.out, f.force);
    print_reports(s.reports);
  } else if (name == "run") {
    const auto s = skd::run_experiment(cfg, f.out, f.force);
    std::printf("best checkpoint at step %lld\n", static_cast<long long>(s.best_step));
    print_reports(s.reports);
  } else if (name == "sweep-k") {
    const auto rows = skd::run_k_sweep(cfg, f.out, f.force);
    skd::write_k_sweep_csv(std::cout, rows);
  } else if (name == "init-study") {
    const auto rows = skd::run_init_study(cfg, f.out, f.force);
    for (const auto& r : rows)
      std::printf("sft_steps=%lld sft_dev_loss=%.6g kd_final_metric=%.6g\n",
                  static_cast<long long>(r.sft_steps), r.sft_dev_loss,
                  r.kd_final_metric);
  } else if (name == "specdec-bench") {
    skd::write_specdec_csv(std::cout, skd::run_specdec_bench(cfg, f.out, f.force));
  } else if (name == "eval") {
    print_reports(skd::run_eval(cfg, f.out, f.force));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speculative knowledge distillation on tiny language models"};
  app.require_subcommand(1);
  CommonFlags flags;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-corpus", "generate train/dev/test corpora"},
      {"train-teacher", "pre-train a neural teacher with NLL"},
      {"run", "train one distillation method"},
      {"sweep-k", "run SKD for every K in sweep.k_values"},
      {"init-study", "SFT for each init_study.sft_steps, then KD"},
      {"specdec-bench", "speculative-decoding acceptance benchmark"},
      {"eval", "evaluate eval.checkpoint on the test split"}};
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return run_command(app.get_subcommands().front()->get_name(), flags);
  } catch (const skd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const skd::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const skd::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const skd::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
