// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "skd/config.hpp"
#include "skd/corpus.hpp"
#include "skd/distill.hpp"
#include "skd/eval.hpp"
#include "skd/lm.hpp"

namespace skd {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Files and workers
// ---------------------------------------------------------------------------

namespace detail {

inline void write_file(const fs::path& path,
                       const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  body(out);
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  write_file(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::string csv_opt(const std::optional<double>& v) {
  return v ? fmt17(*v) : std::string();
}

}  // namespace detail

/// Creates `out`, refusing a non-empty existing directory unless forced.
/// Forcing overwrites artifacts in place and deletes nothing.
inline void prepare_output(const fs::path& out, bool force) {
  std::error_code ec;
  if (fs::exists(out, ec)) {
    if (!fs::is_directory(out)) throw IoError(out.string() + " is not a directory");
    if (!fs::is_empty(out) && !force)
      throw ConfigError("output directory " + out.string() +
                        " is not empty; pass --force to overwrite");
  }
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
}

/// Timestamps live only here so every other artifact is reproducible.
inline void write_metadata(const fs::path& out, const std::string& command,
                           const ExperimentConfig& cfg) {
  detail::write_json(out / "metadata.json",
                     {{"tool", "skd"},
                      {"version", kToolVersion},
                      {"command", command},
                      {"task", to_string(cfg.task)},
                      {"run_seed", cfg.train.run_seed},
                      {"created_utc", detail::utc_timestamp()}});
}

/// Worker count from SKD_WORKERS (default 1).
inline std::size_t worker_count() {
  const char* env = std::getenv("SKD_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    const auto n = parse::count(env);
    if (n < 1) throw ConfigError("");
    return n;
  } catch (const ConfigError&) {
    throw ConfigError("SKD_WORKERS must be a positive integer, got '" +
                      std::string(env) + "'");
  }
}

/// Runs fn(0..n-1) on up to `workers` threads; rethrows the first failure.
inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Corpora, teachers, students
// ---------------------------------------------------------------------------

struct Workspace {
  Corpus train, dev, test;
  std::optional<MarkovSpec> spec;
};

namespace detail {

inline Corpus slice(const Corpus& c, std::size_t begin, std::size_t end) {
  Corpus out{c.vocab, {}, c.task, c.generation_seed};
  out.examples.assign(c.examples.begin() + static_cast<long>(begin),
                      c.examples.begin() + static_cast<long>(end));
  return out;
}

}  // namespace detail

inline MarkovSpec markov_spec_for(const ExperimentConfig& cfg) {
  if (cfg.corpus.markov_spec) return load_markov_spec(*cfg.corpus.markov_spec);
  return make_random_markov_spec(markov_vocabulary(cfg.corpus.content_symbols),
                                 cfg.corpus.chain, cfg.corpus.chain_seed);
}

/// Samples one corpus of train+dev+test examples and slices it in order,
/// which is an unbiased split because examples are i.i.d.
inline Workspace generate_workspace(const ExperimentConfig& cfg) {
  const auto& cs = cfg.corpus;
  const std::size_t total = cs.train_size + cs.dev_size + cs.test_size;
  Workspace ws;
  Corpus all;
  switch (cfg.task) {
    case Task::markov:
      ws.spec = markov_spec_for(cfg);
      all = gen_markov_corpus(*ws.spec, total, cs.length, cs.generation_seed);
      break;
    case Task::arith:
      all = gen_arith_corpus(cs.digit_max, total, cs.generation_seed);
      break;
    case Task::reverse:
      all = gen_reverse_corpus(cs.length, total, cs.generation_seed, cs.letters);
      break;
  }
  ws.train = detail::slice(all, 0, cs.train_size);
  ws.dev = detail::slice(all, cs.train_size, cs.train_size + cs.dev_size);
  ws.test = detail::slice(all, cs.train_size + cs.dev_size, total);
  return ws;
}

inline Workspace load_workspace(const ExperimentConfig& cfg) {
  if (!cfg.corpus.dir) return generate_workspace(cfg);
  const fs::path& dir = *cfg.corpus.dir;
  Workspace ws;
  ws.train = load_corpus(dir / "train.jsonl");
  ws.dev = load_corpus(dir / "dev.jsonl");
  ws.test = load_corpus(dir / "test.jsonl");
  for (const Corpus* c : {&ws.train, &ws.dev, &ws.test})
    if (c->task != cfg.task)
      throw ConfigError("corpus task '" + to_string(c->task) +
                        "' does not match experiment.task '" +
                        to_string(cfg.task) + "'");
  if (cfg.corpus.markov_spec)
    ws.spec = load_markov_spec(*cfg.corpus.markov_spec);
  else if (fs::exists(dir / "markov_spec.json"))
    ws.spec = load_markov_spec(dir / "markov_spec.json");
  return ws;
}

inline void write_workspace(const fs::path& out, const Workspace& ws) {
  save_corpus(out / "train.jsonl", ws.train);
  save_corpus(out / "dev.jsonl", ws.dev);
  save_corpus(out / "test.jsonl", ws.test);
  if (ws.spec) save_markov_spec(out / "markov_spec.json", *ws.spec);
}

inline std::unique_ptr<LanguageModel> load_teacher(const ExperimentConfig& cfg,
                                                   const Workspace& ws) {
  switch (cfg.teacher.kind) {
    case TeacherKind::none: return nullptr;
    case TeacherKind::tabular:
      if (!ws.spec) throw ConfigError("teacher.kind = tabular needs a markov spec");
      return std::make_unique<TabularMarkovLM>(*ws.spec);
    case TeacherKind::neural:
      if (!cfg.teacher.checkpoint)
        throw ConfigError("teacher.checkpoint is required for a neural teacher");
      return std::make_unique<NeuralLM>(
          load_checkpoint(*cfg.teacher.checkpoint, /*trainable=*/false));
  }
  throw InternalError("unhandled teacher kind");
}

inline NeuralLM make_student(const ExperimentConfig& cfg, const Vocabulary& vocab) {
  NeuralLM m = cfg.student.checkpoint
                   ? load_checkpoint(*cfg.student.checkpoint)
                   : NeuralLM::random(cfg.student.hyper, vocab.bos(),
                                      cfg.student.init_seed, cfg.student.output_scale);
  if (m.vocab_size() != vocab.size())
    throw ConfigError("student vocabulary size " + std::to_string(m.vocab_size()) +
                      " does not match the corpus (" + std::to_string(vocab.size()) + ")");
  return m;
}

// ---------------------------------------------------------------------------
// Reports for a trained model
// ---------------------------------------------------------------------------

/// Test-split reports: the method's loss on ground truth, plus
/// exact_model_kl (markov with a tabular teacher) or greedy accuracy.
inline std::vector<EvalReport> evaluate_model(const ExperimentConfig& cfg,
                                              const NeuralLM& model,
                                              const LanguageModel* teacher,
                                              const Corpus& test) {
  std::vector<EvalReport> out;
  MethodSpec m = cfg.method;
  if (teacher == nullptr) m.kind = MethodKind::sft;
  out.push_back({to_string(test.task),
                 uses_nll(m.kind) ? "nll" : to_string(m.divergence.kind),
                 dev_loss(m, model, teacher, test), test.size(), "teacher_forced"});
  if (test.task == Task::markov) {
    if (const auto* tab = dynamic_cast<const TabularMarkovLM*>(teacher))
      out.push_back({to_string(test.task), "exact_model_kl",
                     exact_model_kl(model, *tab, cfg.train.metric_horizon), 0,
                     "enumeration_h" + std::to_string(cfg.train.metric_horizon)});
  } else {
    out.push_back(task_accuracy(model, test));
  }
  return out;
}

inline void write_eval_reports(const fs::path& out, std::optional<std::int64_t> step,
                               const std::vector<EvalReport>& reports) {
  nlohmann::json j = {{"selected_step", step ? nlohmann::json(*step) : nlohmann::json(nullptr)},
                      {"reports", nlohmann::json::array()}};
  for (const auto& r : reports) j["reports"].push_back(r.to_json());
  detail::write_json(out / "eval.json", j);
  detail::write_file(out / "eval.csv", [&](std::ostream& os) {
    os << "task,metric,value,n_examples,decode\n";
    for (const auto& r : reports)
      os << r.task << ',' << r.metric << ',' << detail::fmt17(r.value) << ','
         << r.n_examples << ',' << r.decode << '\n';
  });
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct RunSummary {
  TrainResult result;
  std::int64_t best_step = 0;
  std::vector<EvalReport> reports;

  double final_dev_loss() const { return result.log.evals.back().dev_loss; }
  std::optional<double> final_task_metric() const {
    return result.log.evals.back().task_metric;
  }
  std::optional<double> mean_acceptance() const {
    return result.log.mean_acceptance(0, result.log.steps.size());
  }
};

inline void write_run_artifacts(const fs::path& out, const RunSummary& s) {
  detail::write_file(out / "runlog.jsonl",
                     [&](std::ostream& os) { write_runlog_jsonl(os, s.result.log); });
  detail::write_file(out / "runlog.csv",
                     [&](std::ostream& os) { write_runlog_csv(os, s.result.log); });
  fs::create_directories(out / "checkpoints");
  for (const auto& c : s.result.checkpoints) {
    std::ostringstream name;
    name << "step_" << std::setw(6) << std::setfill('0') << c.step << ".ckpt";
    save_checkpoint(out / "checkpoints" / name.str(), c.model);
  }
  const auto& best = select_checkpoint(s.result.checkpoints);
  save_checkpoint(out / "best.ckpt", best.model);
  save_checkpoint(out / "final.ckpt", s.result.final_model);
  write_eval_reports(out, s.best_step, s.reports);
}

/// Trains cfg.method on an already loaded workspace.
inline RunSummary run_with(const ExperimentConfig& cfg, const Workspace& ws,
                           const LanguageModel* teacher, const NeuralLM& init) {
  RunSummary s;
  s.result = train(cfg.method, cfg.train, ws.train, ws.dev, init, teacher);
  const auto& best = select_checkpoint(s.result.checkpoints);
  s.best_step = best.step;
  s.reports = evaluate_model(cfg, best.model, teacher, ws.test);
  return s;
}

/// `run`: one training run with all artifacts written under `out`.
inline RunSummary run_experiment(const ExperimentConfig& cfg, const fs::path& out,
                                 bool force) {
  const Workspace ws = load_workspace(cfg);
  const auto teacher = load_teacher(cfg, ws);
  const NeuralLM init = make_student(cfg, ws.train.vocab);
  prepare_output(out, force);
  auto s = run_with(cfg, ws, teacher.get(), init);
  write_run_artifacts(out, s);
  write_metadata(out, "run", cfg);
  return s;
}

/// `gen-corpus`: train/dev/test splits (and the chain for markov).
inline Workspace run_gen_corpus(const ExperimentConfig& cfg, const fs::path& out,
                                bool force) {
  const Workspace ws = generate_workspace(cfg);
  prepare_output(out, force);
  write_workspace(out, ws);
  write_metadata(out, "gen-corpus", cfg);
  return ws;
}

/// `train-teacher`: NLL pre-training of a large NeuralLM on the train split;
/// writes teacher.ckpt (lowest dev loss) and its reports.
inline RunSummary run_train_teacher(const ExperimentConfig& cfg, const fs::path& out,
                                    bool force) {
  const Workspace ws = load_workspace(cfg);
  NeuralHyper h = cfg.teacher.hyper;
  h.vocab = ws.train.vocab.size();
  const NeuralLM init =
      NeuralLM::random(h, ws.train.vocab.bos(), cfg.teacher.init_seed, 1.0);
  prepare_output(out, force);
  ExperimentConfig tc = cfg;
  tc.method.kind = MethodKind::sft;
  tc.train = cfg.teacher.train;
  tc.train.run_seed = cfg.train.run_seed;
  tc.train.eval_metric = ws.dev.task != Task::markov;
  RunSummary s = run_with(tc, ws, nullptr, init);
  write_run_artifacts(out, s);
  const auto& best = select_checkpoint(s.result.checkpoints);
  save_checkpoint(out / "teacher.ckpt", best.model);
  write_metadata(out, "train-teacher", cfg);
  return s;
}

struct KSweepRow {
  std::size_t k = 0;
  double final_dev_divergence = 0.0;
  std::optional<double> task_metric;
  std::optional<double> mean_acceptance_rate;
  RunLog log;
};

inline void write_k_sweep_csv(std::ostream& os, const std::vector<KSweepRow>& rows) {
  os << "K,final_dev_divergence,task_metric,mean_acceptance_rate\n";
  for (const auto& r : rows)
    os << r.k << ',' << detail::fmt17(r.final_dev_divergence) << ','
       << detail::csv_opt(r.task_metric) << ','
       << detail::csv_opt(r.mean_acceptance_rate) << '\n';
}

/// `sweep-k`: one skd run per K (ascending, shared seeds) under out/k_<K>.
inline std::vector<KSweepRow> run_k_sweep(const ExperimentConfig& cfg,
                                          const fs::path& out, bool force) {
  std::vector<std::size_t> ks(cfg.k_values.begin(), cfg.k_values.end());
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  const Workspace ws = load_workspace(cfg);
  const auto teacher = load_teacher(cfg, ws);
  const NeuralLM init = make_student(cfg, ws.train.vocab);
  prepare_output(out, force);
  std::vector<KSweepRow> rows(ks.size());
  parallel_for(ks.size(), worker_count(), [&](std::size_t i) {
    ExperimentConfig c = cfg;
    c.method.kind = MethodKind::skd;
    c.method.skd.top_k_accept = ks[i];
    const fs::path dir = out / ("k_" + std::to_string(ks[i]));
    prepare_output(dir, force);
    const auto s = run_with(c, ws, teacher.get(), init);
    write_run_artifacts(dir, s);
    rows[i] = {ks[i], s.final_dev_loss(), s.final_task_metric(),
               s.mean_acceptance(), s.result.log};
  });
  detail::write_file(out / "k_sweep.csv",
                     [&](std::ostream& os) { write_k_sweep_csv(os, rows); });
  write_metadata(out, "sweep-k", cfg);
  return rows;
}

struct InitStudyRow {
  std::int64_t sft_steps = 0;
  double sft_dev_loss = 0.0;
  double kd_final_metric = 0.0;
};

/// `init-study`: SFT for each listed step count, then the configured KD
/// method from each SFT endpoint. The KD metric is the final task metric
/// when one exists, else the final dev loss.
inline std::vector<InitStudyRow> run_init_study(const ExperimentConfig& cfg,
                                                const fs::path& out, bool force) {
  const Workspace ws = load_workspace(cfg);
  const auto teacher = load_teacher(cfg, ws);
  const NeuralLM init = make_student(cfg, ws.train.vocab);
  prepare_output(out, force);
  std::vector<InitStudyRow> rows(cfg.sft_steps.size());
  parallel_for(rows.size(), worker_count(), [&](std::size_t i) {
    const std::int64_t n = cfg.sft_steps[i];
    if (n < 1) throw ConfigError("init_study.sft_steps entries must be >= 1");
    const fs::path dir = out / ("sft_" + std::to_string(n));
    ExperimentConfig sft = cfg;
    sft.method.kind = MethodKind::sft;
    sft.train.total_steps = n;
    sft.train.schedule.total_steps = n;
    sft.train.eval_every = std::min<std::int64_t>(cfg.train.eval_every, n);
    prepare_output(dir / "sft", force);
    const auto s = run_with(sft, ws, teacher.get(), init);
    write_run_artifacts(dir / "sft", s);
    save_checkpoint(dir / "sft.ckpt", s.result.final_model);

    const NeuralLM from = load_checkpoint(dir / "sft.ckpt");
    prepare_output(dir / "kd", force);
    const auto kd = run_with(cfg, ws, teacher.get(), from);
    write_run_artifacts(dir / "kd", kd);
    rows[i] = {n, s.final_dev_loss(),
               kd.final_task_metric().value_or(kd.final_dev_loss())};
  });
  detail::write_file(out / "init_study.csv", [&](std::ostream& os) {
    os << "sft_steps,sft_dev_loss,kd_final_metric\n";
    for (const auto& r : rows)
      os << r.sft_steps << ',' << detail::fmt17(r.sft_dev_loss) << ','
         << detail::fmt17(r.kd_final_metric) << '\n';
  });
  write_metadata(out, "init-study", cfg);
  return rows;
}

struct SpecdecRow {
  std::string draft, target;
  std::size_t gamma = 0;
  SpeedupReport report;
};

inline void write_specdec_csv(std::ostream& os, const std::vector<SpecdecRow>& rows) {
  os << "draft,target,gamma,acceptance_ratio,tokens_per_target_call,"
        "speedup_estimate,proposed,accepted,target_calls,emitted_tokens\n";
  for (const auto& r : rows) {
    const auto& rp = r.report;
    os << r.draft << ',' << r.target << ',' << r.gamma << ','
       << detail::fmt17(rp.acceptance_ratio) << ','
       << detail::fmt17(rp.tokens_per_target_call) << ','
       << detail::fmt17(rp.speedup_estimate) << ',' << rp.stats.proposed << ','
       << rp.stats.accepted << ',' << rp.stats.target_calls << ','
       << rp.stats.emitted_tokens << '\n';
  }
}

inline std::vector<TokenSeq> benchmark_prompts(const Corpus& c, std::size_t n) {
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i < c.size() && i < n; ++i)
    out.push_back(c.examples[i].prompt);
  return out;
}

/// `specdec-bench`: every draft against the target (default: the teacher)
/// for every gamma, on test-split prompts.
inline std::vector<SpecdecRow> run_specdec_bench(const ExperimentConfig& cfg,
                                                 const fs::path& out, bool force) {
  if (cfg.specdec.drafts.empty()) throw ConfigError("specdec.drafts is empty");
  const Workspace ws = load_workspace(cfg);
  std::unique_ptr<LanguageModel> target;
  std::string target_name;
  if (cfg.specdec.target) {
    target = std::make_unique<NeuralLM>(load_checkpoint(*cfg.specdec.target, false));
    target_name = cfg.specdec.target->filename().string();
  } else {
    target = load_teacher(cfg, ws);
    if (!target) throw ConfigError("specdec needs specdec.target or a teacher");
    target_name = "teacher";
  }
  std::vector<NeuralLM> drafts;
  for (const auto& d : cfg.specdec.drafts) drafts.push_back(load_checkpoint(d, false));
  prepare_output(out, force);
  const auto prompts = benchmark_prompts(ws.test, cfg.specdec.n_prompts);
  SamplerConfig sc = cfg.specdec.sampler;
  std::vector<SpecdecRow> rows;
  for (std::size_t d = 0; d < drafts.size(); ++d)
    for (std::size_t g : cfg.specdec.gammas)
      rows.push_back({cfg.specdec.drafts[d].string(), target_name, g,
                      specdec_benchmark(drafts[d], *target, prompts, g,
                                        cfg.specdec.n_runs, sc, cfg.train.run_seed,
                                        ws.test.vocab.eos())});
  detail::write_file(out / "specdec.csv",
                     [&](std::ostream& os) { write_specdec_csv(os, rows); });
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    auto e = r.report.to_json();
    e["draft"] = r.draft;
    e["target"] = r.target;
    e["gamma"] = r.gamma;
    j.push_back(e);
  }
  detail::write_json(out / "specdec.json", j);
  write_metadata(out, "specdec-bench", cfg);
  return rows;
}

/// `eval`: reports for eval.checkpoint on the test split.
inline std::vector<EvalReport> run_eval(const ExperimentConfig& cfg,
                                        const fs::path& out, bool force) {
  if (!cfg.eval_checkpoint) throw ConfigError("eval.checkpoint is required");
  const Workspace ws = load_workspace(cfg);
  const auto teacher = load_teacher(cfg, ws);
  const NeuralLM model = load_checkpoint(*cfg.eval_checkpoint, false);
  if (model.vocab_size() != ws.test.vocab.size())
    throw ConfigError("checkpoint vocabulary does not match the corpus");
  prepare_output(out, force);
  const auto reports = evaluate_model(cfg, model, teacher.get(), ws.test);
  write_eval_reports(out, std::nullopt, reports);
  write_metadata(out, "eval", cfg);
  return reports;
}

}  // namespace skd
