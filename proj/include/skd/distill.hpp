// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skd/autodiff.hpp"
#include "skd/corpus.hpp"
#include "skd/divergence.hpp"
#include "skd/error.hpp"
#include "skd/eval.hpp"
#include "skd/lm.hpp"
#include "skd/optim.hpp"
#include "skd/sampler.hpp"

namespace skd {

// ---------------------------------------------------------------------------
// Method and training configuration
// ---------------------------------------------------------------------------

enum class MethodKind {
  sft,             // NLL on ground truth
  seqkd,           // NLL on teacher samples
  supervised_kd,   // token-level divergence on ground truth
  onpolicy_kd,     // divergence on student samples
  imitkd,          // per-example coin: ground truth or student sample
  two_stage,       // supervised_kd, then onpolicy_kd after stage_boundary
  skd,             // divergence on interleaved student/teacher samples
  teacher_kd,      // divergence on teacher samples (soft labels)
};

inline std::string to_string(MethodKind k) {
  switch (k) {
    case MethodKind::sft: return "sft";
    case MethodKind::seqkd: return "seqkd";
    case MethodKind::supervised_kd: return "supervised_kd";
    case MethodKind::onpolicy_kd: return "onpolicy_kd";
    case MethodKind::imitkd: return "imitkd";
    case MethodKind::two_stage: return "two_stage";
    case MethodKind::skd: return "skd";
    case MethodKind::teacher_kd: return "teacher_kd";
  }
  return "?";
}

inline MethodKind parse_method(std::string_view s) {
  for (auto k : {MethodKind::sft, MethodKind::seqkd, MethodKind::supervised_kd,
                 MethodKind::onpolicy_kd, MethodKind::imitkd,
                 MethodKind::two_stage, MethodKind::skd,
                 MethodKind::teacher_kd})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

inline bool uses_nll(MethodKind k) {
  return k == MethodKind::sft || k == MethodKind::seqkd;
}
inline bool needs_teacher(MethodKind k) { return k != MethodKind::sft; }

/// Which distillation regime to run. `skd.student_sampler` is also the
/// student sampler of every on-policy regime and `skd.teacher_resample` the
/// teacher sampler of seqkd / teacher_kd, so the degenerate cases of SKD
/// line up with their dedicated runs draw for draw.
struct MethodSpec {
  MethodKind kind = MethodKind::skd;
  DivergenceSpec divergence{};
  SkdConfig skd{};
  std::int64_t stage_boundary = 0;
  double mix_probability = 0.5;  // imitkd: probability of a ground-truth example

  LossSpec loss() const {
    return uses_nll(kind) ? LossSpec::nll()
                          : LossSpec{LossKind::divergence, divergence};
  }
};

struct TrainConfig {
  std::int64_t total_steps = 2000;
  std::size_t batch_size = 8;
  LrSchedule schedule{3e-3, 2000, 0.1, Decay::linear};
  OptimizerKind optimizer = OptimizerKind::adam;
  std::int64_t eval_every = 200;
  std::uint64_t run_seed = 0;
  std::size_t max_len = 16;  // alpha for every sampler
  std::size_t metric_horizon = 4;
  bool eval_metric = true;       // task metric at each eval
  bool record_sequences = false; // keep batch target sequences in the log

  void validate() const {
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (schedule.total_steps != total_steps)
      throw ConfigError("schedule.total_steps must equal total_steps");
    schedule.validate();
  }
};

inline void validate_method(const MethodSpec& m, const TrainConfig& c,
                            std::size_t vocab) {
  if (!uses_nll(m.kind)) m.divergence.validate();
  if (m.kind == MethodKind::two_stage &&
      !(m.stage_boundary > 0 && m.stage_boundary < c.total_steps))
    throw ConfigError("stage_boundary must be in (0, total_steps)");
  if (!(m.mix_probability >= 0.0 && m.mix_probability <= 1.0))
    throw ConfigError("mix_probability must be in [0, 1]");
  m.skd.validate(vocab);
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

enum class SequenceSource { ground_truth, teacher_sampled, student_sampled, interleaved };

inline std::string to_string(SequenceSource s) {
  switch (s) {
    case SequenceSource::ground_truth: return "ground_truth";
    case SequenceSource::teacher_sampled: return "teacher_sampled";
    case SequenceSource::student_sampled: return "student_sampled";
    case SequenceSource::interleaved: return "interleaved";
  }
  return "?";
}

struct BatchItem {
  TokenSeq prompt;
  TokenSeq target;
  SequenceSource source = SequenceSource::ground_truth;
  std::optional<Trajectory> trajectory;    // for sampled sources
  std::vector<Distribution> teacher;       // empty for NLL methods
  std::vector<Distribution> student;       // t = 1, full support
};

struct TrainingBatch {
  std::vector<BatchItem> items;

  LossBatch loss_batch() const {
    LossBatch b;
    b.items.reserve(items.size());
    for (const auto& it : items) b.items.push_back({it.prompt, it.target, it.teacher});
    return b;
  }

  std::vector<TokenSeq> sequences() const {
    std::vector<TokenSeq> out;
    for (const auto& it : items) out.push_back(it.target);
    return out;
  }

  std::optional<double> acceptance() const {
    std::vector<Trajectory> trs;
    for (const auto& it : items)
      if (it.trajectory) trs.push_back(*it.trajectory);
    return acceptance_rate(trs);
  }

  double ground_truth_fraction() const {
    std::size_t gt = 0;
    for (const auto& it : items) gt += it.source == SequenceSource::ground_truth;
    return static_cast<double>(gt) / static_cast<double>(items.size());
  }
};

namespace detail {

inline SamplerConfig with_len(SamplerConfig c, std::size_t max_len) {
  c.max_len = max_len;
  return c;
}

inline std::vector<Distribution> conditionals(const LanguageModel& m,
                                              std::span<const TokenId> prompt,
                                              std::span<const TokenId> target) {
  std::vector<Distribution> out;
  out.reserve(target.size());
  for (std::size_t i = 0; i < target.size(); ++i)
    out.push_back(softmax_with_temperature(
        m.next_logits(prompt, target.first(i)), 1.0));
  return out;
}

}  // namespace detail

/// Builds one step's batch. Example indices, student draws, teacher draws
/// and ImitKD coins each come from their own stream keyed by
/// (run_seed, step, slot).
inline TrainingBatch make_training_batch(const MethodSpec& method,
                                         std::int64_t step,
                                         const Corpus& corpus,
                                         const LanguageModel& student,
                                         const LanguageModel* teacher,
                                         std::uint64_t run_seed,
                                         std::size_t batch_size,
                                         std::size_t max_len) {
  if (corpus.empty()) throw InputError("training corpus is empty");
  if (needs_teacher(method.kind) && teacher == nullptr)
    throw ConfigError("method '" + to_string(method.kind) +
                      "' requires a teacher");
  const TokenId eos = corpus.vocab.eos();
  const auto ustep = static_cast<std::uint64_t>(step);
  const RngStream pick(run_seed, "batch", ustep);
  const RngStream coin(run_seed, "mix", ustep);
  const SamplerConfig student_cfg =
      detail::with_len(method.skd.student_sampler, max_len);
  const SamplerConfig teacher_cfg =
      detail::with_len(method.skd.teacher_resample, max_len);

  auto source_for = [&](std::size_t slot) {
    switch (method.kind) {
      case MethodKind::sft:
      case MethodKind::supervised_kd: return SequenceSource::ground_truth;
      case MethodKind::seqkd:
      case MethodKind::teacher_kd: return SequenceSource::teacher_sampled;
      case MethodKind::onpolicy_kd: return SequenceSource::student_sampled;
      case MethodKind::imitkd:
        return coin.uniform(slot) < method.mix_probability
                   ? SequenceSource::ground_truth
                   : SequenceSource::student_sampled;
      case MethodKind::two_stage:
        return step < method.stage_boundary ? SequenceSource::ground_truth
                                            : SequenceSource::student_sampled;
      case MethodKind::skd: return SequenceSource::interleaved;
    }
    throw InternalError("unhandled method kind");
  };

  TrainingBatch batch;
  batch.items.reserve(batch_size);
  for (std::size_t slot = 0; slot < batch_size; ++slot) {
    const auto& ex = corpus.examples[pick.below(corpus.size(), slot)];
    const TrajectoryKey key{run_seed, ustep, slot};
    BatchItem item;
    item.prompt = ex.prompt;
    item.source = source_for(slot);
    switch (item.source) {
      case SequenceSource::ground_truth: item.target = ex.response; break;
      case SequenceSource::teacher_sampled:
        item.trajectory =
            sample_autoregressive(*teacher, ex.prompt, teacher_cfg, key, eos);
        break;
      case SequenceSource::student_sampled:
        item.trajectory =
            sample_autoregressive(student, ex.prompt, student_cfg, key, eos);
        break;
      case SequenceSource::interleaved: {
        SkdConfig cfg = method.skd;
        cfg.student_sampler = student_cfg;
        cfg.teacher_resample = teacher_cfg;
        item.trajectory =
            skd_interleaved_sample(student, *teacher, ex.prompt, cfg, key, eos);
        break;
      }
    }
    if (item.trajectory) item.target = item.trajectory->tokens;
    if (!uses_nll(method.kind))
      item.teacher = detail::conditionals(*teacher, item.prompt, item.target);
    item.student = detail::conditionals(student, item.prompt, item.target);
    batch.items.push_back(std::move(item));
  }
  return batch;
}

/// Loss from the distributions stored in the batch: mean per-token NLL for
/// sft/seqkd, batch mean of sequence_divergence otherwise.
inline double compute_loss(const MethodSpec& method, const TrainingBatch& batch,
                           const DivergenceSpec& divergence) {
  if (batch.items.empty()) throw InputError("empty batch");
  double total = 0.0;
  for (const auto& it : batch.items) {
    if (it.student.size() != it.target.size() || it.target.empty())
      throw InputError("batch item is malformed");
    if (uses_nll(method.kind)) {
      double nll = 0.0;
      for (std::size_t i = 0; i < it.target.size(); ++i)
        nll -= std::log(it.student[i][static_cast<std::size_t>(it.target[i])]);
      total += nll / static_cast<double>(it.target.size());
    } else {
      total += sequence_divergence(it.teacher, it.student, divergence);
    }
  }
  const double loss = total / static_cast<double>(batch.items.size());
  if (!std::isfinite(loss)) throw NumericalError("non-finite batch loss");
  return loss;
}

// ---------------------------------------------------------------------------
// Run log
// ---------------------------------------------------------------------------

struct StepRecord {
  std::int64_t step = 0;  // optimizer steps completed
  double train_loss = 0.0;
  double lr = 0.0;
  std::optional<double> acceptance_rate;        // skd
  std::optional<double> batch_source_fraction;  // imitkd / two_stage
  std::vector<TokenSeq> sequences;              // when recorded

  bool operator==(const StepRecord&) const = default;
};

struct EvalRecord {
  std::int64_t step = 0;
  double dev_loss = 0.0;
  std::optional<double> task_metric;

  bool operator==(const EvalRecord&) const = default;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;

  bool operator==(const RunLog&) const = default;

  std::optional<double> mean_acceptance(std::size_t begin,
                                        std::size_t end) const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = begin; i < end && i < steps.size(); ++i)
      if (steps[i].acceptance_rate) {
        s += *steps[i].acceptance_rate;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
  }
};

namespace detail {

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace detail

/// One record per line, step and eval records interleaved in step order
/// (an eval at step s follows the step record for s).
inline void write_runlog_jsonl(std::ostream& os, const RunLog& log) {
  std::size_t e = 0;
  auto flush_evals = [&](std::int64_t upto) {
    while (e < log.evals.size() && log.evals[e].step <= upto) {
      const auto& r = log.evals[e++];
      nlohmann::json j = {{"type", "eval"},
                          {"step", r.step},
                          {"dev_loss", r.dev_loss},
                          {"task_metric", detail::opt_json(r.task_metric)}};
      os << j.dump() << '\n';
    }
  };
  flush_evals(0);
  for (const auto& s : log.steps) {
    nlohmann::json j = {{"type", "step"},
                        {"step", s.step},
                        {"train_loss", s.train_loss},
                        {"lr", s.lr},
                        {"acceptance_rate", detail::opt_json(s.acceptance_rate)},
                        {"batch_source_fraction",
                         detail::opt_json(s.batch_source_fraction)}};
    if (!s.sequences.empty()) j["sequences"] = s.sequences;
    os << j.dump() << '\n';
    flush_evals(s.step);
  }
  flush_evals(INT64_MAX);
}

inline RunLog read_runlog_jsonl(std::istream& is) {
  RunLog log;
  std::string line;
  auto opt = [](const nlohmann::json& j) -> std::optional<double> {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
  };
  try {
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.at("type") == "step") {
        StepRecord s;
        s.step = j.at("step").get<std::int64_t>();
        s.train_loss = j.at("train_loss").get<double>();
        s.lr = j.at("lr").get<double>();
        s.acceptance_rate = opt(j.at("acceptance_rate"));
        s.batch_source_fraction = opt(j.at("batch_source_fraction"));
        if (j.contains("sequences"))
          s.sequences = j.at("sequences").get<std::vector<TokenSeq>>();
        log.steps.push_back(std::move(s));
      } else {
        EvalRecord r;
        r.step = j.at("step").get<std::int64_t>();
        r.dev_loss = j.at("dev_loss").get<double>();
        r.task_metric = opt(j.at("task_metric"));
        log.evals.push_back(r);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("run log parse error: ") + e.what());
  }
  return log;
}

/// Columns: step,loss,lr,acceptance_rate,dev_loss,task_metric. One row per
/// step record; eval values are joined onto the row of their step, and an
/// eval at step 0 gets its own row.
inline void write_runlog_csv(std::ostream& os, const RunLog& log) {
  os << "step,loss,lr,acceptance_rate,dev_loss,task_metric\n";
  auto opt = [](const std::optional<double>& v) {
    return v ? detail::fmt17(*v) : std::string();
  };
  std::size_t e = 0;
  auto eval_at = [&](std::int64_t step) -> const EvalRecord* {
    while (e < log.evals.size() && log.evals[e].step < step) ++e;
    if (e < log.evals.size() && log.evals[e].step == step) return &log.evals[e];
    return nullptr;
  };
  if (const auto* r = eval_at(0))
    os << "0,,,," << detail::fmt17(r->dev_loss) << ',' << opt(r->task_metric)
       << '\n';
  for (const auto& s : log.steps) {
    os << s.step << ',' << detail::fmt17(s.train_loss) << ','
       << detail::fmt17(s.lr) << ',' << opt(s.acceptance_rate) << ',';
    if (const auto* r = eval_at(s.step))
      os << detail::fmt17(r->dev_loss) << ',' << opt(r->task_metric);
    else
      os << ',';
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Trajectory dump
// ---------------------------------------------------------------------------

inline Provenance parse_provenance(std::string_view s) {
  for (auto p : {Provenance::plain, Provenance::student_accepted,
                 Provenance::teacher_resampled})
    if (s == to_string(p)) return p;
  throw IoError("unknown provenance '" + std::string(s) + "'");
}

inline nlohmann::json trajectory_to_json(const Trajectory& tr) {
  std::vector<std::string> prov;
  for (auto p : tr.provenance) prov.push_back(to_string(p));
  return {{"prompt", tr.prompt},       {"tokens", tr.tokens},
          {"provenance", prov},        {"teacher_rank", tr.teacher_rank},
          {"logprob", tr.logprob}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory tr;
  tr.prompt = j.at("prompt").get<TokenSeq>();
  tr.tokens = j.at("tokens").get<TokenSeq>();
  for (const auto& p : j.at("provenance"))
    tr.provenance.push_back(parse_provenance(p.get<std::string>()));
  tr.teacher_rank = j.at("teacher_rank").get<std::vector<int>>();
  tr.logprob = j.at("logprob").get<std::vector<double>>();
  if (tr.provenance.size() != tr.tokens.size() ||
      tr.teacher_rank.size() != tr.tokens.size() ||
      tr.logprob.size() != tr.tokens.size())
    throw IoError("trajectory record has inconsistent lengths");
  return tr;
}

inline void write_trajectories(std::ostream& os,
                               std::span<const Trajectory> trs) {
  for (const auto& tr : trs) os << trajectory_to_json(tr).dump() << '\n';
}

inline std::vector<Trajectory> read_trajectories(std::istream& is) {
  std::vector<Trajectory> out;
  std::string line;
  try {
    while (std::getline(is, line))
      if (!line.empty()) out.push_back(trajectory_from_json(nlohmann::json::parse(line)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("trajectory parse error: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct CheckpointRecord {
  std::int64_t step = 0;
  NeuralLM model;
  double dev_loss = 0.0;
  std::optional<double> task_metric;
};

struct TrainResult {
  std::vector<CheckpointRecord> checkpoints;
  RunLog log;
  NeuralLM final_model;
};

/// Raised when a step produces a non-finite loss or update.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(std::int64_t step, const std::string& what)
      : NumericalError("training diverged at step " + std::to_string(step) +
                       ": " + what),
        step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

/// Dev loss on ground-truth dev sequences: NLL for sft/seqkd, the method's
/// the method's token-level divergence otherwise.
inline double dev_loss(const MethodSpec& method, const NeuralLM& student,
                       const LanguageModel* teacher, const Corpus& dev) {
  LossBatch b;
  b.pad = dev.vocab.pad();
  const LossSpec spec = method.loss();
  for (const auto& e : dev.examples) {
    LossItem it{e.prompt, e.response, {}};
    if (spec.kind == LossKind::divergence)
      it.teacher = detail::conditionals(*teacher, e.prompt, e.response);
    b.items.push_back(std::move(it));
  }
  return batch_loss(student, b, spec);
}

/// Task metric: exact_model_kl for markov (tabular teacher required),
/// greedy accuracy otherwise.
inline std::optional<double> task_metric(const NeuralLM& student,
                                         const LanguageModel* teacher,
                                         const Corpus& dev,
                                         std::size_t horizon) {
  if (dev.task == Task::markov) {
    const auto* tab = dynamic_cast<const TabularMarkovLM*>(teacher);
    if (tab == nullptr) return std::nullopt;
    return exact_model_kl(student, *tab, horizon);
  }
  return task_accuracy(student, dev).value;
}

inline TrainResult train(const MethodSpec& method, const TrainConfig& config,
                         const Corpus& train_corpus, const Corpus& dev_corpus,
                         const NeuralLM& student_init,
                         const LanguageModel* teacher) {
  config.validate();
  validate_method(method, config, student_init.vocab_size());
  if (needs_teacher(method.kind) && teacher == nullptr)
    throw ConfigError("method '" + to_string(method.kind) +
                      "' requires a teacher");
  if (teacher && teacher->vocab_size() != student_init.vocab_size())
    throw ConfigError("student and teacher vocabularies differ");
  if (train_corpus.vocab.size() != student_init.vocab_size())
    throw ConfigError("corpus vocabulary does not match the student");
  if (dev_corpus.empty()) throw ConfigError("dev corpus is empty");

  TrainResult result;
  result.final_model = student_init;
  result.final_model.set_trainable(true);
  NeuralLM& student = result.final_model;
  OptimizerState opt = OptimizerState::make(config.optimizer, student.params().size());
  const LossSpec loss_spec = method.loss();
  // Teacher-independent evaluations fall back to NLL for sft runs without a
  // teacher.
  const bool has_teacher = teacher != nullptr;
  MethodSpec eval_method = method;
  if (!has_teacher) eval_method.kind = MethodKind::sft;

  auto evaluate = [&](std::int64_t step) {
    CheckpointRecord rec;
    rec.step = step;
    rec.model = student;
    rec.dev_loss = dev_loss(eval_method, student, teacher, dev_corpus);
    if (config.eval_metric)
      rec.task_metric = task_metric(student, teacher, dev_corpus,
                                    config.metric_horizon);
    if (!std::isfinite(rec.dev_loss))
      throw TrainingDiverged(step, "non-finite dev loss");
    result.log.evals.push_back({step, rec.dev_loss, rec.task_metric});
    result.checkpoints.push_back(std::move(rec));
  };

  evaluate(0);
  for (std::int64_t s = 0; s < config.total_steps; ++s) {
    StepRecord rec;
    try {
      const auto batch =
          make_training_batch(method, s, train_corpus, student, teacher,
                              config.run_seed, config.batch_size,
                              config.max_len);
      auto lb = batch.loss_batch();
      lb.pad = train_corpus.vocab.pad();
      const auto lg = forward_backward(student, lb, loss_spec);
      rec.lr = lr_at(config.schedule, s);
      optimizer_step(student.mutable_params(), lg.grads, opt, config.schedule, s);
      rec.step = s + 1;
      rec.train_loss = lg.loss;
      if (method.kind == MethodKind::skd) rec.acceptance_rate = batch.acceptance();
      if (method.kind == MethodKind::imitkd || method.kind == MethodKind::two_stage)
        rec.batch_source_fraction = batch.ground_truth_fraction();
      if (config.record_sequences) rec.sequences = batch.sequences();
    } catch (const TrainingDiverged&) {
      throw;
    } catch (const NumericalError& e) {
      throw TrainingDiverged(s + 1, e.what());
    }
    result.log.steps.push_back(std::move(rec));
    if ((s + 1) % config.eval_every == 0 || s + 1 == config.total_steps)
      evaluate(s + 1);
  }
  return result;
}

/// Lowest dev loss, ties to the earliest step.
inline const CheckpointRecord& select_checkpoint(
    std::span<const CheckpointRecord> checkpoints) {
  if (checkpoints.empty()) throw InputError("no checkpoints to select from");
  const CheckpointRecord* best = &checkpoints[0];
  for (const auto& c : checkpoints)
    if (c.dev_loss < best->dev_loss ||
        (c.dev_loss == best->dev_loss && c.step < best->step))
      best = &c;
  return *best;
}

}  // namespace skd
