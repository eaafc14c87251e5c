// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "skd/distill.hpp"
#include "skd/error.hpp"

namespace skd {

// ---------------------------------------------------------------------------
// Flat `key = value` files with [section] headers
// ---------------------------------------------------------------------------

/// Parsed config text. Every lookup marks its key as consumed so that
/// leftover keys can be reported as errors with their line numbers.
class IniFile {
 public:
  struct Entry {
    std::string value;
    int line = 0;
    bool used = false;
  };

  static IniFile parse(std::istream& is, std::string source = "config") {
    IniFile ini;
    ini.source_ = std::move(source);
    std::string raw, section;
    int line = 0;
    while (std::getline(is, raw)) {
      ++line;
      if (const auto hash = raw.find('#'); hash != std::string::npos)
        raw.erase(hash);
      const std::string text = trim(raw);
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']' || text.size() < 3)
          throw ini.error_at(line, "malformed section header '" + text + "'");
        section = trim(text.substr(1, text.size() - 2));
        ini.section_lines_.emplace(section, line);
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos)
        throw ini.error_at(line, "expected 'key = value', got '" + text + "'");
      if (section.empty())
        throw ini.error_at(line, "key outside of any [section]");
      const std::string key = trim(text.substr(0, eq));
      const std::string value = trim(text.substr(eq + 1));
      if (key.empty()) throw ini.error_at(line, "empty key");
      auto& sec = ini.entries_[section];
      if (sec.count(key))
        throw ini.error_at(line, "duplicate key '" + section + "." + key + "'");
      sec[key] = {value, line, false};
    }
    return ini;
  }

  static IniFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    return parse(in, path.string());
  }

  bool has(const std::string& section, const std::string& key) const {
    const auto s = entries_.find(section);
    return s != entries_.end() && s->second.count(key);
  }

  std::optional<std::string> get(const std::string& section,
                                 const std::string& key) {
    const auto s = entries_.find(section);
    if (s == entries_.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    k->second.used = true;
    return k->second.value;
  }

  int line_of(const std::string& section, const std::string& key) const {
    return entries_.at(section).at(key).line;
  }

  /// Parses a value through `f`, wrapping any ConfigError with the key's
  /// file position and name.
  template <class T, class F>
  std::optional<T> get_as(const std::string& section, const std::string& key,
                          F&& f) {
    const auto v = get(section, key);
    if (!v) return std::nullopt;
    try {
      return f(*v);
    } catch (const ConfigError& e) {
      throw error_at(line_of(section, key),
                     section + "." + key + ": " + e.what());
    }
  }

  /// Rejects sections outside `known` and any key nobody consumed.
  void check_consumed(const std::set<std::string>& known) const {
    for (const auto& [name, line] : section_lines_)
      if (!known.count(name))
        throw error_at(line, "unknown section [" + name + "]");
    for (const auto& [section, keys] : entries_)
      for (const auto& [key, e] : keys)
        if (!e.used)
          throw error_at(e.line,
                         "unknown key '" + key + "' in [" + section + "]");
  }

  ConfigError error_at(int line, const std::string& what) const {
    return ConfigError(source_ + ":" + std::to_string(line) + ": " + what);
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

 private:
  std::string source_;
  std::map<std::string, std::map<std::string, Entry>> entries_;
  std::multimap<std::string, int> section_lines_;
};

namespace parse {

inline std::int64_t integer(const std::string& s) {
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

inline std::size_t count(const std::string& s) {
  const auto v = integer(s);
  if (v < 0) throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

inline double real(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v))
    throw ConfigError("expected a finite number, got '" + s + "'");
  return v;
}

inline bool boolean(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("expected true/false, got '" + s + "'");
}

inline std::vector<std::string> list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = IniFile::trim(item);
    if (item.empty()) throw ConfigError("empty list element in '" + s + "'");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

inline std::vector<std::size_t> count_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : list(s)) out.push_back(count(item));
  return out;
}

}  // namespace parse

// ---------------------------------------------------------------------------
// Experiment schema
// ---------------------------------------------------------------------------

/// Train-set size presets: low-data, default and large.
inline std::size_t preset_train_size(const std::string& name) {
  if (name == "100" || name == "low") return 100;
  if (name == "1000" || name == "1k") return 1000;
  if (name == "10000" || name == "10k") return 10000;
  throw ConfigError("unknown preset '" + name + "' (expected 100, 1000 or 10000)");
}

struct CorpusSettings {
  std::optional<std::filesystem::path> dir;  // train/dev/test.jsonl from gen-corpus
  std::size_t train_size = 1000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;
  std::uint64_t generation_seed = 1;
  // markov
  std::optional<std::filesystem::path> markov_spec;
  std::size_t content_symbols = 13;
  MarkovChainParams chain{};
  std::uint64_t chain_seed = 1;
  // markov / reverse
  LengthRange length{2, 12};
  // arith
  int digit_max = 99;
  // reverse
  std::size_t letters = 8;
};

enum class TeacherKind { tabular, neural, none };

struct TeacherSettings {
  TeacherKind kind = TeacherKind::tabular;
  std::optional<std::filesystem::path> checkpoint;
  // train-teacher
  NeuralHyper hyper{16, 8, 16, 128};
  std::uint64_t init_seed = 11;
  TrainConfig train{};
};

struct StudentSettings {
  std::optional<std::filesystem::path> checkpoint;
  NeuralHyper hyper{16, 4, 16, 64};
  std::uint64_t init_seed = 7;
  double output_scale = 0.1;
};

struct SpecdecSettings {
  std::vector<std::filesystem::path> drafts;
  std::optional<std::filesystem::path> target;  // default: the teacher
  std::vector<std::size_t> gammas{5};
  std::size_t n_runs = 4;
  std::size_t n_prompts = 100;
  SamplerConfig sampler{1.0, std::nullopt, std::nullopt, 16, "specdec"};
};

struct ExperimentConfig {
  Task task = Task::markov;
  CorpusSettings corpus;
  TeacherSettings teacher;
  StudentSettings student;
  MethodSpec method;
  TrainConfig train;
  std::vector<std::size_t> k_values;  // default: 0, powers of two below |V|, |V|
  std::vector<std::int64_t> sft_steps{64, 128, 192};
  SpecdecSettings specdec;
  std::optional<std::filesystem::path> eval_checkpoint;
};

namespace detail {

inline SamplerConfig read_sampler(IniFile& ini, const std::string& section,
                                  const std::string& prefix, SamplerConfig c) {
  if (auto v = ini.get_as<double>(section, prefix + "temperature", parse::real))
    c.temperature = *v;
  if (auto v = ini.get_as<std::size_t>(section, prefix + "top_k", parse::count))
    c.top_k = *v;
  if (auto v = ini.get_as<double>(section, prefix + "top_p", parse::real)) {
    c.top_p = *v;
    if (*v == 1.0) c.top_p.reset();
  }
  return c;
}

inline void read_train(IniFile& ini, const std::string& section,
                       TrainConfig& t) {
  if (auto v = ini.get_as<std::int64_t>(section, "total_steps", parse::integer))
    t.total_steps = *v;
  if (auto v = ini.get_as<std::size_t>(section, "batch_size", parse::count))
    t.batch_size = *v;
  if (auto v = ini.get_as<double>(section, "learning_rate", parse::real))
    t.schedule.base_rate = *v;
  if (auto v = ini.get_as<double>(section, "warmup_ratio", parse::real))
    t.schedule.warmup_ratio = *v;
  if (auto v = ini.get_as<Decay>(section, "decay", [](const std::string& s) {
        if (s == "linear") return Decay::linear;
        if (s == "none") return Decay::none;
        throw ConfigError("unknown decay '" + s + "'");
      }))
    t.schedule.decay = *v;
  if (auto v = ini.get_as<OptimizerKind>(section, "optimizer", parse_optimizer))
    t.optimizer = *v;
  if (auto v = ini.get_as<std::int64_t>(section, "eval_every", parse::integer))
    t.eval_every = *v;
  if (auto v = ini.get_as<std::size_t>(section, "max_len", parse::count))
    t.max_len = *v;
  if (auto v = ini.get_as<std::size_t>(section, "metric_horizon", parse::count))
    t.metric_horizon = *v;
  if (auto v = ini.get_as<bool>(section, "eval_metric", parse::boolean))
    t.eval_metric = *v;
  if (auto v = ini.get_as<bool>(section, "record_sequences", parse::boolean))
    t.record_sequences = *v;
  t.schedule.total_steps = t.total_steps;
}

inline NeuralHyper read_hyper(IniFile& ini, const std::string& section,
                              NeuralHyper h) {
  if (auto v = ini.get_as<std::size_t>(section, "context", parse::count)) h.context = *v;
  if (auto v = ini.get_as<std::size_t>(section, "d_emb", parse::count)) h.d_emb = *v;
  if (auto v = ini.get_as<std::size_t>(section, "d_hid", parse::count)) h.d_hid = *v;
  return h;
}

inline std::filesystem::path resolve(const std::filesystem::path& base,
                                     const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

inline const std::set<std::string> kConfigSections{
    "experiment", "corpus", "teacher", "teacher_train", "student", "method",
    "train", "sweep", "init_study", "specdec", "eval"};

/// Reads an ExperimentConfig. Relative paths resolve against `base_dir`
/// (normally the config file's directory). Unknown sections and keys are
/// errors that carry the offending line.
inline ExperimentConfig parse_experiment_config(
    IniFile& ini, const std::filesystem::path& base_dir = ".") {
  ExperimentConfig c;
  auto path_of = [&](const std::string& s) { return detail::resolve(base_dir, s); };

  if (auto v = ini.get_as<Task>("experiment", "task", parse_task)) c.task = *v;
  if (auto v = ini.get_as<std::uint64_t>("experiment", "run_seed", parse::count))
    c.train.run_seed = *v;

  // [corpus]
  auto& cs = c.corpus;
  if (auto v = ini.get("corpus", "dir")) cs.dir = path_of(*v);
  const bool has_preset = ini.has("corpus", "preset");
  if (auto v = ini.get_as<std::size_t>("corpus", "preset", preset_train_size))
    cs.train_size = *v;
  if (auto v = ini.get_as<std::size_t>("corpus", "train_size", parse::count)) {
    if (has_preset)
      throw ini.error_at(ini.line_of("corpus", "train_size"),
                         "corpus.train_size conflicts with corpus.preset");
    cs.train_size = *v;
  }
  if (auto v = ini.get_as<std::size_t>("corpus", "dev_size", parse::count)) cs.dev_size = *v;
  if (auto v = ini.get_as<std::size_t>("corpus", "test_size", parse::count)) cs.test_size = *v;
  if (auto v = ini.get_as<std::uint64_t>("corpus", "generation_seed", parse::count))
    cs.generation_seed = *v;
  if (auto v = ini.get("corpus", "markov_spec")) cs.markov_spec = path_of(*v);
  if (auto v = ini.get_as<std::size_t>("corpus", "content_symbols", parse::count))
    cs.content_symbols = *v;
  if (auto v = ini.get_as<std::size_t>("corpus", "order", parse::count)) cs.chain.order = *v;
  if (auto v = ini.get_as<std::size_t>("corpus", "support", parse::count)) cs.chain.support = *v;
  if (auto v = ini.get_as<double>("corpus", "eos_prob", parse::real)) cs.chain.eos_prob = *v;
  if (auto v = ini.get_as<double>("corpus", "concentration", parse::real))
    cs.chain.concentration = *v;
  if (auto v = ini.get_as<std::uint64_t>("corpus", "chain_seed", parse::count))
    cs.chain_seed = *v;
  if (auto v = ini.get_as<std::size_t>("corpus", "min_len", parse::count)) cs.length.min = *v;
  if (auto v = ini.get_as<std::size_t>("corpus", "max_len", parse::count)) cs.length.max = *v;
  if (auto v = ini.get_as<std::int64_t>("corpus", "digit_max", parse::integer))
    cs.digit_max = static_cast<int>(*v);
  if (auto v = ini.get_as<std::size_t>("corpus", "letters", parse::count)) cs.letters = *v;
  if (cs.train_size < 1 || cs.dev_size < 1 || cs.test_size < 1)
    throw ConfigError("corpus sizes must be >= 1");

  // [teacher]
  if (auto v = ini.get_as<TeacherKind>("teacher", "kind", [](const std::string& s) {
        if (s == "tabular") return TeacherKind::tabular;
        if (s == "neural") return TeacherKind::neural;
        if (s == "none") return TeacherKind::none;
        throw ConfigError("unknown teacher kind '" + s + "'");
      }))
    c.teacher.kind = *v;
  else if (c.task != Task::markov)
    c.teacher.kind = TeacherKind::neural;
  if (auto v = ini.get("teacher", "checkpoint")) c.teacher.checkpoint = path_of(*v);
  c.teacher.hyper = detail::read_hyper(ini, "teacher_train", c.teacher.hyper);
  if (auto v = ini.get_as<std::uint64_t>("teacher_train", "init_seed", parse::count))
    c.teacher.init_seed = *v;
  c.teacher.train.total_steps = 3000;
  c.teacher.train.batch_size = 32;
  c.teacher.train.eval_every = 500;
  c.teacher.train.schedule = {3e-3, 3000, 0.1, Decay::linear};
  detail::read_train(ini, "teacher_train", c.teacher.train);

  // [student]
  if (auto v = ini.get("student", "checkpoint")) c.student.checkpoint = path_of(*v);
  c.student.hyper = detail::read_hyper(ini, "student", c.student.hyper);
  if (auto v = ini.get_as<std::uint64_t>("student", "init_seed", parse::count))
    c.student.init_seed = *v;
  if (auto v = ini.get_as<double>("student", "output_scale", parse::real))
    c.student.output_scale = *v;

  // [method]
  auto& m = c.method;
  if (auto v = ini.get_as<MethodKind>("method", "kind", parse_method)) m.kind = *v;
  if (auto v = ini.get_as<DivergenceKind>("method", "divergence", parse_divergence))
    m.divergence.kind = *v;
  if (auto v = ini.get_as<double>("method", "epsilon", parse::real))
    m.divergence.epsilon_floor = *v;
  std::optional<std::size_t> k;
  if (auto v = ini.get_as<std::size_t>("method", "top_k_accept", parse::count)) k = *v;
  if (auto v = ini.get_as<std::size_t>("method", "gamma", parse::count)) m.skd.gamma = *v;
  if (auto v = ini.get_as<std::int64_t>("method", "stage_boundary", parse::integer))
    m.stage_boundary = *v;
  if (auto v = ini.get_as<double>("method", "mix_probability", parse::real))
    m.mix_probability = *v;
  m.skd.student_sampler =
      detail::read_sampler(ini, "method", "student_", m.skd.student_sampler);
  m.skd.teacher_resample =
      detail::read_sampler(ini, "method", "teacher_", m.skd.teacher_resample);

  // [train]
  detail::read_train(ini, "train", c.train);

  // [sweep] / [init_study]
  const auto sweep_k =
      ini.get_as<std::vector<std::size_t>>("sweep", "k_values", parse::count_list);
  if (auto v = ini.get_as<std::vector<std::int64_t>>(
          "init_study", "sft_steps", [](const std::string& s) {
            std::vector<std::int64_t> out;
            for (auto n : parse::count_list(s)) out.push_back(static_cast<std::int64_t>(n));
            return out;
          }))
    c.sft_steps = *v;

  // [specdec]
  if (auto v = ini.get("specdec", "drafts"))
    for (const auto& d : parse::list(*v)) c.specdec.drafts.push_back(path_of(d));
  if (auto v = ini.get("specdec", "target")) c.specdec.target = path_of(*v);
  if (auto v = ini.get_as<std::vector<std::size_t>>("specdec", "gammas", parse::count_list))
    c.specdec.gammas = *v;
  if (auto v = ini.get_as<std::size_t>("specdec", "n_runs", parse::count)) c.specdec.n_runs = *v;
  if (auto v = ini.get_as<std::size_t>("specdec", "n_prompts", parse::count))
    c.specdec.n_prompts = *v;
  if (auto v = ini.get_as<std::size_t>("specdec", "max_len", parse::count))
    c.specdec.sampler.max_len = *v;
  c.specdec.sampler = detail::read_sampler(ini, "specdec", "", c.specdec.sampler);

  // [eval]
  if (auto v = ini.get("eval", "checkpoint")) c.eval_checkpoint = path_of(*v);

  ini.check_consumed(kConfigSections);

  // Vocabulary-dependent defaults.
  const std::size_t vocab = c.task == Task::markov
                                ? cs.content_symbols + 3
                                : (c.task == Task::arith ? arith_vocabulary().size()
                                                         : cs.letters + 4);
  c.student.hyper.vocab = vocab;
  c.teacher.hyper.vocab = vocab;
  m.skd.top_k_accept = k.value_or(default_accept_k(vocab));
  m.skd.student_sampler.max_len = c.train.max_len;
  m.skd.teacher_resample.max_len = c.train.max_len;
  if (sweep_k) {
    c.k_values = *sweep_k;
  } else {
    c.k_values = {0};
    for (std::size_t kv = 1; kv < vocab; kv *= 2) c.k_values.push_back(kv);
    c.k_values.push_back(vocab);
  }
  for (auto kv : c.k_values)
    if (kv > vocab)
      throw ConfigError("sweep.k_values: K=" + std::to_string(kv) +
                        " exceeds |V|=" + std::to_string(vocab));
  if (!std::is_sorted(c.sft_steps.begin(), c.sft_steps.end()))
    throw ConfigError("init_study.sft_steps must be ascending");
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  IniFile ini = IniFile::load(path);
  return parse_experiment_config(ini, path.parent_path().empty()
                                          ? std::filesystem::path(".")
                                          : path.parent_path());
}

}  // namespace skd
