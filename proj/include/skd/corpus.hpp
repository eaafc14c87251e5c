// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "skd/distribution.hpp"
#include "skd/error.hpp"
#include "skd/rng.hpp"

namespace skd {

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

inline constexpr char kBosGlyph = '^';
inline constexpr char kEosGlyph = '$';
inline constexpr char kPadGlyph = '_';

/// Single-character tokens. Content glyphs occupy the low ids, the three
/// reserved tokens (BOS, EOS, PAD) the top three.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Builds content glyphs followed by BOS, EOS, PAD.
  static Vocabulary from_content(std::string_view content) {
    std::string symbols(content);
    symbols += kBosGlyph;
    symbols += kEosGlyph;
    symbols += kPadGlyph;
    const auto n = static_cast<TokenId>(content.size());
    return Vocabulary(std::move(symbols), n, n + 1, n + 2);
  }

  Vocabulary(std::string symbols, TokenId bos, TokenId eos, TokenId pad)
      : symbols_(std::move(symbols)), bos_(bos), eos_(eos), pad_(pad) {
    validate();
  }

  std::size_t size() const { return symbols_.size(); }
  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  TokenId pad() const { return pad_; }
  const std::string& symbols() const { return symbols_; }

  bool is_reserved(TokenId id) const {
    return id == bos_ || id == eos_ || id == pad_;
  }
  bool contains(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < symbols_.size();
  }

  /// Content ids in ascending order.
  std::vector<TokenId> content_ids() const {
    std::vector<TokenId> out;
    for (TokenId i = 0; i < static_cast<TokenId>(size()); ++i)
      if (!is_reserved(i)) out.push_back(i);
    return out;
  }

  TokenId id_of(char glyph) const {
    const auto pos = symbols_.find(glyph);
    if (pos == std::string::npos)
      throw InputError(std::string("glyph '") + glyph + "' not in vocabulary");
    return static_cast<TokenId>(pos);
  }
  char glyph_of(TokenId id) const {
    if (!contains(id))
      throw InputError("token id " + std::to_string(id) + " out of vocabulary");
    return symbols_[static_cast<std::size_t>(id)];
  }

  TokenSeq encode(std::string_view text) const {
    TokenSeq out;
    out.reserve(text.size());
    for (char c : text) out.push_back(id_of(c));
    return out;
  }
  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) out += glyph_of(id);
    return out;
  }

  void check_tokens(std::span<const TokenId> ids) const {
    for (TokenId id : ids)
      if (!contains(id))
        throw InputError("token id " + std::to_string(id) +
                         " out of vocabulary of size " +
                         std::to_string(size()));
  }

  bool operator==(const Vocabulary&) const = default;

 private:
  void validate() const {
    if (symbols_.size() < 4 || symbols_.size() > 64)
      throw ConfigError("vocabulary size must be in [4, 64], got " +
                        std::to_string(symbols_.size()));
    for (std::size_t i = 0; i < symbols_.size(); ++i)
      for (std::size_t j = i + 1; j < symbols_.size(); ++j)
        if (symbols_[i] == symbols_[j])
          throw ConfigError("duplicate vocabulary glyph");
    if (!contains(bos_) || !contains(eos_) || !contains(pad_) || bos_ == eos_ ||
        bos_ == pad_ || eos_ == pad_)
      throw ConfigError("BOS/EOS/PAD must be distinct in-vocabulary ids");
  }

  std::string symbols_;
  TokenId bos_ = 0;
  TokenId eos_ = 1;
  TokenId pad_ = 2;
};

inline Vocabulary markov_vocabulary(std::size_t content_size = 13) {
  if (content_size < 1 || content_size > 26)
    throw ConfigError("markov content alphabet must have 1..26 letters");
  return Vocabulary::from_content(
      std::string_view("abcdefghijklmnopqrstuvwxyz").substr(0, content_size));
}
inline Vocabulary arith_vocabulary() {
  return Vocabulary::from_content("0123456789+=");
}
inline Vocabulary reverse_vocabulary(std::size_t letters = 8) {
  if (letters < 1 || letters > 26)
    throw ConfigError("reverse alphabet must have 1..26 letters");
  std::string content(std::string_view("abcdefghijklmnopqrstuvwxyz")
                          .substr(0, letters));
  content += '=';
  return Vocabulary::from_content(content);
}

// ---------------------------------------------------------------------------
// Examples and corpora
// ---------------------------------------------------------------------------

enum class Task { markov, arith, reverse };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::markov: return "markov";
    case Task::arith: return "arith";
    case Task::reverse: return "reverse";
  }
  return "?";
}
inline Task parse_task(std::string_view s) {
  if (s == "markov") return Task::markov;
  if (s == "arith") return Task::arith;
  if (s == "reverse") return Task::reverse;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

struct Example {
  TokenSeq prompt;
  TokenSeq response;  // ends with exactly one EOS

  bool operator==(const Example&) const = default;
  auto operator<=>(const Example&) const = default;
};

struct Corpus {
  Vocabulary vocab;
  std::vector<Example> examples;
  Task task = Task::markov;
  std::uint64_t generation_seed = 0;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  bool operator==(const Corpus&) const = default;
};

inline void validate_example(const Vocabulary& v, const Example& e) {
  if (e.prompt.empty()) throw InputError("example prompt is empty");
  if (e.response.empty() || e.response.back() != v.eos())
    throw InputError("example response must end with EOS");
  v.check_tokens(e.prompt);
  v.check_tokens(e.response);
  for (TokenId t : e.prompt)
    if (t == v.pad() || t == v.eos()) throw InputError("PAD/EOS inside prompt");
  for (std::size_t i = 0; i + 1 < e.response.size(); ++i)
    if (e.response[i] == v.pad() || e.response[i] == v.eos())
      throw InputError("PAD/EOS inside response body");
}

/// Response text without the trailing EOS.
inline std::string response_text(const Vocabulary& v, const Example& e) {
  return v.decode(std::span(e.response).first(e.response.size() - 1));
}

// ---------------------------------------------------------------------------
// Markov chains
// ---------------------------------------------------------------------------

/// Order-n transition table over the full vocabulary. Rows are indexed by the
/// context (oldest token most significant). Contexts shorter than `order`
/// are left-padded with BOS.
class MarkovSpec {
 public:
  MarkovSpec() = default;
  MarkovSpec(Vocabulary vocab, std::size_t order, std::vector<double> table)
      : vocab_(std::move(vocab)), order_(order), table_(std::move(table)) {
    validate();
  }

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t order() const { return order_; }
  std::size_t num_contexts() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < order_; ++i) n *= vocab_.size();
    return n;
  }

  std::size_t context_index(std::span<const TokenId> context) const {
    if (context.size() != order_)
      throw InternalError("markov context length mismatch");
    std::size_t idx = 0;
    for (TokenId t : context) idx = idx * vocab_.size() + static_cast<std::size_t>(t);
    return idx;
  }

  std::span<const double> row(std::size_t context_idx) const {
    return std::span(table_).subspan(context_idx * vocab_.size(),
                                     vocab_.size());
  }
  std::span<double> mutable_row(std::size_t context_idx) {
    return std::span(table_).subspan(context_idx * vocab_.size(),
                                     vocab_.size());
  }
  std::span<const double> row(std::span<const TokenId> context) const {
    return row(context_index(context));
  }

  /// Row for the last `order` tokens of BOS-padded `history`.
  std::span<const double> row_after(std::span<const TokenId> history) const {
    std::size_t idx = 0;
    for (std::size_t k = 0; k < order_; ++k) {
      const std::size_t back = order_ - k;  // distance from the end
      const TokenId t = history.size() >= back
                            ? history[history.size() - back]
                            : vocab_.bos();
      idx = idx * vocab_.size() + static_cast<std::size_t>(t);
    }
    return row(idx);
  }

  const std::vector<double>& table() const { return table_; }

  void validate() const {
    if (order_ < 1) throw ConfigError("markov order must be >= 1");
    if (table_.size() != num_contexts() * vocab_.size())
      throw ConfigError("markov table has wrong size");
    for (std::size_t c = 0; c < num_contexts(); ++c) {
      double sum = 0.0;
      for (double p : row(c)) {
        if (!std::isfinite(p) || p < 0.0)
          throw ConfigError("markov row has a negative or non-finite entry");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("markov row " + std::to_string(c) +
                          " does not sum to 1");
      if (row(c)[vocab_.bos()] != 0.0 || row(c)[vocab_.pad()] != 0.0)
        throw ConfigError("markov rows must give zero mass to BOS and PAD");
    }
  }

  /// Every row puts all mass on `token`.
  static MarkovSpec constant(const Vocabulary& vocab, std::size_t order,
                             TokenId token) {
    MarkovSpec s;
    s.vocab_ = vocab;
    s.order_ = order;
    s.table_.assign(s.num_contexts() * vocab.size(), 0.0);
    for (std::size_t c = 0; c < s.num_contexts(); ++c)
      s.mutable_row(c)[token] = 1.0;
    s.validate();
    return s;
  }

  bool operator==(const MarkovSpec&) const = default;

 private:
  Vocabulary vocab_;
  std::size_t order_ = 0;
  std::vector<double> table_;
};

struct MarkovChainParams {
  std::size_t order = 2;
  std::size_t support = 8;  // nonzero content tokens per row
  double eos_prob = 0.08;   // EOS mass on rows whose context has no BOS
  double concentration = 0.5;  // symmetric Dirichlet over the support
};

/// Random sparse chain. Rows with BOS in the context never emit EOS (so
/// prompts never contain it); rows with EOS/PAD in the context are
/// unreachable and set uniform over content.
inline MarkovSpec make_random_markov_spec(const Vocabulary& vocab,
                                          const MarkovChainParams& params,
                                          std::uint64_t seed) {
  const auto content = vocab.content_ids();
  if (params.support < 1 || params.support > content.size())
    throw ConfigError("markov support must be in [1, #content tokens]");
  if (!(params.eos_prob >= 0.0 && params.eos_prob < 1.0))
    throw ConfigError("markov eos_prob must be in [0, 1)");
  if (!(params.concentration > 0.0))
    throw ConfigError("markov concentration must be > 0");

  const std::size_t v = vocab.size();
  std::size_t contexts = 1;
  for (std::size_t i = 0; i < params.order; ++i) contexts *= v;
  std::vector<double> table(contexts * v, 0.0);
  RngCursor rng(RngStream(seed, "markov-spec"));

  for (std::size_t c = 0; c < contexts; ++c) {
    bool has_bos = false, unreachable = false;
    std::size_t rest = c;
    for (std::size_t k = 0; k < params.order; ++k) {
      const auto t = static_cast<TokenId>(rest % v);
      rest /= v;
      has_bos |= t == vocab.bos();
      unreachable |= t == vocab.eos() || t == vocab.pad();
    }
    // A BOS may only appear as left padding: context "x BOS" is unreachable.
    if (has_bos && !unreachable) {
      bool seen_content = false;
      rest = c;
      std::vector<TokenId> ctx(params.order);
      for (std::size_t k = 0; k < params.order; ++k) {
        ctx[params.order - 1 - k] = static_cast<TokenId>(rest % v);
        rest /= v;
      }
      for (TokenId t : ctx) {
        if (t != vocab.bos()) seen_content = true;
        else if (seen_content) unreachable = true;
      }
    }
    double* row = table.data() + c * v;
    if (unreachable) {
      for (TokenId t : content) row[t] = 1.0 / static_cast<double>(content.size());
      continue;
    }
    // Partial Fisher-Yates picks the support; weights are symmetric
    // Dirichlet, i.e. normalized Gamma(concentration) draws.
    std::vector<TokenId> pool = content;
    for (std::size_t i = 0; i < params.support; ++i) {
      const auto j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    std::vector<double> w(params.support);
    double total = 0.0;
    for (std::size_t i = 0; i < params.support; ++i) {
      // Gamma(alpha) by Marsaglia-Tsang with the alpha < 1 boost.
      const double alpha = params.concentration;
      const double a = alpha < 1.0 ? alpha + 1.0 : alpha;
      const double d = a - 1.0 / 3.0, cc = 1.0 / std::sqrt(9.0 * d);
      double g = 0.0;
      for (;;) {
        const double x = rng.normal();
        const double vv = std::pow(1.0 + cc * x, 3);
        if (vv <= 0.0) continue;
        const double u = rng.uniform();
        if (std::log(u + 1e-300) < 0.5 * x * x + d - d * vv + d * std::log(vv)) {
          g = d * vv;
          break;
        }
      }
      if (alpha < 1.0) g *= std::pow(rng.uniform() + 1e-300, 1.0 / alpha);
      w[i] = g + 1e-6;
      total += w[i];
    }
    const double content_mass = has_bos ? 1.0 : 1.0 - params.eos_prob;
    for (std::size_t i = 0; i < params.support; ++i)
      row[pool[i]] = content_mass * w[i] / total;
    if (!has_bos) row[vocab.eos()] = params.eos_prob;
    // Exact unit sums.
    double s = 0.0;
    for (std::size_t t = 0; t < v; ++t) s += row[t];
    for (std::size_t t = 0; t < v; ++t) row[t] /= s;
  }
  return MarkovSpec(vocab, params.order, std::move(table));
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

struct LengthRange {
  std::size_t min = 1;
  std::size_t max = 1;
};

/// Samples from the chain starting at the all-BOS context. The first
/// `order` tokens form the prompt, the continuation up to EOS the response.
/// `len` bounds the number of content tokens (prompt + response body);
/// chains reaching `len.max` get EOS appended, samples ending below
/// `len.min` are redrawn.
inline Corpus gen_markov_corpus(const MarkovSpec& spec, std::size_t n,
                                LengthRange len, std::uint64_t seed) {
  if (n < 1) throw ConfigError("markov corpus size must be >= 1");
  if (len.max < len.min || len.min < spec.order())
    throw ConfigError("markov length range requires max >= min >= order");
  const Vocabulary& v = spec.vocab();
  Corpus corpus{v, {}, Task::markov, seed};
  corpus.examples.reserve(n);
  constexpr std::size_t kMaxAttempts = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    bool done = false;
    for (std::size_t attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
      RngCursor rng(RngStream(seed, "markov-corpus", i, attempt));
      TokenSeq seq;
      while (seq.size() < len.max) {
        const auto row = spec.row_after(seq);
        const TokenId t = draw(Distribution{{row.begin(), row.end()}},
                               rng.uniform());
        if (t == v.eos()) break;
        seq.push_back(t);
      }
      if (seq.size() < len.min) continue;
      Example e;
      e.prompt.assign(seq.begin(), seq.begin() + static_cast<long>(spec.order()));
      e.response.assign(seq.begin() + static_cast<long>(spec.order()), seq.end());
      e.response.push_back(v.eos());
      corpus.examples.push_back(std::move(e));
      done = true;
    }
    if (!done)
      throw ConfigError("markov chain cannot produce sequences in the length range");
  }
  return corpus;
}

/// Prompts "a+b=" with a, b uniform in [0, digit_max]; response is a+b.
inline Corpus gen_arith_corpus(int digit_max, std::size_t n,
                               std::uint64_t seed) {
  if (digit_max < 1 || digit_max > 99)
    throw ConfigError("digit_max must be in [1, 99]");
  if (n < 1) throw ConfigError("arith corpus size must be >= 1");
  const Vocabulary v = arith_vocabulary();
  Corpus corpus{v, {}, Task::arith, seed};
  corpus.examples.reserve(n);
  const RngStream stream(seed, "arith-corpus");
  const auto span = static_cast<std::uint64_t>(digit_max) + 1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = stream.below(span, i, 0);
    const auto b = stream.below(span, i, 1);
    Example e;
    e.prompt = v.encode(std::to_string(a) + "+" + std::to_string(b) + "=");
    e.response = v.encode(std::to_string(a + b));
    e.response.push_back(v.eos());
    corpus.examples.push_back(std::move(e));
  }
  return corpus;
}

/// Prompts are random letter strings terminated by '='; the response is the
/// reversed string.
inline Corpus gen_reverse_corpus(LengthRange len, std::size_t n,
                                 std::uint64_t seed,
                                 std::size_t letters = 8) {
  if (len.min < 1 || len.max < len.min)
    throw ConfigError("reverse length range requires max >= min >= 1");
  if (n < 1) throw ConfigError("reverse corpus size must be >= 1");
  const Vocabulary v = reverse_vocabulary(letters);
  Corpus corpus{v, {}, Task::reverse, seed};
  corpus.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngCursor rng(RngStream(seed, "reverse-corpus", i));
    const auto l = len.min + rng.below(len.max - len.min + 1);
    TokenSeq body(l);
    for (auto& t : body) t = static_cast<TokenId>(rng.below(letters));
    Example e;
    e.prompt = body;
    e.prompt.push_back(v.id_of('='));
    e.response.assign(body.rbegin(), body.rend());
    e.response.push_back(v.eos());
    corpus.examples.push_back(std::move(e));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Seeded shuffle, then floor(n * f) per split with the remainder going to
/// train.
inline std::array<Corpus, 3> split(const Corpus& corpus,
                                   std::array<double, 3> fractions,
                                   std::uint64_t seed) {
  for (double f : fractions)
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  const std::size_t n = corpus.size();
  std::array<std::size_t, 3> sizes{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    sizes[k] = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * fractions[k] + 1e-9));
    assigned += sizes[k];
  }
  sizes[0] += n - assigned;
  for (std::size_t s : sizes)
    if (s == 0) throw ConfigError("split produced an empty partition");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  RngCursor rng(RngStream(seed, "split"));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

  std::array<Corpus, 3> out;
  std::size_t cursor = 0;
  for (int k = 0; k < 3; ++k) {
    out[k].vocab = corpus.vocab;
    out[k].task = corpus.task;
    out[k].generation_seed = corpus.generation_seed;
    for (std::size_t j = 0; j < sizes[k]; ++j)
      out[k].examples.push_back(corpus.examples[perm[cursor++]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

inline nlohmann::json vocabulary_to_json(const Vocabulary& v) {
  nlohmann::json symbols = nlohmann::json::array();
  for (char c : v.symbols()) symbols.push_back(std::string(1, c));
  return {{"symbols", symbols}, {"bos", v.bos()}, {"eos", v.eos()},
          {"pad", v.pad()}};
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  std::string symbols;
  for (const auto& s : j.at("symbols")) {
    const auto str = s.get<std::string>();
    if (str.size() != 1) throw IoError("vocabulary symbols must be single chars");
    symbols += str;
  }
  return Vocabulary(symbols, j.at("bos").get<TokenId>(),
                    j.at("eos").get<TokenId>(), j.at("pad").get<TokenId>());
}

/// Line 1: header {format, version, task, generation_seed, vocabulary}.
/// Lines 2..: {"prompt": ..., "response": ...}; response text omits EOS.
inline void write_corpus(std::ostream& os, const Corpus& c) {
  nlohmann::json header = {{"format", "skd-corpus"},
                           {"version", 1},
                           {"task", to_string(c.task)},
                           {"generation_seed", c.generation_seed},
                           {"vocabulary", vocabulary_to_json(c.vocab)}};
  os << header.dump() << '\n';
  for (const auto& e : c.examples) {
    nlohmann::json rec = {{"prompt", c.vocab.decode(e.prompt)},
                          {"response", response_text(c.vocab, e)}};
    os << rec.dump() << '\n';
  }
}

inline Corpus read_corpus(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("corpus file is empty");
  Corpus c;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format") != "skd-corpus")
      throw IoError("not a corpus file");
    c.task = parse_task(header.at("task").get<std::string>());
    c.generation_seed = header.at("generation_seed").get<std::uint64_t>();
    c.vocab = vocabulary_from_json(header.at("vocabulary"));
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      Example e;
      e.prompt = c.vocab.encode(rec.at("prompt").get<std::string>());
      e.response = c.vocab.encode(rec.at("response").get<std::string>());
      e.response.push_back(c.vocab.eos());
      try {
        validate_example(c.vocab, e);
      } catch (const InputError& err) {
        throw IoError("corpus line " + std::to_string(lineno) + ": " +
                      err.what());
      }
      c.examples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corpus parse error: ") + e.what());
  } catch (const InputError& e) {
    throw IoError(std::string("corpus parse error: ") + e.what());
  }
  return c;
}

inline void save_corpus(const std::string& path, const Corpus& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_corpus(os, c);
  if (!os) throw IoError("write failed: " + path);
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  return read_corpus(is);
}

inline void write_markov_spec(std::ostream& os, const MarkovSpec& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t c = 0; c < s.num_contexts(); ++c) {
    const auto r = s.row(c);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  nlohmann::json j = {{"format", "skd-markov"},
                      {"version", 1},
                      {"order", s.order()},
                      {"vocabulary", vocabulary_to_json(s.vocab())},
                      {"rows", rows}};
  os << j.dump() << '\n';
}

inline MarkovSpec read_markov_spec(std::istream& is) {
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.at("format") != "skd-markov") throw IoError("not a markov spec file");
    std::vector<double> table;
    for (const auto& r : j.at("rows"))
      for (const auto& p : r) table.push_back(p.get<double>());
    return MarkovSpec(vocabulary_from_json(j.at("vocabulary")),
                      j.at("order").get<std::size_t>(), std::move(table));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("markov spec parse error: ") + e.what());
  }
}

inline void save_markov_spec(const std::string& path, const MarkovSpec& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_markov_spec(os, s);
}

inline MarkovSpec load_markov_spec(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  return read_markov_spec(is);
}

}  // namespace skd
