// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "skd/corpus.hpp"
#include "skd/distribution.hpp"
#include "skd/error.hpp"
#include "skd/rng.hpp"

namespace skd {

/// The conditional next-token scorer every sampler and loss consumes.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::size_t vocab_size() const = 0;

  /// Pre-softmax scores for M(. | prompt, prefix). Pure.
  virtual Logits next_logits(std::span<const TokenId> prompt,
                             std::span<const TokenId> prefix) const = 0;

 protected:
  void check_in_vocab(std::span<const TokenId> seq) const {
    for (TokenId t : seq)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size())
        throw InputError("token id " + std::to_string(t) +
                         " out of vocabulary of size " +
                         std::to_string(vocab_size()));
  }
};

// ---------------------------------------------------------------------------
// Exact tabular teacher
// ---------------------------------------------------------------------------

inline constexpr double kLogFloor = -1e9;

/// Wraps a MarkovSpec; logits are log table entries, zeros floored.
class TabularMarkovLM final : public LanguageModel {
 public:
  explicit TabularMarkovLM(MarkovSpec spec) : spec_(std::move(spec)) {}

  std::size_t vocab_size() const override { return spec_.vocab().size(); }
  const MarkovSpec& spec() const { return spec_; }

  Logits next_logits(std::span<const TokenId> prompt,
                     std::span<const TokenId> prefix) const override {
    check_in_vocab(prompt);
    check_in_vocab(prefix);
    // Last `order` tokens of BOS-padded prompt ++ prefix.
    const std::size_t order = spec_.order();
    std::vector<TokenId> ctx(order, spec_.vocab().bos());
    const std::size_t total = prompt.size() + prefix.size();
    for (std::size_t k = 0; k < order && k < total; ++k) {
      const std::size_t pos = total - 1 - k;
      ctx[order - 1 - k] =
          pos >= prompt.size() ? prefix[pos - prompt.size()] : prompt[pos];
    }
    const auto row = spec_.row(ctx);
    Logits out;
    out.values.resize(row.size());
    for (std::size_t i = 0; i < row.size(); ++i)
      out.values[i] = row[i] > 0.0 ? std::log(row[i]) : kLogFloor;
    return out;
  }

 private:
  MarkovSpec spec_;
};

// ---------------------------------------------------------------------------
// Fixed-context MLP
// ---------------------------------------------------------------------------

struct NeuralHyper {
  std::size_t vocab = 16;
  std::size_t context = 4;
  std::size_t d_emb = 16;
  std::size_t d_hid = 64;

  bool operator==(const NeuralHyper&) const = default;
};

/// Offsets of each parameter block inside the flat parameter vector.
struct ParamLayout {
  std::size_t embedding, w1, b1, w2, b2, total;

  static ParamLayout of(const NeuralHyper& h) {
    ParamLayout l{};
    l.embedding = 0;
    l.w1 = l.embedding + h.vocab * h.d_emb;
    l.b1 = l.w1 + h.d_hid * h.context * h.d_emb;
    l.w2 = l.b1 + h.d_hid;
    l.b2 = l.w2 + h.vocab * h.d_hid;
    l.total = l.b2 + h.vocab;
    return l;
  }
};

/// Hidden state of one forward pass, kept for the backward pass.
struct NeuralActivations {
  std::vector<TokenId> context;  // c ids
  std::vector<double> input;     // c * d_emb, concatenated embeddings
  std::vector<double> hidden;    // tanh output, d_hid
  Logits logits;
};

/// logits = W2 tanh(W1 concat(E[ctx]) + b1) + b2.
/// BOS (vocabulary id `bos`) pads contexts shorter than c.
class NeuralLM final : public LanguageModel {
 public:
  NeuralLM() = default;
  NeuralLM(NeuralHyper hyper, TokenId bos, bool trainable = true)
      : hyper_(hyper),
        layout_(ParamLayout::of(hyper)),
        bos_(bos),
        trainable_(trainable),
        params_(layout_.total, 0.0) {
    if (hyper.vocab < 2 || hyper.vocab > 64 || hyper.context < 1 ||
        hyper.d_emb < 1 || hyper.d_hid < 1)
      throw ConfigError("invalid neural model hyperparameters");
    if (bos < 0 || static_cast<std::size_t>(bos) >= hyper.vocab)
      throw ConfigError("BOS id outside the vocabulary");
  }

  /// Gaussian init: embeddings N(0, 1), W1 N(0, 1/fan_in),
  /// W2 N(0, output_scale^2 / d_hid), zero biases.
  static NeuralLM random(NeuralHyper hyper, TokenId bos, std::uint64_t seed,
                         double output_scale = 0.1, bool trainable = true) {
    NeuralLM m(hyper, bos, trainable);
    RngCursor rng(RngStream(seed, "neural-init"));
    const auto& l = m.layout_;
    const double w1_scale =
        1.0 / std::sqrt(static_cast<double>(hyper.context * hyper.d_emb));
    const double w2_scale =
        output_scale / std::sqrt(static_cast<double>(hyper.d_hid));
    for (std::size_t i = l.embedding; i < l.w1; ++i) m.params_[i] = rng.normal();
    for (std::size_t i = l.w1; i < l.b1; ++i)
      m.params_[i] = w1_scale * rng.normal();
    for (std::size_t i = l.w2; i < l.b2; ++i)
      m.params_[i] = w2_scale * rng.normal();
    return m;
  }

  std::size_t vocab_size() const override { return hyper_.vocab; }
  const NeuralHyper& hyper() const { return hyper_; }
  const ParamLayout& layout() const { return layout_; }
  TokenId bos() const { return bos_; }
  bool trainable() const { return trainable_; }
  void set_trainable(bool t) { trainable_ = t; }

  std::span<const double> params() const { return params_; }
  /// Mutable access is reserved for the optimizer and for loading; it
  /// refuses when the model is frozen.
  std::span<double> mutable_params() {
    if (!trainable_) throw InternalError("attempt to mutate a frozen model");
    return params_;
  }

  std::span<const double> embedding() const {
    return block(layout_.embedding, layout_.w1);
  }
  std::span<const double> w1() const { return block(layout_.w1, layout_.b1); }
  std::span<const double> b1() const { return block(layout_.b1, layout_.w2); }
  std::span<const double> w2() const { return block(layout_.w2, layout_.b2); }
  std::span<const double> b2() const {
    return block(layout_.b2, layout_.total);
  }

  std::vector<TokenId> context_window(std::span<const TokenId> prompt,
                                      std::span<const TokenId> prefix) const {
    const std::size_t c = hyper_.context;
    std::vector<TokenId> ctx(c, bos_);
    const std::size_t total = prompt.size() + prefix.size();
    for (std::size_t k = 0; k < c && k < total; ++k) {
      const std::size_t pos = total - 1 - k;
      ctx[c - 1 - k] =
          pos >= prompt.size() ? prefix[pos - prompt.size()] : prompt[pos];
    }
    return ctx;
  }

  NeuralActivations forward(std::vector<TokenId> ctx) const {
    const std::size_t e = hyper_.d_emb, h = hyper_.d_hid, v = hyper_.vocab;
    const std::size_t in = hyper_.context * e;
    NeuralActivations a;
    a.context = std::move(ctx);
    a.input.resize(in);
    for (std::size_t j = 0; j < a.context.size(); ++j) {
      const double* row =
          params_.data() + layout_.embedding +
          static_cast<std::size_t>(a.context[j]) * e;
      std::copy(row, row + e, a.input.begin() + static_cast<long>(j * e));
    }
    a.hidden.resize(h);
    const double* w1 = params_.data() + layout_.w1;
    const double* b1 = params_.data() + layout_.b1;
    for (std::size_t r = 0; r < h; ++r) {
      double acc = b1[r];
      const double* wr = w1 + r * in;
      for (std::size_t k = 0; k < in; ++k) acc += wr[k] * a.input[k];
      a.hidden[r] = std::tanh(acc);
    }
    a.logits.values.resize(v);
    const double* w2 = params_.data() + layout_.w2;
    const double* b2 = params_.data() + layout_.b2;
    for (std::size_t r = 0; r < v; ++r) {
      double acc = b2[r];
      const double* wr = w2 + r * h;
      for (std::size_t k = 0; k < h; ++k) acc += wr[k] * a.hidden[k];
      a.logits.values[r] = acc;
    }
    return a;
  }

  /// Accumulates d(loss)/d(theta) into `grad` (flat, layout-matched) given
  /// d(loss)/d(logits) for the pass `a`.
  void backward(const NeuralActivations& a, std::span<const double> dlogits,
                std::span<double> grad) const {
    if (grad.size() != layout_.total || dlogits.size() != hyper_.vocab)
      throw InternalError("gradient shape mismatch");
    const std::size_t e = hyper_.d_emb, h = hyper_.d_hid, v = hyper_.vocab;
    const std::size_t in = hyper_.context * e;
    const double* w2 = params_.data() + layout_.w2;
    const double* w1 = params_.data() + layout_.w1;
    double* gw2 = grad.data() + layout_.w2;
    double* gb2 = grad.data() + layout_.b2;
    double* gw1 = grad.data() + layout_.w1;
    double* gb1 = grad.data() + layout_.b1;
    double* gemb = grad.data() + layout_.embedding;

    std::vector<double> dhidden(h, 0.0);
    for (std::size_t r = 0; r < v; ++r) {
      const double g = dlogits[r];
      if (g == 0.0) continue;
      gb2[r] += g;
      for (std::size_t k = 0; k < h; ++k) {
        gw2[r * h + k] += g * a.hidden[k];
        dhidden[k] += g * w2[r * h + k];
      }
    }
    std::vector<double> dinput(in, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
      const double dpre = dhidden[r] * (1.0 - a.hidden[r] * a.hidden[r]);
      if (dpre == 0.0) continue;
      gb1[r] += dpre;
      for (std::size_t k = 0; k < in; ++k) {
        gw1[r * in + k] += dpre * a.input[k];
        dinput[k] += dpre * w1[r * in + k];
      }
    }
    for (std::size_t j = 0; j < a.context.size(); ++j) {
      double* row = gemb + static_cast<std::size_t>(a.context[j]) * e;
      for (std::size_t k = 0; k < e; ++k) row[k] += dinput[j * e + k];
    }
  }

  Logits next_logits(std::span<const TokenId> prompt,
                     std::span<const TokenId> prefix) const override {
    check_in_vocab(prompt);
    check_in_vocab(prefix);
    return forward(context_window(prompt, prefix)).logits;
  }

  bool operator==(const NeuralLM& o) const {
    return hyper_ == o.hyper_ && bos_ == o.bos_ && params_ == o.params_;
  }

 private:
  std::span<const double> block(std::size_t begin, std::size_t end) const {
    return std::span(params_).subspan(begin, end - begin);
  }

  NeuralHyper hyper_{};
  ParamLayout layout_{};
  TokenId bos_ = 0;
  bool trainable_ = true;
  std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

namespace detail {

inline void write_array(std::ostream& os, std::span<const double> data) {
  char buf[40];
  os << '[';
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i) os << ',';
    std::snprintf(buf, sizeof buf, "%.17g", data[i]);
    os << buf;
  }
  os << ']';
}

}  // namespace detail

/// Structured text: version, hyperparameters, then each parameter array as
/// shape + row-major data at 17 significant digits.
inline void write_checkpoint(std::ostream& os, const NeuralLM& m) {
  const auto& h = m.hyper();
  os << "{\"format\":\"skd-checkpoint\",\"version\":1,"
     << "\"hyperparameters\":{\"vocab_size\":" << h.vocab
     << ",\"context\":" << h.context << ",\"d_emb\":" << h.d_emb
     << ",\"d_hid\":" << h.d_hid << ",\"bos\":" << m.bos() << "},"
     << "\"parameters\":[";
  struct Block {
    const char* name;
    std::vector<std::size_t> shape;
    std::span<const double> data;
  };
  const Block blocks[] = {
      {"embedding", {h.vocab, h.d_emb}, m.embedding()},
      {"hidden_weight", {h.d_hid, h.context * h.d_emb}, m.w1()},
      {"hidden_bias", {h.d_hid}, m.b1()},
      {"output_weight", {h.vocab, h.d_hid}, m.w2()},
      {"output_bias", {h.vocab}, m.b2()},
  };
  bool first = true;
  for (const auto& b : blocks) {
    if (!first) os << ',';
    first = false;
    os << "{\"name\":\"" << b.name << "\",\"shape\":[";
    for (std::size_t i = 0; i < b.shape.size(); ++i)
      os << (i ? "," : "") << b.shape[i];
    os << "],\"data\":";
    detail::write_array(os, b.data);
    os << '}';
  }
  os << "]}\n";
}

inline NeuralLM read_checkpoint(std::istream& is, bool trainable = true) {
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.at("format") != "skd-checkpoint") throw IoError("not a checkpoint");
    if (j.at("version").get<int>() != 1)
      throw IoError("unsupported checkpoint version");
    const auto& hp = j.at("hyperparameters");
    NeuralHyper h{hp.at("vocab_size").get<std::size_t>(),
                  hp.at("context").get<std::size_t>(),
                  hp.at("d_emb").get<std::size_t>(),
                  hp.at("d_hid").get<std::size_t>()};
    NeuralLM m(h, hp.at("bos").get<TokenId>(), true);
    auto dst = m.mutable_params();
    std::size_t offset = 0;
    for (const auto& b : j.at("parameters")) {
      std::size_t expected = 1;
      for (const auto& d : b.at("shape")) expected *= d.get<std::size_t>();
      const auto& data = b.at("data");
      if (data.size() != expected)
        throw IoError("checkpoint block '" + b.at("name").get<std::string>() +
                      "' has wrong length");
      for (const auto& x : data) {
        if (offset >= dst.size()) throw IoError("checkpoint has extra data");
        dst[offset++] = x.get<double>();
      }
    }
    if (offset != dst.size()) throw IoError("checkpoint is truncated");
    m.set_trainable(trainable);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint parse error: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint hyperparameters: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const NeuralLM& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_checkpoint(os, m);
  if (!os) throw IoError("write failed: " + path);
}

inline NeuralLM load_checkpoint(const std::string& path,
                                bool trainable = true) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  return read_checkpoint(is, trainable);
}

}  // namespace skd
