#include "commitlink/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

namespace commitlink {

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  for (const char* special : {"<pad>", "<unk>", "<cls>", "<sep>"}) add(special);
}

int Vocab::add(const std::string& token) {
  const auto [it, inserted] = ids_.try_emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

int Vocab::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

Vocab Vocab::build(std::span<const Tokens> streams, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : streams) {
    for (const auto& t : s) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq) ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [tok, n] : ranked) v.add(tok);
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocab " + path);
  Vocab v;
  v.tokens_.clear();
  v.ids_.clear();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (v.ids_.count(line)) throw DataError("duplicate vocab token: " + line);
    v.add(line);
  }
  if (v.size() < 4 || v.token(kPad) != "<pad>" || v.token(kUnk) != "<unk>" ||
      v.token(kCls) != "<cls>" || v.token(kSep) != "<sep>") {
    throw DataError("vocab file lacks the special tokens: " + path);
  }
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

std::size_t TokenizedSequence::active() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

TokenizedSequence tokenize(const Tokens& tokens, std::size_t budget, const Vocab& vocab) {
  TokenizedSequence seq;
  seq.ids.assign(budget, Vocab::kPad);
  seq.mask.assign(budget, 0);
  const std::size_t n = std::min(budget, tokens.size());
  for (std::size_t i = 0; i < n; ++i) {
    seq.ids[i] = vocab.id(tokens[i]);
    seq.mask[i] = 1;
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Config

void EncoderConfig::validate() const {
  if (n_layers < 1) throw ConfigError("encoder needs at least one layer");
  if (n_heads < 1 || hidden_dim < 1 || hidden_dim % n_heads != 0) {
    throw ConfigError("hidden_dim must be a positive multiple of n_heads");
  }
  if (max_positions < 1) throw ConfigError("max_positions must be positive");
  if (!(residual_init_scale >= 0.0)) throw ConfigError("residual_init_scale must be non-negative");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"n_layers", n_layers}, {"n_heads", n_heads},         {"hidden_dim", hidden_dim},
          {"ffn_dim", ffn_dim},   {"max_positions", max_positions}, {"residual_init_scale", residual_init_scale},
          {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.residual_init_scale = j.value("residual_init_scale", c.residual_init_scale);
  c.seed = j.value("seed", c.seed);
  return c;
}

EncoderConfig EncoderConfig::student_defaults() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::teacher_defaults() {
  EncoderConfig c;
  c.n_layers = 12;
  c.n_heads = 4;
  c.seed = 1;
  return c;
}

// ---------------------------------------------------------------------------
// ParameterStore

ParameterStore::ParameterStore(const ParameterStore& other) : names_(other.names_) {
  vars_.reserve(other.vars_.size());
  for (const auto& v : other.vars_) {
    auto copy = ag::parameter(v->value);
    copy->requires_grad = v->requires_grad;
    vars_.push_back(std::move(copy));
  }
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this != &other) {
    ParameterStore tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

std::size_t ParameterStore::add(std::string name, ag::Matrix init) {
  names_.push_back(std::move(name));
  vars_.push_back(ag::parameter(std::move(init)));
  return vars_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

void ParameterStore::set_trainable(bool trainable) {
  for (auto& v : vars_) v->requires_grad = trainable;
}

void ParameterStore::zero_grad() {
  for (auto& v : vars_) {
    if (v->grad.size() > 0) v->grad.setZero();
  }
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : vars_) n += static_cast<std::size_t>(v->value.size());
  return n;
}

bool ParameterStore::all_finite() const {
  return std::all_of(vars_.begin(), vars_.end(),
                     [](const ag::Var& v) { return v->value.allFinite(); });
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  if (other.size() != size()) throw ConfigError("parameter layouts differ");
  for (std::size_t i = 0; i < size(); ++i) {
    if (other.vars_[i]->value.rows() != vars_[i]->value.rows() ||
        other.vars_[i]->value.cols() != vars_[i]->value.cols()) {
      throw ConfigError("parameter shape mismatch for " + names_[i]);
    }
    vars_[i]->value = other.vars_[i]->value;
  }
}

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(const EncoderConfig& config, std::size_t vocab_size)
    : config_(config), vocab_size_(vocab_size) {
  config_.validate();
  if (vocab_size < 4) throw ConfigError("vocabulary too small");
  std::mt19937_64 rng(config_.seed);
  const int d = config_.hidden_dim;
  const int f = config_.ffn_width();
  auto gaussian = [&rng](int rows, int cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    ag::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
  };
  auto linear = [&](int in, int out, double scale = 1.0) {
    return gaussian(in, out, scale / std::sqrt(in));
  };
  const double rs = config_.residual_init_scale;
  const ag::Matrix ones = ag::Matrix::Ones(1, d);
  const ag::Matrix zeros = ag::Matrix::Zero(1, d);

  params_.add("embed.token", gaussian(static_cast<int>(vocab_size), d, 1.0));
  params_.add("embed.position", gaussian(config_.max_positions, d, 0.1));
  for (int l = 1; l <= config_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    params_.add(p + "ln1.gain", ones);
    params_.add(p + "ln1.bias", zeros);
    params_.add(p + "attn.wq", linear(d, d));
    params_.add(p + "attn.bq", zeros);
    params_.add(p + "attn.wk", linear(d, d));
    params_.add(p + "attn.bk", zeros);
    params_.add(p + "attn.wv", linear(d, d));
    params_.add(p + "attn.bv", zeros);
    params_.add(p + "attn.wo", linear(d, d, rs));
    params_.add(p + "attn.bo", zeros);
    params_.add(p + "ln2.gain", ones);
    params_.add(p + "ln2.bias", zeros);
    params_.add(p + "ffn.w1", linear(d, f));
    params_.add(p + "ffn.b1", ag::Matrix::Zero(1, f));
    params_.add(p + "ffn.w2", linear(f, d, rs));
    params_.add(p + "ffn.b2", zeros);
  }
  build_layout();
}

void Encoder::build_layout() {
  auto idx = [this](const std::string& name) {
    const auto i = params_.find(name);
    if (!i) throw ConfigError("missing encoder parameter " + name);
    return *i;
  };
  token_embed_ = idx("embed.token");
  position_embed_ = idx("embed.position");
  blocks_.clear();
  for (int l = 1; l <= config_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    blocks_.push_back({idx(p + "ln1.gain"), idx(p + "ln1.bias"), idx(p + "attn.wq"),
                       idx(p + "attn.bq"), idx(p + "attn.wk"), idx(p + "attn.bk"),
                       idx(p + "attn.wv"), idx(p + "attn.bv"), idx(p + "attn.wo"),
                       idx(p + "attn.bo"), idx(p + "ln2.gain"), idx(p + "ln2.bias"),
                       idx(p + "ffn.w1"), idx(p + "ffn.b1"), idx(p + "ffn.w2"),
                       idx(p + "ffn.b2")});
  }
}

Encoder Encoder::from_teacher_layers(const Encoder& teacher, std::span<const int> teacher_layers) {
  if (teacher_layers.empty()) throw ConfigError("no teacher layers to copy");
  Encoder student;
  student.config_ = teacher.config_;
  student.config_.n_layers = static_cast<int>(teacher_layers.size());
  student.vocab_size_ = teacher.vocab_size_;
  const auto& tp = teacher.params_;
  student.params_.add("embed.token", tp[teacher.token_embed_]->value);
  student.params_.add("embed.position", tp[teacher.position_embed_]->value);
  static constexpr const char* kSuffix[] = {
      "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
      "attn.wo",  "attn.bo",  "ln2.gain", "ln2.bias", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"};
  for (std::size_t s = 0; s < teacher_layers.size(); ++s) {
    const int tl = teacher_layers[s];
    if (tl < 1 || tl > teacher.config_.n_layers) {
      throw ConfigError("teacher layer " + std::to_string(tl) + " out of range");
    }
    for (const char* suffix : kSuffix) {
      const auto src = tp.find("block" + std::to_string(tl) + "." + suffix);
      student.params_.add("block" + std::to_string(s + 1) + "." + suffix, tp[*src]->value);
    }
  }
  student.build_layout();
  return student;
}

void Encoder::freeze() {
  frozen_ = true;
  params_.set_trainable(false);
}

void Encoder::unfreeze() {
  frozen_ = false;
  params_.set_trainable(true);
}

ag::Var Encoder::block_forward(const Block& b, const ag::Var& x,
                               std::span<const unsigned char> mask) const {
  const auto& p = params_;
  const int heads = config_.n_heads;
  const int dh = config_.hidden_dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  const ag::Var h = ag::layer_norm(x, p[b.ln1_gain], p[b.ln1_bias]);
  const ag::Var q = ag::add_row(ag::matmul(h, p[b.wq]), p[b.bq]);
  const ag::Var k = ag::add_row(ag::matmul(h, p[b.wk]), p[b.bk]);
  const ag::Var v = ag::add_row(ag::matmul(h, p[b.wv]), p[b.bv]);
  std::vector<ag::Var> contexts;
  contexts.reserve(static_cast<std::size_t>(heads));
  for (int head = 0; head < heads; ++head) {
    const ag::Var qh = heads == 1 ? q : ag::slice_cols(q, head * dh, dh);
    const ag::Var kh = heads == 1 ? k : ag::slice_cols(k, head * dh, dh);
    const ag::Var vh = heads == 1 ? v : ag::slice_cols(v, head * dh, dh);
    const ag::Var probs = ag::masked_softmax(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt), mask);
    contexts.push_back(ag::matmul(probs, vh));
  }
  const ag::Var context = heads == 1 ? contexts.front() : ag::concat_cols(contexts);
  const ag::Var attn = ag::add_row(ag::matmul(context, p[b.wo]), p[b.bo]);
  const ag::Var x1 = ag::add(x, attn);

  const ag::Var h2 = ag::layer_norm(x1, p[b.ln2_gain], p[b.ln2_bias]);
  const ag::Var inner = ag::gelu(ag::add_row(ag::matmul(h2, p[b.w1]), p[b.b1]));
  const ag::Var ffn = ag::add_row(ag::matmul(inner, p[b.w2]), p[b.b2]);
  return ag::add(x1, ffn);
}

HiddenStates Encoder::encode(std::span<const int> ids, std::span<const unsigned char> mask) const {
  if (ids.size() != mask.size()) throw ConfigError("ids and mask lengths differ");
  if (static_cast<int>(ids.size()) > config_.max_positions) {
    throw ConfigError("sequence longer than max_positions");
  }
  if (!params_.all_finite()) throw NumericError("encoder has non-finite parameters");
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  HiddenStates out;
  ag::Var x = ag::add(ag::embedding(params_[token_embed_], ids),
                      ag::embedding(params_[position_embed_], positions));
  out.layers.push_back(x);
  for (const auto& b : blocks_) {
    x = block_forward(b, x, mask);
    out.layers.push_back(x);
  }
  return out;
}

void Encoder::save(const std::string& path) const {
  nlohmann::json meta{{"kind", "encoder"},
                      {"config", config_.to_json()},
                      {"vocab_size", vocab_size_},
                      {"frozen", frozen_}};
  save_archive(path, meta, params_);
}

Encoder Encoder::load(const std::string& path) {
  const auto meta = read_archive_meta(path);
  if (meta.value("kind", "") != "encoder") throw DataError(path + " is not an encoder archive");
  Encoder enc(EncoderConfig::from_json(meta.at("config")),
              meta.at("vocab_size").get<std::size_t>());
  load_archive(path, enc.params_);
  if (meta.value("frozen", false)) enc.freeze();
  return enc;
}

// ---------------------------------------------------------------------------
// Pooling and representations

ag::Var pool(const HiddenStates& h, std::span<const unsigned char> mask) {
  return ag::masked_mean_rows(h.top(), mask);
}

ag::Var pooled_sequence(const Encoder& encoder, const Vocab& vocab, const Tokens& tokens,
                        std::size_t budget) {
  const TokenizedSequence seq = tokenize(tokens, budget, vocab);
  const std::size_t n = seq.active();
  if (n == 0) return ag::constant(ag::Matrix::Zero(1, encoder.config().hidden_dim));
  // Padding sits at the tail and is masked out of attention and pooling,
  // so only the active prefix is run.
  const std::span<const int> ids(seq.ids.data(), n);
  const std::span<const unsigned char> mask(seq.mask.data(), n);
  return pool(encoder.encode(ids, mask), mask);
}

ag::Var represent_issue(const IssueRecord& issue, const Encoder& encoder, const Vocab& vocab,
                        const TokenBudgets& budgets) {
  const ag::Var s = pooled_sequence(encoder, vocab, issue.text_tokens(), budgets.natural_language);
  const ag::Var parts[] = {s, s};
  return ag::concat_cols(parts);
}

ag::Var represent_commit(const CommitRecord& commit, const Encoder& encoder, const Vocab& vocab,
                         const TokenBudgets& budgets) {
  const ag::Var m =
      pooled_sequence(encoder, vocab, commit.message_tokens, budgets.natural_language);
  const ag::Var c = pooled_sequence(encoder, vocab, commit.code_tokens(), budgets.code);
  const ag::Var parts[] = {m, c};
  return ag::concat_cols(parts);
}

}  // namespace commitlink
