#pragma once

// Shared vocabulary and the bidirectional self-attention encoder used as
// both the frozen teacher and the trainable student.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "commitlink/autograd.hpp"
#include "commitlink/corpus.hpp"

namespace commitlink {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  Vocab();

  // Tokens seen at least `min_freq` times, most frequent first, ties in
  // lexicographic order.
  static Vocab build(std::span<const Tokens> streams, std::size_t min_freq = 2);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  int add(const std::string& token);
  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct TokenizedSequence {
  std::vector<int> ids;
  std::vector<unsigned char> mask;

  std::size_t active() const;
};

// Keeps the first `budget` tokens, maps OOV to UNK and pads to `budget`.
TokenizedSequence tokenize(const Tokens& tokens, std::size_t budget, const Vocab& vocab);

struct EncoderConfig {
  int n_layers = 2;
  int n_heads = 1;
  int hidden_dim = 64;
  int ffn_dim = 0;  // 0 means 4 * hidden_dim
  int max_positions = 256;
  // Multiplies the init std of the attention and FFN output projections,
  // so fresh blocks stay close to the identity on the residual stream.
  double residual_init_scale = 0.1;
  std::uint64_t seed = 0;

  int ffn_width() const { return ffn_dim > 0 ? ffn_dim : 4 * hidden_dim; }
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);

  static EncoderConfig student_defaults();
  static EncoderConfig teacher_defaults();
};

// Ordered named parameters. Copies are deep.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  std::size_t add(std::string name, ag::Matrix init);
  const ag::Var& operator[](std::size_t i) const { return vars_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::size_t size() const { return vars_.size(); }
  std::optional<std::size_t> find(const std::string& name) const;
  const std::vector<ag::Var>& vars() const { return vars_; }

  void set_trainable(bool trainable);
  void zero_grad();
  std::size_t scalar_count() const;
  bool all_finite() const;
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<std::string> names_;
  std::vector<ag::Var> vars_;
};

// Per-layer outputs: layers[0] is the embedding output, layers[l] the
// output of transformer block l (1-based).
struct HiddenStates {
  std::vector<ag::Var> layers;

  int n_layers() const { return static_cast<int>(layers.size()) - 1; }
  const ag::Var& layer(int l) const { return layers.at(static_cast<std::size_t>(l)); }
  const ag::Var& top() const { return layers.back(); }
};

// Pre-LN transformer encoder with learned positions.
class Encoder {
 public:
  Encoder(const EncoderConfig& config, std::size_t vocab_size);

  // Student whose embeddings and blocks are copies of the given teacher
  // blocks (1-based), in order. Head count follows the teacher.
  static Encoder from_teacher_layers(const Encoder& teacher, std::span<const int> teacher_layers);

  HiddenStates encode(std::span<const int> ids, std::span<const unsigned char> mask) const;

  const EncoderConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  bool frozen() const { return frozen_; }
  void freeze();
  void unfreeze();

  void save(const std::string& path) const;
  static Encoder load(const std::string& path);

 private:
  struct Block {
    std::size_t ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_gain, ln2_bias, w1, b1, w2, b2;
  };

  Encoder() = default;
  void build_layout();
  ag::Var block_forward(const Block& b, const ag::Var& x,
                        std::span<const unsigned char> mask) const;

  EncoderConfig config_;
  std::size_t vocab_size_ = 0;
  ParameterStore params_;
  std::size_t token_embed_ = 0;
  std::size_t position_embed_ = 0;
  std::vector<Block> blocks_;
  bool frozen_ = false;
};

// Mean over masked positions of the top layer; zero vector when empty.
ag::Var pool(const HiddenStates& h, std::span<const unsigned char> mask);

struct TokenBudgets {
  std::size_t natural_language = 35;
  std::size_t code = 80;
};

// Encodes one token list under a budget and mean-pools it (1 x d).
ag::Var pooled_sequence(const Encoder& encoder, const Vocab& vocab, const Tokens& tokens,
                        std::size_t budget);

// Issue: pooled(title ++ description) duplicated, 1 x 2d.
ag::Var represent_issue(const IssueRecord& issue, const Encoder& encoder, const Vocab& vocab,
                        const TokenBudgets& budgets = {});

// Commit: pooled(message) followed by pooled(all diff tokens), 1 x 2d.
ag::Var represent_commit(const CommitRecord& commit, const Encoder& encoder, const Vocab& vocab,
                         const TokenBudgets& budgets = {});

// Flat named-tensor archive: a magic line, a one-line JSON manifest
// (metadata plus name/shape/dtype/offset per tensor), then raw float64.
void save_archive(const std::string& path, const nlohmann::json& meta,
                  const ParameterStore& params);
// Fills `params` by name; returns the stored metadata.
nlohmann::json load_archive(const std::string& path, ParameterStore& params);
nlohmann::json read_archive_meta(const std::string& path);

}  // namespace commitlink
