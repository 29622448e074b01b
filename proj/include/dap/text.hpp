#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dap/layers.hpp"

namespace dap {

/// Closed token alphabet. Ids are dense from 0: PAD=0, UNK=1, CLS=2, then
/// the corpus words in lexicographic order.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr std::string_view kPadToken = "[pad]";
  static constexpr std::string_view kUnkToken = "[unk]";
  static constexpr std::string_view kClsToken = "[cls]";

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }

  /// "token<TAB>id" lines in id order.
  std::string serialize() const;
  static Vocabulary deserialize(std::string_view text);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> ids_;
};

/// Token ids starting with CLS; PAD may only appear as a suffix.
struct TokenSequence {
  std::vector<int> ids;
  std::size_t max_length = 40;

  /// Number of leading non-PAD ids.
  std::size_t active_length() const;
  /// Copy right-padded with PAD to `length` ids.
  TokenSequence padded(std::size_t length) const;
  bool operator==(const TokenSequence& other) const { return ids == other.ids; }
};

/// Lowercases and splits on whitespace; each of , . ! ? ; : is its own token.
std::vector<std::string> split_words(std::string_view text);

/// CLS followed by the word ids (OOV -> UNK), truncated to max_length.
TokenSequence tokenize(const Vocabulary& vocab, std::string_view text, std::size_t max_length = 40);
/// Words joined by single spaces; CLS and PAD dropped.
std::string detokenize(const Vocabulary& vocab, const TokenSequence& seq);

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t width = 64;  // d_t
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;
  std::size_t max_length = 40;
};

/// Token + positional embedding, pre-norm transformer layers, final norm,
/// mean pool over non-PAD positions.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextEncoderConfig& config, const std::string& prefix, Rng& rng);

  /// Per-token states (active_length × d_t). PAD positions are dropped before
  /// the first layer, which is exactly equivalent to masking a PAD suffix.
  Var token_states(Tape& tape, const TokenSequence& seq);
  /// 1 × d_t sentence embedding.
  Var encode(Tape& tape, const TokenSequence& seq);

  ParameterList parameters();
  const TextEncoderConfig& config() const { return config_; }

 private:
  TextEncoderConfig config_;
  Parameter embed_;
  Parameter pos_;
  std::vector<TransformerLayer> layers_;
  LayerNorm norm_;
};

}  // namespace dap
