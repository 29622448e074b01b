#include "dap/text.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace dap {

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  tokens_ = {std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken)};
  std::set<std::string> unique;
  for (const auto& w : words) {
    if (w.empty() || w == kPadToken || w == kUnkToken || w == kClsToken) continue;
    unique.insert(w);
  }
  tokens_.insert(tokens_.end(), unique.begin(), unique.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<int>(i));
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return ids_.find(token) != ids_.end(); }

std::string Vocabulary::serialize() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << '\t' << i << '\n';
  return os.str();
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<std::pair<int, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ContractError("vocabulary: malformed line '" + line + "'");
    rows.emplace_back(std::stoi(line.substr(tab + 1)), line.substr(0, tab));
  }
  std::sort(rows.begin(), rows.end());
  std::vector<std::string> words;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != static_cast<int>(i)) throw ContractError("vocabulary: ids are not dense");
    words.push_back(rows[i].second);
  }
  Vocabulary v(words);
  if (v.tokens_.size() != words.size() || !std::equal(words.begin(), words.end(), v.tokens_.begin())) {
    throw ContractError("vocabulary: file is not in canonical order");
  }
  return v;
}

std::size_t TokenSequence::active_length() const {
  auto it = std::find(ids.begin(), ids.end(), Vocabulary::kPad);
  const auto n = static_cast<std::size_t>(it - ids.begin());
  if (std::any_of(it, ids.end(), [](int i) { return i != Vocabulary::kPad; })) {
    throw ContractError("token sequence: PAD followed by a non-PAD id");
  }
  return n;
}

TokenSequence TokenSequence::padded(std::size_t length) const {
  TokenSequence out = *this;
  if (length > out.ids.size()) out.ids.resize(length, Vocabulary::kPad);
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  static constexpr std::string_view kPunct = ",.!?;:";
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (kPunct.find(ch) != std::string_view::npos) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

TokenSequence tokenize(const Vocabulary& vocab, std::string_view text, std::size_t max_length) {
  TokenSequence seq;
  seq.max_length = max_length;
  seq.ids.push_back(Vocabulary::kCls);
  for (const auto& w : split_words(text)) {
    if (seq.ids.size() >= max_length) break;
    int id = vocab.id(w);
    if (id == Vocabulary::kPad || id == Vocabulary::kCls) id = Vocabulary::kUnk;
    seq.ids.push_back(id);
  }
  return seq;
}

std::string detokenize(const Vocabulary& vocab, const TokenSequence& seq) {
  std::string out;
  for (int id : seq.ids) {
    if (id == Vocabulary::kCls || id == Vocabulary::kPad) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

TextEncoder::TextEncoder(const TextEncoderConfig& config, const std::string& prefix, Rng& rng)
    : config_(config) {
  if (config_.vocab_size == 0 || config_.width == 0 || config_.max_length == 0) {
    throw ContractError("text config: vocab size, width and max length must be positive");
  }
  embed_ = Parameter(prefix + ".tok", normal_tensor(config_.vocab_size, config_.width, 0.1, rng));
  pos_ = Parameter(prefix + ".pos", normal_tensor(config_.max_length, config_.width, 0.02, rng));
  TransformerLayerConfig lc{config_.width, config_.heads, config_.mlp_hidden};
  for (std::size_t i = 0; i < config_.layers; ++i) {
    layers_.emplace_back(prefix + ".layer" + std::to_string(i + 1), lc, rng);
  }
  norm_ = LayerNorm(prefix + ".norm", config_.width);
}

Var TextEncoder::token_states(Tape& tape, const TokenSequence& seq) {
  if (seq.ids.size() > config_.max_length) {
    throw ContractError("encode_text: sequence of " + std::to_string(seq.ids.size()) +
                        " ids exceeds max length " + std::to_string(config_.max_length));
  }
  const std::size_t n = seq.active_length();
  if (n == 0) throw ContractError("encode_text: sequence has no tokens");
  std::vector<int> ids(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(n));
  Var x = add(embedding_lookup(tape.param(embed_), ids), slice_rows(tape.param(pos_), 0, n));
  for (auto& layer : layers_) x = layer.forward(tape, x);
  return norm_.forward(tape, x);
}

Var TextEncoder::encode(Tape& tape, const TokenSequence& seq) { return mean_pool(token_states(tape, seq)); }

ParameterList TextEncoder::parameters() {
  ParameterList out{&embed_, &pos_};
  for (auto& l : layers_) l.collect(out);
  norm_.collect(out);
  return out;
}

}  // namespace dap
