#include "dap/pseudo_labeler.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <set>

#include "dap/checkpoint.hpp"
#include "dap/csv.hpp"
#include "dap/image_io.hpp"

namespace dap {

std::string fill_template(std::string_view tmpl, std::string_view object) {
  static constexpr std::string_view kSlot = "{object}";
  const auto pos = tmpl.find(kSlot);
  if (pos == std::string_view::npos || tmpl.find(kSlot, pos + 1) != std::string_view::npos) {
    throw ContractError("template must contain exactly one {object} slot: '" + std::string(tmpl) + "'");
  }
  std::string out(tmpl);
  out.replace(pos, kSlot.size(), object);
  return out;
}

void DualEncoderConfig::validate() const {
  vision.validate();
  if (shared_width == 0) throw ContractError("dual encoder: shared width must be positive");
  if (!(temperature > 0.0)) throw ContractError("dual encoder: temperature must be positive");
}

DualEncoder::DualEncoder(const DualEncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  vision_ = VisionEncoder(config_.vision, "clip.vision", rng);
  vision_proj_ = Linear("clip.vision_proj", config_.vision.width, config_.shared_width, rng);
  text_ = TextEncoder(config_.text, "clip.text", rng);
  text_proj_ = Linear("clip.text_proj", config_.text.width, config_.shared_width, rng);
}

Var DualEncoder::image_embedding(Tape& tape, const Tensor& image) {
  ImagePatchGrid grid(image, config_.vision.patch);
  return l2_normalize(vision_proj_.forward(tape, vision_.features(tape, grid, std::nullopt)));
}

Var DualEncoder::text_embedding(Tape& tape, const TokenSequence& seq) {
  return l2_normalize(text_proj_.forward(tape, text_.encode(tape, seq)));
}

ParameterList DualEncoder::parameters() {
  ParameterList out = vision_.parameters();
  vision_proj_.collect(out);
  for (auto* p : text_.parameters()) out.push_back(p);
  text_proj_.collect(out);
  return out;
}

Var info_nce(Var image_emb, Var text_emb, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("info_nce: temperature must be positive");
  if (image_emb.rows() != text_emb.rows() || image_emb.cols() != text_emb.cols()) {
    throw ShapeError("info_nce: embeddings " + shape_string(image_emb.value().shape()) + " and " +
                     shape_string(text_emb.value().shape()) + " differ");
  }
  if (image_emb.rows() < 2) throw ContractError("info_nce: batch size must be at least 2");
  std::vector<int> targets(image_emb.rows());
  std::iota(targets.begin(), targets.end(), 0);
  Var logits = scale(matmul_nt(image_emb, text_emb), 1.0 / temperature);
  return scale(add(cross_entropy(logits, targets), cross_entropy(transpose(logits), targets)), 0.5);
}

Tensor jitter_photometric(const Tensor& image, const PhotometricJitter& jitter, Rng& rng) {
  if (image.rank() != 3 || image.shape()[2] != 3) {
    throw ShapeError("jitter_photometric: expected HxWx3 image, got " + shape_string(image.shape()));
  }
  const double saturation = rng.uniform(jitter.saturation_lo, 1.0);
  std::array<double, 3> gain{};
  for (auto& g : gain) g = 1.0 + rng.uniform(-jitter.tint, jitter.tint);
  const double brightness = rng.uniform(jitter.brightness_lo, 1.0);
  Tensor out = image;
  auto& px = out.storage();
  for (std::size_t i = 0; i < px.size(); i += 3) {
    const double gray = (px[i] + px[i + 1] + px[i + 2]) / 3.0;
    for (std::size_t c = 0; c < 3; ++c) {
      px[i + c] = std::clamp((gray + saturation * (px[i + c] - gray)) * gain[c] * brightness, 0.0, 1.0);
    }
  }
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> caption_distinct_batches(const std::vector<ImageTextPair>& pairs,
                                                               std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> remaining(pairs.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  rng.shuffle(remaining);
  std::vector<std::vector<std::size_t>> batches;
  while (!remaining.empty()) {
    std::vector<std::size_t> batch, rest;
    std::set<std::string_view> seen;
    for (std::size_t i : remaining) {
      if (batch.size() < batch_size && seen.insert(pairs[i].text).second) {
        batch.push_back(i);
      } else {
        rest.push_back(i);
      }
    }
    if (batch.size() < 2) break;
    batches.push_back(std::move(batch));
    remaining = std::move(rest);
  }
  return batches;
}

}  // namespace

ContrastiveLog contrastive_train(DualEncoder& model, const Vocabulary& vocab, const std::vector<ImageTextPair>& pairs,
                                 const ContrastiveConfig& config) {
  if (config.batch_size < 2) throw ContractError("contrastive_train: batch size must be at least 2");
  Optimizer optimizer(config.optimizer);
  Rng rng(config.seed);
  auto params = model.parameters();
  std::vector<TokenSequence> tokens;
  for (const auto& p : pairs) tokens.push_back(tokenize(vocab, p.text, model.config().text.max_length));
  ContrastiveLog log;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto& batch : caption_distinct_batches(pairs, config.batch_size, rng)) {
      Tape tape;
      std::vector<Var> images, texts;
      for (std::size_t i : batch) {
        images.push_back(model.image_embedding(
            tape, config.augment ? jitter_photometric(pairs[i].image, *config.augment, rng) : pairs[i].image));
        texts.push_back(model.text_embedding(tape, tokens[i]));
      }
      Var loss = info_nce(concat_seq(images), concat_seq(texts), model.config().temperature);
      tape.backward(loss);
      optimizer.step(params);
      Optimizer::zero_grad(params);
      total += loss.value()[0];
      ++steps;
    }
    log.epoch_loss.push_back(steps ? total / static_cast<double>(steps) : 0.0);
  }
  return log;
}

double retrieval_at_1(DualEncoder& model, const Vocabulary& vocab, const std::vector<ImageTextPair>& pairs) {
  if (pairs.empty()) throw ContractError("retrieval_at_1: no pairs");
  std::vector<std::string> captions;
  for (const auto& p : pairs)
    if (std::find(captions.begin(), captions.end(), p.text) == captions.end()) captions.push_back(p.text);
  Tape tape(false);
  std::vector<Var> rows;
  for (const auto& c : captions) rows.push_back(model.text_embedding(tape, tokenize(vocab, c, model.config().text.max_length)));
  Var table = concat_seq(rows);
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    Var sims = matmul_nt(model.image_embedding(tape, p.image), table);
    const auto s = sims.value().data();
    const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    hits += captions[best] == p.text;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

ZeroShotClassifier::ZeroShotClassifier(DualEncoder& model, const Vocabulary& vocab,
                                       std::vector<std::string> class_names, std::string tmpl)
    : model_(&model), names_(std::move(class_names)) {
  if (names_.empty()) throw ContractError("pseudo_label: class list is empty");
  Tape tape(false);
  std::vector<Var> rows;
  for (const auto& name : names_) {
    captions_.push_back(fill_template(tmpl, name));
    rows.push_back(model.text_embedding(tape, tokenize(vocab, captions_.back(), model.config().text.max_length)));
  }
  text_table_ = concat_seq(rows).value();
}

std::vector<double> ZeroShotClassifier::similarities(const Tensor& image) const {
  Tape tape(false);
  Var img = model_->image_embedding(tape, image);
  Var sims = matmul_nt(img, tape.constant(text_table_));
  auto s = sims.value().data();
  return {s.begin(), s.end()};
}

LabeledPair ZeroShotClassifier::label(const Tensor& image) const {
  const auto sims = similarities(image);
  std::size_t best = 0;
  for (std::size_t c = 1; c < sims.size(); ++c)
    if (sims[c] > sims[best]) best = c;
  return {image, captions_[best], static_cast<int>(best), sims[best]};
}

LabeledPair pseudo_label(DualEncoder& model, const Vocabulary& vocab, const Tensor& image,
                         const std::vector<std::string>& class_names, std::string_view tmpl) {
  return ZeroShotClassifier(model, vocab, class_names, std::string(tmpl)).label(image);
}

IndomainDataset build_indomain_dataset(DualEncoder& model, const Vocabulary& vocab, const std::vector<Tensor>& images,
                                       const std::vector<std::string>& class_names, std::string_view tmpl,
                                       std::size_t count, std::uint64_t seed) {
  if (count > images.size()) {
    throw ContractError("build_indomain_dataset: requested " + std::to_string(count) + " pairs but only " +
                        std::to_string(images.size()) + " images are available");
  }
  IndomainDataset out;
  if (count == 0) return out;
  ZeroShotClassifier classifier(model, vocab, class_names, std::string(tmpl));
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(count);
  for (std::size_t i : order) {
    out.pairs.push_back(classifier.label(images[i]));
    out.source.push_back(i);
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<LabeledPair>& pairs) {
  std::string manifest = csv_row({"image_path", "text", "class_id", "score"});
  for (const auto& p : pairs) {
    const auto png = encode_png(p.image);
    const auto rel = "images/" + sha256_hex(png) + ".png";
    if (!std::filesystem::exists(dir / rel)) write_bytes(dir / rel, png);
    manifest += csv_row({rel, p.text, std::to_string(p.class_id), format_real(p.score)});
  }
  write_text(dir / "manifest.csv", manifest);
}

std::vector<LabeledPair> load_dataset(const std::filesystem::path& dir) {
  const auto table = parse_csv(read_text(dir / "manifest.csv"), {"image_path", "text", "class_id", "score"});
  std::vector<LabeledPair> out;
  for (const auto& row : table.rows) {
    out.push_back({read_png(dir / row[0]), row[1], std::stoi(row[2]), std::stod(row[3])});
  }
  return out;
}

}  // namespace dap
