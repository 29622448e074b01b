#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dap/optim.hpp"
#include "dap/text.hpp"
#include "dap/vision.hpp"

namespace dap {

inline constexpr std::string_view kDefaultTemplate = "A photo of a {object}";

/// Replaces the single "{object}" slot. Throws ContractError unless the
/// template holds exactly one slot.
std::string fill_template(std::string_view tmpl, std::string_view object);

struct DualEncoderConfig {
  VisionBackboneConfig vision{.layers = 2};
  TextEncoderConfig text;
  std::size_t shared_width = 32;  // d_s
  double temperature = 0.1;       // τ

  void validate() const;
};

/// Image and text towers with linear projections into a shared space.
/// Parameter names live under "clip.".
class DualEncoder {
 public:
  DualEncoder() = default;
  DualEncoder(const DualEncoderConfig& config, Rng& rng);

  /// L2-normalized 1 × d_s embeddings.
  Var image_embedding(Tape& tape, const Tensor& image);
  Var text_embedding(Tape& tape, const TokenSequence& seq);

  ParameterList parameters();
  const DualEncoderConfig& config() const { return config_; }

 private:
  DualEncoderConfig config_;
  VisionEncoder vision_;
  Linear vision_proj_;
  TextEncoder text_;
  Linear text_proj_;
};

/// Symmetric InfoNCE over row-aligned B × d_s embeddings: the mean of the
/// image→text and text→image cross-entropies of similarities / τ, where row
/// i of each side is the positive for row i of the other.
Var info_nce(Var image_emb, Var text_emb, double temperature);

struct ImageTextPair {
  Tensor image;
  std::string text;
};

/// Random per-image saturation, per-channel gain and brightness.
struct PhotometricJitter {
  double saturation_lo = 0.55;  // saturation factor drawn from [lo, 1]
  double tint = 0.12;           // per-channel gain drawn from [1 - tint, 1 + tint]
  double brightness_lo = 0.6;   // brightness factor drawn from [lo, 1]
};

Tensor jitter_photometric(const Tensor& image, const PhotometricJitter& jitter, Rng& rng);

struct ContrastiveConfig {
  std::size_t epochs = 8;
  std::size_t batch_size = 12;
  OptimizerConfig optimizer{.lr = 3e-4};
  std::uint64_t seed = 0;
  /// Applied to every training image each time it is drawn; nullopt trains
  /// on the renders as they are.
  std::optional<PhotometricJitter> augment = PhotometricJitter{};
};

struct ContrastiveLog {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Each epoch shuffles the pairs and deals them into batches whose captions
/// are pairwise distinct, so every off-diagonal similarity is a true negative.
/// Pairs that cannot complete a batch of at least two are skipped that epoch.
ContrastiveLog contrastive_train(DualEncoder& model, const Vocabulary& vocab, const std::vector<ImageTextPair>& pairs,
                                 const ContrastiveConfig& config);

/// Fraction of images whose most similar caption (among all given captions)
/// has the same text as their own.
double retrieval_at_1(DualEncoder& model, const Vocabulary& vocab, const std::vector<ImageTextPair>& pairs);

struct LabeledPair {
  Tensor image;
  std::string text;
  int class_id = 0;
  double score = 0.0;  // cosine similarity of the chosen caption

  bool operator==(const LabeledPair&) const = default;
};

/// Normalized caption embeddings, one row per class, for repeated labeling.
class ZeroShotClassifier {
 public:
  ZeroShotClassifier(DualEncoder& model, const Vocabulary& vocab, std::vector<std::string> class_names,
                     std::string tmpl = std::string(kDefaultTemplate));

  LabeledPair label(const Tensor& image) const;
  /// Cosine similarity of the image with every class caption.
  std::vector<double> similarities(const Tensor& image) const;

 private:
  DualEncoder* model_;
  std::vector<std::string> names_;
  std::vector<std::string> captions_;
  Tensor text_table_;  // C × d_s
};

/// Argmax cosine similarity over template-filled class captions; ties go to
/// the lowest class index.
LabeledPair pseudo_label(DualEncoder& model, const Vocabulary& vocab, const Tensor& image,
                         const std::vector<std::string>& class_names, std::string_view tmpl = kDefaultTemplate);

struct IndomainDataset {
  std::vector<LabeledPair> pairs;
  std::vector<std::size_t> source;  // index into the candidate image list, per pair
};

/// Labels `count` images drawn without replacement by a seeded shuffle.
IndomainDataset build_indomain_dataset(DualEncoder& model, const Vocabulary& vocab, const std::vector<Tensor>& images,
                                       const std::vector<std::string>& class_names, std::string_view tmpl,
                                       std::size_t count, std::uint64_t seed);

/// Writes <dir>/manifest.csv (image_path,text,class_id,score) and
/// content-addressed PNGs under <dir>/images/<sha256>.png.
void save_dataset(const std::filesystem::path& dir, const std::vector<LabeledPair>& pairs);
std::vector<LabeledPair> load_dataset(const std::filesystem::path& dir);

}  // namespace dap
