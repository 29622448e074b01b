#include "dap/vision.hpp"

namespace dap {

void VisionBackboneConfig::validate() const {
  if (layers == 0 || width == 0 || patch == 0 || image_size == 0 || channels == 0 || mlp_hidden == 0) {
    throw ContractError("vision config: all extents must be positive");
  }
  if (heads == 0 || width % heads != 0) {
    throw ContractError("vision config: width " + std::to_string(width) + " not divisible by heads " +
                        std::to_string(heads));
  }
  if (image_size % patch != 0) {
    throw ContractError("vision config: image size " + std::to_string(image_size) +
                        " not divisible by patch " + std::to_string(patch));
  }
}

ImagePatchGrid::ImagePatchGrid(Tensor image, std::size_t patch_size)
    : image_(std::move(image)), patch_(patch_size) {
  if (image_.rank() != 3) throw ShapeError("image: expected H×W×C, got " + shape_string(image_.shape()));
  const std::size_t h = image_.shape()[0], w = image_.shape()[1], c = image_.shape()[2];
  if (patch_ == 0 || h % patch_ != 0 || w % patch_ != 0) {
    throw ShapeError("image: " + shape_string(image_.shape()) + " not divisible into " +
                     std::to_string(patch_) + "-pixel patches");
  }
  const std::size_t gh = h / patch_, gw = w / patch_;
  tokens_ = Tensor({gh * gw, patch_ * patch_ * c});
  std::size_t t = 0;
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px, ++t) {
      std::size_t k = 0;
      for (std::size_t y = 0; y < patch_; ++y)
        for (std::size_t x = 0; x < patch_; ++x)
          for (std::size_t ch = 0; ch < c; ++ch, ++k) {
            tokens_.at(t, k) = image_[((py * patch_ + y) * w + (px * patch_ + x)) * c + ch];
          }
    }
  }
}

VisionEncoder::VisionEncoder(const VisionBackboneConfig& config, const std::string& prefix, Rng& rng)
    : config_(config), prefix_(prefix) {
  config_.validate();
  patch_proj_ = Linear(prefix + ".patch", config_.patch_dim(), config_.width, rng);
  cls_ = Parameter(prefix + ".cls", normal_tensor(1, config_.width, 0.02, rng));
  pos_ = Parameter(prefix + ".pos", normal_tensor(1 + config_.tokens(), config_.width, 0.02, rng));
  TransformerLayerConfig lc{config_.width, config_.heads, config_.mlp_hidden};
  for (std::size_t i = 0; i < config_.layers; ++i) {
    layers_.emplace_back(prefix + ".layer" + std::to_string(i + 1), lc, rng);
  }
  norm_ = LayerNorm(prefix + ".norm", config_.width);
}

EncoderState VisionEncoder::embed_image(Tape& tape, const ImagePatchGrid& image) {
  const auto& tok = image.tokens();
  if (image.patch_size() != config_.patch || tok.rows() != config_.tokens() ||
      tok.cols() != config_.patch_dim()) {
    throw ShapeError("embed_image: image tokens " + shape_string(tok.shape()) + " with patch " +
                     std::to_string(image.patch_size()) + ", backbone expects [" +
                     std::to_string(config_.tokens()) + "x" + std::to_string(config_.patch_dim()) + "]");
  }
  Var pos = tape.param(pos_);
  Var cls = add(tape.param(cls_), slice_rows(pos, 0, 1));
  Var patches = add(patch_proj_.forward(tape, tape.constant(tok)), slice_rows(pos, 1, config_.tokens()));
  return EncoderState{cls, tape.constant(Tensor::zeros(0, config_.width)), patches, 0};
}

EncoderState VisionEncoder::encode(Tape& tape, const EncoderState& initial, std::optional<Var> prompts,
                                   const LayerHook& hook) {
  EncoderState state = initial;
  if (prompts) {
    if (prompts->value().rank() != 2 || prompts->cols() != config_.width) {
      throw ShapeError("encode: prompt width " + shape_string(prompts->value().shape()) +
                       " does not match backbone width " + std::to_string(config_.width));
    }
    state.prompts = *prompts;
  }
  const std::size_t k = state.prompts.rows();
  const std::size_t m = state.patches.rows();
  for (auto& layer : layers_) {
    Var seq = concat_seq({state.cls, state.prompts, state.patches});
    Var out = layer.forward(tape, seq);
    EncoderState next{slice_rows(out, 0, 1), slice_rows(out, 1, k), slice_rows(out, 1 + k, m),
                      state.layer_index + 1};
    if (hook) hook(next.layer_index, state, next);
    state = next;
  }
  return state;
}

Var VisionEncoder::pooled(Tape& tape, const EncoderState& final_state) {
  return norm_.forward(tape, final_state.cls);
}

Var VisionEncoder::features(Tape& tape, const ImagePatchGrid& image, std::optional<Var> prompts) {
  return pooled(tape, encode(tape, embed_image(tape, image), prompts));
}

ParameterList VisionEncoder::parameters() {
  ParameterList out;
  patch_proj_.collect(out);
  out.push_back(&cls_);
  out.push_back(&pos_);
  for (auto& l : layers_) l.collect(out);
  norm_.collect(out);
  return out;
}

}  // namespace dap
