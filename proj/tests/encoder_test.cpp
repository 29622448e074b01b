#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "dap/checkpoint.hpp"
#include "dap/text.hpp"
#include "dap/vision.hpp"
#include "dap/world.hpp"
#include "support/gradcheck.hpp"

namespace dap {
namespace {

VisionBackboneConfig small_vision() {
  return {.layers = 2, .width = 8, .heads = 2, .patch = 4, .image_size = 8, .channels = 3, .mlp_hidden = 16};
}

Tensor random_image(std::size_t size, Rng& rng) {
  Tensor t({size, size, 3});
  for (auto& v : t.storage()) v = rng.uniform();
  return t;
}

std::vector<double> values(Var v) {
  const auto& s = v.value().storage();
  return {s.begin(), s.end()};
}

TEST(ImagePatchGrid, TokenLayout) {
  Tensor img({4, 4, 3});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<double>(i);
  const ImagePatchGrid grid(img, 2);
  ASSERT_EQ(grid.token_count(), 4u);
  ASSERT_EQ(grid.tokens().cols(), 12u);
  // Patch 1 is rows 0..1, columns 2..3.
  EXPECT_EQ(grid.tokens().at(1, 0), img[(0 * 4 + 2) * 3]);
  EXPECT_EQ(grid.tokens().at(1, 3), img[(0 * 4 + 3) * 3]);
  EXPECT_EQ(grid.tokens().at(1, 6), img[(1 * 4 + 2) * 3]);
  EXPECT_EQ(grid.tokens().at(3, 11), img[(3 * 4 + 3) * 3 + 2]);
  EXPECT_THROW(ImagePatchGrid(Tensor({5, 4, 3}), 2), ShapeError);
  EXPECT_THROW(ImagePatchGrid(Tensor({4, 12}), 2), ShapeError);
}

TEST(VisionConfig, Validation) {
  VisionBackboneConfig c;
  EXPECT_EQ(c.tokens(), 16u);
  c.heads = 3;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.patch = 5;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(EmbedImage, DefaultImageGivesSixteenTokens) {
  Rng rng(1);
  VisionEncoder enc(VisionBackboneConfig{}, "backbone", rng);
  Tape tape(false);
  const auto s = enc.embed_image(tape, ImagePatchGrid(random_image(16, rng), 4));
  EXPECT_EQ(s.patches.rows(), 16u);
  EXPECT_EQ(s.patches.cols(), 64u);
  EXPECT_EQ(s.prompt_count(), 0u);
  EXPECT_EQ(s.layer_index, 0u);
  EXPECT_EQ(s.sequence_length(), 17u);
  EXPECT_THROW(enc.embed_image(tape, ImagePatchGrid(random_image(8, rng), 4)), ShapeError);
}

TEST(EmbedImage, ZeroImageIsPositionPlusBias) {
  Rng rng(2);
  VisionEncoder enc(small_vision(), "backbone", rng);
  NamedTensors p = collect(enc.parameters());
  const Tensor& pos = p.at("backbone.pos");
  const Tensor& bias = p.at("backbone.patch.b");
  const Tensor& cls = p.at("backbone.cls");
  Tape tape(false);
  const auto s = enc.embed_image(tape, ImagePatchGrid(Tensor({8, 8, 3}), 4));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(s.patches.value().at(r, c), pos.at(r + 1, c) + bias.at(0, c));
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(s.cls.value().at(0, c), cls.at(0, c) + pos.at(0, c));
}

TEST(EmbedImage, GoldenReplay) {
  const std::filesystem::path golden = std::filesystem::path(DAP_TEST_DATA_DIR) / "embed_golden.ckpt";
  Rng rng(20240601);
  VisionEncoder enc(VisionBackboneConfig{}, "backbone", rng);
  const Tensor image = render_object_view(2, 3, RenderStyle::indomain(), rng);
  Tape tape(false);
  const auto s = enc.embed_image(tape, ImagePatchGrid(image, 4));
  NamedTensors out{{"x0", s.cls.value()}, {"e0", s.patches.value()}};
  if (std::getenv("DAP_WRITE_GOLDEN")) save_checkpoint(golden, out, "golden", 20240601);
  ASSERT_TRUE(std::filesystem::exists(golden)) << golden;
  EXPECT_EQ(load_checkpoint(golden), out);
}

struct Fixture {
  VisionEncoder enc;
  Tensor image;
  Fixture(std::uint64_t seed, VisionBackboneConfig cfg = small_vision()) {
    Rng rng(seed);
    enc = VisionEncoder(cfg, "backbone", rng);
    image = random_image(cfg.image_size, rng);
  }
};

TEST(Encode, SequenceLengthWithTenPrompts) {
  Fixture f(3, VisionBackboneConfig{});
  Rng rng(4);
  Tape tape(false);
  Var prompts = tape.constant(testing::random_tensor(10, 64, rng));
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> indices;
  const auto out = f.enc.encode(tape, f.enc.embed_image(tape, ImagePatchGrid(f.image, 4)), prompts,
                                [&](std::size_t i, const EncoderState& in, const EncoderState& o) {
                                  indices.push_back(i);
                                  EXPECT_EQ(o.layer_index, in.layer_index + 1);
                                  lengths.push_back(o.sequence_length());
                                });
  EXPECT_EQ(indices, (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_EQ(lengths, (std::vector<std::size_t>(4, 27)));
  EXPECT_EQ(out.layer_index, 4u);
  EXPECT_EQ(out.prompt_count(), 10u);
}

TEST(Encode, HookSeesLayerRecurrence) {
  Fixture f(5);
  Rng rng(6);
  Tape tape(false);
  Var prompts = tape.constant(testing::random_tensor(3, 8, rng));
  std::vector<EncoderState> inputs, outputs;
  f.enc.encode(tape, f.enc.embed_image(tape, ImagePatchGrid(f.image, 4)), prompts,
               [&](std::size_t, const EncoderState& in, const EncoderState& o) {
                 inputs.push_back(in);
                 outputs.push_back(o);
               });
  ASSERT_EQ(outputs.size(), 2u);
  EXPECT_EQ(values(inputs[0].prompts), values(prompts));
  EXPECT_EQ(values(inputs[1].cls), values(outputs[0].cls));
  for (std::size_t i = 0; i < 2; ++i) {
    Tape replay(false);
    Var seq = concat_seq({replay.constant(inputs[i].cls.value()), replay.constant(inputs[i].prompts.value()),
                          replay.constant(inputs[i].patches.value())});
    Var expect = f.enc.layer(i + 1).forward(replay, seq);
    Var got = concat_seq({replay.constant(outputs[i].cls.value()), replay.constant(outputs[i].prompts.value()),
                          replay.constant(outputs[i].patches.value())});
    EXPECT_EQ(values(expect), values(got)) << "layer " << i + 1;
  }
}

TEST(Encode, EmptyPromptsMatchPlainTransformer) {
  Fixture f(7);
  Tape tape(false);
  const auto s0 = f.enc.embed_image(tape, ImagePatchGrid(f.image, 4));
  const auto a = f.enc.encode(tape, s0, std::nullopt);
  const auto b = f.enc.encode(tape, s0, tape.constant(Tensor::zeros(0, 8)));
  Var x = concat_seq({s0.cls, s0.patches});
  for (std::size_t i = 1; i <= 2; ++i) x = f.enc.layer(i).forward(tape, x);
  EXPECT_EQ(values(concat_seq({a.cls, a.patches})), values(x));
  EXPECT_EQ(values(concat_seq({b.cls, b.patches})), values(x));
}

TEST(Encode, PromptPermutationEquivariance) {
  Fixture f(8);
  Rng rng(9);
  const Tensor p = testing::random_tensor(4, 8, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor q({4, 8});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 8; ++c) q.at(r, c) = p.at(perm[r], c);
  Tape tape(false);
  const auto s0 = f.enc.embed_image(tape, ImagePatchGrid(f.image, 4));
  const auto a = f.enc.encode(tape, s0, tape.constant(p));
  const auto b = f.enc.encode(tape, s0, tape.constant(q));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      EXPECT_NEAR(b.prompts.value().at(r, c), a.prompts.value().at(perm[r], c), 1e-12);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(b.cls.value().at(0, c), a.cls.value().at(0, c), 1e-12);
}

TEST(Encode, WrongPromptWidthIsShapeError) {
  Fixture f(10);
  Tape tape(false);
  const auto s0 = f.enc.embed_image(tape, ImagePatchGrid(f.image, 4));
  EXPECT_THROW(f.enc.encode(tape, s0, tape.constant(Tensor({2, 7}))), ShapeError);
}

TEST(Encode, HeadOutputGradientWrtPromptsMatchesFiniteDifferences) {
  Rng rng(11);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Fixture f(seed);
    const Tensor w = testing::random_tensor(8, 1, rng);
    const ImagePatchGrid grid(f.image, 4);
    const double err = testing::check_leaves({testing::random_tensor(3, 8, rng)}, [&](Tape& tape, const std::vector<Var>& p) {
      return sum(matmul(f.enc.features(tape, grid, p[0]), tape.constant(w)));
    });
    EXPECT_LT(err, 1e-5) << "seed " << seed;
  }
}

Vocabulary vocab() { return Vocabulary(grammar_words()); }

TEST(Vocabulary, DenseIdsWithSpecials) {
  const auto v = vocab();
  EXPECT_EQ(v.token(Vocabulary::kPad), "[pad]");
  EXPECT_EQ(v.token(Vocabulary::kUnk), "[unk]");
  EXPECT_EQ(v.token(Vocabulary::kCls), "[cls]");
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(static_cast<int>(i))), static_cast<int>(i));
  EXPECT_EQ(v.id("zebra"), Vocabulary::kUnk);
  EXPECT_THROW(v.token(static_cast<int>(v.size())), ContractError);
  EXPECT_EQ(Vocabulary({"b", "a", "b"}), Vocabulary({"a", "b"}));
}

TEST(Vocabulary, SerializationRoundTrip) {
  const auto v = vocab();
  const auto text = v.serialize();
  EXPECT_EQ(text.substr(0, text.find('\n')), "[pad]\t0");
  EXPECT_EQ(Vocabulary::deserialize(text), v);
  EXPECT_THROW(Vocabulary::deserialize("a\t0\n"), ContractError);
  EXPECT_THROW(Vocabulary::deserialize("no tab\n"), ContractError);
}

TEST(Tokenize, TemplateSentence) {
  const auto v = vocab();
  const auto seq = tokenize(v, "A photo of a chair");
  EXPECT_EQ(seq.ids, (std::vector<int>{Vocabulary::kCls, v.id("a"), v.id("photo"), v.id("of"), v.id("a"), v.id("chair")}));
  EXPECT_EQ(tokenize(v, "").ids, std::vector<int>{Vocabulary::kCls});
  EXPECT_EQ(tokenize(v, "Walk to the KITCHEN, stop.").ids,
            (std::vector<int>{Vocabulary::kCls, v.id("walk"), v.id("to"), v.id("the"), v.id("kitchen"), v.id(","),
                              v.id("stop"), v.id(".")}));
  EXPECT_EQ(tokenize(v, "[pad] [cls]").ids, (std::vector<int>{Vocabulary::kCls, Vocabulary::kUnk, Vocabulary::kUnk}));
  EXPECT_EQ(tokenize(v, "a a a a a", 3).ids.size(), 3u);
}

TEST(Tokenize, DetokenizeIsIdempotent) {
  const auto v = vocab();
  Rng rng(12);
  const auto words = grammar_words();
  std::vector<std::string> samples{"", "  Hello,world!! ", "find the LAMP in the office .", "x;y:z?"};
  for (int i = 0; i < 200; ++i) {
    std::string s;
    const auto n = rng.below(12);
    for (std::size_t k = 0; k < n; ++k) {
      s += rng.below(5) == 0 ? "Qq" : words[rng.below(words.size())];
      s += rng.below(3) == 0 ? "" : " ";
    }
    samples.push_back(s);
  }
  for (const auto& s : samples) {
    const auto t = tokenize(v, s);
    EXPECT_EQ(tokenize(v, detokenize(v, t)), t) << s;
  }
}

TEST(TokenSequence, PadOnlyAsSuffix) {
  TokenSequence s{{Vocabulary::kCls, 5, Vocabulary::kPad, 6}, 40};
  EXPECT_THROW(s.active_length(), ContractError);
  s.ids = {Vocabulary::kCls, 5, Vocabulary::kPad};
  EXPECT_EQ(s.active_length(), 2u);
}

struct TextFixture {
  Vocabulary v = vocab();
  TextEncoder enc;
  explicit TextFixture(std::uint64_t seed, std::size_t width = 64) {
    Rng rng(seed);
    enc = TextEncoder({.vocab_size = v.size(), .width = width, .layers = 2, .heads = 4, .mlp_hidden = 2 * width,
                       .max_length = 40},
                      "text", rng);
  }
  std::vector<double> embed(const TokenSequence& s) {
    Tape tape(false);
    return values(enc.encode(tape, s));
  }
};

TEST(EncodeText, DeterministicAndPadInvariant) {
  TextFixture f(13);
  const auto seq = tokenize(f.v, "go to the bedroom , stop near the bed .");
  const auto e = f.embed(seq);
  EXPECT_EQ(e.size(), 64u);
  EXPECT_EQ(f.embed(seq), e);
  EXPECT_EQ(f.embed(seq.padded(40)), e);
  EXPECT_EQ(f.embed(seq.padded(seq.ids.size() + 1)), e);
}

TEST(EncodeText, OverLengthIsContractError) {
  TextFixture f(14);
  TokenSequence s;
  s.ids.assign(41, f.v.id("a"));
  s.ids[0] = Vocabulary::kCls;
  EXPECT_THROW(f.embed(s), ContractError);
  EXPECT_THROW(f.embed(TokenSequence{{Vocabulary::kPad}, 40}), ContractError);
}

TEST(EncodeText, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TextFixture f(seed, 8);
    const auto seq = tokenize(f.v, "find the sofa in the lounge .").padded(12);
    auto params = f.enc.parameters();
    const double err = testing::check_params(
        params, [&](Tape& tape) { return testing::project(tape, f.enc.encode(tape, seq), seed); }, 40, rng);
    EXPECT_LT(err, 1e-5) << "seed " << seed;
  }
}

}  // namespace
}  // namespace dap
