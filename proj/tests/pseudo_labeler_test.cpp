#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "dap/checkpoint.hpp"
#include "dap/pseudo_labeler.hpp"
#include "dap/world.hpp"
#include "support/gradcheck.hpp"

namespace dap {
namespace {

Vocabulary caption_vocab() { return Vocabulary(grammar_words()); }

DualEncoderConfig tiny_config(const Vocabulary& vocab) {
  DualEncoderConfig c;
  c.vision = {.layers = 1, .width = 8, .heads = 2, .patch = 4, .image_size = 8, .channels = 3, .mlp_hidden = 16};
  c.text = {.vocab_size = vocab.size(), .width = 8, .layers = 1, .heads = 2, .mlp_hidden = 16, .max_length = 12};
  c.shared_width = 4;
  return c;
}

Tensor random_image(std::size_t size, Rng& rng) {
  Tensor t({size, size, 3});
  for (auto& v : t.storage()) v = rng.uniform();
  return t;
}

std::vector<ImageTextPair> web_pairs(std::size_t n, std::uint64_t seed) {
  std::vector<ImageTextPair> out;
  const auto classes = label_classes();
  for (auto& v : sample_views(n, RenderStyle::web(), seed))
    out.push_back({v.image, fill_template(kDefaultTemplate, classes[static_cast<std::size_t>(v.label)])});
  return out;
}

TEST(Template, FillsSingleSlot) {
  EXPECT_EQ(fill_template(kDefaultTemplate, "chair"), "A photo of a chair");
  EXPECT_THROW(fill_template("no slot", "chair"), ContractError);
  EXPECT_THROW(fill_template("{object} and {object}", "chair"), ContractError);
}

TEST(InfoNce, OrthogonalEmbeddingsGiveLnTwo) {
  Tape tape;
  Var img = tape.constant(Tensor({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0}));
  Var txt = tape.constant(Tensor({2, 4}, {0, 0, 1, 0, 0, 0, 0, 1}));
  EXPECT_NEAR(info_nce(img, txt, 0.1).value()[0], std::log(2.0), 1e-12);
}

TEST(InfoNce, FlatSoftmaxLimitHasVanishingGradient) {
  Rng rng(2);
  for (double tau : {1.0, 1e4, 1e8}) {
    Tape tape;
    Var a = tape.leaf(testing::random_tensor(4, 3, rng));
    Var b = tape.leaf(testing::random_tensor(4, 3, rng));
    Var loss = info_nce(l2_normalize(a), l2_normalize(b), tau);
    tape.backward(loss);
    if (tau > 1e7) {
      EXPECT_NEAR(loss.value()[0], std::log(4.0), 1e-7);
    }
    double largest = 0.0;
    for (Var leaf : {a, b})
      for (double g : leaf.grad()) largest = std::max(largest, std::abs(g));
    if (tau > 1e7) {
      EXPECT_LT(largest, 1e-7);
    } else if (tau == 1.0) {
      EXPECT_GT(largest, 1e-3);
    }
  }
}

TEST(InfoNce, RejectsDegenerateInput) {
  Tape tape;
  Var one = tape.constant(Tensor({1, 2}, {1, 0}));
  EXPECT_THROW(info_nce(one, one, 0.1), ContractError);
  Var two = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  EXPECT_THROW(info_nce(two, two, 0.0), ContractError);
  Var wide = tape.constant(Tensor({2, 3}, {1, 0, 0, 0, 1, 0}));
  EXPECT_THROW(info_nce(two, wide, 0.1), ShapeError);
}

TEST(DualEncoder, GradientMatchesFiniteDifferences) {
  const auto vocab = caption_vocab();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    DualEncoder model(tiny_config(vocab), rng);
    std::vector<Tensor> images;
    for (int i = 0; i < 3; ++i) images.push_back(random_image(8, rng));
    const std::vector<std::string> texts = {"a photo of a chair", "a photo of a kitchen", "the lamp"};
    auto loss = [&](Tape& tape) {
      std::vector<Var> im, tx;
      for (std::size_t i = 0; i < 3; ++i) {
        im.push_back(model.image_embedding(tape, images[i]));
        tx.push_back(model.text_embedding(tape, tokenize(vocab, texts[i], 12)));
      }
      return info_nce(concat_seq(im), concat_seq(tx), 0.5);
    };
    EXPECT_LT(testing::check_params(model.parameters(), loss, 30, rng), 1e-5) << "seed " << seed;
  }
}

TEST(ContrastiveTrain, RejectsBatchOfOne) {
  const auto vocab = caption_vocab();
  Rng rng(1);
  DualEncoder model(tiny_config(vocab), rng);
  ContrastiveConfig c;
  c.batch_size = 1;
  EXPECT_THROW(contrastive_train(model, vocab, {}, c), ContractError);
}

TEST(ContrastiveTrain, LossDecreasesAndRetrievalBeatsThreshold) {
  const auto vocab = caption_vocab();
  DualEncoderConfig config;
  config.text.vocab_size = vocab.size();
  Rng rng(1);
  DualEncoder model(config, rng);
  ContrastiveConfig c;
  c.epochs = 10;
  c.seed = 4;
  c.optimizer.lr = 3e-4;
  auto log = contrastive_train(model, vocab, web_pairs(200, 10), c);
  ASSERT_EQ(log.epoch_loss.size(), 10u);
  EXPECT_LT(log.epoch_loss.back(), log.epoch_loss.front());
  // Threshold from the committed retrieval pilot (scripts/pilot.sh).
  EXPECT_GT(retrieval_at_1(model, vocab, web_pairs(50, 11)), 0.5);
}

TEST(ContrastiveTrain, IsDeterministic) {
  const auto vocab = caption_vocab();
  auto run = [&] {
    Rng rng(3);
    DualEncoder model(tiny_config(vocab), rng);
    ContrastiveConfig c;
    c.epochs = 2;
    c.seed = 9;
    std::vector<ImageTextPair> pairs;
    Rng data(5);
    for (int i = 0; i < 8; ++i) pairs.push_back({random_image(8, data), i % 2 ? "a chair" : "a lamp"});
    contrastive_train(model, vocab, pairs, c);
    return parameter_digest(model.parameters());
  };
  EXPECT_EQ(run(), run());
}

class ZeroShot : public ::testing::Test {
 protected:
  Vocabulary vocab = caption_vocab();
  Rng rng{7};
  DualEncoder model{tiny_config(vocab), rng};
};

TEST_F(ZeroShot, SingleClassReturnsThatClassWithItsCosine) {
  const auto image = random_image(8, rng);
  const auto pair = pseudo_label(model, vocab, image, {"lamp"});
  EXPECT_EQ(pair.class_id, 0);
  EXPECT_EQ(pair.text, "A photo of a lamp");
  Tape tape(false);
  Var sim = matmul_nt(model.image_embedding(tape, image), model.text_embedding(tape, tokenize(vocab, pair.text, 12)));
  EXPECT_NEAR(pair.score, sim.value()[0], 1e-15);
  EXPECT_THROW(pseudo_label(model, vocab, image, {}), ContractError);
}

TEST_F(ZeroShot, PermutingClassesKeepsTheChosenName) {
  auto classes = label_classes();
  for (int trial = 0; trial < 20; ++trial) {
    const auto image = random_image(8, rng);
    const auto base = pseudo_label(model, vocab, image, classes);
    auto shuffled = classes;
    rng.shuffle(shuffled);
    const auto again = pseudo_label(model, vocab, image, shuffled);
    EXPECT_EQ(again.text, base.text);
    EXPECT_EQ(shuffled[static_cast<std::size_t>(again.class_id)], classes[static_cast<std::size_t>(base.class_id)]);
    EXPECT_EQ(again.score, base.score);
  }
}

TEST_F(ZeroShot, TiesGoToTheLowestIndex) {
  const auto image = random_image(8, rng);
  const auto pair = pseudo_label(model, vocab, image, {"chair", "lamp", "chair", "lamp"});
  EXPECT_LT(pair.class_id, 2);
}

TEST_F(ZeroShot, CosinesLieInUnitInterval) {
  ZeroShotClassifier zs(model, vocab, label_classes());
  for (int trial = 0; trial < 20; ++trial) {
    for (double s : zs.similarities(random_image(8, rng))) {
      EXPECT_GE(s, -1.0 - 1e-9);
      EXPECT_LE(s, 1.0 + 1e-9);
    }
  }
}

TEST_F(ZeroShot, LabelIsAPureFunction) {
  const auto image = random_image(8, rng);
  EXPECT_EQ(pseudo_label(model, vocab, image, label_classes()), pseudo_label(model, vocab, image, label_classes()));
}

std::vector<Tensor> candidate_images(std::size_t n, Rng& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_image(8, rng));
  return out;
}

TEST_F(ZeroShot, DatasetHasRequestedSizeAndIsDeterministic) {
  const auto images = candidate_images(30, rng);
  auto a = build_indomain_dataset(model, vocab, images, label_classes(), kDefaultTemplate, 20, 4);
  auto b = build_indomain_dataset(model, vocab, images, label_classes(), kDefaultTemplate, 20, 4);
  ASSERT_EQ(a.pairs.size(), 20u);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_EQ(a.source, b.source);
  auto sorted = a.source;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  for (std::size_t i = 0; i < a.pairs.size(); ++i) EXPECT_EQ(a.pairs[i].image, images[a.source[i]]);
  EXPECT_THROW(build_indomain_dataset(model, vocab, images, label_classes(), kDefaultTemplate, 31, 4), ContractError);
}

TEST_F(ZeroShot, ManifestRoundTripsLosslessly) {
  const auto dir = std::filesystem::temp_directory_path() / "dap_manifest_test";
  std::filesystem::remove_all(dir);
  std::vector<Tensor> images;
  for (auto& v : sample_views(15, RenderStyle::indomain(), 3)) images.push_back(v.image);
  DualEncoderConfig c = tiny_config(vocab);
  c.vision.image_size = 16;
  DualEncoder m(c, rng);
  auto data = build_indomain_dataset(m, vocab, images, label_classes(), kDefaultTemplate, 15, 1);
  save_dataset(dir / "full", data.pairs);
  EXPECT_EQ(load_dataset(dir / "full"), data.pairs);

  auto empty = build_indomain_dataset(m, vocab, images, label_classes(), kDefaultTemplate, 0, 1);
  EXPECT_TRUE(empty.pairs.empty());
  save_dataset(dir / "empty", empty.pairs);
  EXPECT_EQ(read_text(dir / "empty" / "manifest.csv"), "image_path,text,class_id,score\n");
  EXPECT_TRUE(load_dataset(dir / "empty").empty());
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace dap
