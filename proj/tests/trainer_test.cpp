#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "courier/common/codec.hpp"
#include "courier/error.hpp"
#include "courier/synthgen/synthgen.hpp"
#include "courier/trainer/trainer.hpp"

using namespace courier;
using namespace courier::train;
using diff::Tensor;

namespace {

synth::DatasetSplit small_dataset() {
  synth::DatasetConfig dc;
  dc.catalog.num_items = 150;
  dc.catalog.feature_dim = 16;
  dc.num_train = 120;
  dc.num_test = 20;
  return synth::build_dataset(dc, 3);
}

model::PretrainConfig small_config() {
  model::PretrainConfig c;
  c.d = 8;
  c.hidden = {12};
  c.batch_size = 16;
  c.epochs = 2;
  c.uniformity_sample = 40;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("courier_trainer_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Tensor p = Tensor::vector({1.0, -2.0, 3.0});
  Tensor* params[] = {&p};
  std::vector<Tensor> grads{Tensor({3})};
  AdamState st;
  adam_step(params, grads, st, {.lr = 0.1});
  EXPECT_EQ(p, Tensor::vector({1.0, -2.0, 3.0}));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepOnLinearObjective) {
  // f(theta) = theta: g = 1, m_hat = 1, v_hat = 1, step = lr * 1 / (1 + eps).
  Tensor p = Tensor::scalar(0.0);
  Tensor* params[] = {&p};
  std::vector<Tensor> grads{Tensor::scalar(1.0)};
  AdamState st;
  adam_step(params, grads, st, {.lr = 0.1});
  EXPECT_NEAR(p.item(), -0.1, 1e-8);
}

TEST(Adam, MatchesHandRolledRecurrenceWithoutDecay) {
  Tensor p = Tensor::scalar(0.5);
  Tensor* params[] = {&p};
  AdamState st;
  double theta = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2.0 * theta - 1.0;
    std::vector<Tensor> grads{Tensor::scalar(2.0 * p.item() - 1.0)};
    adam_step(params, grads, st, {.lr = 0.05});
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.item(), theta, 1e-15);
  }
}

TEST(Adam, WeightDecayActsAsGradientTerm) {
  Tensor a = Tensor::scalar(2.0), b = Tensor::scalar(2.0);
  Tensor* pa[] = {&a};
  Tensor* pb[] = {&b};
  AdamState sa, sb;
  adam_step(pa, std::vector<Tensor>{Tensor::scalar(0.0)}, sa, {.lr = 0.1, .weight_decay = 0.5});
  adam_step(pb, std::vector<Tensor>{Tensor::scalar(1.0)}, sb, {.lr = 0.1});
  EXPECT_EQ(a, b);
}

TEST(Adam, ShapeMismatchIsContractError) {
  Tensor p({2});
  Tensor* params[] = {&p};
  AdamState st;
  EXPECT_THROW(adam_step(params, std::vector<Tensor>{Tensor({3})}, st, {}), ContractError);
}

TEST(Codec, DoublesRoundTripBitExact) {
  std::vector<double> v{0.1, -0.0, 1e-300, std::numeric_limits<double>::max(), 3.0};
  for (std::size_t n = 0; n <= v.size(); ++n) {
    std::vector<double> part(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n));
    auto back = decode_doubles(encode_doubles(part));
    ASSERT_EQ(back.size(), n);
    EXPECT_EQ(std::memcmp(back.data(), part.data(), n * sizeof(double)), 0);
  }
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Config, JsonRoundTrip) {
  model::PretrainConfig c = small_config();
  c.variant = model::Variant::no_neg_pv;
  c.projection_head = std::vector<std::size_t>{4};
  auto back = pretrain_config_from_json(pretrain_config_to_json(c));
  EXPECT_EQ(pretrain_config_to_json(back), pretrain_config_to_json(c));
  EXPECT_THROW(pretrain_config_from_json({{"tau", "hot"}}), ConfigError);
  EXPECT_THROW(pretrain_config_from_json({{"variant", "nope"}}), ConfigError);
}

TEST(Uniformity, MatchesPairLoop) {
  Rng rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor x({7, 3});
  for (double& v : x.storage()) v = n(rng);
  double total = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = i + 1; j < 7; ++j) {
      double d = 0, a = 0, b = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        d += x.at(i, k) * x.at(j, k);
        a += x.at(i, k) * x.at(i, k);
        b += x.at(j, k) * x.at(j, k);
      }
      total += d / std::sqrt(a * b);
      ++pairs;
    }
  EXPECT_NEAR(mean_pairwise_cosine(x), total / pairs, 1e-12);
  EXPECT_NEAR(mean_pairwise_cosine(Tensor({4, 2}, 1.5)), 1.0, 1e-12);
}

TEST(Pretrain, ZeroEpochsReturnsInitialization) {
  auto ds = small_dataset();
  auto cfg = small_config();
  cfg.epochs = 0;
  auto r = pretrain(ds.catalog, ds.train, cfg, 9);
  Checkpoint init = init_checkpoint(16, cfg, 9);
  ASSERT_EQ(r.checkpoint.encoder.layers().size(), init.encoder.layers().size());
  for (std::size_t i = 0; i < init.encoder.layers().size(); ++i) {
    EXPECT_EQ(r.checkpoint.encoder.layers()[i].weight, init.encoder.layers()[i].weight);
    EXPECT_EQ(r.checkpoint.encoder.layers()[i].bias, init.encoder.layers()[i].bias);
  }
  EXPECT_TRUE(r.log.epochs.empty());
}

TEST(Pretrain, SameSeedSameLog) {
  auto ds = small_dataset();
  auto a = pretrain(ds.catalog, ds.train, small_config(), 4);
  auto b = pretrain(ds.catalog, ds.train, small_config(), 4);
  ASSERT_EQ(a.log.epochs.size(), 2u);
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(a.checkpoint.adam, b.checkpoint.adam);
  auto c = pretrain(ds.catalog, ds.train, small_config(), 5);
  EXPECT_NE(a.log, c.log);
}

TEST(Pretrain, StepsDropTinyFinalBatch) {
  auto ds = small_dataset();
  auto cfg = small_config();
  cfg.epochs = 1;
  ds.train.resize(33);  // 16 + 16 + 1: the last session is dropped
  auto r = pretrain(ds.catalog, ds.train, cfg, 1);
  EXPECT_EQ(r.checkpoint.adam.step, 2u);
  ds.train.resize(34);  // 16 + 16 + 2
  r = pretrain(ds.catalog, ds.train, cfg, 1);
  EXPECT_EQ(r.checkpoint.adam.step, 3u);
}

TEST(Pretrain, NanWeightsAbortWithStep) {
  auto ds = small_dataset();
  Checkpoint ck = init_checkpoint(16, small_config(), 2);
  ck.encoder.parameters()[0]->storage()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainLog log;
  try {
    train_epochs(ck, ds.catalog, ds.train, log);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1, batch 0"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RoundTripIsBitExactAndResumable) {
  auto ds = small_dataset();
  auto cfg = small_config();
  cfg.projection_head = std::vector<std::size_t>{6};
  auto full = pretrain(ds.catalog, ds.train, cfg, 8);

  auto half_cfg = cfg;
  half_cfg.epochs = 1;
  auto half = pretrain(ds.catalog, ds.train, half_cfg, 8);
  const auto path = temp_path("ckpt.json");
  save_checkpoint(half.checkpoint, path);
  Checkpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.adam, half.checkpoint.adam);
  EXPECT_EQ(loaded.shuffle_state, half.checkpoint.shuffle_state);
  EXPECT_EQ(export_embeddings(loaded, ds.catalog), export_embeddings(half.checkpoint, ds.catalog));

  loaded.config.epochs = 2;
  TrainLog log = half.log;
  train_epochs(loaded, ds.catalog, ds.train, log);
  EXPECT_EQ(log, full.log);
  EXPECT_EQ(loaded.adam, full.checkpoint.adam);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), MissingArtifactError);
}

TEST(Export, IdentityEncoderGivesFeatures) {
  auto ds = small_dataset();
  Checkpoint ck;
  ck.encoder = model::Mlp::identity(16);
  EXPECT_EQ(export_embeddings(ck, ds.catalog), ds.catalog.feature_matrix());
}

TEST(Export, RowMatchesSingleItemEncode) {
  auto ds = small_dataset();
  auto r = pretrain(ds.catalog, ds.train, small_config(), 6);
  Tensor table = export_embeddings(r.checkpoint, ds.catalog);
  EXPECT_EQ(table.cols(), 8u);
  for (std::size_t i : {0u, 17u, 149u}) {
    auto f = ds.catalog.item(static_cast<std::int64_t>(i)).features;
    Tensor one({1, f.size()}, f);
    Tensor got = r.checkpoint.encoder.apply(one);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(table.at(i, k), got.at(0, k), 1e-12);
  }
}

TEST(Export, TsvRoundTripAndDeterministicFiles) {
  auto ds = small_dataset();
  auto r = pretrain(ds.catalog, ds.train, small_config(), 6);
  const auto a = temp_path("a.tsv"), b = temp_path("b.tsv");
  write_embeddings_tsv(export_embeddings(r.checkpoint, ds.catalog), a);
  write_embeddings_tsv(export_embeddings(r.checkpoint, ds.catalog), b);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(read_embeddings_tsv(a), export_embeddings(r.checkpoint, ds.catalog));
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}
