#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "courier/diffcore/grad_check.hpp"
#include "courier/error.hpp"
#include "courier/model/courier.hpp"

using namespace courier;
using namespace courier::model;
using diff::Tape;
using diff::Tensor;
using diff::Var;
using synth::Session;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t({r, c});
  for (double& v : t.storage()) v = n(rng);
  return t;
}

// Random padded session over `num_items` items: at least one click and one
// positive, every slot count in [1, len].
Session random_session(std::int64_t id, std::size_t num_items, std::size_t l_pv, std::size_t l_click, Rng& rng) {
  std::uniform_int_distribution<std::int64_t> item(0, static_cast<std::int64_t>(num_items) - 1);
  std::uniform_int_distribution<std::size_t> npv(1, l_pv);
  std::uniform_int_distribution<std::size_t> nclick(1, l_click);
  std::bernoulli_distribution coin(0.4);
  Session s;
  s.session_id = id;
  const std::size_t c = nclick(rng);
  for (std::size_t l = 0; l < l_click; ++l) {
    s.click_history.push_back(l < c ? item(rng) : synth::kPadItem);
    s.click_mask.push_back(l < c);
  }
  const std::size_t p = npv(rng);
  for (std::size_t l = 0; l < l_pv; ++l) {
    s.pv_items.push_back(l < p ? item(rng) : synth::kPadItem);
    s.pv_mask.push_back(l < p);
    s.labels.push_back(l == 0 || (l < p && coin(rng)));
  }
  return s;
}

using Rows = std::vector<std::vector<double>>;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  auto s = t.row(r);
  return {s.begin(), s.end()};
}

// Scalar attention of q over `keys`.
std::vector<double> brute_attend(const std::vector<double>& q, const Rows& keys) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
  std::vector<double> w;
  for (const auto& k : keys) w.push_back(dot(q, k) * scale);
  const double mx = *std::max_element(w.begin(), w.end());
  double z = 0.0;
  for (double& x : w) z += (x = std::exp(x - mx));
  std::vector<double> out(q.size(), 0.0);
  for (std::size_t i = 0; i < keys.size(); ++i)
    for (std::size_t j = 0; j < q.size(); ++j) out[j] += w[i] / z * keys[i][j];
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

// Column-wise InfoNCE from scalar loops.
double brute_infonce(const Rows& q, const Rows& rec, const std::vector<int>& labels, double tau, double norm) {
  double total = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    if (!labels[j]) continue;
    double mx = -INFINITY;
    for (std::size_t a = 0; a < q.size(); ++a) mx = std::max(mx, cosine(q[a], rec[j]) / tau);
    double z = 0.0;
    for (std::size_t a = 0; a < q.size(); ++a) z += std::exp(cosine(q[a], rec[j]) / tau - mx);
    total += mx + std::log(z) - cosine(q[j], rec[j]) / tau;
  }
  return total / norm;
}

// Whole COURIER loss recomputed from the encoded embedding values.
double brute_courier(const EmbeddingBatch& b, double tau, bool drop_negatives) {
  const Tensor& pv = b.pv.value();
  const Tensor& ck = b.click.value();
  Rows q, rec;
  std::vector<int> labels;
  for (std::size_t s = 0; s < b.batch; ++s) {
    Rows keys;
    for (std::size_t l = 0; l < b.l_click; ++l)
      if (b.click_mask[s * b.l_click + l]) keys.push_back(row_of(ck, s * b.l_click + l));
    for (std::size_t l = 0; l < b.l_pv; ++l) {
      const std::size_t r = s * b.l_pv + l;
      if (!b.pv_mask[r] || (drop_negatives && !b.labels[r])) continue;
      q.push_back(row_of(pv, r));
      rec.push_back(brute_attend(q.back(), keys));
      labels.push_back(b.labels[r]);
    }
  }
  double loss = brute_infonce(q, rec, labels, tau, static_cast<double>(b.batch * b.l_pv));
  Rows tq, trec;
  for (std::size_t s = 0; s < b.batch; ++s) {
    Rows hist;
    for (std::size_t l = 1; l < b.l_click; ++l)
      if (b.click_mask[s * b.l_click + l]) hist.push_back(row_of(ck, s * b.l_click + l));
    if (hist.empty()) continue;
    tq.push_back(row_of(ck, s * b.l_click));
    trec.push_back(brute_attend(tq.back(), hist));
  }
  if (tq.size() >= 2) loss += brute_infonce(tq, trec, std::vector<int>(tq.size(), 1), tau, static_cast<double>(tq.size()));
  return loss;
}

struct Fixture {
  Tensor features;
  Mlp encoder;
  std::vector<Session> sessions;
  PretrainConfig config;
};

Fixture make_fixture(std::uint64_t seed, std::size_t batch, std::size_t l_pv = 4, std::size_t l_click = 4) {
  Rng rng(seed);
  Fixture f;
  f.config.d = 4;
  f.config.hidden = {16};
  f.config.l_pv = l_pv;
  f.config.l_click = l_click;
  f.config.tau = 0.5;
  f.features = random_matrix(12, 6, rng);
  f.encoder = make_encoder(6, f.config, rng);
  for (std::size_t i = 0; i < batch; ++i) f.sessions.push_back(random_session(static_cast<std::int64_t>(i), 12, l_pv, l_click, rng));
  return f;
}

double loss_value(const Fixture& f, const Mlp* head = nullptr) {
  Tape tape;
  EmbeddingBatch b = encode_batch(tape, f.encoder, f.sessions, f.features, f.config.l_pv, f.config.l_click);
  if (head) b = apply_projection_head(tape, b, *head);
  return courier_loss(tape, b, f.config).total.value().item();
}

}  // namespace

TEST(Variant, NamesRoundTrip) {
  for (Variant v : all_variants()) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("bogus"), ConfigError);
}

TEST(Config, Validation) {
  PretrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.variant = Variant::small_batch;
  EXPECT_EQ(c.effective_batch_size(), 8u);
}

TEST(EncodeBatch, IdentityEncoderReturnsFeatures) {
  Rng rng(3);
  Tensor features = random_matrix(5, 3, rng);
  std::vector<Session> sessions{random_session(0, 5, 3, 2, rng)};
  Tape tape;
  EmbeddingBatch b = encode_batch(tape, Mlp::identity(3), sessions, features, 3, 2);
  for (std::size_t l = 0; l < 3; ++l) {
    const auto got = row_of(b.pv.value(), l);
    if (sessions[0].pv_mask[l]) {
      EXPECT_EQ(got, row_of(features, static_cast<std::size_t>(sessions[0].pv_items[l])));
    } else {
      EXPECT_EQ(got, std::vector<double>(3, 0.0));
    }
  }
}

TEST(EncodeBatch, SameSessionTwiceGivesIdenticalRows) {
  Fixture f = make_fixture(5, 1);
  f.sessions.push_back(f.sessions[0]);
  Tape tape;
  EmbeddingBatch b = encode_batch(tape, f.encoder, f.sessions, f.features, 4, 4);
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(row_of(b.pv.value(), l), row_of(b.pv.value(), 4 + l));
    EXPECT_EQ(row_of(b.click.value(), l), row_of(b.click.value(), 4 + l));
  }
}

TEST(EncodeBatch, UnknownItemIsDataError) {
  Fixture f = make_fixture(6, 2);
  f.sessions[1].pv_items[0] = 99;
  Tape tape;
  EXPECT_THROW(encode_batch(tape, f.encoder, f.sessions, f.features, 4, 4), DataError);
}

TEST(EncodeBatch, GradientReachesEncoder) {
  Fixture f = make_fixture(7, 4);
  auto fn = [&](Tape& tape) {
    EmbeddingBatch b = encode_batch(tape, f.encoder, f.sessions, f.features, 4, 4);
    return courier_loss(tape, b, f.config).total;
  };
  EXPECT_LT(diff::grad_check(fn, f.encoder.parameters()), 1e-3);
}

TEST(Reconstruct, SingleKeyReturnsIt) {
  Tape tape;
  Var q = tape.constant(Tensor::matrix({{0.3, -1.0}}));
  Var k = tape.constant(Tensor::matrix({{2.0, 5.0}}));
  auto out = reconstruct(q, k, {0}, 1);
  EXPECT_EQ(row_of(out.rec.value(), 0), (std::vector<double>{2.0, 5.0}));
  EXPECT_DOUBLE_EQ(out.alpha.at(0, 0), 1.0);
}

TEST(Reconstruct, OrthogonalQueryGivesMean) {
  Tape tape;
  Var q = tape.constant(Tensor::matrix({{0.0, 0.0, 1.0}}));
  Var k = tape.constant(Tensor::matrix({{1.0, 2.0, 0.0}, {-3.0, 4.0, 0.0}}));
  auto out = reconstruct(q, k, {0, 1}, 2);
  EXPECT_NEAR(out.rec.value().at(0, 0), -1.0, 1e-15);
  EXPECT_NEAR(out.rec.value().at(0, 1), 3.0, 1e-15);
}

TEST(Reconstruct, AlphaWeightedSumAndConvexHull) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Tensor qv = random_matrix(6, 4, rng);
    Tensor kv = random_matrix(9, 4, rng);
    std::vector<std::int64_t> index(6 * 3);
    std::uniform_int_distribution<std::int64_t> pick(-1, 8);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t l = 0; l < 3; ++l) index[i * 3 + l] = pick(rng);
      if (index[i * 3] < 0) index[i * 3] = static_cast<std::int64_t>(i);
    }
    auto out = reconstruct(tape.constant(qv), tape.constant(kv), index, 3);
    for (std::size_t i = 0; i < 6; ++i) {
      double total = 0.0;
      std::vector<double> expect(4, 0.0);
      for (std::size_t l = 0; l < 3; ++l) {
        const double a = out.alpha.at(i, l);
        EXPECT_GE(a, 0.0);
        total += a;
        if (index[i * 3 + l] < 0) {
          EXPECT_EQ(a, 0.0);
          continue;
        }
        for (std::size_t j = 0; j < 4; ++j) expect[j] += a * kv.at(static_cast<std::size_t>(index[i * 3 + l]), j);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.rec.value().at(i, j), expect[j], 1e-10);
    }
  }
}

TEST(Reconstruct, AllMaskedRowIsDegenerate) {
  Tape tape;
  Var q = tape.constant(Tensor::matrix({{1.0, 0.0}}));
  Var k = tape.constant(Tensor::matrix({{1.0, 0.0}}));
  EXPECT_THROW(reconstruct(q, k, {-1, -1}, 2), DegenerateInputError);
}

TEST(Similarity, ParallelOrthogonalAntiparallel) {
  Tape tape;
  Var a = tape.constant(Tensor::matrix({{1.0, 2.0}, {0.0, 3.0}, {1.0, -1.0}}));
  Var b = tape.constant(Tensor::matrix({{2.0, 4.0}, {5.0, 0.0}, {-2.0, 2.0}}));
  Tensor s = similarity_matrix(a, b).value();
  EXPECT_NEAR(s.at(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(s.at(1, 1), 0.0, 1e-15);
  EXPECT_NEAR(s.at(2, 2), -1.0, 1e-15);
  for (double v : s.storage()) {
    EXPECT_LE(v, 1.0 + 1e-15);
    EXPECT_GE(v, -1.0 - 1e-15);
  }
}

TEST(Similarity, ZeroRowIsDegenerate) {
  Tape tape;
  Var a = tape.constant(Tensor::matrix({{0.0, 0.0}}));
  Var b = tape.constant(Tensor::matrix({{1.0, 0.0}}));
  EXPECT_THROW(similarity_matrix(a, b), DegenerateInputError);
}

TEST(PvLoss, HandFixture) {
  Tape tape;
  Var s = tape.constant(Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}));
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)) / 2.0;
  // Commonly quoted as 0.15665; the exact value is 0.156631.
  EXPECT_NEAR(expect, 0.15665, 5e-5);
  EXPECT_NEAR(pv_contrastive_loss(s, {1, 0}, 1.0).loss.value().item(), expect, 1e-15);
}

TEST(PvLoss, UniformSimilarityClosedForm) {
  Tape tape;
  Var s = tape.constant(Tensor({4, 4}, 0.37));
  EXPECT_NEAR(pv_contrastive_loss(s, {0, 0, 1, 0}, 0.05).loss.value().item(), std::log(4.0) / 4.0, 1e-12);
  EXPECT_NEAR(pv_contrastive_loss(s, {1, 1, 1, 0}, 0.05).loss.value().item(), 3.0 * std::log(4.0) / 4.0, 1e-12);
}

TEST(PvLoss, NoPositivesIsZeroWithFlag) {
  Tape tape;
  Rng rng(2);
  Var s = tape.constant(random_matrix(3, 3, rng));
  auto res = pv_contrastive_loss(s, {0, 0, 0}, 0.1);
  EXPECT_EQ(res.loss.value().item(), 0.0);
  EXPECT_TRUE(res.no_positives);
}

TEST(PvLoss, Contracts) {
  Tape tape;
  EXPECT_THROW(pv_contrastive_loss(tape.constant(Tensor::matrix({{1.0}})), {1}, 0.1), ContractError);
  EXPECT_THROW(pv_contrastive_loss(tape.constant(Tensor({2, 2})), {1, 0}, 0.0), ConfigError);
}

TEST(PvLoss, DecreasesWithDiagonalDominance) {
  double prev = INFINITY;
  for (double g = 0.0; g <= 1.0; g += 0.1) {
    Tape tape;
    Tensor s({3, 3}, 0.2);
    for (std::size_t j = 0; j < 3; ++j) s.at(j, j) = 0.2 + g;
    const double l = pv_contrastive_loss(tape.constant(s), {1, 1, 0}, 0.3).loss.value().item();
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(UcsLoss, Contracts) {
  Fixture f = make_fixture(8, 1);
  Tape tape;
  EmbeddingBatch b = encode_batch(tape, f.encoder, f.sessions, f.features, 4, 4);
  EXPECT_THROW(ucs_loss(b, 0.1), ContractError);
  Fixture g = make_fixture(8, 3, 4, 1);
  EmbeddingBatch c = encode_batch(tape, g.encoder, g.sessions, g.features, 4, 1);
  EXPECT_THROW(ucs_loss(c, 0.1), ConfigError);
  auto lb = courier_loss(tape, c, g.config);
  EXPECT_TRUE(lb.ucs_disabled);
  EXPECT_EQ(lb.l_ucs.value().item(), 0.0);
}

TEST(UcsLoss, IdenticalSessionsGiveLogBatch) {
  Fixture f = make_fixture(9, 1);
  f.sessions[0].click_history = {1, 2, 3, synth::kPadItem};
  f.sessions[0].click_mask = {1, 1, 1, 0};
  f.sessions.assign(5, f.sessions[0]);
  Tape tape;
  EmbeddingBatch b = encode_batch(tape, f.encoder, f.sessions, f.features, 4, 4);
  EXPECT_NEAR(ucs_loss(b, 0.05).value().item(), std::log(5.0), 1e-12);
}

TEST(CourierLoss, MatchesBruteForce) {
  for (std::uint64_t seed = 20; seed < 40; ++seed) {
    const std::size_t batch = 2 + seed % 7;
    Fixture f = make_fixture(seed, batch);
    for (Variant v : {Variant::full, Variant::no_neg_pv}) {
      f.config.variant = v;
      Tape tape;
      EmbeddingBatch b = encode_batch(tape, f.encoder, f.sessions, f.features, 4, 4);
      LossBreakdown lb = courier_loss(tape, b, f.config);
      EXPECT_NEAR(lb.total.value().item(), brute_courier(b, f.config.tau, v == Variant::no_neg_pv), 1e-10)
          << "seed " << seed << " variant " << to_string(v);
      EXPECT_EQ(lb.total.value().item(), lb.l_pv.value().item() + lb.l_ucs.value().item());
    }
  }
}

TEST(CourierLoss, NoUcsIsPvOnly) {
  Fixture f = make_fixture(41, 6);
  f.config.variant = Variant::no_ucs;
  Tape tape;
  EmbeddingBatch b = encode_batch(tape, f.encoder, f.sessions, f.features, 4, 4);
  LossBreakdown lb = courier_loss(tape, b, f.config);
  EXPECT_EQ(lb.total.value().item(), lb.l_pv.value().item());
  f.config.variant = Variant::full;
  EXPECT_EQ(courier_loss(tape, b, f.config).l_pv.value().item(), lb.l_pv.value().item());
}

TEST(CourierLoss, NoContrastZeroWhenPerfectlyReconstructed) {
  Rng rng(42);
  Tensor features = random_matrix(4, 3, rng);
  std::vector<Session> sessions;
  for (std::int64_t item = 0; item < 3; ++item) {
    Session s;
    s.session_id = item;
    s.click_history = {item, item, synth::kPadItem};
    s.click_mask = {1, 1, 0};
    s.pv_items = {item, 3};
    s.pv_mask = {1, 1};
    s.labels = {1, 0};
    sessions.push_back(s);
  }
  PretrainConfig cfg;
  cfg.variant = Variant::no_contrast;
  Tape tape;
  EmbeddingBatch b = encode_batch(tape, Mlp::identity(3), sessions, features, 2, 3);
  EXPECT_NEAR(courier_loss(tape, b, cfg).total.value().item(), 0.0, 1e-14);
}

TEST(CourierLoss, EveryVariantIsFiniteAndDifferentiable) {
  Fixture f = make_fixture(43, 5);
  for (Variant v : all_variants()) {
    f.config.variant = v;
    auto fn = [&](Tape& tape) {
      EmbeddingBatch b = encode_batch(tape, f.encoder, f.sessions, f.features, 4, 4);
      return courier_loss(tape, b, f.config).total;
    };
    Tape tape;
    EXPECT_TRUE(std::isfinite(fn(tape).value().item())) << to_string(v);
    EXPECT_LT(diff::grad_check(fn, f.encoder.parameters()), 1e-3) << to_string(v);
  }
}

TEST(CourierLoss, ClickOrderDoesNotMatter) {
  Fixture f = make_fixture(44, 6);
  const double base = loss_value(f);
  for (Session& s : f.sessions) {
    // Keep the target (slot 0) in place and reverse the real history.
    const std::size_t n = s.num_clicks();
    std::reverse(s.click_history.begin() + 1, s.click_history.begin() + static_cast<std::ptrdiff_t>(n));
  }
  EXPECT_NEAR(loss_value(f), base, 1e-10);
}

TEST(CourierLoss, MaskedSlotsDoNotContribute) {
  Fixture f = make_fixture(45, 6);
  const double base = loss_value(f);
  std::uniform_int_distribution<std::int64_t> item(0, 11);
  Rng rng(1);
  for (Session& s : f.sessions) {
    for (std::size_t l = 0; l < s.pv_items.size(); ++l)
      if (!s.pv_mask[l]) s.pv_items[l] = item(rng);
    for (std::size_t l = 0; l < s.click_history.size(); ++l)
      if (!s.click_mask[l]) s.click_history[l] = item(rng);
  }
  EXPECT_NEAR(loss_value(f), base, 1e-10);
}

TEST(ProjectionHead, IdentityHeadLeavesLossUnchanged) {
  Fixture f = make_fixture(46, 5);
  Mlp head = Mlp::identity(f.config.d);
  EXPECT_NEAR(loss_value(f, &head), loss_value(f), 1e-12);
}

TEST(ProjectionHead, GradientFlowsThroughHead) {
  Fixture f = make_fixture(47, 5);
  f.config.projection_head = std::vector<std::size_t>{3};
  Rng rng(4);
  Mlp head = make_projection_head(f.config, rng);
  EXPECT_EQ(head.out_dim(), f.config.d);
  auto fn = [&](Tape& tape) {
    EmbeddingBatch b = encode_batch(tape, f.encoder, f.sessions, f.features, 4, 4);
    return courier_loss(tape, apply_projection_head(tape, b, head), f.config).total;
  };
  std::vector<Tensor*> params = f.encoder.parameters();
  for (Tensor* p : head.parameters()) params.push_back(p);
  EXPECT_LT(diff::grad_check(fn, params), 1e-3);
}
