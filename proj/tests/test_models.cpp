#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "trajpred/error.hpp"
#include "trajpred/models.hpp"

using namespace trajpred;

namespace {

ModelConfig small(ModelKind kind, int d = 3, bool identity = false) {
  ModelConfig c;
  c.kind = kind;
  c.embed_dim = d;
  c.hidden_dim = d + 1;
  c.feature_dim = d;
  c.attention_dim = d;
  c.cell_identity = identity;
  return c;
}

TrafficStateTensor random_traffic(Eigen::Index n, Rng& rng) {
  TrafficStateTensor t(n, kTrafficWindowMinutes);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = uniform01(rng);
  return t;
}

// Whitespace-separated tokens without framing checks, so prefixes work too.
std::vector<CellId> tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<CellId> out;
  for (std::string w; in >> w;) out.push_back(token_from_string(w));
  return out;
}

// Fresh copy of `model` with its own rng-perturbed parameters so tests are
// not tied to a particular initialization.
void randomize(SequenceModel& model, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  for (auto& e : model.params().entries()) {
    for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = scale * uniform(rng, -1, 1);
  }
}

}  // namespace

TEST(Vocab, LayoutAndErrors) {
  const Vocabulary v({7, 3, 3, 9});
  EXPECT_EQ(v.size(), 5);
  EXPECT_EQ(v.index_of(kStartToken), 0);
  EXPECT_EQ(v.index_of(kEndToken), 1);
  EXPECT_EQ(v.index_of(3), 2);
  EXPECT_EQ(v.index_of(9), 4);
  EXPECT_EQ(v.token_at(3), 7);
  EXPECT_THROW(v.index_of(4), Error);
}

TEST(Rnn, ForwardShapesAndNormalization) {
  SequenceModel m(small(ModelKind::kRnn), Vocabulary({1, 2, 3}), 1);
  const auto x = tokens("#start 1 3 2 #end");
  const std::vector<CellId> xin(x.begin(), x.end() - 1);
  const auto r = rnn_forward(xin, m);
  ASSERT_EQ(r.probs.size(), xin.size());
  for (const auto& p : r.probs) {
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
  const std::vector<CellId> bad{kStartToken, 8};
  EXPECT_THROW(rnn_forward(bad, m), Error);
}

TEST(Rnn, FreshModelNearUniform) {
  SequenceModel m(small(ModelKind::kRnn, 2), Vocabulary({1, 2}), 5);
  const auto xy = split_xy(CellSequence::parse("#start 1 2 #end"));
  const double per_step = m.loss(xy.x, xy.y, nullptr) / static_cast<double>(xy.x.size());
  EXPECT_NEAR(per_step, std::log(4.0), 0.35);
}

TEST(Arnn, EncodeTraffic) {
  SequenceModel m(small(ModelKind::kArnn), Vocabulary({1, 2, 3, 4}), 2);
  const Matrix zero = m.encode_traffic(TrafficStateTensor::Zero(4, 10));
  EXPECT_EQ(zero.rows(), 4);
  EXPECT_EQ(zero.cols(), 3);
  EXPECT_EQ(zero.norm(), 0.0);
  TrafficStateTensor one = TrafficStateTensor::Zero(4, 10);
  one(2, 4) = 0.7;
  const Matrix f = m.encode_traffic(one);
  for (Eigen::Index r = 0; r < 4; ++r) {
    if (r == 2) {
      EXPECT_GT(f.row(r).norm(), 0.0);
    } else {
      EXPECT_EQ(f.row(r).norm(), 0.0);
    }
  }
  EXPECT_THROW(m.encode_traffic(TrafficStateTensor::Zero(3, 10)), Error);
  EXPECT_THROW(m.encode_traffic(TrafficStateTensor::Zero(4, 9)), Error);
}

TEST(Arnn, InitStateSymmetries) {
  SequenceModel m(small(ModelKind::kArnn), Vocabulary({1, 2, 3, 4}), 3);
  randomize(m, 30);
  const auto z = m.attention_init_state(Matrix::Zero(4, 3));
  EXPECT_EQ(z.h.size(), 4);
  EXPECT_EQ(z.c.size(), 4);
  EXPECT_EQ(z.h.norm() + z.c.norm(), 0.0);
  Rng rng(1);
  Matrix f(4, 3);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = uniform(rng, -1, 1);
  Matrix g = f;
  g.row(0).swap(g.row(3));
  g.row(1).swap(g.row(2));
  const auto a = m.attention_init_state(f), b = m.attention_init_state(g);
  EXPECT_NEAR((a.h - b.h).norm(), 0.0, 1e-14);
  EXPECT_NEAR((a.c - b.c).norm(), 0.0, 1e-14);
}

TEST(Arnn, AttentionStepCases) {
  SequenceModel m(small(ModelKind::kArnn), Vocabulary({1, 2, 3}), 4);
  randomize(m, 40);
  Rng rng(2);
  Vector s(4);
  for (auto& v : s) v = uniform(rng, -1, 1);
  Matrix f(3, 3);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = uniform(rng, -1, 1);
  EXPECT_NEAR(m.attention_step(s, f).alpha.sum(), 1.0, 1e-12);
  Matrix same(3, 3);
  same.rowwise() = f.row(0);
  const auto u = m.attention_step(s, same);
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(u.alpha(j), 1.0 / 3.0, 1e-15);
}

TEST(Arnn, AttentionHandSetWeights) {
  ModelConfig c = small(ModelKind::kArnn);
  c.feature_dim = 1;
  c.attention_dim = 1;
  SequenceModel m(c, Vocabulary({1, 2}), 5);
  m.params()["attention.w"].setZero();
  m.params()["attention.u"](0, 0) = 1.0;
  m.params()["attention.v"](0, 0) = 2.0;
  const double z = std::atanh(std::log(3.0) / 2.0);
  Matrix f(2, 1);
  f << 0.0, z;
  const auto out = m.attention_step(Vector::Constant(4, 0.3), f);
  EXPECT_NEAR(out.alpha(0), 0.25, 1e-12);
  EXPECT_NEAR(out.alpha(1), 0.75, 1e-12);
  EXPECT_NEAR(out.context(0), 0.75 * z, 1e-12);
}

TEST(Arnn, ZeroTrafficAndAttentionShape) {
  SequenceModel m(small(ModelKind::kArnn), Vocabulary({1, 2, 3}), 6);
  const auto x = tokens("#start 1 2 3");
  const auto r = arnn_forward(x, TrafficStateTensor::Zero(3, 10), m);
  ASSERT_EQ(r.attention.rows(), 4);
  ASSERT_EQ(r.attention.cols(), 3);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(r.attention.row(i).sum(), 1.0, 1e-12);
  for (const auto& p : r.probs) EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_THROW(arnn_forward(x, TrafficStateTensor::Zero(2, 10), m), Error);
  EXPECT_THROW(m.forward(x, nullptr), Error);
}

// Hand-rolled composition of the documented pieces: encode, mean-pool
// initial state, additive attention, concatenated LSTM input, softmax.
TEST(Arnn, CompositionalOracle) {
  for (bool identity : {false, true}) {
    SequenceModel m(small(ModelKind::kArnn, 2, identity), Vocabulary({1, 2}), 7);
    randomize(m, 70);
    Rng rng(3);
    const TrafficStateTensor t = random_traffic(2, rng);
    const auto x = tokens("#start 2 1 2");
    const auto& p = m.params();

    Matrix feats(2, 2);
    for (Eigen::Index j = 0; j < 2; ++j) {
      for (Eigen::Index d = 0; d < 2; ++d) {
        double z = 0.0;
        for (int k = 0; k < 10; ++k) z += t(j, k) * p["traffic.w"](k, d);
        if (identity) z += p["traffic.cell"](j, d);
        feats(j, d) = std::tanh(z);
      }
    }
    Vector pooled = (feats.row(0) + feats.row(1)).transpose() / 2.0;
    Vector h(3), c(3);
    for (Eigen::Index k = 0; k < 3; ++k) {
      double zh = 0.0, zc = 0.0;
      for (Eigen::Index d = 0; d < 2; ++d) {
        zh += p["init.w_h"](d, k) * pooled(d);
        zc += p["init.w_c"](d, k) * pooled(d);
      }
      h(k) = std::tanh(zh);
      c(k) = std::tanh(zc);
    }
    const auto r = arnn_forward(x, t, m);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double e[2];
      for (Eigen::Index j = 0; j < 2; ++j) {
        e[j] = 0.0;
        for (Eigen::Index a = 0; a < 2; ++a) {
          double z = 0.0;
          for (Eigen::Index k = 0; k < 3; ++k) z += p["attention.w"](k, a) * h(k);
          for (Eigen::Index d = 0; d < 2; ++d) z += p["attention.u"](d, a) * feats(j, d);
          e[j] += p["attention.v"](a, 0) * std::tanh(z);
        }
      }
      const double mx = std::max(e[0], e[1]);
      const double a0 = std::exp(e[0] - mx), a1 = std::exp(e[1] - mx);
      const double alpha[2] = {a0 / (a0 + a1), a1 / (a0 + a1)};
      EXPECT_NEAR(r.attention(static_cast<Eigen::Index>(i), 0), alpha[0], 1e-12);
      Vector in(4);
      in.head(2) = p["embedding"].row(m.vocab().index_of(x[i])).transpose();
      in.tail(2) = alpha[0] * feats.row(0).transpose() + alpha[1] * feats.row(1).transpose();
      Vector gates = p["lstm.b"].col(0);
      gates += p["lstm.w_x"].transpose() * in + p["lstm.w_h"].transpose() * h;
      auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
      for (Eigen::Index k = 0; k < 3; ++k) {
        const double ig = sig(gates(k)), fg = sig(gates(3 + k)), gg = std::tanh(gates(6 + k)),
                     og = sig(gates(9 + k));
        c(k) = fg * c(k) + ig * gg;
        h(k) = og * std::tanh(c(k));
      }
      Vector logits = p["decoder.w"].transpose() * h + p["decoder.b"].col(0);
      Vector prob = (logits.array() - logits.maxCoeff()).exp();
      prob /= prob.sum();
      EXPECT_NEAR((prob - r.probs[i]).cwiseAbs().maxCoeff(), 0.0, 1e-12) << "step " << i;
    }
  }
}

TEST(Arnn, PermutationEquivariance) {
  SequenceModel m(small(ModelKind::kArnn, 3, false), Vocabulary({1, 2, 3, 4}), 8);
  randomize(m, 80);
  Rng rng(4);
  const TrafficStateTensor t = random_traffic(4, rng);
  const std::vector<Eigen::Index> perm{2, 0, 3, 1};
  TrafficStateTensor tp(4, 10);
  for (Eigen::Index j = 0; j < 4; ++j) tp.row(j) = t.row(perm[static_cast<std::size_t>(j)]);
  const auto x = tokens("#start 4 1 2");
  const auto a = arnn_forward(x, t, m), b = arnn_forward(x, tp, m);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR((a.probs[i] - b.probs[i]).cwiseAbs().maxCoeff(), 0.0, 1e-13);
    for (Eigen::Index j = 0; j < 4; ++j) {
      EXPECT_NEAR(b.attention(static_cast<Eigen::Index>(i), j),
                  a.attention(static_cast<Eigen::Index>(i), perm[static_cast<std::size_t>(j)]), 1e-13);
    }
  }
}

TEST(Arnn, PermutationWithCellIdentityNeedsJointPermutation) {
  SequenceModel m(small(ModelKind::kArnn, 3, true), Vocabulary({1, 2, 3}), 9);
  randomize(m, 90);
  Rng rng(5);
  const TrafficStateTensor t = random_traffic(3, rng);
  const std::vector<Eigen::Index> perm{1, 2, 0};
  TrafficStateTensor tp(3, 10);
  SequenceModel mp = m;
  for (Eigen::Index j = 0; j < 3; ++j) {
    tp.row(j) = t.row(perm[static_cast<std::size_t>(j)]);
    mp.params()["traffic.cell"].row(j) = m.params()["traffic.cell"].row(perm[static_cast<std::size_t>(j)]);
  }
  const auto x = tokens("#start 3 1");
  const auto a = arnn_forward(x, t, m), b = arnn_forward(x, tp, mp);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR((a.probs[i] - b.probs[i]).cwiseAbs().maxCoeff(), 0.0, 1e-13);
  }
}

TEST(Gradients, FullLossBothModels) {
  for (ModelKind kind : {ModelKind::kRnn, ModelKind::kArnn}) {
    for (bool identity : {false, true}) {
      SequenceModel m(small(kind, 3, identity), Vocabulary({1, 2, 3}), 10);
      randomize(m, 100, 0.8);
      Rng rng(6);
      const TrafficStateTensor t = random_traffic(3, rng);
      const auto xy = split_xy(CellSequence::parse("#start 1 3 2 3 #end"));
      const TrafficStateTensor* tp = kind == ModelKind::kArnn ? &t : nullptr;
      ModelParams g = m.params().zeros_like();
      m.loss(m.params(), xy.x, xy.y, tp, &g);
      auto f = [&](const ModelParams& q) { return m.loss(q, xy.x, xy.y, tp, nullptr); };
      EXPECT_LT(grad_check(f, g, m.params()), 1e-4) << to_string(kind) << identity;
    }
  }
}

TEST(Gradients, CorruptionIsDetected) {
  SequenceModel m(small(ModelKind::kArnn), Vocabulary({1, 2, 3}), 11);
  Rng rng(7);
  const TrafficStateTensor t = random_traffic(3, rng);
  const auto xy = split_xy(CellSequence::parse("#start 1 2 #end"));
  ModelParams g = m.params().zeros_like();
  m.loss(m.params(), xy.x, xy.y, &t, &g);
  g["attention.v"](0, 0) *= 1.5;
  g["attention.v"](0, 0) += 0.01;
  auto f = [&](const ModelParams& q) { return m.loss(q, xy.x, xy.y, &t, nullptr); };
  EXPECT_GT(grad_check(f, g, m.params()), 1e-2);
}

TEST(Training, EpochZeroNearLogVAndFinite) {
  SequenceModel m(small(ModelKind::kRnn, 4), Vocabulary({1, 2, 3, 4, 5, 6}), 12);
  std::vector<TrainingSample> data;
  for (const char* s : {"#start 1 2 3 #end", "#start 4 5 6 #end", "#start 2 6 #end"}) {
    data.push_back({split_xy(CellSequence::parse(s)), {}});
  }
  TrainOptions o;
  o.epochs = 5;
  o.learning_rate = 1e-3;
  const auto rep = train(m, data, o);
  ASSERT_EQ(rep.epoch_loss.size(), 5u);
  EXPECT_NEAR(rep.epoch_loss[0], std::log(8.0), 0.35);
  for (double l : rep.epoch_loss) EXPECT_TRUE(std::isfinite(l));
  EXPECT_THROW(train(m, {}, o), Error);
}

TEST(Training, MemorizesTinyCorpus) {
  // Each sequence carries its own traffic state (its cells congested), so the
  // ARNN can tell the sequences apart from the first step on.
  const char* corpus[] = {"#start 1 2 3 #end", "#start 4 5 #end",   "#start 6 7 8 9 #end", "#start 2 1 #end",
                          "#start 3 4 #end",   "#start 5 6 7 #end", "#start 8 #end",        "#start 9 8 #end",
                          "#start 7 3 #end",   "#start 1 5 9 #end"};
  std::vector<TrainingSample> data;
  for (const char* s : corpus) {
    const auto seq = CellSequence::parse(s);
    TrafficStateTensor t = TrafficStateTensor::Zero(9, kTrafficWindowMinutes);
    for (CellId c : seq.cells()) t.row(c - 1).setOnes();
    data.push_back({split_xy(seq), t});
  }
  ModelConfig c = small(ModelKind::kArnn, 8, true);
  c.hidden_dim = 16;
  SequenceModel m(c, Vocabulary({1, 2, 3, 4, 5, 6, 7, 8, 9}), 13);
  TrainOptions o;
  o.epochs = 200;
  o.learning_rate = 0.01;
  o.seed = 1;
  const auto rep = train(m, data, o);
  EXPECT_LT(mean_step_loss(m, data), 0.05) << rep.epoch_loss.back();
}

TEST(Generation, Contract) {
  SequenceModel m(small(ModelKind::kArnn), Vocabulary({1, 2, 3}), 14);
  Rng rng(8);
  const TrafficStateTensor t = random_traffic(3, rng);
  const std::vector<CellId> prefix{kStartToken, 2};
  const auto a = m.generate(prefix, &t, 99, 30);
  const auto b = m.generate(prefix, &t, 99, 30);
  EXPECT_EQ(a.tokens, b.tokens);
  ASSERT_GE(a.tokens.size(), 3u);
  EXPECT_EQ(a.tokens[0], kStartToken);
  EXPECT_EQ(a.tokens[1], 2);
  bool differs = false;
  for (std::uint64_t s = 0; s < 50 && !differs; ++s) differs = m.generate(prefix, &t, s, 30).tokens != a.tokens;
  EXPECT_TRUE(differs);
  EXPECT_THROW(m.generate(std::vector<CellId>{kStartToken, 1, kEndToken}, &t, 1, 10), Error);
  EXPECT_THROW(m.generate(std::vector<CellId>{1, 2}, &t, 1, 10), Error);
  EXPECT_THROW(m.generate(prefix, &t, 1, 2), Error);
  EXPECT_EQ(a.attention.rows(), static_cast<Eigen::Index>(a.tokens.size() - (a.terminated ? 1 : 0)));
}

TEST(Generation, StaysInVocabularyAndTerminates) {
  SequenceModel m(small(ModelKind::kRnn), Vocabulary({4, 9, 11}), 15);
  randomize(m, 150, 3.0);
  const Vocabulary& v = m.vocab();
  for (std::uint64_t s = 0; s < 300; ++s) {
    const auto g = m.generate(std::vector<CellId>{kStartToken}, nullptr, s, 12);
    EXPECT_LE(g.tokens.size(), 12u);
    EXPECT_EQ(g.terminated, g.tokens.back() == kEndToken);
    for (std::size_t i = 1; i < g.tokens.size(); ++i) {
      EXPECT_NE(g.tokens[i], kStartToken);
      if (g.tokens[i] != kEndToken) EXPECT_TRUE(v.contains(g.tokens[i]));
    }
    for (const auto& p : g.probs) EXPECT_NEAR(p.sum(), 1.0, 1e-9);
  }
}

TEST(Generation, OverfitSingleSequence) {
  ModelConfig c = small(ModelKind::kRnn, 4);
  SequenceModel m(c, Vocabulary({1, 2}), 16);
  std::vector<TrainingSample> data{{split_xy(CellSequence::parse("#start 1 2 #end")), {}}};
  TrainOptions o;
  o.epochs = 400;
  o.learning_rate = 0.02;
  train(m, data, o);
  int hits = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto g = m.generate(std::vector<CellId>{kStartToken, 1}, nullptr, s, 16);
    hits += g.tokens == std::vector<CellId>{kStartToken, 1, 2, kEndToken};
  }
  EXPECT_GT(hits, 990);
}

TEST(Checkpointing, ModelRoundTrip) {
  SequenceModel m(small(ModelKind::kArnn, 3, true), Vocabulary({2, 5}), 17);
  const auto back = SequenceModel::from_checkpoint(m.to_checkpoint());
  EXPECT_EQ(back.kind(), ModelKind::kArnn);
  EXPECT_EQ(back.vocab().cells(), m.vocab().cells());
  EXPECT_TRUE(back.params().same_layout(m.params()));
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    EXPECT_EQ(back.params().entries()[i].value, m.params().entries()[i].value);
  }
  Checkpoint broken = m.to_checkpoint();
  broken.params.entries().pop_back();
  EXPECT_THROW(SequenceModel::from_checkpoint(broken), Error);
}
