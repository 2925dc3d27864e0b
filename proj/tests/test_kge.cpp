#include <gtest/gtest.h>

#include <complex>
#include <map>

#include "support.hpp"

using namespace mkg;
using testing_support::bom;
using testing_support::pid;

namespace {

constexpr ModelKind kAllModels[] = {ModelKind::TransE, ModelKind::DistMult, ModelKind::ComplEx};

std::vector<double> random_row(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// a -> b, c -> d
MachineKnowledgeGraph two_edge_graph() {
  MachineKnowledgeGraph g;
  g.ingest_bom(bom("a-1", {{"a-1", "b-1"}}));
  g.ingest_bom(bom("c-1", {{"c-1", "d-1"}}));
  return g;
}

TripleSplit all_train(const MachineKnowledgeGraph& g) {
  TripleSplit s;
  for (std::size_t i = 0; i < g.triples().size(); ++i) s.train.push_back(i);
  return s;
}

}  // namespace

TEST(Score, DistMultHandValue) {
  const std::vector<double> h{1, 2}, r{1, 0}, t{3, 1};
  EXPECT_DOUBLE_EQ(score(ModelKind::DistMult, h, r, t), 3.0);
}

TEST(Score, TransEExactTranslationIsZero) {
  const std::vector<double> h{0.5, -1.0, 2.0}, r{1.0, 1.0, -0.5};
  std::vector<double> t(3);
  for (int i = 0; i < 3; ++i) t[i] = h[i] + r[i];
  EXPECT_DOUBLE_EQ(score(ModelKind::TransE, h, r, t), 0.0);
  t[0] += 3.0;
  t[1] += 4.0;
  EXPECT_DOUBLE_EQ(score(ModelKind::TransE, h, r, t), -5.0);
}

TEST(Score, ComplExWithRealPartsIsDistMult) {
  Rng rng(3);
  const auto hr = random_row(4, rng), rr = random_row(4, rng), tr = random_row(4, rng);
  std::vector<double> h(8, 0.0), r(8, 0.0), t(8, 0.0);
  std::copy(hr.begin(), hr.end(), h.begin());
  std::copy(rr.begin(), rr.end(), r.begin());
  std::copy(tr.begin(), tr.end(), t.begin());
  EXPECT_NEAR(score(ModelKind::ComplEx, h, r, t), score(ModelKind::DistMult, hr, rr, tr), 1e-14);
}

TEST(Score, ComplExMatchesStdComplex) {
  Rng rng(4);
  const auto h = random_row(6, rng), r = random_row(6, rng), t = random_row(6, rng);
  std::complex<double> s{0.0, 0.0};
  for (int i = 0; i < 3; ++i) {
    s += std::complex<double>(h[i], h[3 + i]) * std::complex<double>(r[i], r[3 + i]) *
         std::conj(std::complex<double>(t[i], t[3 + i]));
  }
  EXPECT_NEAR(score(ModelKind::ComplEx, h, r, t), s.real(), 1e-14);
}

TEST(Score, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  const double eps = 1e-6;
  for (ModelKind kind : kAllModels) {
    auto h = random_row(6, rng), r = random_row(6, rng), t = random_row(6, rng);
    std::vector<double> gh(6, 0.0), gr(6, 0.0), gt(6, 0.0);
    accumulate_score_gradient(kind, h, r, t, 1.0, gh, gr, gt);
    for (auto [vec, grad] : {std::pair{&h, &gh}, std::pair{&r, &gr}, std::pair{&t, &gt}}) {
      for (std::size_t i = 0; i < 6; ++i) {
        const double keep = (*vec)[i];
        (*vec)[i] = keep + eps;
        const double up = score(kind, h, r, t);
        (*vec)[i] = keep - eps;
        const double down = score(kind, h, r, t);
        (*vec)[i] = keep;
        EXPECT_NEAR((*grad)[i], (up - down) / (2 * eps), 1e-7) << to_string(kind) << " coord " << i;
      }
    }
  }
}

TEST(Stage1, ExampleLossGradientMatchesFiniteDifferences) {
  Rng rng(6);
  for (ModelKind kind : kAllModels) {
    TrainConfig cfg;
    cfg.model = kind;
    cfg.dim = 3;
    cfg.seed = 2;
    EmbeddingTable table = init_embeddings(5, cfg);
    table.entity *= 0.3;
    table.relation *= 0.3;
    const Stage1Example ex{{0, RelationKind::SimilarTo, 1},
                           {{0, RelationKind::SimilarTo, 3}, {4, RelationKind::SimilarTo, 1}}};
    std::vector<std::vector<double>> masks(6, std::vector<double>(table.width()));
    for (auto& m : masks) draw_dropout_mask(m, 0.3, rng);
    const double weight = 0.5;
    Matrix ge = Matrix::Zero(table.entity.rows(), table.entity.cols());
    Matrix gr = Matrix::Zero(table.relation.rows(), table.relation.cols());
    stage1_example_loss(table, ex, masks, weight, &ge, &gr);

    auto loss = [&] { return weight * stage1_example_loss(table, ex, masks, 1.0, nullptr, nullptr); };
    const double eps = 1e-6;
    for (Matrix* param : {&table.entity, &table.relation}) {
      const Matrix& grad = param == &table.entity ? ge : gr;
      for (Eigen::Index i = 0; i < param->size(); ++i) {
        const double keep = param->data()[i];
        param->data()[i] = keep + eps;
        const double up = loss();
        param->data()[i] = keep - eps;
        const double down = loss();
        param->data()[i] = keep;
        EXPECT_NEAR(grad.data()[i], (up - down) / (2 * eps), 1e-7) << to_string(kind);
      }
    }
  }
}

TEST(Corruption, TwoNodeGraphExhaustsRetryCap) {
  const Triple t{0, RelationKind::ConnectedTo, 1};
  const std::vector<Triple> known_list{t};
  const TripleSet known(known_list);
  Rng rng(1);
  const auto c = corrupt_negative(t, 2, known, rng, 10);
  EXPECT_TRUE(c.exhausted);
  EXPECT_THROW(corrupt_negative(t, 1, known, rng), ConfigError);
}

TEST(Corruption, NeverReturnsKnownOrSelfLoop) {
  const auto g = two_edge_graph();
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    const auto c = corrupt_negative(g.triples()[0], g, rng);
    ASSERT_FALSE(c.exhausted);
    EXPECT_FALSE(g.contains(c.triple));
    EXPECT_NE(c.triple.head, c.triple.tail);
  }
}

TEST(Corruption, ReplacementIsUniform) {
  // Head and tail replacements each spread evenly over the n - 2 admissible entities.
  constexpr std::size_t n = 20;
  constexpr int draws = 40000;
  const Triple t{3, RelationKind::SimilarTo, 7};
  const std::vector<Triple> known_list{t};
  const TripleSet known(known_list);
  Rng rng(99);
  std::map<NodeIndex, int> heads;
  std::map<NodeIndex, int> tails;
  int head_side = 0;
  for (int i = 0; i < draws; ++i) {
    const auto c = corrupt_negative(t, n, known, rng);
    ASSERT_FALSE(c.exhausted);
    if (c.triple.tail == t.tail) {
      ++heads[c.triple.head];
      ++head_side;
    } else {
      ASSERT_EQ(c.triple.head, t.head);
      ++tails[c.triple.tail];
    }
  }
  EXPECT_NEAR(static_cast<double>(head_side) / draws, 0.5, 0.015);
  // chi-square, 17 degrees of freedom, critical value 40.79 at p = 0.001
  for (const auto* counts : {&heads, &tails}) {
    EXPECT_EQ(counts->size(), n - 2);
    double total = 0.0;
    for (const auto& [e, c] : *counts) total += c;
    const double expect = total / static_cast<double>(n - 2);
    double chi2 = 0.0;
    for (const auto& [e, c] : *counts) chi2 += (c - expect) * (c - expect) / expect;
    EXPECT_LT(chi2, 40.79);
  }
}

TEST(Dropout, MaskStatistics) {
  Rng rng(10);
  std::vector<double> mask(100000);
  draw_dropout_mask(mask, 0.2, rng);
  double zeros = 0.0, sum = 0.0;
  for (double m : mask) {
    zeros += m == 0.0;
    sum += m;
    EXPECT_TRUE(m == 0.0 || std::abs(m - 1.25) < 1e-15);
  }
  EXPECT_NEAR(zeros / mask.size(), 0.2, 0.01);
  EXPECT_NEAR(sum / mask.size(), 1.0, 0.015);
  draw_dropout_mask(mask, 0.0, rng);
  for (double m : mask) ASSERT_EQ(m, 1.0);
}

TEST(Init, UniformBoundAndTransENorm) {
  TrainConfig cfg;
  cfg.dim = 16;
  const auto t = init_embeddings(50, cfg);
  EXPECT_LE(t.entity.cwiseAbs().maxCoeff(), 6.0 / 4.0);
  EXPECT_EQ(t.relation.rows(), 2);
  cfg.model = ModelKind::TransE;
  const auto te = init_embeddings(50, cfg);
  for (Eigen::Index i = 0; i < te.entity.rows(); ++i) EXPECT_NEAR(te.entity.row(i).norm(), 1.0, 1e-12);
  cfg.model = ModelKind::ComplEx;
  EXPECT_EQ(init_embeddings(5, cfg).entity.cols(), 32);
}

TEST(Init, ConfigValidation) {
  TrainConfig cfg;
  cfg.dim = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.dropout = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(parse_model_kind("rotate"), ConfigError);
}

TEST(Stage1, ZeroLearningRateLeavesEmbeddings) {
  const auto g = two_edge_graph();
  TrainConfig cfg;
  cfg.dim = 8;
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 5;
  cfg.seed = 4;
  for (ModelKind kind : kAllModels) {
    cfg.model = kind;
    const auto r = train_stage1(g, all_train(g), cfg);
    const auto init = init_embeddings(g, cfg);
    if (kind == ModelKind::TransE) {
      // rows are renormalized after each step, which may move the last bit
      EXPECT_TRUE(r.table.entity.isApprox(init.entity, 1e-14));
    } else {
      EXPECT_EQ(r.table.entity, init.entity) << to_string(kind);
    }
    EXPECT_EQ(r.table.relation, init.relation);
  }
}

TEST(Stage1, DeterministicPerSeed) {
  const auto g = two_edge_graph();
  TrainConfig cfg;
  cfg.dim = 8;
  cfg.max_epochs = 20;
  cfg.learning_rate = 0.01;
  cfg.seed = 3;
  const auto a = train_stage1(g, all_train(g), cfg);
  const auto b = train_stage1(g, all_train(g), cfg);
  EXPECT_EQ(a.table.entity, b.table.entity);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(Stage1, LearnsTinyGraph) {
  const auto g = two_edge_graph();
  for (ModelKind kind : kAllModels) {
    TrainConfig cfg;
    cfg.model = kind;
    cfg.dim = 16;
    cfg.learning_rate = 0.05;
    cfg.max_epochs = 200;
    cfg.dropout = 0.0;
    cfg.batch_size = 2;
    cfg.seed = 1;
    const auto r = train_stage1(g, all_train(g), cfg);
    EXPECT_LT(r.loss_curve.back(), r.loss_curve.front()) << to_string(kind);
    for (const Triple& t : g.triples()) {
      const double pos = score(r.table, t.head, t.relation, t.tail);
      for (NodeIndex x = 0; x < g.node_count(); ++x) {
        const Triple c{t.head, t.relation, x};
        if (x == t.head || g.contains(c)) continue;
        EXPECT_GT(pos, score(r.table, c.head, c.relation, c.tail)) << to_string(kind);
      }
    }
  }
}

TEST(Stage1, EmptyTrainSplitRejected) {
  const auto g = two_edge_graph();
  EXPECT_THROW(train_stage1(g, TripleSplit{}, TrainConfig{}), ConfigError);
}

TEST(Scorer, BatchScoresMatchPointwise) {
  for (ModelKind kind : kAllModels) {
    TrainConfig cfg;
    cfg.model = kind;
    cfg.dim = 5;
    cfg.seed = 12;
    const auto table = init_embeddings(9, cfg);
    const KgeScorer s(table);
    std::vector<double> out;
    s.tail_scores(2, RelationKind::SimilarTo, out);
    for (NodeIndex c = 0; c < 9; ++c) EXPECT_NEAR(out[c], score(table, 2, RelationKind::SimilarTo, c), 1e-12);
    s.head_scores(RelationKind::ConnectedTo, 4, out);
    for (NodeIndex c = 0; c < 9; ++c) EXPECT_NEAR(out[c], score(table, c, RelationKind::ConnectedTo, 4), 1e-12);
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  testing_support::TempDir tmp("kge");
  TrainConfig cfg;
  cfg.model = ModelKind::ComplEx;
  cfg.dim = 4;
  const auto t = init_embeddings(7, cfg);
  save_embeddings(tmp.path() / "e.blob", t, {12, 99, "abc"});
  CheckpointInfo info;
  const auto back = load_embeddings(tmp.path() / "e.blob", &info);
  EXPECT_EQ(back.kind, ModelKind::ComplEx);
  EXPECT_EQ(back.dim, 4u);
  EXPECT_EQ(back.entity, t.entity);
  EXPECT_EQ(back.relation, t.relation);
  EXPECT_EQ(info.epoch, 12u);
  EXPECT_EQ(info.seed, 99u);
  EXPECT_EQ(info.graph_fingerprint, "abc");
  EXPECT_THROW(load_embeddings(tmp.path() / "missing.blob"), MissingArtifact);
  io::write_text(tmp.path() / "junk.blob", "not a blob at all");
  EXPECT_THROW(load_embeddings(tmp.path() / "junk.blob"), FormatError);
}
