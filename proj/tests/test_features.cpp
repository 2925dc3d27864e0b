#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <algorithm>
#include <iterator>
#include <set>

#include "support.hpp"

using namespace mkg;
using testing_support::part;

TEST(ParseDecimal, Grammar) {
  EXPECT_EQ(parse_decimal("960"), 960.0);
  EXPECT_EQ(parse_decimal("+1.5"), 1.5);
  EXPECT_EQ(parse_decimal("-.25"), -0.25);
  EXPECT_EQ(parse_decimal("3."), 3.0);
  EXPECT_EQ(parse_decimal("1e3"), 1000.0);
  EXPECT_FALSE(parse_decimal(""));
  EXPECT_FALSE(parse_decimal("."));
  EXPECT_FALSE(parse_decimal("1e"));
  EXPECT_FALSE(parse_decimal("12W"));
  EXPECT_FALSE(parse_decimal("0x10"));
  EXPECT_FALSE(parse_decimal(" 1"));
}

TEST(Vocabulary, NumericKeyIsZScored) {
  const std::vector<ComponentNode> nodes{part("a", "t", {{"w", 100.0}}), part("b", "t", {{"w", "200"}}),
                                         part("c", "t", {{"w", 600.0}}), part("d", "t")};
  const auto v = build_vocabulary(nodes);
  ASSERT_EQ(v.columns, 1u);
  ASSERT_TRUE(v.numeric.contains("w"));
  // population statistics over the nodes that carry the key
  const double mean = 300.0;
  const double sd = std::sqrt(((200.0 * 200.0) + (100.0 * 100.0) + (300.0 * 300.0)) / 3.0);
  EXPECT_DOUBLE_EQ(v.numeric.at("w").mean, mean);
  EXPECT_NEAR(v.numeric.at("w").stddev, sd, 1e-12);
  const Matrix L = encode(nodes, v);
  EXPECT_NEAR(L(0, 0), (100.0 - mean) / sd, 1e-12);
  EXPECT_NEAR(L(1, 0), (200.0 - mean) / sd, 1e-12);
  EXPECT_EQ(L(3, 0), 0.0);
}

TEST(Vocabulary, CategoricalRespectsMinFreq) {
  const std::vector<ComponentNode> nodes{part("a", "t", {{"brand", "x"}}), part("b", "t", {{"brand", "x"}}),
                                         part("c", "t", {{"brand", "y"}}), part("d", "t", {{"brand", "12W"}})};
  const auto v2 = build_vocabulary(nodes, 2);
  EXPECT_EQ(v2.columns, 1u);
  EXPECT_TRUE(v2.categorical.contains({"brand", "x"}));
  const auto v1 = build_vocabulary(nodes, 1);
  EXPECT_EQ(v1.columns, 3u);
  const Matrix L = encode(nodes, v2);
  EXPECT_EQ(L.col(0).sum(), 2.0);
  EXPECT_EQ(L(2, 0), 0.0);
}

TEST(Vocabulary, ConstantNumberFallsBackToOneHot) {
  const std::vector<ComponentNode> nodes{part("a", "t", {{"v", 12.0}}), part("b", "t", {{"v", "12.0"}})};
  const auto v = build_vocabulary(nodes);
  EXPECT_TRUE(v.numeric.empty());
  EXPECT_TRUE(v.categorical.contains({"v", "12"}));
  EXPECT_THROW(build_vocabulary(std::vector<ComponentNode>{}), ConfigError);
  EXPECT_THROW(build_vocabulary(nodes, 0), ConfigError);
}

namespace {

Matrix random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.uniform(-1.0, 1.0) * (1.0 + static_cast<double>(j));
  }
  return m;
}

}  // namespace

TEST(Pca, MatchesSvdOfCenteredData) {
  const Matrix L = random_matrix(50, 20, 5);
  const auto model = fit_pca(L, 8);

  const Eigen::MatrixXd centered = L.rowwise() - L.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd s2 = svd.singularValues().array().square();
  for (Eigen::Index j = 0; j < 8; ++j) {
    const Eigen::VectorXd a = model.components.col(j);
    const Eigen::VectorXd b = svd.matrixV().col(j);
    EXPECT_NEAR(std::abs(a.dot(b)), 1.0, 1e-8) << "component " << j;
    EXPECT_NEAR(model.explained_variance_ratio(j), s2(j) / s2.sum(), 1e-10);
  }
  const Eigen::MatrixXd gram = model.components.transpose() * model.components;
  EXPECT_TRUE(gram.isIdentity(1e-10));
  for (Eigen::Index j = 1; j < 8; ++j) {
    EXPECT_LE(model.explained_variance_ratio(j), model.explained_variance_ratio(j - 1));
  }
}

TEST(Pca, SignConventionLargestLoadingPositive) {
  const auto model = fit_pca(random_matrix(30, 6, 2), 4);
  for (Eigen::Index j = 0; j < 4; ++j) {
    Eigen::Index arg = 0;
    model.components.col(j).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(model.components(arg, j), 0.0);
  }
}

TEST(Pca, RankKDataExplainedByKComponents) {
  // 40 x 10 built from 3 latent directions
  const Matrix A = random_matrix(40, 3, 8);
  const Matrix B = random_matrix(3, 10, 9);
  const Matrix L = A * B;
  const auto model = fit_pca(L, 5);
  EXPECT_NEAR(model.explained_variance_ratio.head(3).sum(), 1.0, 1e-10);
  EXPECT_NEAR(model.explained_variance_ratio(3), 0.0, 1e-10);
}

TEST(Pca, AntipodalPoints) {
  Matrix L(2, 3);
  L << 1.0, 2.0, -2.0, -1.0, -2.0, 2.0;
  const auto model = fit_pca(L, 1);
  const Eigen::Vector3d v(1.0, 2.0, -2.0);
  EXPECT_NEAR(std::abs(model.components.col(0).dot(v.normalized())), 1.0, 1e-12);
  EXPECT_NEAR(model.explained_variance_ratio(0), 1.0, 1e-12);
  const Matrix p = project(L, model);
  EXPECT_NEAR(p(0, 0), -p(1, 0), 1e-12);
  EXPECT_NEAR(std::abs(p(0, 0)), 3.0, 1e-12);
}

TEST(Pca, ZeroColumnDoesNotChangeProjection) {
  const Matrix L = random_matrix(25, 5, 4);
  Matrix padded = Matrix::Zero(25, 6);
  padded.leftCols(5) = L;
  const Matrix a = project(L, fit_pca(L, 3));
  const Matrix b = project(padded, fit_pca(padded, 3));
  EXPECT_TRUE(a.isApprox(b, 1e-9));
}

TEST(Pca, DimensionAndShapeChecks) {
  const Matrix L = random_matrix(5, 4, 1);
  EXPECT_THROW(fit_pca(L, 0), ConfigError);
  EXPECT_THROW(fit_pca(L, 5), ConfigError);
  EXPECT_THROW(fit_pca(random_matrix(1, 4, 1), 1), ConfigError);
  const auto model = fit_pca(L, 2);
  EXPECT_THROW(project(random_matrix(5, 3, 1), model), ShapeError);
}

TEST(Pca, ProjectionBlobRoundTrip) {
  testing_support::TempDir tmp("pca");
  const Matrix L = random_matrix(12, 5, 3);
  auto model = fit_pca(L, 3);
  model.seed = 42;
  save_projection(tmp.path() / "p.blob", model);
  const auto back = load_projection(tmp.path() / "p.blob");
  EXPECT_EQ(back.components, model.components);
  EXPECT_EQ(back.means, model.means);
  EXPECT_EQ(back.explained_variance_ratio, model.explained_variance_ratio);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(project(L, back), project(L, model));
}

TEST(Jaccard, MatchesSetOracle) {
  const auto a = part("a", "t", {{"x", "1"}, {"y", "2"}, {"z", "3"}});
  const auto b = part("b", "t", {{"y", "2"}, {"z", "3"}, {"w", "4"}});
  EXPECT_DOUBLE_EQ(jaccard(a, b), 0.5);

  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Metadata ma;
    Metadata mb;
    std::set<std::string> sa;
    std::set<std::string> sb;
    for (int k = 0; k < 8; ++k) {
      const std::string key = "k" + std::to_string(k);
      const std::string val = std::to_string(rng.index(3));
      if (rng.bernoulli(0.6)) {
        ma.emplace(key, val);
        sa.insert(key + "=" + val);
      }
      if (rng.bernoulli(0.6)) {
        mb.emplace(key, val);
        sb.insert(key + "=" + val);
      }
    }
    std::vector<std::string> inter;
    std::vector<std::string> uni;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
    const double expect = uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    const ComponentNode na{testing_support::pid("a"), "t", ma};
    const ComponentNode nb{testing_support::pid("b"), "t", mb};
    EXPECT_DOUBLE_EQ(jaccard(na, nb), expect);
  }
}

TEST(Jaccard, NumericFormsCollide) {
  const auto a = part("a", "t", {{"w", "960"}});
  const auto b = part("b", "t", {{"w", 960.0}});
  const auto c = part("c", "t", {{"w", "960.0"}});
  EXPECT_DOUBLE_EQ(jaccard(a, b), 1.0);
  EXPECT_DOUBLE_EQ(jaccard(a, c), 1.0);
  EXPECT_DOUBLE_EQ(jaccard(part("e", "t"), part("f", "t")), 1.0);
  EXPECT_DOUBLE_EQ(jaccard(a, part("f", "t")), 0.0);
}
