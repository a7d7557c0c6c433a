#include <gtest/gtest.h>

#include <filesystem>

#include "apmae/cluster.hpp"
#include "apmae/rng.hpp"

namespace apmae {
namespace {

struct Blobs {
  std::vector<std::vector<float>> x;
  std::vector<int> truth;
};

Blobs make_blobs(std::size_t centres, std::size_t per, std::size_t dim, double spread, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  std::vector<std::vector<double>> c(centres, std::vector<double>(dim));
  for (auto& v : c)
    for (auto& e : v) e = rng.uniform() * 20.0 - 10.0;
  for (std::size_t k = 0; k < centres; ++k)
    for (std::size_t i = 0; i < per; ++i) {
      std::vector<float> p(dim);
      for (std::size_t d = 0; d < dim; ++d) p[d] = static_cast<float>(c[k][d] + spread * rng.normal());
      b.x.push_back(std::move(p));
      b.truth.push_back(static_cast<int>(k));
    }
  return b;
}

TEST(Ari, HandComputedValue) {
  const std::vector<int> a{0, 0, 1, 1}, b{0, 0, 1, 2};
  EXPECT_NEAR(adjusted_rand_index(a, b), 4.0 / 7.0, 1e-12);
  EXPECT_DOUBLE_EQ(adjusted_rand_index(a, a), 1.0);
  const std::vector<int> swapped{1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(adjusted_rand_index(a, swapped), 1.0);
}

TEST(Reduce, AxesOrthonormalAndOriented) {
  const auto b = make_blobs(3, 40, 12, 1.0, 2);
  const auto r = reduce(b.x, 8);
  ASSERT_EQ(r.reducer.out_dim(), 8u);
  const Eigen::MatrixXd g = r.reducer.axes * r.reducer.axes.transpose();
  EXPECT_TRUE(g.isApprox(Eigen::MatrixXd::Identity(8, 8), 1e-9));
  double total = 0;
  for (std::size_t k = 0; k < 8; ++k) {
    if (k > 0) {
      EXPECT_LE(r.reducer.explained[k], r.reducer.explained[k - 1] + 1e-12);
    }
    total += r.reducer.explained[k];
    for (Eigen::Index j = 0; j < 12; ++j)
      if (std::abs(r.reducer.axes(static_cast<Eigen::Index>(k), j)) > 1e-12) {
        EXPECT_GT(r.reducer.axes(static_cast<Eigen::Index>(k), j), 0.0);
        break;
      }
  }
  EXPECT_LE(total, 1.0 + 1e-12);
  const auto y = r.reducer.project(b.x[5]);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(y[k], r.points[5][k], 1e-9);
}

TEST(Reduce, LineDataHasAllVarianceOnFirstAxis) {
  std::vector<std::vector<float>> x;
  for (int i = 0; i < 10; ++i) x.push_back({float(i), float(-i), 0.0f});
  const auto r = reduce(x, 2);
  EXPECT_NEAR(r.reducer.explained[0], 1.0, 1e-12);
  EXPECT_NEAR(r.reducer.axes(0, 0), std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(r.reducer.axes(0, 1), -std::sqrt(0.5), 1e-12);
}

TEST(Reduce, TooFewSamples) {
  std::vector<std::vector<float>> x(3, std::vector<float>(10, 1.0f));
  EXPECT_THROW(reduce(x, 8), ContractError);
}

TEST(Hdbscan, TwoSeparatedGroups) {
  std::vector<std::vector<double>> p;
  for (int i = 0; i < 5; ++i) p.push_back({0.1 * i});
  for (int i = 0; i < 5; ++i) p.push_back({10.0 + 0.1 * i});
  const auto l = hdbscan_labels(p, 3);
  EXPECT_EQ(l, (std::vector<int>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1}));
}

TEST(Hdbscan, LabelsFollowLowestMemberOrder) {
  std::vector<std::vector<double>> p;
  for (int i = 0; i < 5; ++i) p.push_back({10.0 + 0.1 * i});
  for (int i = 0; i < 5; ++i) p.push_back({0.1 * i});
  const auto l = hdbscan_labels(p, 3);
  EXPECT_EQ(l.front(), 0);
  EXPECT_EQ(l.back(), 1);
}

TEST(Hdbscan, BlobsRecovered) {
  const auto b = make_blobs(4, 120, 16, 0.6, 9);
  const auto fit = fit_cluster_model({1, 2}, b.x, 25);
  EXPECT_EQ(fit.model.cluster_count(), 4u);
  EXPECT_GE(adjusted_rand_index(fit.labels, b.truth), 0.9);
}

TEST(Hdbscan, UniformNoiseIsMostlyNoise) {
  Rng rng(17);
  std::vector<std::vector<double>> p(500, std::vector<double>(8));
  for (auto& v : p)
    for (auto& e : v) e = rng.uniform();
  const auto l = hdbscan_labels(p, 50);
  const auto noise = std::count(l.begin(), l.end(), kNoise);
  EXPECT_GE(noise, 250);
}

TEST(Hdbscan, FewerThanMinSizeIsAllNoise) {
  std::vector<std::vector<double>> p{{0.0}, {0.1}, {0.2}};
  EXPECT_EQ(hdbscan_labels(p, 25), std::vector<int>(3, kNoise));
}

TEST(Hdbscan, IdenticalPointsFormOneCluster) {
  std::vector<std::vector<double>> p(40, std::vector<double>{1.0, 2.0});
  EXPECT_EQ(hdbscan_labels(p, 25), std::vector<int>(40, 0));
  std::vector<std::vector<float>> x(40, std::vector<float>(10, 0.5f));
  const auto fit = fit_cluster_model({0, 0}, x, 25);
  EXPECT_EQ(fit.model.cluster_count(), 1u);
  EXPECT_EQ(assign(fit.model, x[0]), 0);
}

TEST(Hdbscan, Deterministic) {
  const auto b = make_blobs(3, 60, 8, 1.5, 4);
  const auto a = fit_cluster_model({0, 0}, b.x, 25);
  const auto c = fit_cluster_model({0, 0}, b.x, 25);
  EXPECT_EQ(a.labels, c.labels);
  EXPECT_EQ(a.model, c.model);
}

TEST(Hdbscan, PlantedPerHeadCounts) {
  std::vector<ClusterModel> models;
  std::size_t within = 0;
  const std::size_t heads = 10;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t planted = 1 + h % 5;
    const auto b = make_blobs(planted, 80, 16, 0.5, 100 + h);
    auto fit = fit_cluster_model({static_cast<std::uint32_t>(h / 4), static_cast<std::uint32_t>(h % 4)}, b.x, 25);
    const auto got = static_cast<long>(fit.model.cluster_count());
    within += std::abs(got - static_cast<long>(planted)) <= 1;
    models.push_back(std::move(fit.model));
  }
  EXPECT_GE(within, heads * 8 / 10);
  const auto s = cluster_stats(models);
  EXPECT_EQ(s.rows.size(), heads);
  std::size_t total = 0;
  for (auto& [c, n] : s.histogram) total += n;
  EXPECT_EQ(total, heads);
  EXPECT_EQ(s.per_layer.size(), 3u);
}

TEST(Assign, TrainingPointsKeepLabelsAndOutliersAreNoise) {
  const auto b = make_blobs(3, 80, 16, 0.5, 21);
  const auto fit = fit_cluster_model({0, 1}, b.x, 25);
  for (std::size_t i = 0; i < b.x.size(); ++i)
    if (fit.labels[i] != kNoise) {
      EXPECT_EQ(assign(fit.model, b.x[i]), fit.labels[i]) << i;
    }
  EXPECT_EQ(assign(fit.model, std::vector<float>(16, 1000.0f)), kNoise);
  EXPECT_THROW(assign(fit.model, std::vector<float>(3, 0.0f)), ContractError);
}

TEST(ClusterIo, ContainerRoundTrip) {
  std::vector<ClusterModel> models;
  for (std::uint32_t h = 0; h < 3; ++h) models.push_back(fit_cluster_model({2, h}, make_blobs(2, 40, 10, 0.4, h).x, 25).model);
  const auto bytes = encode_cluster_models(models);
  EXPECT_EQ(decode_cluster_models(bytes), models);
  const auto path = std::filesystem::temp_directory_path() / ("apmae_cl_" + std::to_string(::getpid()) + ".bin");
  save_cluster_models(models, path);
  EXPECT_EQ(load_cluster_models(path), models);
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_cluster_models(bad), FormatError);
  const std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() - 9));
  EXPECT_THROW(decode_cluster_models(cut), FormatError);
}

TEST(ClusterIo, AssignmentsRoundTrip) {
  const std::vector<Assignment> rows{{{0, 1}, 5, 2}, {{3, 0}, 9, kNoise}};
  const auto text = assignments_tsv(rows);
  EXPECT_EQ(text, "layer\thead\tsample_id\tlabel\n0\t1\t5\t2\n3\t0\t9\t-1\n");
  EXPECT_EQ(parse_assignments(text), rows);
  EXPECT_THROW(parse_assignments("layer\thead\tsample_id\tlabel\n0\t1\n"), FormatError);
}

TEST(ClusterStats, CsvLayouts) {
  ClusterModel a, b;
  a.head = {0, 0};
  b.head = {0, 1};
  a.clusters.resize(2);
  b.clusters.resize(2);
  const std::vector<ClusterModel> ms{a, b};
  const auto s = cluster_stats(ms);
  EXPECT_EQ(cluster_counts_csv(s), "layer,head,clusters\n0,0,2\n0,1,2\n");
  EXPECT_EQ(cluster_histogram_csv(s), "layer,clusters,heads\n0,2,2\n");
  EXPECT_EQ(default_min_cluster_size(1000), 25u);
  EXPECT_EQ(default_min_cluster_size(7000), 70u);
}

}  // namespace
}  // namespace apmae

namespace apmae {
namespace {

TEST(EmbeddingStore, RoundTripAndErrors) {
  std::vector<Embedding> rows{{{0, 1}, 7, {1.5f, -2.0f, 0.25f}}, {{2, 3}, 9, {0.0f, 1.0f, 2.0f}}};
  const auto bytes = encode_embeddings(rows);
  EXPECT_EQ(bytes.size(), 4u + 2 + 4 + 8 + 2 * (16 + 12));
  EXPECT_EQ(decode_embeddings(bytes), rows);
  auto cut = bytes;
  cut.pop_back();
  EXPECT_THROW(decode_embeddings(cut), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_embeddings(bad), FormatError);
  rows[1].values.pop_back();
  EXPECT_THROW(encode_embeddings(rows), ContractError);
}

}  // namespace
}  // namespace apmae
