#pragma once

// Per-head clustering of pattern embeddings: principal-axis reduction followed
// by hierarchical density clustering (mutual-reachability minimum spanning
// tree, condensed tree, excess-of-mass selection) with a NOISE label.
//
// Container file layout (little-endian):
//   char[4] "APCL", u16 version, u32 model count
//   per model: u32 layer, u32 head, u64 byte offset, u64 byte length
//   model blobs, each:
//     u32 in_dim, u32 out_dim, f64 mean[in], f64 axes[out*in], f64 explained[out]
//     u32 min_cluster_size, u64 training samples, u32 cluster count
//     per cluster: i32 label, u64 size, f64 radius, f64 centre[out]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "apmae/binary_io.hpp"
#include "apmae/errors.hpp"
#include "apmae/lm.hpp"

namespace apmae {

inline constexpr int kNoise = -1;

// ---------------------------------------------------------------------------
// Reduction

struct Reducer {
  std::vector<double> mean;
  Eigen::MatrixXd axes;           // out_dim x in_dim, orthonormal rows
  std::vector<double> explained;  // variance fraction per axis

  std::size_t in_dim() const { return mean.size(); }
  std::size_t out_dim() const { return static_cast<std::size_t>(axes.rows()); }

  std::vector<double> project(std::span<const float> x) const {
    if (x.size() != in_dim()) throw ContractError("embedding width does not match the reducer");
    Eigen::VectorXd c(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) c(static_cast<Eigen::Index>(i)) = static_cast<double>(x[i]) - mean[i];
    const Eigen::VectorXd y = axes * c;
    return {y.data(), y.data() + y.size()};
  }

  friend bool operator==(const Reducer& a, const Reducer& b) {
    return a.mean == b.mean && a.axes == b.axes && a.explained == b.explained;
  }
};

struct Reduction {
  Reducer reducer;
  std::vector<std::vector<double>> points;
};

/// Centred projection onto the top `out_dim` principal axes. Each axis is
/// oriented so its first non-negligible coordinate is positive.
inline Reduction reduce(std::span<const std::vector<float>> embeddings, std::size_t out_dim = 8) {
  if (embeddings.size() < out_dim) {
    throw ContractError("reduction to " + std::to_string(out_dim) + " dims needs at least that many samples, got " +
                        std::to_string(embeddings.size()));
  }
  if (embeddings.empty()) throw ContractError("no embeddings to reduce");
  const std::size_t d = embeddings[0].size();
  if (out_dim > d) throw ConfigError("out_dim exceeds the embedding width");
  const auto n = static_cast<Eigen::Index>(embeddings.size());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = embeddings[static_cast<std::size_t>(i)];
    if (e.size() != d) throw ContractError("embeddings differ in width");
    for (std::size_t j = 0; j < d; ++j) X(i, static_cast<Eigen::Index>(j)) = e[j];
  }
  const Eigen::RowVectorXd mu = X.colwise().mean();
  X.rowwise() -= mu;
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(std::max<Eigen::Index>(1, n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const double total = std::max(0.0, eig.eigenvalues().sum());

  Reduction r;
  r.reducer.mean.assign(mu.data(), mu.data() + mu.size());
  r.reducer.axes.resize(static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < out_dim; ++k) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - k);  // eigenvalues ascend
    Eigen::VectorXd axis = eig.eigenvectors().col(col);
    for (Eigen::Index j = 0; j < axis.size(); ++j)
      if (std::abs(axis(j)) > 1e-12) {
        if (axis(j) < 0) axis = -axis;
        break;
      }
    r.reducer.axes.row(static_cast<Eigen::Index>(k)) = axis.transpose();
    const double lambda = std::max(0.0, eig.eigenvalues()(col));
    r.reducer.explained.push_back(total > 0 ? lambda / total : 0.0);
  }
  const Eigen::MatrixXd Y = X * r.reducer.axes.transpose();
  r.points.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& p = r.points[static_cast<std::size_t>(i)];
    p.resize(out_dim);
    for (Eigen::Index k = 0; k < Y.cols(); ++k) p[static_cast<std::size_t>(k)] = Y(i, k);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Density clustering

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

struct CondensedEdge {
  std::size_t parent;
  std::size_t child;  // < n: a point, >= n: a cluster
  double lambda;
  std::size_t size;
};

inline constexpr double kMaxLambda = 1e12;

inline double to_lambda(double dist) { return dist > 1.0 / kMaxLambda ? 1.0 / dist : kMaxLambda; }

}  // namespace detail

/// Labels in input order; clusters renumbered by their lowest member index.
inline std::vector<int> hdbscan_labels(const std::vector<std::vector<double>>& pts, std::size_t min_cluster_size) {
  using namespace detail;
  const std::size_t n = pts.size();
  if (min_cluster_size < 2) throw ConfigError("min_cluster_size must be at least 2");
  std::vector<int> labels(n, kNoise);
  if (n < min_cluster_size || n < 2) return labels;

  bool identical = true;
  for (std::size_t i = 1; i < n && identical; ++i) identical = sq_dist(pts[0], pts[i]) == 0.0;
  if (identical) return std::vector<int>(n, 0);

  // Core distance: distance to the min_cluster_size-th neighbour, self included.
  const std::size_t k = std::min(min_cluster_size, n);
  std::vector<double> core(n);
#pragma omp parallel
  {
    std::vector<double> row(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      for (std::size_t j = 0; j < n; ++j) row[j] = sq_dist(pts[i], pts[j]);
      std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k - 1), row.end());
      core[i] = std::sqrt(row[k - 1]);
    }
  }

  // Prim's algorithm over the dense mutual-reachability graph.
  struct Edge {
    std::size_t a, b;
    double w;
  };
  std::vector<Edge> edges;
  edges.reserve(n - 1);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::vector<std::uint8_t> in_tree(n, 0);
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t step = 1; step < n; ++step) {
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double mr = std::max({std::sqrt(sq_dist(pts[current], pts[j])), core[current], core[j]});
      if (mr < best[j]) {
        best[j] = mr;
        from[j] = current;
      }
    }
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j)
      if (!in_tree[j] && (next == n || best[j] < best[next])) next = j;
    in_tree[next] = 1;
    edges.push_back({from[next], next, best[next]});
    current = next;
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) { return x.w < y.w; });

  // Single-linkage dendrogram: nodes n..2n-2 are merges.
  std::vector<std::size_t> parent(2 * n - 1), left(n - 1), right(n - 1), size(2 * n - 1, 1);
  std::vector<double> height(n - 1);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto ra = find(edges[e].a), rb = find(edges[e].b);
    const std::size_t node = n + e;
    left[e] = ra;
    right[e] = rb;
    height[e] = edges[e].w;
    size[node] = size[ra] + size[rb];
    parent[ra] = parent[rb] = node;
  }
  const std::size_t root = 2 * n - 2;

  // Condense: walk down from the root, keeping splits where both sides are big enough.
  std::vector<CondensedEdge> condensed;
  std::vector<std::size_t> relabel(2 * n - 1, 0);
  std::size_t next_label = n + 1;
  relabel[root] = n;
  std::vector<std::size_t> stack{root};
  auto leaves_of = [&](std::size_t node, std::size_t cluster, double lambda) {
    std::vector<std::size_t> s{node};
    while (!s.empty()) {
      const auto x = s.back();
      s.pop_back();
      if (x < n) {
        condensed.push_back({cluster, x, lambda, 1});
      } else {
        s.push_back(left[x - n]);
        s.push_back(right[x - n]);
      }
    }
  };
  while (!stack.empty()) {
    const auto node = stack.back();
    stack.pop_back();
    if (node < n) continue;
    const auto l = left[node - n], r = right[node - n];
    const double lambda = to_lambda(height[node - n]);
    const std::size_t cl = relabel[node];
    const bool big_l = size[l] >= min_cluster_size, big_r = size[r] >= min_cluster_size;
    if (big_l && big_r) {
      for (auto c : {l, r}) {
        relabel[c] = next_label++;
        condensed.push_back({cl, relabel[c], lambda, size[c]});
        stack.push_back(c);
      }
    } else {
      for (auto [c, big] : {std::pair{l, big_l}, std::pair{r, big_r}}) {
        if (big) {
          relabel[c] = cl;
          stack.push_back(c);
        } else {
          leaves_of(c, cl, lambda);
        }
      }
    }
  }

  // Excess-of-mass selection; the root is never selectable.
  const std::size_t clusters = next_label - n;
  std::vector<double> birth(clusters, 0.0), stability(clusters, 0.0);
  std::vector<std::vector<std::size_t>> children(clusters);
  for (const auto& e : condensed)
    if (e.child >= n) {
      birth[e.child - n] = e.lambda;
      children[e.parent - n].push_back(e.child - n);
    }
  for (const auto& e : condensed)
    stability[e.parent - n] += (e.lambda - birth[e.parent - n]) * static_cast<double>(e.size);

  std::vector<std::uint8_t> selected(clusters, 1);
  selected[0] = 0;
  for (std::size_t c = clusters; c-- > 1;) {
    double sub = 0;
    for (auto ch : children[c]) sub += stability[ch];
    if (!children[c].empty() && sub > stability[c]) {
      selected[c] = 0;
      stability[c] = sub;
    } else {
      std::vector<std::size_t> s(children[c]);
      while (!s.empty()) {
        const auto x = s.back();
        s.pop_back();
        selected[x] = 0;
        s.insert(s.end(), children[x].begin(), children[x].end());
      }
    }
  }

  std::vector<std::size_t> cluster_parent(clusters, 0), point_cluster(n, 0);
  for (const auto& e : condensed) {
    if (e.child >= n)
      cluster_parent[e.child - n] = e.parent - n;
    else
      point_cluster[e.child] = e.parent - n;
  }
  std::vector<long> raw(n, -1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = point_cluster[i];; c = cluster_parent[c]) {
      if (selected[c]) {
        raw[i] = static_cast<long>(c);
        break;
      }
      if (c == 0) break;
    }

  std::map<long, int> canon;
  for (std::size_t i = 0; i < n; ++i)
    if (raw[i] >= 0 && !canon.count(raw[i])) {
      const int id = static_cast<int>(canon.size());
      canon[raw[i]] = id;
    }
  for (std::size_t i = 0; i < n; ++i) labels[i] = raw[i] >= 0 ? canon[raw[i]] : kNoise;
  return labels;
}

// ---------------------------------------------------------------------------
// Fitted models

struct ClusterCentroid {
  int label = 0;
  std::uint64_t size = 0;
  double radius = 0.0;
  std::vector<double> centre;
  friend bool operator==(const ClusterCentroid&, const ClusterCentroid&) = default;
};

struct ClusterModel {
  HeadKey head;
  Reducer reducer;
  std::uint32_t min_cluster_size = 25;
  std::uint64_t samples = 0;
  std::vector<ClusterCentroid> clusters;

  std::size_t cluster_count() const { return clusters.size(); }
  friend bool operator==(const ClusterModel&, const ClusterModel&) = default;
};

struct ClusterFit {
  ClusterModel model;
  std::vector<int> labels;
};

/// 1% of the samples, at least 25.
inline std::uint32_t default_min_cluster_size(std::size_t samples) {
  return static_cast<std::uint32_t>(std::max<std::size_t>(25, samples / 100));
}

/// Reduce, cluster, and summarise each cluster by centroid and radius.
inline ClusterFit fit_cluster_model(HeadKey head, std::span<const std::vector<float>> embeddings,
                                    std::uint32_t min_cluster_size = 0, std::size_t out_dim = 8) {
  if (min_cluster_size == 0) min_cluster_size = default_min_cluster_size(embeddings.size());
  ClusterFit fit;
  fit.model.head = head;
  fit.model.min_cluster_size = min_cluster_size;
  fit.model.samples = embeddings.size();
  auto red = reduce(embeddings, out_dim);
  fit.model.reducer = std::move(red.reducer);
  fit.labels = hdbscan_labels(red.points, min_cluster_size);
  int max_label = -1;
  for (int l : fit.labels) max_label = std::max(max_label, l);
  for (int c = 0; c <= max_label; ++c) {
    ClusterCentroid cc;
    cc.label = c;
    cc.centre.assign(out_dim, 0.0);
    for (std::size_t i = 0; i < fit.labels.size(); ++i)
      if (fit.labels[i] == c) {
        ++cc.size;
        for (std::size_t k = 0; k < out_dim; ++k) cc.centre[k] += red.points[i][k];
      }
    for (auto& v : cc.centre) v /= static_cast<double>(cc.size);
    for (std::size_t i = 0; i < fit.labels.size(); ++i)
      if (fit.labels[i] == c) cc.radius = std::max(cc.radius, std::sqrt(detail::sq_dist(red.points[i], cc.centre)));
    fit.model.clusters.push_back(std::move(cc));
  }
  return fit;
}

/// Nearest centroid in reduced space, or NOISE beyond that cluster's radius.
inline int assign(const ClusterModel& model, std::span<const float> embedding) {
  const auto y = model.reducer.project(embedding);
  int best = kNoise;
  double best_d = std::numeric_limits<double>::infinity();
  double radius = 0;
  for (const auto& c : model.clusters) {
    const double d = std::sqrt(detail::sq_dist(y, c.centre));
    if (d < best_d) {
      best_d = d;
      best = c.label;
      radius = c.radius;
    }
  }
  if (best == kNoise || best_d > radius * (1.0 + 1e-9) + 1e-12) return kNoise;
  return best;
}

// ---------------------------------------------------------------------------
// Statistics

struct HeadClusterCount {
  HeadKey head;
  std::size_t count = 0;
};

struct ClusterStats {
  std::vector<HeadClusterCount> rows;
  std::map<std::size_t, std::size_t> histogram;                             // clusters -> heads
  std::map<std::uint32_t, std::map<std::size_t, std::size_t>> per_layer;    // layer -> clusters -> heads
};

inline std::size_t count_clusters(std::span<const int> labels) {
  std::vector<int> seen;
  for (int l : labels)
    if (l != kNoise && std::find(seen.begin(), seen.end(), l) == seen.end()) seen.push_back(l);
  return seen.size();
}

inline ClusterStats cluster_stats(std::span<const ClusterModel> models) {
  ClusterStats s;
  for (const auto& m : models) {
    s.rows.push_back({m.head, m.cluster_count()});
    ++s.histogram[m.cluster_count()];
    ++s.per_layer[m.head.layer][m.cluster_count()];
  }
  return s;
}

inline std::string cluster_counts_csv(const ClusterStats& s) {
  std::string out = "layer,head,clusters\n";
  for (const auto& r : s.rows)
    out += std::to_string(r.head.layer) + "," + std::to_string(r.head.head) + "," + std::to_string(r.count) + "\n";
  return out;
}

/// Histogram in the per-layer layout: one row per (layer, cluster count).
inline std::string cluster_histogram_csv(const ClusterStats& s) {
  std::string out = "layer,clusters,heads\n";
  for (const auto& [layer, hist] : s.per_layer)
    for (const auto& [count, heads] : hist)
      out += std::to_string(layer) + "," + std::to_string(count) + "," + std::to_string(heads) + "\n";
  return out;
}

/// Adjusted Rand index between two labelings (NOISE is an ordinary label here).
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw ContractError("labelings differ in length");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++ra[a[i]];
    ++rb[b[i]];
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double index = 0, sa = 0, sb = 0;
  for (auto& [k, v] : joint) index += c2(v);
  for (auto& [k, v] : ra) sa += c2(v);
  for (auto& [k, v] : rb) sb += c2(v);
  const double total = c2(static_cast<double>(a.size()));
  const double expected = total > 0 ? sa * sb / total : 0;
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Serialisation

inline constexpr char kClusterMagic[4] = {'A', 'P', 'C', 'L'};
inline constexpr std::uint16_t kClusterVersion = 1;

namespace detail {

inline void write_model_blob(io::ByteWriter& w, const ClusterModel& m) {
  const auto in = static_cast<std::uint32_t>(m.reducer.in_dim());
  const auto out = static_cast<std::uint32_t>(m.reducer.out_dim());
  w.put<std::uint32_t>(in);
  w.put<std::uint32_t>(out);
  w.put_array<double>(m.reducer.mean);
  for (Eigen::Index r = 0; r < m.reducer.axes.rows(); ++r)
    for (Eigen::Index c = 0; c < m.reducer.axes.cols(); ++c) w.put<double>(m.reducer.axes(r, c));
  w.put_array<double>(m.reducer.explained);
  w.put<std::uint32_t>(m.min_cluster_size);
  w.put<std::uint64_t>(m.samples);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.clusters.size()));
  for (const auto& c : m.clusters) {
    w.put<std::int32_t>(c.label);
    w.put<std::uint64_t>(c.size);
    w.put<double>(c.radius);
    w.put_array<double>(c.centre);
  }
}

inline ClusterModel read_model_blob(io::ByteReader& r, HeadKey head) {
  ClusterModel m;
  m.head = head;
  const auto in = r.get<std::uint32_t>();
  const auto out = r.get<std::uint32_t>();
  if (out > in) throw FormatError("cluster model reduces to more dims than it reads", r.offset());
  m.reducer.mean.resize(in);
  r.get_array<double>(m.reducer.mean);
  m.reducer.axes.resize(out, in);
  for (Eigen::Index i = 0; i < m.reducer.axes.rows(); ++i)
    for (Eigen::Index j = 0; j < m.reducer.axes.cols(); ++j) m.reducer.axes(i, j) = r.get<double>();
  m.reducer.explained.resize(out);
  r.get_array<double>(m.reducer.explained);
  m.min_cluster_size = r.get<std::uint32_t>();
  m.samples = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    ClusterCentroid c;
    c.label = r.get<std::int32_t>();
    c.size = r.get<std::uint64_t>();
    c.radius = r.get<double>();
    c.centre.resize(out);
    r.get_array<double>(c.centre);
    m.clusters.push_back(std::move(c));
  }
  return m;
}

}  // namespace detail

inline std::vector<unsigned char> encode_cluster_models(std::span<const ClusterModel> models) {
  std::vector<std::vector<unsigned char>> blobs;
  for (const auto& m : models) {
    io::ByteWriter w;
    detail::write_model_blob(w, m);
    blobs.push_back(std::move(w.bytes()));
  }
  io::ByteWriter w;
  w.put_bytes(std::string_view(kClusterMagic, 4));
  w.put<std::uint16_t>(kClusterVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(models.size()));
  std::uint64_t offset = 4 + 2 + 4 + models.size() * (4 + 4 + 8 + 8);
  for (std::size_t i = 0; i < models.size(); ++i) {
    w.put<std::uint32_t>(models[i].head.layer);
    w.put<std::uint32_t>(models[i].head.head);
    w.put<std::uint64_t>(offset);
    w.put<std::uint64_t>(blobs[i].size());
    offset += blobs[i].size();
  }
  for (const auto& b : blobs) w.put_bytes(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
  return std::move(w.bytes());
}

inline std::vector<ClusterModel> decode_cluster_models(std::span<const unsigned char> bytes) {
  io::ByteReader r(bytes);
  for (int i = 0; i < 4; ++i)
    if (r.get<char>() != kClusterMagic[i]) throw FormatError("bad cluster container magic", static_cast<std::uint64_t>(i));
  if (r.get<std::uint16_t>() != kClusterVersion) throw FormatError("unsupported cluster container version", 4);
  const auto count = r.get<std::uint32_t>();
  struct Entry {
    HeadKey head;
    std::uint64_t offset, length;
  };
  std::vector<Entry> index;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.head.layer = r.get<std::uint32_t>();
    e.head.head = r.get<std::uint32_t>();
    e.offset = r.get<std::uint64_t>();
    e.length = r.get<std::uint64_t>();
    if (e.offset + e.length > bytes.size() || e.offset + e.length < e.offset)
      throw FormatError("cluster model extends past end of file", e.offset);
    index.push_back(e);
  }
  std::vector<ClusterModel> out;
  for (const auto& e : index) {
    io::ByteReader blob(bytes.subspan(e.offset, e.length), e.offset);
    out.push_back(detail::read_model_blob(blob, e.head));
    if (!blob.at_end()) throw FormatError("trailing bytes in cluster model", blob.offset());
  }
  return out;
}

inline void save_cluster_models(std::span<const ClusterModel> models, const std::filesystem::path& path) {
  io::atomic_write_bytes(path, encode_cluster_models(models));
}

inline std::vector<ClusterModel> load_cluster_models(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return decode_cluster_models(bytes);
}

struct Assignment {
  HeadKey head;
  std::uint64_t sample_id = 0;
  int label = kNoise;
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

inline std::string assignments_tsv(std::span<const Assignment> rows) {
  std::string s = "layer\thead\tsample_id\tlabel\n";
  for (const auto& a : rows)
    s += std::to_string(a.head.layer) + "\t" + std::to_string(a.head.head) + "\t" + std::to_string(a.sample_id) + "\t" +
         std::to_string(a.label) + "\n";
  return s;
}

inline std::vector<Assignment> parse_assignments(std::string_view text) {
  std::vector<Assignment> out;
  std::uint64_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty() || line_no == 1) {
      if (line_no == 1 && line != "layer\thead\tsample_id\tlabel") throw FormatError("bad assignments header", 0);
      continue;
    }
    const auto f = detail::split(line, '\t');
    if (f.size() != 4) throw FormatError("expected 4 fields on line " + std::to_string(line_no), line_no);
    Assignment a;
    a.head.layer = detail::parse_unsigned<std::uint32_t>(f[0], line_no, "layer");
    a.head.head = detail::parse_unsigned<std::uint32_t>(f[1], line_no, "head");
    a.sample_id = detail::parse_unsigned<std::uint64_t>(f[2], line_no, "sample id");
    if (f[3] == "-1") {
      a.label = kNoise;
    } else {
      a.label = static_cast<int>(detail::parse_unsigned<std::uint32_t>(f[3], line_no, "label"));
    }
    out.push_back(a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding store "APEM": magic, u16 version, u32 dim, u64 count, then per
// record u32 layer, u32 head, u64 sample id, dim floats.

struct Embedding {
  HeadKey head;
  std::uint64_t sample_id = 0;
  std::vector<float> values;
  friend bool operator==(const Embedding&, const Embedding&) = default;
};

inline constexpr char kEmbeddingMagic[4] = {'A', 'P', 'E', 'M'};

inline std::vector<unsigned char> encode_embeddings(std::span<const Embedding> rows) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kEmbeddingMagic, 4));
  w.put<std::uint16_t>(1);
  const auto dim = rows.empty() ? 0u : static_cast<std::uint32_t>(rows.front().values.size());
  w.put<std::uint32_t>(dim);
  w.put<std::uint64_t>(rows.size());
  for (const auto& e : rows) {
    if (e.values.size() != dim) throw ContractError("embeddings differ in width");
    w.put<std::uint32_t>(e.head.layer);
    w.put<std::uint32_t>(e.head.head);
    w.put<std::uint64_t>(e.sample_id);
    w.put_array(std::span<const float>(e.values));
  }
  return std::move(w.bytes());
}

inline std::vector<Embedding> decode_embeddings(std::span<const unsigned char> bytes) {
  io::ByteReader r(bytes);
  if (r.get_fixed_string(4) != std::string_view(kEmbeddingMagic, 4)) throw FormatError("not an embedding store", 0);
  if (const auto v = r.get<std::uint16_t>(); v != 1) throw FormatError("unsupported embedding store version " + std::to_string(v), 4);
  const auto dim = r.get<std::uint32_t>();
  const auto n = r.get<std::uint64_t>();
  if (n > bytes.size() / (16 + 4ull * dim)) throw FormatError("embedding count exceeds file size", 10);
  std::vector<Embedding> out(n);
  for (auto& e : out) {
    e.head.layer = r.get<std::uint32_t>();
    e.head.head = r.get<std::uint32_t>();
    e.sample_id = r.get<std::uint64_t>();
    e.values.resize(dim);
    r.get_array(std::span<float>(e.values));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after embeddings", r.offset());
  return out;
}

}  // namespace apmae
