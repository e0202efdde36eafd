#include "palign/curriculum.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "palign/error.hpp"

namespace palign {

namespace {

using DPoint = std::vector<double>;

DPoint to_dpoint(const Tensor<float>& t) {
  DPoint p(static_cast<size_t>(t.numel()));
  for (size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(t.data()[i]);
  return p;
}

double dist2(const DPoint& a, const DPoint& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void check_rank1_dim(const Tensor<float>& t, int d, const char* what) {
  if (t.ndim() != 1)
    throw DimensionError(std::string(what) + ": expected rank-1, got " + Tensor<float>::shape_string(t.shape()));
  if (t.dim(0) != d)
    throw DimensionError(std::string(what) + ": dim " + std::to_string(t.dim(0)) + " != " + std::to_string(d));
}

void check_records(const std::vector<PseudoLabelRecord>& records, int k, int n_embeddings) {
  for (const auto& r : records) {
    if (r.label < 0 || r.label >= k)
      throw ContractError("pseudo-label class " + std::to_string(r.label) + " outside [0," + std::to_string(k) + ")");
    if (r.sample_id < 0 || r.sample_id >= n_embeddings)
      throw ContractError("pseudo-label sample_id " + std::to_string(r.sample_id) + " outside the embedding list");
  }
}

double cosine(const DPoint& a, const DPoint& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  double denom = std::sqrt(aa * bb);
  return denom > 0.0 ? ab / denom : 0.0;
}

// Assignment objective: squared distance to the cluster's own mean. Used to
// pick among restarts, so it must match what "better clustering" means.
double assignment_cost(const std::vector<DPoint>& pts, const std::vector<int>& assign, int t) {
  size_t d = pts[0].size();
  std::vector<DPoint> sums(static_cast<size_t>(t), DPoint(d, 0.0));
  std::vector<int> counts(static_cast<size_t>(t), 0);
  for (size_t i = 0; i < pts.size(); ++i) {
    for (size_t j = 0; j < d; ++j) sums[static_cast<size_t>(assign[i])][j] += pts[i][j];
    ++counts[static_cast<size_t>(assign[i])];
  }
  std::vector<DPoint> means = sums;
  for (int c = 0; c < t; ++c)
    if (counts[static_cast<size_t>(c)] > 0)
      for (auto& x : means[static_cast<size_t>(c)]) x /= counts[static_cast<size_t>(c)];
  double cost = 0.0;
  for (size_t i = 0; i < pts.size(); ++i) cost += dist2(pts[i], means[static_cast<size_t>(assign[i])]);
  return cost;
}

std::vector<DPoint> kmeanspp_init(const std::vector<DPoint>& pts, int t, Rng& rng) {
  int k = static_cast<int>(pts.size());
  std::vector<DPoint> centers;
  centers.push_back(pts[static_cast<size_t>(rng.uniform_int(0, k - 1))]);
  std::vector<double> d2(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) d2[static_cast<size_t>(i)] = dist2(pts[static_cast<size_t>(i)], centers[0]);
  while (static_cast<int>(centers.size()) < t) {
    double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    int idx;
    if (total <= 0.0) {
      // All mass covered (duplicate points); fall back to a uniform draw.
      idx = rng.uniform_int(0, k - 1);
    } else {
      double r = rng.uniform() * total;
      idx = k - 1;
      double acc = 0.0;
      for (int i = 0; i < k; ++i) {
        acc += d2[static_cast<size_t>(i)];
        if (r < acc) {
          idx = i;
          break;
        }
      }
    }
    centers.push_back(pts[static_cast<size_t>(idx)]);
    for (int i = 0; i < k; ++i)
      d2[static_cast<size_t>(i)] = std::min(d2[static_cast<size_t>(i)], dist2(pts[static_cast<size_t>(i)], centers.back()));
  }
  return centers;
}

void update_centers(const std::vector<DPoint>& pts, const std::vector<int>& assign, std::vector<DPoint>& centers) {
  int t = static_cast<int>(centers.size());
  size_t d = pts[0].size();
  std::vector<DPoint> sums(static_cast<size_t>(t), DPoint(d, 0.0));
  std::vector<int> counts(static_cast<size_t>(t), 0);
  for (size_t i = 0; i < pts.size(); ++i) {
    for (size_t j = 0; j < d; ++j) sums[static_cast<size_t>(assign[i])][j] += pts[i][j];
    ++counts[static_cast<size_t>(assign[i])];
  }
  // A cluster that lost every point keeps its previous center.
  for (int c = 0; c < t; ++c)
    if (counts[static_cast<size_t>(c)] > 0) {
      for (size_t j = 0; j < d; ++j) centers[static_cast<size_t>(c)][j] = sums[static_cast<size_t>(c)][j] / counts[static_cast<size_t>(c)];
    }
}

constexpr int kMaxRounds = 100;

// Plain Lloyd iterations, no capacity constraint. Shapes the centers before
// the constrained sweeps take over.
void lloyd(const std::vector<DPoint>& pts, std::vector<DPoint>& centers) {
  int t = static_cast<int>(centers.size());
  std::vector<int> prev;
  for (int iter = 0; iter < kMaxRounds; ++iter) {
    std::vector<int> assign(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) {
      int best = 0;
      double bd = dist2(pts[i], centers[0]);
      for (int c = 1; c < t; ++c) {
        double d = dist2(pts[i], centers[static_cast<size_t>(c)]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      assign[i] = best;
    }
    update_centers(pts, assign, centers);
    if (assign == prev) break;
    prev = std::move(assign);
  }
}

// Capacity-constrained assignment sweeps: points in ascending index order,
// each to its nearest center that still has budget, then a center update,
// until the assignment repeats or the round cap is hit.
std::vector<int> constrained_rounds(const std::vector<DPoint>& pts, std::vector<DPoint>& centers, int budget) {
  int t = static_cast<int>(centers.size());
  std::vector<int> prev;
  std::vector<int> assign(pts.size(), 0);
  for (int round = 0; round < kMaxRounds; ++round) {
    std::vector<int> counts(static_cast<size_t>(t), 0);
    for (size_t i = 0; i < pts.size(); ++i) {
      std::vector<std::pair<double, int>> order(static_cast<size_t>(t));
      for (int c = 0; c < t; ++c) order[static_cast<size_t>(c)] = {dist2(pts[i], centers[static_cast<size_t>(c)]), c};
      std::sort(order.begin(), order.end());
      for (const auto& [d, c] : order)
        if (counts[static_cast<size_t>(c)] < budget) {
          assign[i] = c;
          ++counts[static_cast<size_t>(c)];
          break;
        }
    }
    update_centers(pts, assign, centers);
    if (assign == prev) break;
    prev = assign;
  }
  return assign;
}

struct ClusterStats {
  std::vector<DPoint> mean;
  std::vector<double> sse;
  std::vector<int> count;
};

ClusterStats cluster_stats(const std::vector<DPoint>& pts, const std::vector<int>& assign, int t) {
  size_t d = pts[0].size();
  ClusterStats st;
  st.mean.assign(static_cast<size_t>(t), DPoint(d, 0.0));
  st.sse.assign(static_cast<size_t>(t), 0.0);
  st.count.assign(static_cast<size_t>(t), 0);
  for (size_t i = 0; i < pts.size(); ++i) {
    auto c = static_cast<size_t>(assign[i]);
    for (size_t j = 0; j < d; ++j) st.mean[c][j] += pts[i][j];
    ++st.count[c];
  }
  for (int c = 0; c < t; ++c)
    if (st.count[static_cast<size_t>(c)] > 0)
      for (auto& x : st.mean[static_cast<size_t>(c)]) x /= st.count[static_cast<size_t>(c)];
  for (size_t i = 0; i < pts.size(); ++i) st.sse[static_cast<size_t>(assign[i])] += dist2(pts[i], st.mean[static_cast<size_t>(assign[i])]);
  return st;
}

// SSE of a cluster after removing x, plus the resulting mean. n is the size
// before removal. Standard incremental identities, exact in real arithmetic.
double sse_without(const DPoint& mean, double sse, int n, const DPoint& x, DPoint& mean_out) {
  if (n <= 1) {
    mean_out.assign(mean.size(), 0.0);
    return 0.0;
  }
  double s = sse - static_cast<double>(n) / (n - 1) * dist2(x, mean);
  mean_out.resize(mean.size());
  for (size_t j = 0; j < mean.size(); ++j) mean_out[j] = (n * mean[j] - x[j]) / (n - 1);
  return std::max(s, 0.0);
}

double sse_with(const DPoint& mean, double sse, int n, const DPoint& x) {
  if (n == 0) return 0.0;
  return sse + static_cast<double>(n) / (n + 1) * dist2(x, mean);
}

// The greedy sweep alone can lodge well above the optimum, and the accepted
// quality bar is tight (within 5% of exhaustive on small instances). A
// balance-preserving local search fixes that: first improving single move
// (into spare capacity) or pairwise swap, applied until none exists.
void swap_refine(const std::vector<DPoint>& pts, std::vector<int>& assign, int budget, int t) {
  int k = static_cast<int>(pts.size());
  auto st = cluster_stats(pts, assign, t);
  double total = std::accumulate(st.sse.begin(), st.sse.end(), 0.0);
  const int max_ops = 20 * k * t;
  DPoint ma, mb;
  for (int op = 0; op < max_ops; ++op) {
    bool applied = false;
    // Single moves.
    for (int i = 0; i < k && !applied; ++i) {
      int a = assign[static_cast<size_t>(i)];
      double base_a = sse_without(st.mean[static_cast<size_t>(a)], st.sse[static_cast<size_t>(a)],
                                  st.count[static_cast<size_t>(a)], pts[static_cast<size_t>(i)], ma);
      for (int b = 0; b < t && !applied; ++b) {
        if (b == a || st.count[static_cast<size_t>(b)] >= budget) continue;
        double cand = total - st.sse[static_cast<size_t>(a)] - st.sse[static_cast<size_t>(b)] + base_a +
                      sse_with(st.mean[static_cast<size_t>(b)], st.sse[static_cast<size_t>(b)],
                               st.count[static_cast<size_t>(b)], pts[static_cast<size_t>(i)]);
        if (cand < total - 1e-12 * std::max(1.0, total)) {
          assign[static_cast<size_t>(i)] = b;
          st = cluster_stats(pts, assign, t);
          total = std::accumulate(st.sse.begin(), st.sse.end(), 0.0);
          applied = true;
        }
      }
    }
    // Pairwise swaps keep every size fixed.
    for (int i = 0; i < k && !applied; ++i)
      for (int j = i + 1; j < k && !applied; ++j) {
        int a = assign[static_cast<size_t>(i)], b = assign[static_cast<size_t>(j)];
        if (a == b) continue;
        double na = sse_without(st.mean[static_cast<size_t>(a)], st.sse[static_cast<size_t>(a)],
                                st.count[static_cast<size_t>(a)], pts[static_cast<size_t>(i)], ma);
        double nb = sse_without(st.mean[static_cast<size_t>(b)], st.sse[static_cast<size_t>(b)],
                                st.count[static_cast<size_t>(b)], pts[static_cast<size_t>(j)], mb);
        na = sse_with(ma, na, st.count[static_cast<size_t>(a)] - 1, pts[static_cast<size_t>(j)]);
        nb = sse_with(mb, nb, st.count[static_cast<size_t>(b)] - 1, pts[static_cast<size_t>(i)]);
        double cand = total - st.sse[static_cast<size_t>(a)] - st.sse[static_cast<size_t>(b)] + na + nb;
        if (cand < total - 1e-12 * std::max(1.0, total)) {
          std::swap(assign[static_cast<size_t>(i)], assign[static_cast<size_t>(j)]);
          st = cluster_stats(pts, assign, t);
          total = std::accumulate(st.sse.begin(), st.sse.end(), 0.0);
          applied = true;
        }
      }
    // Three-cycle rotations (i -> j's cluster, j -> l's, l -> i's) also keep
    // sizes fixed and escape states two-point swaps cannot leave.
    if (t >= 3)
      for (int i = 0; i < k && !applied; ++i)
        for (int j = 0; j < k && !applied; ++j)
          for (int l = 0; l < k && !applied; ++l) {
            int a = assign[static_cast<size_t>(i)], b = assign[static_cast<size_t>(j)], c = assign[static_cast<size_t>(l)];
            if (a == b || b == c || a == c) continue;
            DPoint mc;
            double na = sse_without(st.mean[static_cast<size_t>(a)], st.sse[static_cast<size_t>(a)],
                                    st.count[static_cast<size_t>(a)], pts[static_cast<size_t>(i)], ma);
            double nb = sse_without(st.mean[static_cast<size_t>(b)], st.sse[static_cast<size_t>(b)],
                                    st.count[static_cast<size_t>(b)], pts[static_cast<size_t>(j)], mb);
            double nc = sse_without(st.mean[static_cast<size_t>(c)], st.sse[static_cast<size_t>(c)],
                                    st.count[static_cast<size_t>(c)], pts[static_cast<size_t>(l)], mc);
            na = sse_with(ma, na, st.count[static_cast<size_t>(a)] - 1, pts[static_cast<size_t>(l)]);
            nb = sse_with(mb, nb, st.count[static_cast<size_t>(b)] - 1, pts[static_cast<size_t>(i)]);
            nc = sse_with(mc, nc, st.count[static_cast<size_t>(c)] - 1, pts[static_cast<size_t>(j)]);
            double cand = total - st.sse[static_cast<size_t>(a)] - st.sse[static_cast<size_t>(b)] -
                          st.sse[static_cast<size_t>(c)] + na + nb + nc;
            if (cand < total - 1e-12 * std::max(1.0, total)) {
              assign[static_cast<size_t>(i)] = b;
              assign[static_cast<size_t>(j)] = c;
              assign[static_cast<size_t>(l)] = a;
              st = cluster_stats(pts, assign, t);
              total = std::accumulate(st.sse.begin(), st.sse.end(), 0.0);
              applied = true;
            }
          }
    if (!applied) break;
  }
}

void check_canonical(const std::vector<ClassCentroid>& centroids, const char* op) {
  if (centroids.empty()) throw ContractError(std::string(op) + ": empty centroid list");
  int d = centroids[0].center.ndim() == 1 ? centroids[0].center.dim(0) : -1;
  for (size_t i = 0; i < centroids.size(); ++i) {
    if (centroids[i].class_id != static_cast<int>(i))
      throw ContractError(std::string(op) + ": centroid list must be ordered by class id");
    check_rank1_dim(centroids[i].center, d, op);
  }
}

}  // namespace

std::vector<Tensor<float>> target_class_text_embeddings(const PromptBank<float>& bank, const TextEncoder<float>& text) {
  NoGradGuard ng;
  std::vector<Tensor<float>> out;
  out.reserve(static_cast<size_t>(bank.k));
  for (int cls = 0; cls < bank.k; ++cls) out.push_back(text.encode(bank.assemble(cls, Domain::Target, text))->value);
  return out;
}

std::vector<ClassCentroid> class_centroids(const std::vector<Tensor<float>>& embeddings,
                                           const std::vector<PseudoLabelRecord>& records,
                                           const std::vector<Tensor<float>>& text_embs) {
  int k = static_cast<int>(text_embs.size());
  if (k == 0) throw ContractError("class_centroids: no text embeddings");
  int d = text_embs[0].ndim() == 1 ? text_embs[0].dim(0) : -1;
  for (const auto& e : text_embs) check_rank1_dim(e, d, "class_centroids");
  for (const auto& e : embeddings) check_rank1_dim(e, d, "class_centroids");
  check_records(records, k, static_cast<int>(embeddings.size()));

  std::vector<DPoint> sums(static_cast<size_t>(k), DPoint(static_cast<size_t>(d), 0.0));
  std::vector<int> counts(static_cast<size_t>(k), 0);
  for (const auto& r : records) {
    const float* e = embeddings[static_cast<size_t>(r.sample_id)].data();
    for (int j = 0; j < d; ++j) sums[static_cast<size_t>(r.label)][static_cast<size_t>(j)] += static_cast<double>(e[j]);
    ++counts[static_cast<size_t>(r.label)];
  }

  std::vector<ClassCentroid> out(static_cast<size_t>(k));
  for (int c = 0; c < k; ++c) {
    auto& cent = out[static_cast<size_t>(c)];
    cent.class_id = c;
    cent.support = counts[static_cast<size_t>(c)];
    if (cent.support > 0) {
      Tensor<float> m({d});
      for (int j = 0; j < d; ++j)
        m.data()[j] = static_cast<float>(sums[static_cast<size_t>(c)][static_cast<size_t>(j)] / cent.support);
      cent.center = std::move(m);
    } else {
      cent.center = text_embs[static_cast<size_t>(c)];
    }
  }
  return out;
}

std::vector<std::vector<int>> balanced_kmeans(const std::vector<ClassCentroid>& centroids, int t, uint64_t seed) {
  check_canonical(centroids, "balanced_kmeans");
  int k = static_cast<int>(centroids.size());
  if (t < 1 || t > k)
    throw ContractError("balanced_kmeans: cluster count " + std::to_string(t) + " outside [1," + std::to_string(k) + "]");

  std::vector<DPoint> pts;
  pts.reserve(static_cast<size_t>(k));
  for (const auto& c : centroids) pts.push_back(to_dpoint(c.center));
  int budget = (k + t - 1) / t;

  // The constrained sweep is greedy in point order, so a single run can lodge
  // in a poor local optimum; restarts with derived seeds keep the result
  // deterministic while giving the greedy phase fresh starting centers.
  const int restarts = 10;
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<int> best_assign;
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, {0x6b3du, static_cast<uint64_t>(r)}));
    auto centers = kmeanspp_init(pts, t, rng);
    lloyd(pts, centers);
    auto assign = constrained_rounds(pts, centers, budget);
    swap_refine(pts, assign, budget, t);
    double cost = assignment_cost(pts, assign, t);
    if (cost < best_cost) {
      best_cost = cost;
      best_assign = std::move(assign);
    }
  }

  std::vector<std::vector<int>> clusters(static_cast<size_t>(t));
  for (int i = 0; i < k; ++i) clusters[static_cast<size_t>(best_assign[static_cast<size_t>(i)])].push_back(i);
  return clusters;
}

float cluster_difficulty(const std::vector<int>& cluster, const std::vector<Tensor<float>>& embeddings,
                         const std::vector<PseudoLabelRecord>& records, const std::vector<Tensor<float>>& text_embs) {
  if (cluster.empty()) throw ContractError("cluster_difficulty: empty cluster");
  int k = static_cast<int>(text_embs.size());
  for (int c : cluster)
    if (c < 0 || c >= k)
      throw ContractError("cluster_difficulty: class " + std::to_string(c) + " outside [0," + std::to_string(k) + ")");
  check_records(records, k, static_cast<int>(embeddings.size()));

  double outer = 0.0;
  int scored = 0;
  for (int c : cluster) {
    DPoint psi = to_dpoint(text_embs[static_cast<size_t>(c)]);
    double inner = 0.0;
    int count = 0;
    for (const auto& r : records)
      if (r.label == c) {
        inner += cosine(to_dpoint(embeddings[static_cast<size_t>(r.sample_id)]), psi);
        ++count;
      }
    if (count > 0) {
      outer += inner / count;
      ++scored;
    }
  }
  if (scored == 0) {
    std::fprintf(stderr, "[palign] warning: cluster has no pseudo-labeled samples, difficulty set to 0\n");
    return 0.0f;
  }
  return static_cast<float>(outer / scored);
}

std::vector<int> order_by_score(const std::vector<float>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)]; });
  return order;
}

CurriculumSchedule build_schedule(const std::vector<ClassCentroid>& centroids,
                                  const std::vector<Tensor<float>>& embeddings,
                                  const std::vector<PseudoLabelRecord>& records,
                                  const std::vector<Tensor<float>>& text_embs, int t, uint64_t seed) {
  if (text_embs.size() != centroids.size())
    throw ContractError("build_schedule: text embedding count " + std::to_string(text_embs.size()) +
                        " != class count " + std::to_string(centroids.size()));
  CurriculumSchedule sched;
  sched.clusters = balanced_kmeans(centroids, t, seed);
  sched.scores.reserve(sched.clusters.size());
  for (const auto& cluster : sched.clusters) {
    if (cluster.empty()) {
      // Capacity can leave a cluster with no classes; it scores 0 and yields
      // a vacuous stage rather than an error.
      std::fprintf(stderr, "[palign] warning: empty curriculum cluster, difficulty set to 0\n");
      sched.scores.push_back(0.0f);
    } else {
      sched.scores.push_back(cluster_difficulty(cluster, embeddings, records, text_embs));
    }
  }
  sched.order = order_by_score(sched.scores);
  return sched;
}

namespace {

std::string format_float(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

float parse_float(const std::string& s, const std::string& path) {
  float v = 0.0f;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError(path + ": bad score '" + s + "'");
  return v;
}

int parse_int(const std::string& s, const std::string& path, const char* what) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError(path + ": bad " + what + " '" + s + "'");
  return v;
}

}  // namespace

void write_schedule(const std::string& path, const CurriculumSchedule& schedule) {
  if (schedule.scores.size() != schedule.clusters.size() || schedule.order.size() != schedule.clusters.size())
    throw ContractError("write_schedule: clusters, scores and order must agree in length");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "schedule clusters " << schedule.clusters.size() << "\n";
  for (size_t i = 0; i < schedule.clusters.size(); ++i) {
    out << "cluster " << i << " score " << format_float(schedule.scores[i]) << " classes";
    for (int id : schedule.clusters[i]) out << " " << id;
    out << "\n";
  }
  out << "order";
  for (int i : schedule.order) out << " " << i;
  out << "\n";
  if (!out) throw IoError("short write to " + path);
}

CurriculumSchedule read_schedule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty document");
  std::istringstream head(line);
  std::string w1, w2, w3;
  head >> w1 >> w2 >> w3;
  if (w1 != "schedule" || w2 != "clusters" || w3.empty()) throw FormatError(path + ": not a schedule document");
  int t = parse_int(w3, path, "cluster count");
  if (t < 0) throw FormatError(path + ": negative cluster count");

  CurriculumSchedule sched;
  for (int i = 0; i < t; ++i) {
    if (!std::getline(in, line)) throw FormatError(path + ": truncated at cluster " + std::to_string(i));
    std::istringstream ls(line);
    std::string kw, idx, skw, score, ckw;
    ls >> kw >> idx >> skw >> score >> ckw;
    if (kw != "cluster" || skw != "score" || ckw != "classes" || parse_int(idx, path, "cluster index") != i)
      throw FormatError(path + ": malformed cluster line '" + line + "'");
    sched.scores.push_back(parse_float(score, path));
    std::vector<int> ids;
    std::string tok;
    while (ls >> tok) ids.push_back(parse_int(tok, path, "class id"));
    sched.clusters.push_back(std::move(ids));
  }

  if (!std::getline(in, line)) throw FormatError(path + ": missing order line");
  std::istringstream os(line);
  std::string kw;
  os >> kw;
  if (kw != "order") throw FormatError(path + ": missing order line");
  std::string tok;
  while (os >> tok) sched.order.push_back(parse_int(tok, path, "order entry"));
  auto perm = sched.order;
  std::sort(perm.begin(), perm.end());
  for (int i = 0; i < t; ++i)
    if (i >= static_cast<int>(perm.size()) || perm[static_cast<size_t>(i)] != i)
      throw FormatError(path + ": order is not a permutation of the clusters");
  if (static_cast<int>(sched.order.size()) != t)
    throw FormatError(path + ": order is not a permutation of the clusters");

  while (std::getline(in, line))
    if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos)
      throw FormatError(path + ": trailing content '" + line + "'");
  return sched;
}

}  // namespace palign
