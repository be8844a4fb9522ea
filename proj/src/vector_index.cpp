#include "hedra/vector_index.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace hedra::ivf {

namespace {

constexpr char kMagic[4] = {'H', 'V', 'E', 'C'};
constexpr std::uint32_t kFormatVersion = 1;

ClusterId nearest_centroid(const Centroids& centroids, const float* v) {
  double best = std::numeric_limits<double>::infinity();
  ClusterId best_id = 0;
  for (std::size_t c = 0; c < centroids.rows.size(); ++c) {
    const double d = squared_l2(centroids.rows[c].data(), v, centroids.dim);
    if (d < best) {  // ties keep the lowest cluster id
      best = d;
      best_id = static_cast<ClusterId>(c);
    }
  }
  return best_id;
}

}  // namespace

void TopKResult::set_k(std::size_t k) {
  k_ = k;
  if (entries_.size() > k_) entries_.resize(k_);
}

bool TopKResult::insert(DocId doc_id, double distance) {
  if (k_ == 0) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].doc_id == doc_id) {
      if (distance >= entries_[i].distance) return false;
      entries_.erase(entries_.begin() + i);
      break;
    }
  }
  const TopKEntry entry{doc_id, distance};
  auto pos = std::lower_bound(entries_.begin(), entries_.end(), entry, topk_less);
  if (entries_.size() >= k_ && pos == entries_.end()) return false;
  entries_.insert(pos, entry);
  if (entries_.size() > k_) entries_.pop_back();
  return true;
}

TopKResult TopKResult::truncated(std::size_t k) const {
  TopKResult out(k);
  for (const auto& e : entries_) {
    if (out.entries_.size() >= k) break;
    out.entries_.push_back(e);
  }
  return out;
}

std::vector<DocId> TopKResult::doc_ids() const {
  std::vector<DocId> ids;
  ids.reserve(entries_.size());
  for (const auto& e : entries_) ids.push_back(e.doc_id);
  return ids;
}

TopKResult merge_topk(const TopKResult& a, const TopKResult& b, std::size_t k) {
  std::vector<TopKEntry> all;
  all.reserve(a.size() + b.size());
  all.insert(all.end(), a.entries().begin(), a.entries().end());
  all.insert(all.end(), b.entries().begin(), b.entries().end());
  // Collapse duplicate doc ids to the minimum distance.
  std::sort(all.begin(), all.end(), [](const TopKEntry& x, const TopKEntry& y) {
    if (x.doc_id != y.doc_id) return x.doc_id < y.doc_id;
    return x.distance < y.distance;
  });
  all.erase(std::unique(all.begin(), all.end(),
                        [](const TopKEntry& x, const TopKEntry& y) {
                          return x.doc_id == y.doc_id;
                        }),
            all.end());
  std::sort(all.begin(), all.end(), topk_less);
  if (all.size() > k) all.resize(k);
  TopKResult out(k);
  for (const auto& e : all) out.insert(e.doc_id, e.distance);
  return out;
}

std::size_t IvfIndex::total_vectors() const {
  std::size_t n = 0;
  for (const auto& l : list_ids) n += l.size();
  return n;
}

Centroids train_kmeans(const Corpus& corpus, std::size_t k_clusters,
                       std::size_t max_iters, std::uint64_t seed) {
  const std::size_t n = corpus.size();
  if (n < k_clusters)
    throw std::invalid_argument("train_kmeans: corpus smaller than k_clusters");
  if (k_clusters == 0) throw std::invalid_argument("train_kmeans: k_clusters must be >= 1");
  if (max_iters == 0) throw std::invalid_argument("train_kmeans: max_iters must be >= 1");
  const std::uint32_t dim = corpus.dim;

  Rng rng(seed);
  Centroids centroids;
  centroids.dim = dim;
  centroids.rows.reserve(k_clusters);

  // k-means++ seeding: first center uniform, the rest sampled proportional to
  // squared distance from the nearest chosen center.
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  {
    const std::size_t first = rng.uniform_index(n);
    centroids.rows.emplace_back(corpus.row(first), corpus.row(first) + dim);
    for (std::size_t i = 0; i < n; ++i)
      dist2[i] = squared_l2(corpus.row(i), centroids.rows[0].data(), dim);
    while (centroids.rows.size() < k_clusters) {
      double total = 0.0;
      for (double d : dist2) total += d;
      std::size_t pick = 0;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += dist2[i];
          if (acc > target) {
            pick = i;
            break;
          }
        }
      } else {
        // All remaining points coincide with chosen centers; take the lowest
        // index not yet selected so seeding stays deterministic.
        for (std::size_t i = 0; i < n; ++i) {
          bool taken = false;
          for (const auto& row : centroids.rows)
            if (std::memcmp(row.data(), corpus.row(i), dim * sizeof(float)) == 0) {
              taken = true;
              break;
            }
          if (!taken) {
            pick = i;
            break;
          }
        }
      }
      centroids.rows.emplace_back(corpus.row(pick), corpus.row(pick) + dim);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = squared_l2(corpus.row(i), centroids.rows.back().data(), dim);
        if (d < dist2[i]) dist2[i] = d;
      }
    }
  }

  std::vector<ClusterId> assign(n, 0);
  std::vector<ClusterId> prev(n, std::numeric_limits<ClusterId>::max());
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    for (std::size_t i = 0; i < n; ++i)
      assign[i] = nearest_centroid(centroids, corpus.row(i));
    if (assign == prev) break;
    prev = assign;

    std::vector<std::vector<double>> sums(k_clusters, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k_clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = corpus.row(i);
      auto& sum = sums[assign[i]];
      for (std::uint32_t d = 0; d < dim; ++d) sum[d] += row[d];
      ++counts[assign[i]];
    }
    // Empty clusters are re-seeded to the point farthest from its assigned
    // centroid; successive empties take successive farthest points.
    std::vector<bool> used_reseed(n, false);
    for (std::size_t c = 0; c < k_clusters; ++c) {
      if (counts[c] > 0) {
        for (std::uint32_t d = 0; d < dim; ++d)
          centroids.rows[c][d] = static_cast<float>(sums[c][d] / static_cast<double>(counts[c]));
        continue;
      }
      double far_d = -1.0;
      std::size_t far_i = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (used_reseed[i]) continue;
        const double d = squared_l2(corpus.row(i), centroids.rows[assign[i]].data(), dim);
        if (d > far_d) {
          far_d = d;
          far_i = i;
        }
      }
      used_reseed[far_i] = true;
      centroids.rows[c].assign(corpus.row(far_i), corpus.row(far_i) + dim);
    }
  }
  return centroids;
}

std::vector<ClusterId> compute_assignments(const Corpus& corpus,
                                           const Centroids& centroids) {
  std::vector<ClusterId> assign(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    assign[i] = nearest_centroid(centroids, corpus.row(i));
  return assign;
}

IvfIndex index_from_assignments(const Corpus& corpus, const Centroids& centroids,
                                Metric metric,
                                const std::vector<ClusterId>& assign) {
  if (assign.size() != corpus.size())
    throw std::invalid_argument("index_from_assignments: assignment count mismatch");
  IvfIndex index;
  index.centroids = centroids;
  index.metric = metric;
  index.dim = corpus.dim;
  index.list_ids.resize(centroids.k_clusters());
  index.list_vectors.resize(centroids.k_clusters());
  double dist_sum = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const ClusterId c = assign[i];
    if (c >= centroids.k_clusters())
      throw std::invalid_argument("index_from_assignments: cluster id out of range");
    index.locator[corpus.doc_ids[i]] =
        IvfIndex::DocLocation{c, static_cast<std::uint32_t>(index.list_ids[c].size())};
    index.list_ids[c].push_back(corpus.doc_ids[i]);
    const float* row = corpus.row(i);
    index.list_vectors[c].insert(index.list_vectors[c].end(), row, row + corpus.dim);
    dist_sum += squared_l2(row, centroids.rows[c].data(), corpus.dim);
  }
  index.mean_assigned_distance = corpus.size() ? dist_sum / static_cast<double>(corpus.size()) : 0.0;
  return index;
}

IvfIndex build_index(const Corpus& corpus, const Centroids& centroids,
                     Metric metric) {
  if (corpus.dim != centroids.dim)
    throw std::invalid_argument("build_index: dimension mismatch");
  {
    std::unordered_set<DocId> seen;
    seen.reserve(corpus.size());
    for (DocId id : corpus.doc_ids)
      if (!seen.insert(id).second)
        throw std::invalid_argument("build_index: duplicate doc_id");
  }
  if (metric == Metric::Cosine) {
    Corpus normalized_corpus = corpus;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      Embedding e = normalized(corpus.embedding(i));
      std::copy(e.begin(), e.end(), normalized_corpus.data.begin() + i * corpus.dim);
    }
    return index_from_assignments(normalized_corpus, centroids, metric,
                                  compute_assignments(normalized_corpus, centroids));
  }
  return index_from_assignments(corpus, centroids, metric,
                                compute_assignments(corpus, centroids));
}

std::vector<ClusterId> select_clusters(const IvfIndex& index,
                                       const Embedding& query,
                                       std::size_t nprobe) {
  if (nprobe < 1 || nprobe > index.k_clusters())
    throw std::invalid_argument("select_clusters: nprobe out of range");
  if (query.size() != index.dim)
    throw std::invalid_argument("select_clusters: dimension mismatch");
  const Embedding q = index.metric == Metric::Cosine ? normalized(query) : query;
  std::vector<std::pair<double, ClusterId>> order;
  order.reserve(index.k_clusters());
  for (std::size_t c = 0; c < index.k_clusters(); ++c)
    order.emplace_back(squared_l2(index.centroids.rows[c].data(), q.data(), index.dim),
                       static_cast<ClusterId>(c));
  std::sort(order.begin(), order.end());  // (distance, cluster id) ascending
  std::vector<ClusterId> plan(nprobe);
  for (std::size_t i = 0; i < nprobe; ++i) plan[i] = order[i].second;
  return plan;
}

SearchCursor make_cursor(const IvfIndex& index, const Embedding& query,
                         std::size_t nprobe, std::size_t k) {
  if (k == 0) throw std::invalid_argument("make_cursor: k must be >= 1");
  SearchCursor cursor;
  cursor.query = index.metric == Metric::Cosine ? normalized(query) : query;
  cursor.plan = select_clusters(index, query, nprobe);
  cursor.k = k;
  cursor.heap.set_k(k);
  return cursor;
}

SearchStepReport search_clusters(const IvfIndex& index, SearchCursor& cursor,
                                 std::span<const ClusterId> clusters) {
  SearchStepReport report;
  for (ClusterId c : clusters) {
    if (cursor.next_pos >= cursor.plan.size())
      throw std::runtime_error("search_clusters: cursor exhausted mid-batch");
    if (cursor.plan[cursor.next_pos] != c)
      throw std::runtime_error("search_clusters: cluster does not match plan order");
    const auto& ids = index.list_ids[c];
    const auto& vecs = index.list_vectors[c];
    bool changed = false;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double d = squared_l2(cursor.query.data(), vecs.data() + i * index.dim,
                                  index.dim);
      changed |= cursor.heap.insert(ids[i], d);
    }
    ++cursor.next_pos;
    ++cursor.clusters_searched;
    if (changed)
      cursor.unchanged_streak = 0;
    else
      ++cursor.unchanged_streak;
    report.heap_changed |= changed;
    report.searched.push_back(c);
  }
  return report;
}

SearchStepReport search_step(const IvfIndex& index, SearchCursor& cursor,
                             std::size_t cluster_budget) {
  if (cursor.done()) return {};  // completion signal: empty report
  if (cluster_budget == 0)
    throw std::invalid_argument("search_step: cluster_budget must be >= 1");
  const std::size_t take = std::min(cluster_budget, cursor.remaining());
  std::vector<ClusterId> slice(cursor.plan.begin() + cursor.next_pos,
                               cursor.plan.begin() + cursor.next_pos + take);
  return search_clusters(index, cursor, slice);
}

TopKResult brute_force_search(const Corpus& corpus, const Embedding& query,
                              std::size_t k) {
  if (k == 0) throw std::invalid_argument("brute_force_search: k must be >= 1");
  TopKResult result(k);
  if (corpus.size() == 0) return result;
  const Embedding q = corpus.metric == Metric::Cosine ? normalized(query) : query;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Embedding row = corpus.metric == Metric::Cosine ? normalized(corpus.embedding(i))
                                                    : corpus.embedding(i);
    result.insert(corpus.doc_ids[i], squared_l2(q, row));
  }
  return result;
}

// --- Persistence -------------------------------------------------------------

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("vector file: truncated read");
  return value;
}

void write_header(std::ofstream& out, std::uint32_t dim, std::uint64_t count,
                  Metric metric) {
  out.write(kMagic, 4);
  write_pod(out, kFormatVersion);
  write_pod(out, dim);
  write_pod(out, count);
  write_pod(out, static_cast<std::uint8_t>(metric));
}

struct VecHeader {
  std::uint32_t dim;
  std::uint64_t count;
  Metric metric;
};

VecHeader read_header(std::ifstream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a HVEC file");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kFormatVersion)
    throw std::runtime_error(path + ": unsupported HVEC version");
  VecHeader h{};
  h.dim = read_pod<std::uint32_t>(in);
  h.count = read_pod<std::uint64_t>(in);
  h.metric = static_cast<Metric>(read_pod<std::uint8_t>(in));
  return h;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  return in;
}

}  // namespace

void save_corpus(const std::string& path, const Corpus& corpus) {
  auto out = open_out(path);
  write_header(out, corpus.dim, corpus.size(), corpus.metric);
  out.write(reinterpret_cast<const char*>(corpus.data.data()),
            static_cast<std::streamsize>(corpus.data.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(corpus.doc_ids.data()),
            static_cast<std::streamsize>(corpus.doc_ids.size() * sizeof(DocId)));
  if (!out) throw std::runtime_error(path + ": write failed");
}

Corpus load_corpus(const std::string& path) {
  auto in = open_in(path);
  const VecHeader h = read_header(in, path);
  Corpus corpus;
  corpus.dim = h.dim;
  corpus.metric = h.metric;
  corpus.data.resize(h.count * h.dim);
  corpus.doc_ids.resize(h.count);
  in.read(reinterpret_cast<char*>(corpus.data.data()),
          static_cast<std::streamsize>(corpus.data.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(corpus.doc_ids.data()),
          static_cast<std::streamsize>(corpus.doc_ids.size() * sizeof(DocId)));
  if (!in) throw std::runtime_error(path + ": truncated corpus file");
  return corpus;
}

void save_centroids(const std::string& path, const Centroids& centroids,
                    Metric metric) {
  auto out = open_out(path);
  write_header(out, centroids.dim, centroids.k_clusters(), metric);
  for (const auto& row : centroids.rows)
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  if (!out) throw std::runtime_error(path + ": write failed");
}

Centroids load_centroids(const std::string& path) {
  auto in = open_in(path);
  const VecHeader h = read_header(in, path);
  Centroids centroids;
  centroids.dim = h.dim;
  centroids.rows.resize(h.count, std::vector<float>(h.dim));
  for (auto& row : centroids.rows) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!in) throw std::runtime_error(path + ": truncated centroid file");
  return centroids;
}

void save_assignments(const std::string& path,
                      const std::vector<ClusterId>& assign) {
  auto out = open_out(path);
  const std::uint64_t count = assign.size();
  write_pod(out, count);
  out.write(reinterpret_cast<const char*>(assign.data()),
            static_cast<std::streamsize>(assign.size() * sizeof(ClusterId)));
  if (!out) throw std::runtime_error(path + ": write failed");
}

std::vector<ClusterId> load_assignments(const std::string& path) {
  auto in = open_in(path);
  const auto count = read_pod<std::uint64_t>(in);
  std::vector<ClusterId> assign(count);
  in.read(reinterpret_cast<char*>(assign.data()),
          static_cast<std::streamsize>(assign.size() * sizeof(ClusterId)));
  if (!in) throw std::runtime_error(path + ": truncated assignment file");
  return assign;
}

}  // namespace hedra::ivf
