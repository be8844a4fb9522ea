#include "hedra/tiered_cache.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

namespace hedra::cache {

void ClusterCacheState::record_access(std::span<const ClusterId> cluster_ids) {
  std::set<ClusterId> unique(cluster_ids.begin(), cluster_ids.end());
  for (ClusterId c : unique) freq_[c] += 1.0;
  ++substages_since_update_;
}

std::vector<SwapOp> ClusterCacheState::maybe_update(double now_ms,
                                                    const ivf::IvfIndex& index) {
  if (cfg_.capacity_gc == 0) return {};
  if (substages_since_update_ < cfg_.update_interval) return {};
  if (!in_flight_.empty()) return {};  // PCIe still draining the last update
  substages_since_update_ = 0;

  // Target: top-gc by frequency, ties toward the lower cluster id.
  std::vector<std::pair<double, ClusterId>> ranked;
  ranked.reserve(freq_.size());
  for (const auto& [c, f] : freq_) ranked.emplace_back(f, c);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::set<ClusterId> target;
  for (const auto& [f, c] : ranked) {
    (void)f;
    if (target.size() >= cfg_.capacity_gc) break;
    target.insert(c);
  }

  std::vector<SwapOp> plan;
  const double bytes_per_ms = cfg_.transfer_bandwidth_gb_s * 1e9 / 1e3;
  const auto schedule = [&](ClusterId c, bool inbound) {
    const double bytes =
        static_cast<double>(index.cluster_size(c)) * index.dim * sizeof(float);
    const double start = std::max(now_ms, transfer_free_at_ms_);
    SwapOp op{c, inbound, start + bytes / bytes_per_ms};
    transfer_free_at_ms_ = op.completes_at_ms;
    plan.push_back(op);
    ++swap_count_;
  };
  // Evictions leave residency immediately (mid-swap counts as non-resident),
  // keeping |resident| within capacity throughout the update.
  std::vector<ClusterId> evict, insert;
  for (ClusterId c : resident_)
    if (!target.count(c)) evict.push_back(c);
  for (ClusterId c : target)
    if (!resident_.count(c)) insert.push_back(c);
  for (ClusterId c : evict) {
    resident_.erase(c);
    schedule(c, false);
  }
  for (ClusterId c : insert) schedule(c, true);
  in_flight_ = plan;

  for (auto& [c, f] : freq_) {
    (void)c;
    f *= cfg_.decay;
  }
  return plan;
}

void ClusterCacheState::complete_swaps(double now_ms) {
  std::vector<SwapOp> remaining;
  for (const auto& op : in_flight_) {
    if (op.completes_at_ms <= now_ms) {
      if (op.inbound) resident_.insert(op.cluster);
    } else {
      remaining.push_back(op);
    }
  }
  in_flight_ = std::move(remaining);
}

LanePartition ClusterCacheState::partition_batch(
    std::span<const ClusterId> clusters) const {
  LanePartition part;
  if (cfg_.capacity_gc == 0) {
    part.slow.assign(clusters.begin(), clusters.end());
    return part;
  }
  std::set<ClusterId> fast_set;
  for (ClusterId c : clusters)
    if (resident_.count(c)) fast_set.insert(c);
  if (fast_set.size() < cfg_.min_fast_clusters) {
    part.slow.assign(clusters.begin(), clusters.end());
    return part;
  }
  for (ClusterId c : clusters) {
    if (fast_set.count(c))
      part.fast.push_back(c);
    else
      part.slow.push_back(c);
  }
  return part;
}

void ClusterCacheState::count_access_hits(std::span<const ClusterId> clusters) {
  std::set<ClusterId> unique(clusters.begin(), clusters.end());
  for (ClusterId c : unique) {
    if (resident_.count(c))
      ++hits_;
    else
      ++misses_;
  }
}

void ThroughputProfile::save_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << "kind,kv_bytes,rps,throughput\n";
  for (const auto& p : gen)
    out << "gen," << p.kv_bytes << "," << p.rps << "," << p.throughput << "\n";
  for (const auto& p : ret)
    out << "ret,0," << p.rps << "," << p.throughput << "\n";
  if (cluster_bytes > 0.0) out << "cluster_bytes," << cluster_bytes << ",0,0\n";
}

ThroughputProfile ThroughputProfile::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  ThroughputProfile profile;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string kind, a, b, c;
    std::getline(ss, kind, ',');
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    if (kind == "gen")
      profile.gen.push_back({std::stod(a), std::stod(b), std::stod(c)});
    else if (kind == "ret")
      profile.ret.push_back({std::stod(b), std::stod(c)});
    else if (kind == "cluster_bytes")
      profile.cluster_bytes = std::stod(a);
    else
      throw std::runtime_error(path + ": unknown profile row kind '" + kind + "'");
  }
  return profile;
}

BudgetResult solve_memory_budget(const ThroughputProfile& profile, double rps_g,
                                 double rps_r, double total_mem_bytes,
                                 double model_bytes) {
  if (profile.gen.empty() || profile.ret.empty())
    throw std::invalid_argument("solve_memory_budget: empty profile");
  if (total_mem_bytes <= model_bytes)
    throw std::invalid_argument("solve_memory_budget: no memory left after model");
  if (profile.cluster_bytes <= 0.0)
    throw std::invalid_argument("solve_memory_budget: cluster_bytes missing");

  // Nearest rps rows (ties toward the smaller rps).
  double best_gap = std::numeric_limits<double>::infinity();
  double gen_rps = 0.0;
  for (const auto& p : profile.gen) {
    const double gap = std::abs(p.rps - rps_g);
    if (gap < best_gap || (gap == best_gap && p.rps < gen_rps)) {
      best_gap = gap;
      gen_rps = p.rps;
    }
  }
  double t_r = 0.0;
  best_gap = std::numeric_limits<double>::infinity();
  double ret_rps = 0.0;
  for (const auto& p : profile.ret) {
    const double gap = std::abs(p.rps - rps_r);
    if (gap < best_gap || (gap == best_gap && p.rps < ret_rps)) {
      best_gap = gap;
      ret_rps = p.rps;
      t_r = p.throughput;
    }
  }

  std::map<double, double> kv_curve;  // kv_bytes -> T_G, sorted ascending
  for (const auto& p : profile.gen)
    if (p.rps == gen_rps) kv_curve[p.kv_bytes] = p.throughput;

  double best_kv = -1.0, best_min = -std::numeric_limits<double>::infinity();
  for (const auto& [kv, tg] : kv_curve) {
    if (kv > total_mem_bytes - model_bytes) continue;
    const double v = std::min(tg, t_r);
    if (v > best_min) {  // smallest maximizer: strict improvement only
      best_min = v;
      best_kv = kv;
    }
  }
  if (best_kv < 0.0)
    throw std::invalid_argument("solve_memory_budget: no feasible kv size");

  BudgetResult result;
  result.kv_size_bytes = best_kv;
  result.cache_bytes = total_mem_bytes - model_bytes - best_kv;
  result.capacity_gc =
      static_cast<std::size_t>(result.cache_bytes / profile.cluster_bytes);
  return result;
}

}  // namespace hedra::cache
