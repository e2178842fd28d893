#ifndef DPOE_INJECT_HPP_
#define DPOE_INJECT_HPP_

#include "dpoe/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>
#include <vector>

namespace dpoe {

/// Bookkeeping for one injection run; reproducible from (dataset, seed).
struct InjectionReport {
  double ratio = 0.0;
  long seed = 0;
  int count_type1 = 0, count_type2 = 0, count_type3 = 0;
  std::vector<int> type1_indices;
  std::vector<std::array<int, 3>> type2_pairs;  // {a, b, swapped view}
  std::vector<std::array<int, 3>> type3_pairs;

  int total() const { return count_type1 + count_type2 + count_type3; }
};

inline void to_json(nlohmann::json& j, const InjectionReport& r) {
  j = {{"ratio", r.ratio},
       {"seed", r.seed},
       {"counts", {{"type1", r.count_type1}, {"type2", r.count_type2}, {"type3", r.count_type3}}},
       {"type1_indices", r.type1_indices},
       {"type2_pairs", r.type2_pairs},
       {"type3_pairs", r.type3_pairs}};
}

namespace detail {

/// Per-feature empirical [min, max] of one view.
struct FeatureRange {
  Eigen::VectorXd lo, hi;
};

inline std::vector<FeatureRange> feature_ranges(const MultiViewDataset& ds) {
  std::vector<FeatureRange> r(ds.num_views());
  for (int v = 0; v < ds.num_views(); ++v) {
    r[v].lo = ds.data[v].colwise().minCoeff().transpose();
    r[v].hi = ds.data[v].colwise().maxCoeff().transpose();
  }
  return r;
}

inline void perturb_instance_view(MultiViewDataset& ds, const std::vector<FeatureRange>& ranges,
                                  int instance, int view, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int jd = 0; jd < ds.data[view].cols(); ++jd) {
    const double lo = ranges[view].lo(jd), hi = ranges[view].hi(jd);
    ds.data[view](instance, jd) = lo + (hi - lo) * u(rng);
  }
}

inline void ensure_label_arrays(MultiViewDataset& ds) {
  if (ds.labels.empty()) ds.labels.assign(ds.n(), 0);
  if (ds.anomaly_type.empty()) ds.anomaly_type.assign(ds.n(), AnomalyType::none);
}

inline std::vector<int> pick_unused(int count, std::set<int>& used, int n, std::mt19937_64& rng) {
  std::vector<int> avail;
  avail.reserve(n);
  for (int i = 0; i < n; ++i)
    if (!used.count(i)) avail.push_back(i);
  if (static_cast<int>(avail.size()) < count)
    throw std::invalid_argument("not enough untouched instances for injection");
  std::shuffle(avail.begin(), avail.end(), rng);
  avail.resize(count);
  for (int i : avail) used.insert(i);
  return avail;
}

inline void check_ratio(double ratio, int n) {
  if (ratio <= 0.0 || ratio >= 1.0) throw std::invalid_argument("ratio must be in (0,1)");
  if (std::lround(ratio * n) < 1) throw std::invalid_argument("ratio * N < 1: nothing to inject");
}

inline void inject_type1_into(MultiViewDataset& ds, const std::vector<FeatureRange>& ranges,
                              int count, std::set<int>& used, std::mt19937_64& rng,
                              InjectionReport& report) {
  auto picks = pick_unused(count, used, ds.n(), rng);
  std::sort(picks.begin(), picks.end());
  for (int i : picks) {
    for (int v = 0; v < ds.num_views(); ++v) perturb_instance_view(ds, ranges, i, v, rng);
    ds.labels[i] = 1;
    ds.anomaly_type[i] = AnomalyType::I;
    report.type1_indices.push_back(i);
  }
  report.count_type1 += count;
}

inline void check_classes(const MultiViewDataset& ds) {
  if (ds.class_ids.empty())
    throw std::invalid_argument("class_ids required for Type-II/III injection");
  const int first = ds.class_ids.front();
  for (int c : ds.class_ids)
    if (c != first) return;
  throw std::invalid_argument("Type-II/III injection needs >= 2 classes");
}

/// Draws `pairs` cross-class pairs from unused instances, swaps one uniformly
/// chosen view within each pair, and (for Type-III) perturbs the remaining
/// views of both pair members.
inline void inject_swap_pairs(MultiViewDataset& ds, const std::vector<FeatureRange>& ranges,
                              int pairs, bool perturb_rest, std::set<int>& used,
                              std::mt19937_64& rng, InjectionReport& report) {
  check_classes(ds);
  const AnomalyType type = perturb_rest ? AnomalyType::III : AnomalyType::II;
  for (int p = 0; p < pairs; ++p) {
    std::vector<int> avail;
    for (int i = 0; i < ds.n(); ++i)
      if (!used.count(i)) avail.push_back(i);
    if (avail.size() < 2) throw std::invalid_argument("not enough untouched instances");
    std::uniform_int_distribution<size_t> pick(0, avail.size() - 1);
    const int a = avail[pick(rng)];
    std::vector<int> other;
    for (int i : avail)
      if (i != a && ds.class_ids[i] != ds.class_ids[a]) other.push_back(i);
    if (other.empty()) throw std::invalid_argument("no cross-class partner available");
    std::uniform_int_distribution<size_t> pick2(0, other.size() - 1);
    const int b = other[pick2(rng)];
    used.insert(a);
    used.insert(b);

    std::uniform_int_distribution<int> vpick(0, ds.num_views() - 1);
    const int sv = vpick(rng);
    ds.data[sv].row(a).swap(ds.data[sv].row(b));
    if (perturb_rest)
      for (int v = 0; v < ds.num_views(); ++v)
        if (v != sv) {
          perturb_instance_view(ds, ranges, a, v, rng);
          perturb_instance_view(ds, ranges, b, v, rng);
        }
    ds.labels[a] = ds.labels[b] = 1;
    ds.anomaly_type[a] = ds.anomaly_type[b] = type;
    (perturb_rest ? report.type3_pairs : report.type2_pairs).push_back({a, b, sv});
  }
  (perturb_rest ? report.count_type3 : report.count_type2) += 2 * pairs;
}

}  // namespace detail

/// Type-I: round(ratio*N) instances get every view replaced feature-wise by
/// uniform draws over that feature's empirical range.
inline std::pair<MultiViewDataset, InjectionReport> inject_type1(const MultiViewDataset& d,
                                                                 double ratio, long seed) {
  detail::check_ratio(ratio, d.n());
  MultiViewDataset ds = d;
  detail::ensure_label_arrays(ds);
  auto ranges = detail::feature_ranges(ds);
  std::mt19937_64 rng(static_cast<unsigned long long>(seed));
  InjectionReport report{ratio, seed};
  std::set<int> used;
  detail::inject_type1_into(ds, ranges, static_cast<int>(std::lround(ratio * ds.n())), used, rng,
                            report);
  return {std::move(ds), std::move(report)};
}

/// Type-II: cross-class pairs with one view's feature rows swapped.
/// Anomaly count is rounded to pairs: 2 * round(ratio*N/2).
inline std::pair<MultiViewDataset, InjectionReport> inject_type2(const MultiViewDataset& d,
                                                                 double ratio, long seed) {
  detail::check_ratio(ratio, d.n());
  MultiViewDataset ds = d;
  detail::ensure_label_arrays(ds);
  auto ranges = detail::feature_ranges(ds);
  std::mt19937_64 rng(static_cast<unsigned long long>(seed));
  InjectionReport report{ratio, seed};
  std::set<int> used;
  detail::inject_swap_pairs(ds, ranges, static_cast<int>(std::lround(ratio * ds.n() / 2.0)), false,
                            used, rng, report);
  return {std::move(ds), std::move(report)};
}

/// Type-III: as Type-II, plus Type-I perturbation of the non-swapped views.
inline std::pair<MultiViewDataset, InjectionReport> inject_type3(const MultiViewDataset& d,
                                                                 double ratio, long seed) {
  detail::check_ratio(ratio, d.n());
  MultiViewDataset ds = d;
  detail::ensure_label_arrays(ds);
  auto ranges = detail::feature_ranges(ds);
  std::mt19937_64 rng(static_cast<unsigned long long>(seed));
  InjectionReport report{ratio, seed};
  std::set<int> used;
  detail::inject_swap_pairs(ds, ranges, static_cast<int>(std::lround(ratio * ds.n() / 2.0)), true,
                            used, rng, report);
  return {std::move(ds), std::move(report)};
}

/// Mixture: Type-I, Type-II and Type-III applied sequentially on disjoint
/// instance sets, 5% each.
inline std::pair<MultiViewDataset, InjectionReport> inject_mix(const MultiViewDataset& d,
                                                               long seed) {
  const double per_type = 0.05;
  detail::check_ratio(per_type, d.n());
  MultiViewDataset ds = d;
  detail::ensure_label_arrays(ds);
  auto ranges = detail::feature_ranges(ds);  // ranges from the clean corpus
  std::mt19937_64 rng(static_cast<unsigned long long>(seed));
  InjectionReport report{3 * per_type, seed};
  std::set<int> used;
  detail::inject_type1_into(ds, ranges, static_cast<int>(std::lround(per_type * ds.n())), used,
                            rng, report);
  detail::inject_swap_pairs(ds, ranges, static_cast<int>(std::lround(per_type * ds.n() / 2.0)),
                            false, used, rng, report);
  detail::inject_swap_pairs(ds, ranges, static_cast<int>(std::lround(per_type * ds.n() / 2.0)),
                            true, used, rng, report);
  return {std::move(ds), std::move(report)};
}

}  // namespace dpoe

#endif  // DPOE_INJECT_HPP_
