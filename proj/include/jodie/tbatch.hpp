#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "jodie/dataset.hpp"

namespace jodie {

// Ordered batches of interaction seq indices. Within a batch every user and
// every item appears at most once, so a batch can be processed in parallel;
// batches themselves must be consumed strictly in order.
struct BatchPlan {
  std::vector<std::vector<std::uint32_t>> batches;

  std::size_t num_batches() const { return batches.size(); }
  std::size_t total_interactions() const {
    std::size_t n = 0;
    for (const auto& b : batches) n += b.size();
    return n;
  }
};

// Last-batch index per entity, 0 = not seen yet (batch ids are 1-based while
// scheduling). Entries never decrease during a run.
struct SchedulerState {
  std::vector<std::int32_t> last_user_batch;
  std::vector<std::int32_t> last_item_batch;

  SchedulerState(EntityId num_users, EntityId num_items)
      : last_user_batch(num_users, 0), last_item_batch(num_items, 0) {}
};

struct BuildStats {
  std::size_t operations = 0;  // constant work per interaction, for the linearity check
};

inline Range full_range(const Dataset& ds) { return Range{0, ds.size()}; }

// Each interaction goes to batch max(last_U[u], last_I[i]) + 1. One pass,
// O(|range|); dense arrays keep the per-interaction work constant.
inline BatchPlan build_tbatches(const Dataset& ds, Range range, BuildStats* stats = nullptr) {
  SchedulerState st(ds.num_users, ds.num_items);
  BatchPlan plan;
  plan.batches.reserve(64);
  std::size_t ops = 0;
  for (std::size_t j = range.begin; j < range.end; ++j) {
    const Interaction& e = ds.interactions[j];
    const std::int32_t idx = std::max(st.last_user_batch[e.user_id],
                                      st.last_item_batch[e.item_id]) + 1;
    if (static_cast<std::size_t>(idx) > plan.batches.size()) plan.batches.emplace_back();
    plan.batches[idx - 1].push_back(static_cast<std::uint32_t>(j));
    st.last_user_batch[e.user_id] = idx;
    st.last_item_batch[e.item_id] = idx;
    ops += 6;  // two reads, max, append, two writes
  }
  if (stats) stats->operations = ops;
  return plan;
}

inline BatchPlan build_tbatches(const Dataset& ds) { return build_tbatches(ds, full_range(ds)); }

// One interaction per batch, in time order: the sequential baseline.
inline BatchPlan naive_plan(const Dataset&, Range range) {
  BatchPlan plan;
  plan.batches.reserve(range.size());
  for (std::size_t j = range.begin; j < range.end; ++j)
    plan.batches.push_back({static_cast<std::uint32_t>(j)});
  return plan;
}

inline BatchPlan naive_plan(const Dataset& ds) { return naive_plan(ds, full_range(ds)); }

enum class ViolationKind {
  DuplicateEntityInBatch,
  OrderInversion,
  MissingOrDuplicatedInteraction,
};

struct PlanViolation {
  ViolationKind kind;
  std::size_t batch_index = 0;   // 0-based
  std::int64_t entity = -1;      // entity id, or seq index for coverage violations
  bool entity_is_user = false;
};

inline const char* violation_name(ViolationKind k) {
  switch (k) {
    case ViolationKind::DuplicateEntityInBatch: return "duplicate-entity-in-batch";
    case ViolationKind::OrderInversion: return "order-inversion";
    case ViolationKind::MissingOrDuplicatedInteraction: return "missing-or-duplicated-interaction";
  }
  return "?";
}

// Checks both co-batching conditions plus exact coverage of the range.
// Violations are data, not errors; an empty result means the plan is valid.
inline std::vector<PlanViolation> verify_plan(const Dataset& ds, Range range,
                                              const BatchPlan& plan) {
  std::vector<PlanViolation> out;
  std::vector<std::int64_t> user_last_batch(ds.num_users, -1);
  std::vector<std::int64_t> item_last_batch(ds.num_items, -1);
  std::vector<std::int64_t> user_last_seq(ds.num_users, -1);
  std::vector<std::int64_t> item_last_seq(ds.num_items, -1);
  std::vector<std::uint32_t> seen(range.size(), 0);

  for (std::size_t b = 0; b < plan.batches.size(); ++b) {
    for (const std::uint32_t j : plan.batches[b]) {
      if (j < range.begin || j >= range.end) {
        out.push_back({ViolationKind::MissingOrDuplicatedInteraction, b, j, false});
        continue;
      }
      ++seen[j - range.begin];
      const Interaction& e = ds.interactions[j];

      // Batches are scanned in ascending order, so condition 2 reduces to:
      // within one entity, seq order must agree with batch order.
      if (user_last_batch[e.user_id] == static_cast<std::int64_t>(b))
        out.push_back({ViolationKind::DuplicateEntityInBatch, b, e.user_id, true});
      else if (user_last_seq[e.user_id] > static_cast<std::int64_t>(j))
        out.push_back({ViolationKind::OrderInversion, b, e.user_id, true});

      if (item_last_batch[e.item_id] == static_cast<std::int64_t>(b))
        out.push_back({ViolationKind::DuplicateEntityInBatch, b, e.item_id, false});
      else if (item_last_seq[e.item_id] > static_cast<std::int64_t>(j))
        out.push_back({ViolationKind::OrderInversion, b, e.item_id, false});

      user_last_batch[e.user_id] = static_cast<std::int64_t>(b);
      item_last_batch[e.item_id] = static_cast<std::int64_t>(b);
      user_last_seq[e.user_id] = static_cast<std::int64_t>(j);
      item_last_seq[e.item_id] = static_cast<std::int64_t>(j);
    }
  }
  for (std::size_t k = 0; k < seen.size(); ++k)
    if (seen[k] != 1)
      out.push_back({ViolationKind::MissingOrDuplicatedInteraction, 0,
                     static_cast<std::int64_t>(range.begin + k), false});
  return out;
}

inline std::vector<PlanViolation> verify_plan(const Dataset& ds, const BatchPlan& plan) {
  return verify_plan(ds, full_range(ds), plan);
}

// Independent oracle for the minimal feasible batch index of every
// interaction: longest dependency chain through the explicit predecessor
// graph. Predecessors are found by backward scan, so this stays independent
// of the scheduler's bookkeeping (and is allowed to be quadratic).
inline std::vector<std::int32_t> chain_depth_oracle(const Dataset& ds, Range range) {
  check(range.size() <= 10000, "chain_depth_oracle: range too large");
  const std::size_t n = range.size();
  std::vector<std::int32_t> depth(n, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const Interaction& e = ds.interactions[range.begin + p];
    std::int32_t best = 0;
    for (std::size_t q = p; q-- > 0;) {
      const Interaction& prev = ds.interactions[range.begin + q];
      if (prev.user_id == e.user_id) {
        best = std::max(best, depth[q]);
        break;
      }
    }
    for (std::size_t q = p; q-- > 0;) {
      const Interaction& prev = ds.interactions[range.begin + q];
      if (prev.item_id == e.item_id) {
        best = std::max(best, depth[q]);
        break;
      }
    }
    depth[p] = best + 1;
  }
  return depth;
}

inline std::vector<std::int32_t> chain_depth_oracle(const Dataset& ds) {
  return chain_depth_oracle(ds, full_range(ds));
}

struct PlanStats {
  std::size_t num_interactions = 0;
  std::size_t num_batches = 0;
  double mean_batch = 0.0;
  std::size_t max_batch = 0;
  double parallelism = 0.0;  // |S| / C
};

inline PlanStats plan_stats(const BatchPlan& plan) {
  PlanStats s;
  s.num_interactions = plan.total_interactions();
  s.num_batches = plan.num_batches();
  for (const auto& b : plan.batches) s.max_batch = std::max(s.max_batch, b.size());
  if (s.num_batches > 0) {
    s.mean_batch = static_cast<double>(s.num_interactions) / static_cast<double>(s.num_batches);
    s.parallelism = static_cast<double>(s.num_interactions) / static_cast<double>(s.num_batches);
  }
  return s;
}

}  // namespace jodie
