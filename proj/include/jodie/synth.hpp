#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "jodie/common.hpp"
#include "jodie/dataset.hpp"

namespace jodie {

namespace detail {

inline Dataset empty_dataset(EntityId num_users, EntityId num_items, std::int32_t feature_dim) {
  Dataset ds;
  ds.num_users = num_users;
  ds.num_items = num_items;
  ds.feature_dim = feature_dim;
  ds.user_names.reserve(num_users);
  ds.item_names.reserve(num_items);
  for (EntityId u = 0; u < num_users; ++u) {
    ds.user_names.push_back(std::to_string(u));
    ds.user_index.emplace(ds.user_names.back(), u);
  }
  for (EntityId i = 0; i < num_items; ++i) {
    ds.item_names.push_back(std::to_string(i));
    ds.item_index.emplace(ds.item_names.back(), i);
  }
  return ds;
}

inline void push_event(Dataset& ds, EntityId user, EntityId item, double t,
                       std::vector<double> features, std::uint8_t label) {
  Interaction e;
  e.seq_index = static_cast<std::int64_t>(ds.interactions.size());
  e.user_id = user;
  e.item_id = item;
  e.timestamp = t;
  e.features = std::move(features);
  e.state_label = label;
  ds.interactions.push_back(std::move(e));
}

inline std::vector<EntityId> shuffled_ids(EntityId count, Rng& rng) {
  std::vector<EntityId> ids(count);
  std::iota(ids.begin(), ids.end(), 0);
  for (EntityId i = count; i > 1; --i)
    std::swap(ids[i - 1], ids[rng.index(static_cast<std::uint64_t>(i))]);
  return ids;
}

// Replace late duplicate picks so every item id appears at least once.
// `allowed` restricts which events may host item x (same cluster); pass
// nullptr to allow any event.
inline void ensure_item_coverage(Dataset& ds, EntityId num_items,
                                 const std::vector<std::int32_t>* cluster_of,
                                 const std::vector<std::int32_t>* event_cluster) {
  std::vector<std::size_t> uses(num_items, 0);
  for (const Interaction& e : ds.interactions) ++uses[e.item_id];
  for (EntityId x = 0; x < num_items; ++x) {
    if (uses[x] > 0) continue;
    bool placed = false;
    for (std::size_t j = ds.interactions.size(); j-- > 0;) {
      Interaction& e = ds.interactions[j];
      if (uses[e.item_id] <= 1) continue;
      if (cluster_of && (*event_cluster)[j] != (*cluster_of)[x]) continue;
      --uses[e.item_id];
      e.item_id = x;
      ++uses[x];
      placed = true;
      break;
    }
    require(placed, "synthetic generator: too few events to cover every item");
  }
}

}  // namespace detail

// Every user walks a small personal cycle of items, so the next item is a
// deterministic function of (user, previous item) and a correct model can
// drive the ranking error to zero.
inline Dataset make_repetitive(EntityId users, EntityId items, std::size_t events,
                               std::uint64_t seed) {
  check(users >= 1 && items >= 2, "repetitive preset needs >= 1 user and >= 2 items");
  check(events >= static_cast<std::size_t>(users), "repetitive preset: need events >= users");
  Rng rng(seed);
  Dataset ds = detail::empty_dataset(users, items, 0);

  const std::vector<EntityId> perm = detail::shuffled_ids(items, rng);
  const std::size_t ncycles =
      std::min<std::size_t>(static_cast<std::size_t>(users), static_cast<std::size_t>(items) / 2);
  std::vector<std::vector<EntityId>> cycles(ncycles);
  const std::size_t base = static_cast<std::size_t>(items) / ncycles;
  const std::size_t extra = static_cast<std::size_t>(items) % ncycles;
  std::size_t next = 0;
  for (std::size_t c = 0; c < ncycles; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    for (std::size_t k = 0; k < len; ++k) cycles[c].push_back(perm[next++]);
  }
  check(events >= static_cast<std::size_t>(users) * (base + 1),
        "repetitive preset: too few events to cover every cycle");

  std::vector<std::size_t> pos(users, 0);
  for (std::size_t e = 0; e < events; ++e) {
    const EntityId u = static_cast<EntityId>(e % static_cast<std::size_t>(users));
    const std::vector<EntityId>& cyc = cycles[static_cast<std::size_t>(u) % ncycles];
    const EntityId item = cyc[pos[u] % cyc.size()];
    ++pos[u];
    detail::push_event(ds, u, item, static_cast<double>(e), {}, 0);
  }
  // the event-count check above guarantees every cycle is walked end to end,
  // so all items appear without any fix-up (which would break the contract)
  return ds;
}

// Users move between item clusters over time; picks are uniform inside the
// current cluster.
inline Dataset make_drift(EntityId users, EntityId items, std::size_t events,
                          std::uint64_t seed) {
  check(users >= 1 && items >= 1, "drift preset needs >= 1 user and >= 1 item");
  check(events >= static_cast<std::size_t>(users), "drift preset: need events >= users");
  Rng rng(seed);
  Dataset ds = detail::empty_dataset(users, items, 0);

  const std::int32_t clusters = static_cast<std::int32_t>(
      std::max<EntityId>(1, std::min<EntityId>(4, items)));
  const std::vector<EntityId> perm = detail::shuffled_ids(items, rng);
  std::vector<std::int32_t> cluster_of(items);
  std::vector<std::vector<EntityId>> members(clusters);
  for (EntityId k = 0; k < items; ++k) {
    const std::int32_t c = static_cast<std::int32_t>(k % clusters);
    cluster_of[perm[k]] = c;
    members[c].push_back(perm[k]);
  }

  std::vector<std::int32_t> start(users);
  for (EntityId u = 0; u < users; ++u)
    start[u] = static_cast<std::int32_t>(rng.index(clusters));
  const std::size_t per_user = events / static_cast<std::size_t>(users);
  const std::size_t period = std::max<std::size_t>(1, per_user / 3);  // ~3 cluster phases per user

  std::vector<std::size_t> count(users, 0);
  std::vector<std::int32_t> event_cluster(events);
  for (std::size_t e = 0; e < events; ++e) {
    const EntityId u = static_cast<EntityId>(e % static_cast<std::size_t>(users));
    const std::int32_t c =
        static_cast<std::int32_t>((start[u] + count[u] / period) % static_cast<std::size_t>(clusters));
    ++count[u];
    const std::vector<EntityId>& pool = members[c];
    const EntityId item = pool[rng.index(pool.size())];
    event_cluster[e] = c;
    detail::push_event(ds, u, item, static_cast<double>(e), {}, 0);
  }
  detail::ensure_item_coverage(ds, items, &cluster_of, &event_cluster);
  return ds;
}

// Plants a small population of users whose interaction features shift over
// their last few events and whose final event carries state label 1.
inline Dataset make_dropout(EntityId users, EntityId items, std::size_t events,
                            std::uint64_t seed) {
  constexpr std::int32_t kFeatureDim = 4;
  constexpr std::size_t kDropperEvents = 12;
  constexpr int kShiftWindow = 5;  // offsets 0..5 before the final event get shifted features

  check(users >= 2 && items >= 1, "dropout preset needs >= 2 users and >= 1 item");
  const EntityId droppers = std::max<EntityId>(1, users / 20);  // 5%
  check(events >= static_cast<std::size_t>(droppers) * kDropperEvents +
                      static_cast<std::size_t>(users - droppers),
        "dropout preset: too few events");

  Rng rng(seed);
  Dataset ds = detail::empty_dataset(users, items, kFeatureDim);

  const std::vector<EntityId> user_perm = detail::shuffled_ids(users, rng);
  std::vector<std::uint8_t> is_dropper(users, 0);
  for (EntityId d = 0; d < droppers; ++d) is_dropper[user_perm[d]] = 1;

  // schedule: dropper events are pinned runs ending at a planted final slot,
  // spread across the stream; everyone else fills the gaps round-robin
  std::vector<EntityId> slot_user(events, -1);
  std::vector<std::int32_t> slot_remaining(events, -1);  // dropper events left after this one
  for (EntityId d = 0; d < droppers; ++d) {
    const EntityId u = user_perm[d];
    const double frac = 0.30 + 0.67 * (static_cast<double>(d) + 0.5) / static_cast<double>(droppers);
    std::int64_t slot = static_cast<std::int64_t>(frac * static_cast<double>(events));
    if (slot >= static_cast<std::int64_t>(events)) slot = static_cast<std::int64_t>(events) - 1;
    std::int64_t prev = static_cast<std::int64_t>(events);
    for (std::size_t k = 0; k < kDropperEvents; ++k) {
      if (slot >= prev) slot = prev - 1;
      while (slot >= 0 && slot_user[slot] >= 0) --slot;
      require(slot >= 0, "dropout preset: could not place dropper events");
      slot_user[slot] = u;
      slot_remaining[slot] = static_cast<std::int32_t>(k);
      prev = slot;
      slot -= 7;
    }
  }
  std::vector<EntityId> normals;
  for (EntityId u = 0; u < users; ++u)
    if (!is_dropper[u]) normals.push_back(u);
  std::size_t next_normal = 0;
  for (std::size_t s = 0; s < events; ++s) {
    if (slot_user[s] >= 0) continue;
    slot_user[s] = normals[next_normal % normals.size()];
    ++next_normal;
  }

  for (std::size_t s = 0; s < events; ++s) {
    const EntityId u = slot_user[s];
    const EntityId item = static_cast<EntityId>(rng.index(items));
    std::vector<double> f(kFeatureDim);
    for (std::int32_t k = 0; k < kFeatureDim; ++k) f[k] = rng.normal(0.0, 0.5);
    std::uint8_t label = 0;
    const std::int32_t remaining = slot_remaining[s];
    if (remaining >= 0 && remaining <= kShiftWindow) {
      f[0] += 3.5 - 0.5 * static_cast<double>(remaining);
      if (remaining == 0) label = 1;
    }
    detail::push_event(ds, u, item, static_cast<double>(s), std::move(f), label);
  }
  detail::ensure_item_coverage(ds, items, nullptr, nullptr);
  return ds;
}

// Unstructured random stream; repeated timestamps exercise the tie rules.
inline Dataset make_random_stream(EntityId users, EntityId items, std::size_t events,
                                  std::uint64_t seed, std::int32_t feature_dim = 0) {
  check(users >= 1 && items >= 1, "random stream needs >= 1 user and >= 1 item");
  Rng rng(seed);
  Dataset ds = detail::empty_dataset(users, items, feature_dim);
  double t = 0.0;
  for (std::size_t e = 0; e < events; ++e) {
    t += static_cast<double>(rng.index(3));  // step 0 makes ties
    std::vector<double> f(feature_dim);
    for (std::int32_t k = 0; k < feature_dim; ++k) f[k] = rng.normal(0.0, 1.0);
    detail::push_event(ds, static_cast<EntityId>(rng.index(users)),
                       static_cast<EntityId>(rng.index(items)), t, std::move(f), 0);
  }
  return ds;
}

inline Dataset make_synthetic(const std::string& preset, EntityId users, EntityId items,
                              std::size_t events, std::uint64_t seed) {
  if (preset == "repetitive") return make_repetitive(users, items, events, seed);
  if (preset == "drift") return make_drift(users, items, events, seed);
  if (preset == "dropout") return make_dropout(users, items, events, seed);
  throw InvalidArgument("unknown preset '" + preset + "' (repetitive|drift|dropout)");
}

}  // namespace jodie
