#include <gtest/gtest.h>

#include <map>
#include <set>

#include "jodie/synth.hpp"

using namespace jodie;

TEST(Synth, RoundTripCountsForEveryPreset) {
  for (const char* preset : {"repetitive", "drift", "dropout"}) {
    const Dataset ds = make_synthetic(preset, 30, 10, 1200, 42);
    const Dataset re = parse_csv_string(serialize_csv_string(ds));
    EXPECT_EQ(re.num_users, 30) << preset;
    EXPECT_EQ(re.num_items, 10) << preset;
    EXPECT_EQ(re.size(), 1200u) << preset;
  }
  EXPECT_THROW(make_synthetic("nope", 5, 5, 100, 1), InvalidArgument);
}

TEST(Synth, SameSeedIsByteIdentical) {
  for (const char* preset : {"repetitive", "drift", "dropout"}) {
    const std::string a = serialize_csv_string(make_synthetic(preset, 25, 8, 900, 7));
    const std::string b = serialize_csv_string(make_synthetic(preset, 25, 8, 900, 7));
    EXPECT_EQ(a, b) << preset;
    const std::string c = serialize_csv_string(make_synthetic(preset, 25, 8, 900, 8));
    EXPECT_NE(a, c) << preset;
  }
}

TEST(Synth, RepetitiveNextItemIsFunctionOfUserAndPrev) {
  const Dataset ds = make_repetitive(20, 10, 2000, 7);
  // exhaustive scan: (user, prev item) always determines the next item
  std::map<std::pair<EntityId, EntityId>, EntityId> next;
  std::vector<EntityId> prev(ds.num_users, -1);
  for (const Interaction& e : ds.interactions) {
    if (prev[e.user_id] >= 0) {
      const auto key = std::make_pair(e.user_id, prev[e.user_id]);
      const auto it = next.find(key);
      if (it == next.end())
        next.emplace(key, e.item_id);
      else
        EXPECT_EQ(it->second, e.item_id) << "user " << key.first << " prev " << key.second;
    }
    prev[e.user_id] = e.item_id;
  }
  EXPECT_FALSE(next.empty());
}

TEST(Synth, RepetitiveUsesSmallPersonalCycles) {
  const Dataset ds = make_repetitive(20, 10, 2000, 3);
  std::vector<std::set<EntityId>> seen(ds.num_users);
  for (const Interaction& e : ds.interactions) seen[e.user_id].insert(e.item_id);
  for (EntityId u = 0; u < ds.num_users; ++u) {
    EXPECT_GE(seen[u].size(), 2u);
    EXPECT_LE(seen[u].size(), 3u);  // pairs, plus one triple when items are odd
  }
}

TEST(Synth, DriftMovesUsersBetweenClusters) {
  const Dataset ds = make_drift(10, 20, 3000, 5);
  // a user's item set early in the stream differs from late in the stream
  std::size_t moved = 0;
  for (EntityId u = 0; u < ds.num_users; ++u) {
    std::set<EntityId> early, late;
    std::size_t count = 0, total = 0;
    for (const Interaction& e : ds.interactions)
      if (e.user_id == u) ++total;
    for (const Interaction& e : ds.interactions) {
      if (e.user_id != u) continue;
      if (count < total / 3)
        early.insert(e.item_id);
      else if (count >= 2 * total / 3)
        late.insert(e.item_id);
      ++count;
    }
    bool disjoint = true;
    for (const EntityId i : late)
      if (early.count(i)) disjoint = false;
    moved += disjoint;
  }
  EXPECT_GT(moved, 0u);
}

TEST(Synth, DropoutPlantsLabeledFinals) {
  const Dataset ds = make_dropout(100, 10, 3000, 11);
  std::map<EntityId, std::size_t> label_count;
  std::map<EntityId, std::size_t> last_event;
  std::map<EntityId, std::size_t> labeled_at;
  for (std::size_t j = 0; j < ds.size(); ++j) {
    const Interaction& e = ds.interactions[j];
    last_event[e.user_id] = j;
    if (e.state_label) {
      ++label_count[e.user_id];
      labeled_at[e.user_id] = j;
    }
  }
  EXPECT_EQ(label_count.size(), 5u);  // 5% of 100 users
  for (const auto& [user, count] : label_count) {
    EXPECT_EQ(count, 1u);
    // the labeled interaction is the user's final one
    EXPECT_EQ(labeled_at[user], last_event[user]);
  }
  EXPECT_EQ(ds.feature_dim, 4);
}

TEST(Synth, DropoutShiftsFeaturesBeforeTheEnd) {
  const Dataset ds = make_dropout(100, 10, 3000, 13);
  // mean of feature 0 over droppers' last six events should sit far above
  // everyone else's
  std::vector<std::uint8_t> dropper(ds.num_users, 0);
  for (const Interaction& e : ds.interactions)
    if (e.state_label) dropper[e.user_id] = 1;
  std::vector<std::vector<double>> per_user(ds.num_users);
  for (const Interaction& e : ds.interactions) per_user[e.user_id].push_back(e.features[0]);

  double shifted = 0.0, baseline = 0.0;
  std::size_t ns = 0, nb = 0;
  for (EntityId u = 0; u < ds.num_users; ++u) {
    const auto& f = per_user[u];
    if (dropper[u]) {
      for (std::size_t k = f.size() - 6; k < f.size(); ++k) {
        shifted += f[k];
        ++ns;
      }
    } else {
      for (const double v : f) {
        baseline += v;
        ++nb;
      }
    }
  }
  EXPECT_GT(shifted / ns, baseline / nb + 1.5);
}

TEST(Synth, ValidationErrors) {
  EXPECT_THROW(make_repetitive(0, 10, 100, 1), InvalidArgument);
  EXPECT_THROW(make_repetitive(10, 1, 100, 1), InvalidArgument);
  EXPECT_THROW(make_repetitive(10, 10, 5, 1), InvalidArgument);
  EXPECT_THROW(make_dropout(1, 10, 100, 1), InvalidArgument);
  EXPECT_THROW(make_dropout(100, 10, 50, 1), InvalidArgument);
}
