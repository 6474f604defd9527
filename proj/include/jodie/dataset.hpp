#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "jodie/common.hpp"

namespace jodie {

using EntityId = std::int32_t;

// One user-item event. Feature vectors have the same length across a dataset.
struct Interaction {
  std::int64_t seq_index = 0;  // position in time order
  EntityId user_id = 0;
  EntityId item_id = 0;
  double timestamp = 0.0;
  std::vector<double> features;
  std::uint8_t state_label = 0;  // 1 marks a user's final interaction before drop-out
};

struct Dataset {
  std::vector<Interaction> interactions;
  EntityId num_users = 0;
  EntityId num_items = 0;
  std::int32_t feature_dim = 0;
  // dense id <-> external id maps
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  std::unordered_map<std::string, EntityId> user_index;
  std::unordered_map<std::string, EntityId> item_index;

  std::size_t size() const { return interactions.size(); }
  // The padding item occupies one extra dense id; it backs the "previous item"
  // slot of a user's first interaction.
  EntityId sentinel_item() const { return num_items; }
};

// Per-interaction elapsed times and the user's previous item.
struct DeltaAnnotation {
  double delta_u = 0.0;
  double delta_i = 0.0;
  EntityId prev_item_of_user = 0;
};

struct SplitConfig {
  double train_frac = 0.8;
  double valid_frac = 0.1;
  double test_frac = 0.1;
};

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct SplitRanges {
  Range train, valid, test;
};

inline const char* kCsvHeader = "user_id,item_id,timestamp,state_label,comma_separated_list_of_features";

namespace detail {

inline void split_fields(const std::string& line, std::vector<std::string>& out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(const std::string& s, std::size_t line_no, const char* what) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  require(end == begin + s.size() && !s.empty(),
          "line " + std::to_string(line_no) + ": malformed " + what + " '" + s + "'");
  return v;
}

inline EntityId intern(const std::string& name, std::unordered_map<std::string, EntityId>& index,
                       std::vector<std::string>& names) {
  auto it = index.find(name);
  if (it != index.end()) return it->second;
  const EntityId id = static_cast<EntityId>(names.size());
  index.emplace(name, id);
  names.push_back(name);
  return id;
}

inline void format_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace detail

// Parses the interaction CSV layout:
//   user_id,item_id,timestamp,state_label[,f0,f1,...]
// Rows are stable-sorted by timestamp (file order breaks ties) and ids are
// densely remapped in time order. The feature count is fixed by the first row.
inline Dataset parse_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "empty input: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line.rfind("user_id,item_id,timestamp,state_label", 0) == 0,
          "bad header line: '" + line + "'");

  struct RawRow {
    std::string user, item;
    double timestamp;
    std::uint8_t label;
    std::vector<double> features;
    std::size_t file_order;
  };
  std::vector<RawRow> rows;
  std::vector<std::string> fields;
  std::size_t line_no = 1;
  std::int32_t feature_dim = -1;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    detail::split_fields(line, fields);
    require(fields.size() >= 4,
            "line " + std::to_string(line_no) + ": expected at least 4 fields, got " +
                std::to_string(fields.size()));
    RawRow row;
    row.user = fields[0];
    row.item = fields[1];
    row.timestamp = detail::parse_double(fields[2], line_no, "timestamp");
    require(row.timestamp >= 0.0, "line " + std::to_string(line_no) + ": negative timestamp");
    require(fields[3] == "0" || fields[3] == "1",
            "line " + std::to_string(line_no) + ": state_label must be 0 or 1, got '" +
                fields[3] + "'");
    row.label = fields[3] == "1" ? 1 : 0;
    row.features.reserve(fields.size() - 4);
    for (std::size_t i = 4; i < fields.size(); ++i)
      row.features.push_back(detail::parse_double(fields[i], line_no, "feature"));
    const std::int32_t f = static_cast<std::int32_t>(row.features.size());
    if (feature_dim < 0)
      feature_dim = f;
    else
      require(f == feature_dim, "line " + std::to_string(line_no) + ": row has " +
                                    std::to_string(f) + " features, expected " +
                                    std::to_string(feature_dim));
    row.file_order = rows.size();
    rows.push_back(std::move(row));
  }

  std::stable_sort(rows.begin(), rows.end(),
                   [](const RawRow& a, const RawRow& b) { return a.timestamp < b.timestamp; });

  Dataset ds;
  ds.feature_dim = feature_dim < 0 ? 0 : feature_dim;
  ds.interactions.reserve(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    RawRow& row = rows[j];
    Interaction e;
    e.seq_index = static_cast<std::int64_t>(j);
    e.user_id = detail::intern(row.user, ds.user_index, ds.user_names);
    e.item_id = detail::intern(row.item, ds.item_index, ds.item_names);
    e.timestamp = row.timestamp;
    e.features = std::move(row.features);
    e.state_label = row.label;
    ds.interactions.push_back(std::move(e));
  }
  ds.num_users = static_cast<EntityId>(ds.user_names.size());
  ds.num_items = static_cast<EntityId>(ds.item_names.size());
  return ds;
}

inline Dataset parse_csv_string(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

inline Dataset parse_csv_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open '" + path + "'");
  return parse_csv(in);
}

// Canonical form: LF line endings, %.17g floats (exact double round-trip),
// rows in time order.
inline void serialize_csv(const Dataset& ds, std::ostream& out) {
  std::string buf = kCsvHeader;
  buf += '\n';
  for (const Interaction& e : ds.interactions) {
    buf += ds.user_names[e.user_id];
    buf += ',';
    buf += ds.item_names[e.item_id];
    buf += ',';
    detail::format_double(buf, e.timestamp);
    buf += ',';
    buf += e.state_label ? '1' : '0';
    for (double f : e.features) {
      buf += ',';
      detail::format_double(buf, f);
    }
    buf += '\n';
  }
  out << buf;
}

inline std::string serialize_csv_string(const Dataset& ds) {
  std::ostringstream out;
  serialize_csv(ds, out);
  return out.str();
}

inline void write_csv_file(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: keep LF on every platform
  require(out.good(), "cannot write '" + path + "'");
  out << serialize_csv_string(ds);
  require(out.good(), "write failed for '" + path + "'");
}

// One pass over the stream: elapsed time since the user's / item's previous
// interaction (0 on first) and the user's previous item (sentinel on first).
inline std::vector<DeltaAnnotation> annotate_deltas(const Dataset& ds) {
  std::vector<DeltaAnnotation> ann(ds.size());
  std::vector<double> user_last(ds.num_users, -1.0);
  std::vector<double> item_last(ds.num_items, -1.0);
  std::vector<EntityId> prev_item(ds.num_users, ds.sentinel_item());
  for (std::size_t j = 0; j < ds.size(); ++j) {
    const Interaction& e = ds.interactions[j];
    DeltaAnnotation& a = ann[j];
    a.delta_u = user_last[e.user_id] < 0.0 ? 0.0 : e.timestamp - user_last[e.user_id];
    a.delta_i = item_last[e.item_id] < 0.0 ? 0.0 : e.timestamp - item_last[e.item_id];
    a.prev_item_of_user = prev_item[e.user_id];
    user_last[e.user_id] = e.timestamp;
    item_last[e.item_id] = e.timestamp;
    prev_item[e.user_id] = e.item_id;
  }
  return ann;
}

// Contiguous time-ordered ranges with sizes floor(frac * |S|); the remainder
// past the last range stays unassigned.
inline SplitRanges chronological_split(const Dataset& ds, const SplitConfig& cfg) {
  check(cfg.train_frac > 0.0 && cfg.valid_frac > 0.0 && cfg.test_frac > 0.0,
        "split fractions must be positive");
  check(cfg.train_frac + cfg.valid_frac + cfg.test_frac <= 1.0 + 1e-12,
        "split fractions must sum to at most 1");
  const double n = static_cast<double>(ds.size());
  const auto count = [n](double frac) {
    return static_cast<std::size_t>(std::floor(frac * n));
  };
  SplitRanges r;
  r.train = {0, count(cfg.train_frac)};
  r.valid = {r.train.end, r.train.end + count(cfg.valid_frac)};
  r.test = {r.valid.end, r.valid.end + count(cfg.test_frac)};
  require(r.train.size() > 0, "empty train split");
  require(r.valid.size() > 0, "empty validation split");
  require(r.test.size() > 0, "empty test split");
  require(r.test.end <= ds.size(), "split ranges exceed the stream");
  return r;
}

// Mean of nonzero user deltas over a range; the default normalization scale.
// Falls back to 1 when every delta in the range is zero.
inline double mean_nonzero_user_delta(const std::vector<DeltaAnnotation>& ann, Range range) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t j = range.begin; j < range.end; ++j) {
    if (ann[j].delta_u > 0.0) {
      sum += ann[j].delta_u;
      ++count;
    }
  }
  return count == 0 ? 1.0 : sum / static_cast<double>(count);
}

// Divides both delta fields by `scale`; zeros stay zero.
inline void normalize_deltas(std::vector<DeltaAnnotation>& ann, double scale) {
  check(scale > 0.0, "normalize_deltas: scale must be positive");
  for (DeltaAnnotation& a : ann) {
    a.delta_u /= scale;
    a.delta_i /= scale;
  }
}

}  // namespace jodie
