#pragma once

#include <string>

#include "jodie/dataset.hpp"
#include "jodie/model.hpp"

namespace fixtures {

// Two-sided toy network: three users and four items over nine interactions.
// Its batch plan compiles to exactly five batches.
inline const char* kExampleNetworkCsv =
    "user_id,item_id,timestamp,state_label,comma_separated_list_of_features\n"
    "u1,i1,1,0\n"
    "u2,i1,2,0\n"
    "u3,i2,3,0\n"
    "u1,i2,4,0\n"
    "u2,i2,5,0\n"
    "u3,i3,6,0\n"
    "u2,i3,7,0\n"
    "u3,i4,8,0\n"
    "u2,i4,9,0\n";

inline jodie::Dataset example_network() {
  return jodie::parse_csv_string(kExampleNetworkCsv);
}

inline jodie::ModelParams tiny_params(const jodie::Dataset& ds, std::int32_t n = 4,
                                      std::int32_t m = 4, std::uint64_t seed = 1) {
  return jodie::ModelParams::init(jodie::ModelDims::for_dataset(ds, n, m), seed);
}

}  // namespace fixtures
