#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "jodie/model.hpp"

namespace jodie {

// Text checkpoint: a header with dims, counts, loss scales and the delta
// normalization constant, followed by the named tensors in traversal order.
// Values use %.17g so a save/load round trip is bit exact.

inline void save_checkpoint(const ModelParams& p, std::ostream& out) {
  const auto emit = [&out](const char* key, double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << key << ' ' << buf << '\n';
  };
  out << "jodie-checkpoint v1\n";
  out << "num_users " << p.dims.num_users << '\n';
  out << "num_items " << p.dims.num_items << '\n';
  out << "dim_user " << p.dims.n << '\n';
  out << "dim_item " << p.dims.m << '\n';
  out << "feature_dim " << p.dims.feature_dim << '\n';
  emit("lambda_u", p.lambda_u);
  emit("lambda_i", p.lambda_i);
  emit("lambda_s", p.lambda_s);
  out << "squared_loss " << (p.squared_loss ? 1 : 0) << '\n';
  emit("delta_scale", p.delta_scale);

  std::string line;
  char buf[48];
  for_each_tensor(const_cast<ModelParams&>(p),
                  [&](const char* name, const double* d, std::size_t sz) {
                    out << "tensor " << name << ' ' << sz << '\n';
                    line.clear();
                    for (std::size_t i = 0; i < sz; ++i) {
                      std::snprintf(buf, sizeof(buf), "%.17g", d[i]);
                      line += buf;
                      line += (i + 1 == sz) ? '\n' : ' ';
                    }
                    out << line;
                  });
  out << "end\n";
}

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write checkpoint '" + path + "'");
  save_checkpoint(p, out);
  require(out.good(), "checkpoint write failed for '" + path + "'");
}

inline ModelParams load_checkpoint(std::istream& in) {
  std::string tok;
  const auto expect = [&](const std::string& want) {
    require(static_cast<bool>(in >> tok) && tok == want,
            "checkpoint: expected '" + want + "', got '" + tok + "'");
  };
  expect("jodie-checkpoint");
  expect("v1");

  ModelDims dims;
  double lambda_u, lambda_i, lambda_s, delta_scale;
  int squared;
  expect("num_users");
  in >> dims.num_users;
  expect("num_items");
  in >> dims.num_items;
  expect("dim_user");
  in >> dims.n;
  expect("dim_item");
  in >> dims.m;
  expect("feature_dim");
  in >> dims.feature_dim;
  expect("lambda_u");
  in >> lambda_u;
  expect("lambda_i");
  in >> lambda_i;
  expect("lambda_s");
  in >> lambda_s;
  expect("squared_loss");
  in >> squared;
  expect("delta_scale");
  in >> delta_scale;
  require(in.good(), "checkpoint: truncated header");

  ModelParams p = ModelParams::zeros(dims);
  p.lambda_u = lambda_u;
  p.lambda_i = lambda_i;
  p.lambda_s = lambda_s;
  p.squared_loss = squared != 0;
  p.delta_scale = delta_scale;

  for_each_tensor(p, [&](const char* name, double* d, std::size_t sz) {
    expect("tensor");
    expect(name);
    std::size_t stored = 0;
    in >> stored;
    require(stored == sz, std::string("checkpoint: tensor '") + name + "' has size " +
                              std::to_string(stored) + ", expected " + std::to_string(sz));
    for (std::size_t i = 0; i < sz; ++i) in >> d[i];
    require(in.good(), std::string("checkpoint: truncated tensor '") + name + "'");
  });
  expect("end");
  return p;
}

inline ModelParams load_checkpoint_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace jodie
