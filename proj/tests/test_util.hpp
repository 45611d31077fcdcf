#pragma once

#include "dysim/simulator.hpp"

namespace dysim::testing {

// A 4-GPU system and a small model that simulates in milliseconds.
inline RunConfig tiny_run(Method method, std::uint64_t seed = 1) {
  RunConfig c;
  c.sys.preset = "custom";
  c.sys.n_gpu = 4;
  c.model = model_preset("S");
  c.model.seq_len = 256;
  c.model.hidden_size = 512;
  c.model.moe_hidden_size = 256;
  c.model.n_experts = 16;
  c.model.topk = 4;
  c.dist = Distribution::normal(0.05);
  c.seed = seed;
  c.method = method;
  c.tsize = 16;
  return c;
}

}  // namespace dysim::testing
