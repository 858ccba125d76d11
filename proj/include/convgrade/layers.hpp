#pragma once

#include <string>

#include "convgrade/autodiff.hpp"

namespace convgrade {

/// y = x W (+ b). Parameters live in a ParamStore under "<name>.w" / "<name>.b".
struct Linear {
  ParamId w = 0;
  ParamId b = 0;
  bool has_bias = true;
  std::size_t in = 0;
  std::size_t out = 0;

  static Linear create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool bias = true);
  Var operator()(Tape& t, const ParamStore& store, Var x) const;
};

/// One LSTM direction; forget-gate bias starts at 1.
struct LstmParams {
  ParamId input = 0;
  ParamId recurrent = 0;
  ParamId bias = 0;

  static LstmParams create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);
  LstmWeights bind(Tape& t, const ParamStore& store) const;
};

}  // namespace convgrade
