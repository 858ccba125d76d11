#include "convgrade/layers.hpp"

namespace convgrade {

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.has_bias = bias;
  l.w = store.add(name + ".w", glorot(in, out, rng));
  if (bias) l.b = store.add(name + ".b", Tensor(Shape{out}));
  return l;
}

Var Linear::operator()(Tape& t, const ParamStore& store, Var x) const {
  Var y = matmul(x, t.param(store, w));
  return has_bias ? add(y, t.param(store, b)) : y;
}

LstmParams LstmParams::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng) {
  LstmParams p;
  p.input = store.add(name + ".wx", glorot(in, 4 * hidden, rng));
  p.recurrent = store.add(name + ".wh", glorot(hidden, 4 * hidden, rng));
  Tensor b(Shape{4 * hidden});
  for (std::size_t k = hidden; k < 2 * hidden; ++k) b[k] = 1.0;
  p.bias = store.add(name + ".b", std::move(b));
  return p;
}

LstmWeights LstmParams::bind(Tape& t, const ParamStore& store) const {
  return {t.param(store, input), t.param(store, recurrent), t.param(store, bias)};
}

}  // namespace convgrade
