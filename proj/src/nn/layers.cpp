#include "dud/nn/layers.hpp"

#include <cmath>

namespace dud::nn {

Conv Conv::create(ParameterStore& store, const std::string& name, int cin, int cout, int kernel, int stride, Rng& rng,
                  float gain) {
  // [ky][kx][cin][cout], i.e. a (k*k*cin) x cout matrix.
  Tensor w(kernel, kernel, cin, cout);
  const float std_dev = gain * std::sqrt(2.0f / static_cast<float>(cin * kernel * kernel));
  for (float& v : w.data) v = std_dev * rng.normal();
  Conv conv;
  conv.weight = store.add(name + ".weight", std::move(w));
  conv.bias = store.add(name + ".bias", Tensor(1, 1, 1, cout));
  conv.stride = stride;
  return conv;
}

ResBlock ResBlock::create(ParameterStore& store, const std::string& name, int cin, int cout, int kernel, Rng& rng) {
  ResBlock block;
  block.conv1 = Conv::create(store, name + ".conv1", cin, cout, kernel, 1, rng);
  // Residual branch starts small so a fresh block is close to its shortcut.
  block.conv2 = Conv::create(store, name + ".conv2", cout, cout, kernel, 1, rng, 0.5f);
  if (cin != cout) {
    block.project = true;
    block.shortcut = Conv::create(store, name + ".shortcut", cin, cout, 1, 1, rng, 0.7f);
  }
  return block;
}

}  // namespace dud::nn
