#pragma once

#include <string>

#include "dud/nn/ops.hpp"
#include "dud/rng.hpp"

namespace dud::nn {

/// 3x3 (or kxk) convolution bound to two entries of a ParameterStore.
struct Conv {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int stride = 1;

  static Conv create(ParameterStore& store, const std::string& name, int cin, int cout, int kernel, int stride,
                     Rng& rng, float gain = 1.0f);
  template <class Store>
  Var operator()(Graph& g, Store& store, Var x) const {
    return conv2d(g, x, g.parameter(store, weight), g.parameter(store, bias), stride);
  }
};

/// out = relu(shortcut(x) + conv2(relu(conv1(x)))), shortcut a 1x1 conv when channels change.
struct ResBlock {
  Conv conv1;
  Conv conv2;
  bool project = false;
  Conv shortcut;

  static ResBlock create(ParameterStore& store, const std::string& name, int cin, int cout, int kernel, Rng& rng);
  template <class Store>
  Var operator()(Graph& g, Store& store, Var x) const {
    Var branch = conv2(g, store, relu(g, conv1(g, store, x)));
    Var skip = project ? shortcut(g, store, x) : x;
    return relu(g, add(g, skip, branch));
  }
};

}  // namespace dud::nn
