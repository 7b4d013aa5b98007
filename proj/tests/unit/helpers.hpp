// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dwf/common.hpp"
#include "dwf/data.hpp"
#include "dwf/nn.hpp"

namespace dwf::testing {

/// flatten -> dense(K) with the given [in, K] weights and zero bias, no
/// normalization (mean 0, std 1).
inline Model linear_model(std::array<std::size_t, 3> shape, std::size_t k, std::vector<double> weights) {
  ModelSpec spec;
  spec.input_shape = shape;
  spec.num_classes = k;
  spec.layers = {LayerSpec::flatten(), LayerSpec::dense(k)};
  spec.mean.assign(shape[0], 0.0);
  spec.std.assign(shape[0], 1.0);
  const std::size_t in = shape[0] * shape[1] * shape[2];
  return Model(spec, {{"layers.1.weight", Tensor({in, k}, std::move(weights))}, {"layers.1.bias", Tensor({k})}});
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Small conv net used where a realistic but fast classifier is needed.
inline ModelSpec tiny_cnn_spec(std::size_t side = 8, std::size_t classes = 2) {
  ModelSpec spec;
  spec.input_shape = {3, side, side};
  spec.num_classes = classes;
  spec.layers = {LayerSpec::conv(4, 3, 1, 1), LayerSpec::relu(), LayerSpec::avgpool(2), LayerSpec::flatten(),
                 LayerSpec::dense(classes)};
  spec.mean = {0.5, 0.5, 0.5};
  spec.std = {0.25, 0.25, 0.25};
  return spec;
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("dwf-test-" + tag + "-" + std::to_string(derive_seed(reinterpret_cast<std::uintptr_t>(this), tag)));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace dwf::testing
