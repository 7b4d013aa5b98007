// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dwf/tensor.hpp"

namespace dwf {

/// Images [N,C,H,W] with every pixel in [0,1] and labels in [0, num_classes).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  /// Throws DataError when an invariant is violated.
  void validate() const;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Reads CIFAR-10 binary batches: 3073-byte records of one label byte
/// followed by 1024 R, 1024 G and 1024 B bytes, each plane row-major 32×32.
/// A directory loads every *.bin file in it in lexical order. Pixels are
/// scaled byte/255.
Dataset load_cifar10(const std::filesystem::path& path);

struct CifarSplit {
  Dataset train;
  Dataset test;
};

/// data_batch_1..5.bin as train and test_batch.bin as test.
CifarSplit load_cifar10_split(const std::filesystem::path& dir);

/// x′ = (x − mean_c)/std_c on a tensor [N,C,...].
Tensor normalize(const Tensor& x, std::span<const double> mean, std::span<const double> std);

/// Empirical per-channel mean and (population) standard deviation.
void channel_statistics(const Dataset& ds, std::vector<double>& mean, std::vector<double>& std);

struct BatchPlan {
  std::size_t batch_size = 128;
  bool shuffle = true;
  std::uint64_t seed = 0;
  bool drop_last = false;
};

struct Batch {
  Tensor x;
  std::vector<int> y;
};

/// Sample order of one epoch: identity without shuffling, otherwise a
/// permutation determined by (plan.seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, const BatchPlan& plan, std::size_t epoch);

/// Index groups of one epoch; the last short group is kept unless drop_last.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan, std::size_t epoch);

/// Gathers samples into a batch tensor.
Batch gather(const Dataset& ds, std::span<const std::size_t> indices);

std::vector<Batch> make_batches(const Dataset& ds, const BatchPlan& plan, std::size_t epoch);

enum class SynthKind { gaussian_blobs, striped_patches };

std::string to_string(SynthKind kind);
SynthKind parse_synth_kind(const std::string& name);

/// Seeded synthetic 3-channel image corpus with balanced labels.
///
/// gaussian-blobs: a colored Gaussian bump (class-specific hue and nominal
///   position, jittered) plus a faint class-specific ±1 texture and pixel noise.
/// striped-patches: a class-specific stripe orientation and phase inside a
///   randomly placed patch plus the same faint texture and noise.
///
/// Class prototypes depend only on (kind, classes, side); the seed drives
/// sample draws. Throws std::invalid_argument when n < classes.
Dataset synth_dataset(SynthKind kind, std::size_t n, std::size_t classes, std::size_t side, std::uint64_t seed);

/// Selects per_class samples of each listed class (deterministic in seed)
/// and relabels them 0..classes.size()−1 in list order.
Dataset subset(const Dataset& ds, std::span<const int> classes, std::size_t per_class, std::uint64_t seed);

}  // namespace dwf
