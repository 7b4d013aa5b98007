// SPDX-License-Identifier: Apache-2.0
#include "dwf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>

#include "dwf/common.hpp"

namespace dwf {

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError(name + ": images must be [N,C,H,W], got " + to_string(images.shape()));
  if (images.dim(0) != labels.size()) {
    throw DataError(name + ": " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                    " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DataError(name + ": label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                      " outside [0," + std::to_string(num_classes) + ")");
    }
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError(name + ": pixel outside [0,1]");
  }
}

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

void append_cifar_file(const std::filesystem::path& file, std::vector<double>& pixels, std::vector<int>& labels) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw DataError(file.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of " +
                    std::to_string(kCifarRecordBytes) + "-byte records");
  }
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw DataError(file.string() + ": record " + std::to_string(r) + " has label byte " + std::to_string(rec[0]));
    }
    labels.push_back(rec[0]);
    for (std::size_t i = 0; i < kCifarPixels; ++i) pixels.push_back(static_cast<double>(rec[1 + i]) / 255.0);
  }
}

Dataset cifar_from_files(const std::vector<std::filesystem::path>& files, std::string name) {
  std::vector<double> pixels;
  std::vector<int> labels;
  for (const auto& f : files) append_cifar_file(f, pixels, labels);
  if (labels.empty()) throw DataError(name + ": no records");
  Dataset ds;
  ds.images = Tensor(Shape{labels.size(), 3, kCifarSide, kCifarSide}, std::move(pixels));
  ds.labels = std::move(labels);
  ds.num_classes = 10;
  ds.name = std::move(name);
  return ds;
}

}  // namespace

Dataset load_cifar10(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(path)) {
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".bin") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError(path.string() + ": no .bin batch files");
  } else {
    files.push_back(path);
  }
  return cifar_from_files(files, "cifar10:" + path.filename().string());
}

CifarSplit load_cifar10_split(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> train;
  for (int i = 1; i <= 5; ++i) {
    auto f = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (std::filesystem::exists(f)) train.push_back(f);
  }
  if (train.empty()) throw DataError(dir.string() + ": no data_batch_*.bin files");
  const auto test = dir / "test_batch.bin";
  if (!std::filesystem::exists(test)) throw DataError(dir.string() + ": missing test_batch.bin");
  return {cifar_from_files(train, "cifar10-train"), cifar_from_files({test}, "cifar10-test")};
}

Tensor normalize(const Tensor& x, std::span<const double> mean, std::span<const double> std) {
  if (x.rank() < 2 || mean.size() != x.dim(1) || std.size() != x.dim(1)) {
    throw std::invalid_argument("normalize: channel count mismatch between " + to_string(x.shape()) + " and " +
                                std::to_string(mean.size()) + " statistics");
  }
  for (double s : std) {
    if (!(s > 0.0)) throw std::invalid_argument("normalize: std must be positive");
  }
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
  Tensor out(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const std::size_t off = (b * c + ci) * inner;
      for (std::size_t q = 0; q < inner; ++q) out[off + q] = (x[off + q] - mean[ci]) / std[ci];
    }
  }
  return out;
}

void channel_statistics(const Dataset& ds, std::vector<double>& mean, std::vector<double>& std) {
  const std::size_t n = ds.images.dim(0), c = ds.images.dim(1), inner = ds.images.size() / (n * c);
  mean.assign(c, 0.0);
  std.assign(c, 0.0);
  const double count = static_cast<double>(n * inner);
  for (std::size_t ci = 0; ci < c; ++ci) {
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t q = 0; q < inner; ++q) s += ds.images[(b * c + ci) * inner + q];
    }
    mean[ci] = s / count;
    double v = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t q = 0; q < inner; ++q) {
        const double d = ds.images[(b * c + ci) * inner + q] - mean[ci];
        v += d * d;
      }
    }
    std[ci] = std::sqrt(v / count);
    if (std[ci] <= 0.0) std[ci] = 1.0;
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, const BatchPlan& plan, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (plan.shuffle) {
    Rng rng(derive_seed(plan.seed, "epoch:" + std::to_string(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan, std::size_t epoch) {
  if (plan.batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  const std::vector<std::size_t> order = epoch_order(n, plan, epoch);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t begin = 0; begin < n; begin += plan.batch_size) {
    const std::size_t end = std::min(n, begin + plan.batch_size);
    if (plan.drop_last && end - begin < plan.batch_size) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  Shape shape = ds.images.shape();
  const std::size_t per = ds.images.size() / shape[0];
  shape[0] = indices.size();
  std::vector<double> data(indices.size() * per);
  std::vector<int> y(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(ds.images.raw() + indices[i] * per, per, data.data() + i * per);
    y[i] = ds.labels.at(indices[i]);
  }
  return {Tensor(std::move(shape), std::move(data)), std::move(y)};
}

std::vector<Batch> make_batches(const Dataset& ds, const BatchPlan& plan, std::size_t epoch) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(ds.size(), plan, epoch)) out.push_back(gather(ds, idx));
  return out;
}

std::string to_string(SynthKind kind) {
  return kind == SynthKind::gaussian_blobs ? "gaussian-blobs" : "striped-patches";
}

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "gaussian-blobs") return SynthKind::gaussian_blobs;
  if (name == "striped-patches") return SynthKind::striped_patches;
  throw std::invalid_argument("unknown synthetic dataset kind '" + name + "'");
}

namespace {

constexpr double kBlobAmplitude = 0.5;
constexpr double kTextureAmplitude = 0.04;
constexpr double kPixelNoise = 0.10;

struct ClassPrototype {
  double cy, cx;
  double color[3];
  double angle;
  std::vector<double> texture;  // ±1, [3,side,side]
};

std::vector<ClassPrototype> prototypes(SynthKind kind, std::size_t classes, std::size_t side) {
  Rng rng(derive_seed(0x5eed, to_string(kind) + ":" + std::to_string(classes) + ":" + std::to_string(side)));
  const double margin = side >= 8 ? 3.0 : static_cast<double>(side) / 4.0;
  std::vector<ClassPrototype> out(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    ClassPrototype& p = out[k];
    p.cy = rng.uniform(margin, static_cast<double>(side) - margin);
    p.cx = rng.uniform(margin, static_cast<double>(side) - margin);
    const double hue = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
    p.color[0] = std::cos(hue);
    p.color[1] = std::cos(hue - 2.0 * std::numbers::pi / 3.0);
    p.color[2] = std::cos(hue + 2.0 * std::numbers::pi / 3.0);
    p.angle = std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
    p.texture.resize(3 * side * side);
    for (double& t : p.texture) t = rng.uniform() < 0.5 ? -1.0 : 1.0;
  }
  return out;
}

}  // namespace

Dataset synth_dataset(SynthKind kind, std::size_t n, std::size_t classes, std::size_t side, std::uint64_t seed) {
  if (classes == 0 || n < classes) {
    throw std::invalid_argument("synth_dataset: need n >= classes >= 1 (n=" + std::to_string(n) +
                                ", classes=" + std::to_string(classes) + ")");
  }
  if (side < 4) throw std::invalid_argument("synth_dataset: side must be at least 4");
  const auto protos = prototypes(kind, classes, side);
  Rng rng(seed);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  for (std::size_t i = n; i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);

  const double s = static_cast<double>(side);
  const double blob_sigma = s / 8.0;
  const std::size_t plane = side * side;
  std::vector<double> pixels(n * 3 * plane);
  for (std::size_t i = 0; i < n; ++i) {
    const ClassPrototype& p = protos[static_cast<std::size_t>(labels[i])];
    double* img = pixels.data() + i * 3 * plane;
    if (kind == SynthKind::gaussian_blobs) {
      const double cy = p.cy + rng.normal() * s / 16.0;
      const double cx = p.cx + rng.normal() * s / 16.0;
      const double amp = kBlobAmplitude * rng.uniform(0.5, 1.0);
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double bump = amp * std::exp(-(dy * dy + dx * dx) / (2.0 * blob_sigma * blob_sigma));
          for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * side + x] = 0.5 + bump * p.color[c];
        }
      }
    } else {
      const std::size_t patch = std::max<std::size_t>(2, side / 2);
      const std::size_t oy = rng.below(side - patch + 1);
      const std::size_t ox = rng.below(side - patch + 1);
      const double amp = 0.3 * rng.uniform(0.7, 1.0);
      const double ca = std::cos(p.angle), sa = std::sin(p.angle);
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t q = 0; q < plane; ++q) img[c * plane + q] = 0.5;
      }
      for (std::size_t y = oy; y < oy + patch; ++y) {
        for (std::size_t x = ox; x < ox + patch; ++x) {
          const double u = ca * static_cast<double>(x) + sa * static_cast<double>(y);
          const double v = amp * std::cos(2.0 * std::numbers::pi * u / 4.0);
          for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * side + x] += v;
        }
      }
    }
    for (std::size_t q = 0; q < 3 * plane; ++q) {
      const double v = img[q] + kTextureAmplitude * p.texture[q] + kPixelNoise * rng.normal();
      img[q] = std::clamp(v, 0.0, 1.0);
    }
  }

  Dataset ds;
  ds.images = Tensor(Shape{n, 3, side, side}, std::move(pixels));
  ds.labels = std::move(labels);
  ds.num_classes = classes;
  ds.name = to_string(kind);
  return ds;
}

Dataset subset(const Dataset& ds, std::span<const int> classes, std::size_t per_class, std::uint64_t seed) {
  if (classes.empty() || per_class == 0) throw std::invalid_argument("subset: need classes and per_class >= 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  std::string deficits;
  for (int c : classes) {
    const std::size_t have = by_class[c].size();
    if (have < per_class) {
      deficits += " class " + std::to_string(c) + " short by " + std::to_string(per_class - have) + ";";
    }
  }
  if (!deficits.empty()) throw std::invalid_argument("subset: insufficient samples:" + deficits);

  Rng rng(seed);
  std::vector<std::size_t> picked;
  std::vector<int> labels;
  for (std::size_t li = 0; li < classes.size(); ++li) {
    std::vector<std::size_t> pool = by_class[classes[li]];
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t j = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
      picked.push_back(pool[i]);
      labels.push_back(static_cast<int>(li));
    }
  }
  Batch b = gather(ds, picked);
  Dataset out;
  out.images = std::move(b.x);
  out.labels = std::move(labels);
  out.num_classes = classes.size();
  out.name = ds.name + ":subset";
  return out;
}

}  // namespace dwf
