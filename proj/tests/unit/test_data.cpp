// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>

#include "dwf/data.hpp"
#include "helpers.hpp"

using namespace dwf;
using dwf::testing::TempDir;

namespace {
std::vector<unsigned char> record(unsigned char label, unsigned char fill) {
  std::vector<unsigned char> r(kCifarRecordBytes, fill);
  r[0] = label;
  return r;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}
}  // namespace

TEST_CASE("CIFAR-10 record format") {
  TempDir dir("cifar");
  auto r = record(3, 0);
  r[1] = 255;     // R(0,0)
  r[1 + 1024] = 128;  // G(0,0)
  r[1 + 2048 + 33] = 51;  // B(1,1)
  write_bytes(dir.path / "one.bin", r);
  const Dataset ds = load_cifar10(dir.path / "one.bin");
  REQUIRE(ds.size() == 1);
  CHECK(ds.labels[0] == 3);
  CHECK(ds.images.shape() == Shape{1, 3, 32, 32});
  CHECK(ds.images[0] == 1.0);
  CHECK(ds.images[1] == 0.0);
  CHECK(ds.images[1024] == 128.0 / 255.0);
  CHECK(ds.images[2048 + 33] == 51.0 / 255.0);

  write_bytes(dir.path / "short.bin", std::vector<unsigned char>(3072, 0));
  CHECK_THROWS_AS(load_cifar10(dir.path / "short.bin"), DataError);
  auto two = record(1, 0);
  const auto bad = record(10, 0);
  two.insert(two.end(), bad.begin(), bad.end());
  write_bytes(dir.path / "badlabel.bin", two);
  try {
    load_cifar10(dir.path / "badlabel.bin");
    FAIL("expected rejection");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("record 1") != std::string::npos);
  }
  CHECK_THROWS_AS(load_cifar10(dir.path / "missing.bin"), DataError);
}

TEST_CASE("CIFAR-10 split layout") {
  TempDir dir("split");
  for (int i = 1; i <= 5; ++i) write_bytes(dir.path / ("data_batch_" + std::to_string(i) + ".bin"), record(i, 10));
  write_bytes(dir.path / "test_batch.bin", record(9, 20));
  const CifarSplit s = load_cifar10_split(dir.path);
  CHECK(s.train.labels == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(s.test.labels == std::vector<int>{9});
}

TEST_CASE("normalize") {
  const double mu[] = {0.4914, 0.4822, 0.4465}, sd[] = {0.2023, 0.1994, 0.2010};
  const Tensor x({1, 3, 1, 2}, {0.4914, 0.6937, 0.4822, 0.4822, 0.4465, 0.4465});
  const Tensor n = normalize(x, mu, sd);
  CHECK(n[0] == 0.0);
  CHECK(std::abs(n[1] - 1.0) <= 1e-15);
  const double zero[] = {0, 0, 0}, one[] = {1, 1, 1};
  CHECK(normalize(x, zero, one) == x);
  const double two[] = {0, 0};
  CHECK_THROWS(normalize(x, two, two));
}

TEST_CASE("batching") {
  BatchPlan plan{4, false, 0, false};
  CHECK(epoch_order(5, plan, 0) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  std::vector<std::size_t> sizes;
  for (const auto& b : batch_indices(10, plan, 0)) sizes.push_back(b.size());
  CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
  plan.drop_last = true;
  CHECK(batch_indices(10, plan, 0).size() == 2);
  plan.shuffle = true;
  plan.seed = 9;
  CHECK(epoch_order(100, plan, 3) == epoch_order(100, plan, 3));
  CHECK(epoch_order(100, plan, 3) != epoch_order(100, plan, 4));
  auto order = epoch_order(100, plan, 1);
  std::sort(order.begin(), order.end());
  CHECK(order == epoch_order(100, BatchPlan{4, false, 0, false}, 0));
}

TEST_CASE("synthetic corpora") {
  for (SynthKind kind : {SynthKind::gaussian_blobs, SynthKind::striped_patches}) {
    const Dataset a = synth_dataset(kind, 200, 2, 16, 7);
    const Dataset b = synth_dataset(kind, 200, 2, 16, 7);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    CHECK_NOTHROW(a.validate());
    CHECK(std::count(a.labels.begin(), a.labels.end(), 0) == 100);
    CHECK(synth_dataset(kind, 200, 2, 16, 8).images != a.images);
    CHECK(parse_synth_kind(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(synth_dataset(SynthKind::gaussian_blobs, 2, 3, 16, 1), std::invalid_argument);
}

TEST_CASE("subset") {
  const Dataset ds = synth_dataset(SynthKind::gaussian_blobs, 3000, 3, 8, 1);
  const int cls[] = {0, 1};
  const Dataset s = subset(ds, cls, 500, 4);
  CHECK(s.size() == 1000);
  CHECK(s.num_classes == 2);
  CHECK(s.labels == subset(ds, cls, 500, 4).labels);
  CHECK(s.images == subset(ds, cls, 500, 4).images);
  const int rev[] = {2, 0};
  const Dataset r = subset(ds, rev, 10, 4);
  CHECK(*std::max_element(r.labels.begin(), r.labels.end()) == 1);
  try {
    subset(ds, cls, 1001, 4);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("class 0") != std::string::npos);
  }
}

TEST_CASE("channel statistics") {
  Dataset ds;
  ds.images = Tensor({2, 1, 1, 2}, {0.0, 1.0, 0.0, 1.0});
  ds.labels = {0, 0};
  ds.num_classes = 1;
  std::vector<double> mean, sd;
  channel_statistics(ds, mean, sd);
  CHECK(mean == std::vector<double>{0.5});
  CHECK(sd == std::vector<double>{0.5});
}
