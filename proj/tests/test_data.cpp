#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "nasaudit/dataset.hpp"
#include "nasaudit/error.hpp"
#include "nasaudit/mlp.hpp"
#include "nasaudit/rng.hpp"

using namespace nasaudit;

namespace {

std::filesystem::path tmp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

// Minimal IDX pair: `count` single-pixel 1x1 images with given labels.
void write_idx_pair(const std::filesystem::path& img, const std::filesystem::path& lab,
                    const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& labels,
                    std::uint32_t image_magic = 0x00000803, std::uint32_t label_magic = 0x00000801) {
  auto be32 = [](std::ofstream& f, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) f.put(static_cast<char>((v >> s) & 0xff));
  };
  {
    std::ofstream f(img, std::ios::binary);
    be32(f, image_magic);
    be32(f, static_cast<std::uint32_t>(pixels.size()));
    be32(f, 1);
    be32(f, 1);
    for (std::uint8_t p : pixels) f.put(static_cast<char>(p));
  }
  {
    std::ofstream f(lab, std::ios::binary);
    be32(f, label_magic);
    be32(f, static_cast<std::uint32_t>(labels.size()));
    for (std::uint8_t l : labels) f.put(static_cast<char>(l));
  }
}

}  // namespace

TEST_CASE("synthetic generators: balance, determinism, range") {
  for (const SyntheticKind kind : {SyntheticKind::blobs, SyntheticKind::moons, SyntheticKind::rings}) {
    const std::size_t C = kind == SyntheticKind::moons ? 2 : 2;
    Dataset d = generate_synthetic(kind, 100, 5, C, 7);
    d.validate();
    std::map<int, int> per_class;
    for (int y : d.labels) per_class[y]++;
    for (const auto& [cls, count] : per_class) CHECK(count == 50);
    for (std::size_t i = 0; i < d.features.size(); ++i) {
      CHECK(d.features.values()[i] >= 0.0);
      CHECK(d.features.values()[i] <= 255.0);
    }
  }

  const Dataset a = generate_synthetic(SyntheticKind::blobs, 64, 4, 4, 3);
  const Dataset b = generate_synthetic(SyntheticKind::blobs, 64, 4, 4, 3);
  for (std::size_t i = 0; i < a.features.size(); ++i)
    CHECK(a.features.values()[i] == b.features.values()[i]);
  CHECK(a.labels == b.labels);

  CHECK_THROWS_AS(generate_synthetic(SyntheticKind::blobs, 3, 4, 8, 0), ConfigError);
}

TEST_CASE("rings are nonlinearly separable") {
  // A linear model stays under 80% while a 2-hidden-layer net exceeds 95%.
  const Dataset train = generate_synthetic(SyntheticKind::rings, 600, 4, 3, 11, 0.5);
  const Dataset test = generate_synthetic(SyntheticKind::rings, 300, 4, 3, 12, 0.5);

  MlpTrainConfig cfg;
  cfg.epochs = 60;
  Mlp linear(train.dim(), train.class_count, {}, 1);
  linear.fit(train, cfg, 1);
  const double lin_acc = linear.accuracy(test);

  Mlp deep(train.dim(), train.class_count, {32, 32}, 1);
  deep.fit(train, cfg, 1);
  const double deep_acc = deep.accuracy(test);

  CHECK(lin_acc < 80.0);
  CHECK(deep_acc > 95.0);
}

TEST_CASE("split is stratified, disjoint, exhaustive, seeded") {
  const Dataset d = generate_synthetic(SyntheticKind::blobs, 100, 4, 2, 5);
  SplitSpec spec;  // 0.4 / 0.1 / 0.4 / 0.1
  const SplitResult s = split(d, spec);
  CHECK(s.search_train.n() == 40);
  CHECK(s.search_val.n() == 10);
  CHECK(s.final_train.n() == 40);
  CHECK(s.test.n() == 10);

  // Disjoint and exhaustive: every original row appears exactly once.
  // Rows are identifiable by their unique feature vectors.
  auto row_key = [](const Dataset& ds, std::size_t i) {
    std::string k;
    for (std::size_t j = 0; j < ds.dim(); ++j)
      k += std::to_string(ds.features.values()[i * ds.dim() + j]) + ",";
    return k;
  };
  std::multiset<std::string> seen;
  for (const Dataset* part : {&s.search_train, &s.search_val, &s.final_train, &s.test})
    for (std::size_t i = 0; i < part->n(); ++i) seen.insert(row_key(*part, i));
  std::multiset<std::string> want;
  for (std::size_t i = 0; i < d.n(); ++i) want.insert(row_key(d, i));
  CHECK(seen == want);

  // Stratification: per-class counts within 1 of proportional.
  for (const Dataset* part : {&s.search_train, &s.search_val, &s.final_train, &s.test}) {
    std::map<int, int> per_class;
    for (int y : part->labels) per_class[y]++;
    const double expect = static_cast<double>(part->n()) / 2.0;
    for (const auto& [cls, count] : per_class) CHECK(std::abs(count - expect) <= 1.0);
  }

  const SplitResult s2 = split(d, spec);
  CHECK(s.search_train.labels == s2.search_train.labels);

  SplitSpec other = spec;
  other.seed = 99;
  const SplitResult s3 = split(d, other);
  bool differs = false;
  for (std::size_t i = 0; i < s.search_train.n() && !differs; ++i)
    differs = s.search_train.features.values()[i * 4] != s3.search_train.features.values()[i * 4];
  CHECK(differs);

  SplitSpec empty = spec;
  empty.search_val = 0.0;
  empty.test = 0.5;
  CHECK_THROWS_AS(split(d, empty), ConfigError);
}

TEST_CASE("normalize: train-split stats, clamping, invertibility") {
  Dataset d = generate_synthetic(SyntheticKind::blobs, 80, 3, 2, 9);
  // Make feature 2 constant to exercise the clamp path.
  for (std::size_t i = 0; i < d.n(); ++i) d.features.data()[i * 3 + 2] = 128.0;

  const NormStats stats = compute_norm_stats(d);
  CHECK(stats.clamped_features == std::vector<std::size_t>{2});
  CHECK(stats.stddev[2] == 1.0);

  const Dataset norm = normalize(d, stats);
  for (std::size_t j = 0; j < 2; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < norm.n(); ++i) mean += norm.features.values()[i * 3 + j];
    mean /= static_cast<double>(norm.n());
    CHECK(std::abs(mean) < 1e-9);
  }
  // Constant feature: unchanged up to the mean shift, variance still zero.
  for (std::size_t i = 0; i < norm.n(); ++i)
    CHECK(norm.features.values()[i * 3 + 2] == doctest::Approx(0.0));

  const Tensor back = invert_norm(norm.features, stats);
  for (std::size_t i = 0; i < back.size(); ++i)
    CHECK(back.values()[i] == doctest::Approx(d.features.values()[i]).epsilon(1e-9));
}

TEST_CASE("augment: identity paths, clipping, label preservation") {
  const Dataset d = generate_synthetic(SyntheticKind::blobs, 30, 6, 2, 4);
  Rng rng(8);

  AugmentationSpec off;  // disabled
  const Tensor same = augment(d.features, off, rng);
  for (std::size_t i = 0; i < same.size(); ++i) CHECK(same.values()[i] == d.features.values()[i]);

  AugmentationSpec zero;
  zero.enabled = true;  // enabled but all strengths zero
  const Tensor same2 = augment(d.features, zero, rng);
  for (std::size_t i = 0; i < same2.size(); ++i) CHECK(same2.values()[i] == d.features.values()[i]);

  AugmentationSpec strong;
  strong.enabled = true;
  strong.jitter_sigma = 100.0;
  strong.mask_prob = 0.3;
  const Tensor outp = augment(d.features, strong, rng);
  CHECK(outp.shape() == d.features.shape());
  bool changed = false;
  for (std::size_t i = 0; i < outp.size(); ++i) {
    CHECK(outp.values()[i] >= 0.0);
    CHECK(outp.values()[i] <= 255.0);
    changed = changed || outp.values()[i] != d.features.values()[i];
  }
  CHECK(changed);
}

TEST_CASE("subset carries labels, masks, and poison counts") {
  Dataset d = generate_synthetic(SyntheticKind::blobs, 20, 3, 2, 2);
  d.poison_mask[3] = 1;
  d.poison_mask[7] = 1;
  const Dataset sub = d.subset({3, 4, 7}, "sub");
  CHECK(sub.n() == 3);
  CHECK(sub.name == "sub");
  CHECK(sub.poison_count() == 2);
  CHECK(sub.poison_mask[0] == 1);
  CHECK(sub.poison_mask[1] == 0);
  CHECK(sub.labels[1] == d.labels[4]);
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(sub.features.values()[0 * 3 + j] == d.features.values()[3 * 3 + j]);
}

TEST_CASE("idx loading: magic validation, downsampling, value range") {
  const auto img = tmp_file("nasaudit_test.images-idx3-ubyte");
  const auto lab = tmp_file("nasaudit_test.labels-idx1-ubyte");

  write_idx_pair(img, lab, {0, 128, 255}, {0, 1, 2});
  const Dataset d = load_idx(img, lab);
  CHECK(d.n() == 3);
  CHECK(d.dim() == 1);
  CHECK(d.class_count == 3);
  CHECK(d.features.values()[0] == 0.0);
  CHECK(d.features.values()[1] == 128.0);
  CHECK(d.features.values()[2] == 255.0);

  write_idx_pair(img, lab, {1}, {0}, 0x00000803, 0xdeadbeef);
  CHECK_THROWS_AS(load_idx(img, lab), FormatError);
  write_idx_pair(img, lab, {1}, {0}, 0x12345678, 0x00000801);
  CHECK_THROWS_AS(load_idx(img, lab), FormatError);

  // Truncated image payload: error must mention the byte offset.
  write_idx_pair(img, lab, {1, 2}, {0, 1});
  std::filesystem::resize_file(img, std::filesystem::file_size(img) - 1);
  try {
    load_idx(img, lab);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  std::filesystem::remove(img);
  std::filesystem::remove(lab);
}

TEST_CASE("idx downsampling pools 4x4 to 2x2") {
  const auto img = tmp_file("nasaudit_test_ds.images");
  const auto lab = tmp_file("nasaudit_test_ds.labels");
  auto be32 = [](std::ofstream& f, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) f.put(static_cast<char>((v >> s) & 0xff));
  };
  {
    std::ofstream f(img, std::ios::binary);
    be32(f, 0x00000803);
    be32(f, 1);
    be32(f, 4);
    be32(f, 4);
    // Quadrants with constant values 0, 40, 80, 120.
    const std::uint8_t rows[4][4] = {
        {0, 0, 40, 40}, {0, 0, 40, 40}, {80, 80, 120, 120}, {80, 80, 120, 120}};
    for (const auto& row : rows)
      for (std::uint8_t p : row) f.put(static_cast<char>(p));
  }
  {
    std::ofstream f(lab, std::ios::binary);
    be32(f, 0x00000801);
    be32(f, 1);
    f.put(0);
  }
  const Dataset d = load_idx(img, lab, 2);
  CHECK(d.dim() == 4);
  CHECK(d.features.values()[0] == doctest::Approx(0.0));
  CHECK(d.features.values()[1] == doctest::Approx(40.0));
  CHECK(d.features.values()[2] == doctest::Approx(80.0));
  CHECK(d.features.values()[3] == doctest::Approx(120.0));
  std::filesystem::remove(img);
  std::filesystem::remove(lab);
}

TEST_CASE("csv round trip with poison sidecar") {
  Dataset d = generate_synthetic(SyntheticKind::blobs, 12, 3, 2, 6);
  d.poison_mask[2] = 1;
  d.poison_mask[9] = 1;
  const auto csv = tmp_file("nasaudit_test_ds.csv");
  PoisonSidecar sc;
  sc.attack = "rlf";
  sc.p = 0.2;
  sc.seed = 42;
  sc.mask_indices = {2, 9};
  export_poisoned(d, sc, csv);

  const Dataset back = load_csv(csv);
  CHECK(back.n() == d.n());
  CHECK(back.dim() == d.dim());
  CHECK(back.labels == d.labels);
  for (std::size_t i = 0; i < d.features.size(); ++i)
    CHECK(back.features.values()[i] == doctest::Approx(d.features.values()[i]).epsilon(1e-12));

  const auto sidecar_path = csv.parent_path() / (csv.stem().string() + ".poison.json");
  REQUIRE(std::filesystem::exists(sidecar_path));
  const PoisonSidecar sc2 = load_poison_sidecar(sidecar_path);
  CHECK(sc2.attack == "rlf");
  CHECK(sc2.p == 0.2);
  CHECK(sc2.seed == 42);
  CHECK(sc2.mask_indices == std::vector<std::size_t>{2, 9});

  std::filesystem::remove(csv);
  std::filesystem::remove(sidecar_path);

  const auto bad = tmp_file("nasaudit_bad.csv");
  {
    std::ofstream f(bad);
    f << "f0,f1\n1.0\n";  // header/row arity mismatch
  }
  CHECK_THROWS_AS(load_csv(bad), FormatError);
  std::filesystem::remove(bad);
}

TEST_CASE("dataset validation rejects broken invariants") {
  Dataset d = generate_synthetic(SyntheticKind::blobs, 10, 2, 2, 1);
  Dataset bad_label = d;
  bad_label.labels[0] = 7;
  CHECK_THROWS_AS(bad_label.validate(), ContractError);
  Dataset bad_mask = d;
  bad_mask.poison_mask.pop_back();
  CHECK_THROWS_AS(bad_mask.validate(), ContractError);
}
