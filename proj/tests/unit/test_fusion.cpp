#include "doctest_torch.hpp"

#include <cmath>
#include <set>

#include "vfseg/error.hpp"
#include "vfseg/fusion.hpp"

using namespace vfseg;

namespace {

Volume ramp(Shape3 s, const std::string& id, double offset) {
  Volume v(s, {1, 1, 1}, id);
  for (size_t i = 0; i < v.voxels.size(); ++i) {
    v.voxels[i] = static_cast<float>(std::fmod(offset + 0.0137 * static_cast<double>(i), 1.0));
  }
  return v;
}

Volume random_unit(Shape3 s, const std::string& id, uint64_t seed) {
  Volume v(s, {1, 1, 1}, id);
  Rng rng(seed);
  for (auto& x : v.voxels) x = static_cast<float>(rng.uniform());
  return v;
}

double chi_square(const std::vector<int64_t>& counts, double expected) {
  double s = 0.0;
  for (const auto c : counts) s += (c - expected) * (c - expected) / expected;
  return s;
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no vfseg::Error thrown");
  return ErrorCode::InvalidParams;
}

}  // namespace

TEST_CASE("crop of a volume with exactly the requested shape is the identity") {
  const Volume v = ramp({8, 12, 16}, "a", 0.1);
  Rng rng(3);
  const Crop c = crop_subvolume(v, v.shape, rng);
  CHECK((c.origin == std::array<int64_t, 3>{0, 0, 0}));
  CHECK(c.volume.voxels == v.voxels);
}

TEST_CASE("crop origins are uniform over valid positions (chi-square, alpha 0.01)") {
  const Volume v({128, 256, 256});
  const Shape3 sub{64, 128, 128};
  std::vector<int64_t> hd(65, 0), hh(129, 0), hw(129, 0);
  Rng rng(12345);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Crop c = crop_subvolume(v, sub, rng);
    ++hd[static_cast<size_t>(c.origin[0])];
    ++hh[static_cast<size_t>(c.origin[1])];
    ++hw[static_cast<size_t>(c.origin[2])];
  }
  // 99th percentiles of chi-square with 64 and 128 degrees of freedom.
  CHECK(chi_square(hd, n / 65.0) < 93.217);
  CHECK(chi_square(hh, n / 129.0) < 168.133);
  CHECK(chi_square(hw, n / 129.0) < 168.133);
}

TEST_CASE("undersized depth is zero-padded symmetrically when enabled") {
  Volume v({32, 128, 128}, {1, 1, 1}, "thin", 1.0f);
  Rng rng(0);
  CHECK((code_of([&] { crop_subvolume(v, {64, 128, 128}, rng, false); }) == ErrorCode::VolumeTooSmall));
  const Crop c = crop_subvolume(v, {64, 128, 128}, rng, true);
  REQUIRE((c.volume.shape == Shape3{64, 128, 128}));
  for (int64_t z = 0; z < 64; ++z) {
    const float expected = (z >= 16 && z < 48) ? 1.0f : 0.0f;
    CHECK(c.volume.at(z, 5, 7) == expected);
  }
}

TEST_CASE("single full-size patch gives one uniform foreground class") {
  FusionParams p;
  p.K = 4;
  p.m0 = p.m1 = 1;
  p.subvolume_shape = {8, 16, 16};
  p.patch_depth = {8, 8};
  p.patch_height = {16, 16};
  p.patch_width = {16, 16};
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const CoefficientMap m = generate_coefficient_map(p, rng);
    const std::set<int32_t> values(m.classes.begin(), m.classes.end());
    REQUIRE(values.size() == 1);
    CHECK(*values.begin() >= 1);
    CHECK(*values.begin() <= 4);
  }
}

TEST_CASE("K=4 coefficient maps use exactly the alphabet {0..4}") {
  FusionParams p;  // full-size defaults
  std::set<int32_t> seen;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const CoefficientMap m = generate_coefficient_map(p, rng);
    seen.insert(m.classes.begin(), m.classes.end());
  }
  CHECK((seen == std::set<int32_t>{0, 1, 2, 3, 4}));
  CHECK(p.num_classes() == 5);
}

TEST_CASE("later patches overwrite earlier ones on the overlap") {
  const Shape3 s{10, 10, 10};
  const Patch p1{{0, 0, 0}, {6, 6, 6}, 1};
  const Patch p2{{4, 4, 4}, {6, 6, 6}, 3};
  const CoefficientMap m = paint_patches(s, 4, {p1, p2});
  CHECK(m.classes[static_cast<size_t>(s.index(5, 5, 5))] == 3);  // intersection
  CHECK(m.classes[static_cast<size_t>(s.index(1, 1, 1))] == 1);  // P1 only
  CHECK(m.classes[static_cast<size_t>(s.index(9, 9, 9))] == 3);  // P2 only
  CHECK(m.classes[static_cast<size_t>(s.index(9, 0, 0))] == 0);  // neither
  // The union region of class 1 is no longer a box: (5,5,5) lies in its bounding box but not in it.
  const CoefficientMap reversed = paint_patches(s, 4, {p2, p1});
  CHECK(reversed.classes[static_cast<size_t>(s.index(5, 5, 5))] == 1);

  // Same property through the random sampler: replaying the drawn patches one by one.
  FusionParams fp;
  fp.subvolume_shape = {16, 32, 32};
  fp = FusionParams::scaled_to(fp.subvolume_shape, 4);
  Rng rng(99);
  const auto patches = sample_patches(fp, rng);
  const CoefficientMap painted = paint_patches(fp.subvolume_shape, 4, patches);
  for (int64_t z = 0; z < 16; ++z)
    for (int64_t y = 0; y < 32; ++y)
      for (int64_t x = 0; x < 32; ++x) {
        int32_t want = 0;
        for (const auto& q : patches) {
          if (z >= q.origin[0] && z < q.origin[0] + q.size[0] && y >= q.origin[1] && y < q.origin[1] + q.size[1] &&
              x >= q.origin[2] && x < q.origin[2] + q.size[2]) {
            want = q.cls;
          }
        }
        REQUIRE(painted.classes[static_cast<size_t>(fp.subvolume_shape.index(z, y, x))] == want);
      }
}

TEST_CASE("patches are fully inside and sized from the configured ranges") {
  FusionParams p;
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto patches = sample_patches(p, rng);
    CHECK(static_cast<int>(patches.size()) >= p.m0);
    CHECK(static_cast<int>(patches.size()) <= p.m1);
    for (const auto& q : patches) {
      CHECK(q.size[0] >= 8);
      CHECK(q.size[0] <= 40);
      CHECK(q.size[1] <= 80);
      CHECK(q.size[2] <= 80);
      for (int a = 0; a < 3; ++a) CHECK(q.origin[a] + q.size[a] <= p.subvolume_shape[a]);
    }
  }
}

TEST_CASE("invalid fusion parameters are rejected") {
  FusionParams p;
  p.K = 0;
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidParams);
  p = FusionParams{};
  p.m0 = 5;
  p.m1 = 4;
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidParams);
  p = FusionParams{};
  p.patch_depth = {8, 65};
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::InvalidParams);
}

TEST_CASE("fusion endpoints and constant sources") {
  const Shape3 s{4, 4, 4};
  const Volume ib = ramp(s, "b", 0.2), iff = ramp(s, "f", 0.7);
  CoefficientMap zeros{s, 4, std::vector<int32_t>(64, 0)};
  const FusedSample a = fuse(ib, iff, zeros);
  CHECK(a.X.voxels == ib.voxels);
  CHECK(std::all_of(a.Y.labels.begin(), a.Y.labels.end(), [](int32_t y) { return y == 0; }));
  CHECK(a.Y.num_classes == 5);

  CoefficientMap full{s, 4, std::vector<int32_t>(64, 4)};
  const FusedSample b = fuse(ib, iff, full);
  CHECK(b.X.voxels == iff.voxels);

  const Volume zero(s, {1, 1, 1}, "zero", 0.0f), one(s, {1, 1, 1}, "one", 1.0f);
  CoefficientMap mixed{s, 4, std::vector<int32_t>(64, 0)};
  for (size_t i = 0; i < 64; ++i) mixed.classes[i] = static_cast<int32_t>(i % 5);
  const FusedSample c = fuse(zero, one, mixed);
  for (size_t i = 0; i < 64; ++i) CHECK(c.X.voxels[i] == static_cast<float>(mixed.classes[i]) / 4.0f);
  CHECK(c.X.voxels[3] == 0.75f);
}

TEST_CASE("fusion rejects shape mismatches and same-scan pairs") {
  const Volume a = ramp({4, 4, 4}, "a", 0.0), b = ramp({4, 4, 5}, "b", 0.0), a2 = ramp({4, 4, 4}, "a", 0.3);
  CoefficientMap m{{4, 4, 4}, 2, std::vector<int32_t>(64, 1)};
  CHECK((code_of([&] { fuse(a, b, m); }) == ErrorCode::ShapeMismatch));
  CHECK((code_of([&] { fuse(a, a2, m); }) == ErrorCode::SameScanViolation));
  CHECK_NOTHROW(fuse(a, a2, m, true));
}

TEST_CASE("fused samples satisfy the blend exactly, stay convex, and are deterministic") {
  Corpus corpus;
  for (int i = 0; i < 5; ++i) corpus.push_back(random_unit({20, 40, 40}, "scan" + std::to_string(i), 100 + i));
  const FusionParams p = FusionParams::scaled_to({16, 32, 32}, 4);
  const auto batch = make_pretrain_batch(corpus, p, 4, 2024);
  const auto again = make_pretrain_batch(corpus, p, 4, 2024);
  REQUIRE(batch.size() == 4);
  for (size_t j = 0; j < batch.size(); ++j) {
    const auto& s = batch[j];
    CHECK(s.background_id != s.foreground_id);
    CHECK(s.X.voxels == again[j].X.voxels);
    CHECK(s.Y.labels == again[j].Y.labels);
    const std::set<int32_t> present(s.Y.labels.begin(), s.Y.labels.end());
    CHECK(present.count(0) == 1);
    CHECK(std::any_of(present.begin(), present.end(), [](int32_t c) { return c >= 1 && c <= 4; }));
    CHECK(*present.rbegin() <= 4);
  }
}

TEST_CASE("a two-scan corpus always pairs both scans") {
  Corpus corpus{random_unit({16, 32, 32}, "A", 1), random_unit({16, 32, 32}, "B", 2)};
  const FusionParams p = FusionParams::scaled_to({16, 32, 32}, 2);
  for (const auto& s : make_pretrain_batch(corpus, p, 16, 7)) {
    const std::set<std::string> ids{s.background_id, s.foreground_id};
    CHECK((ids == std::set<std::string>{"A", "B"}));
  }
  Corpus single{corpus[0]};
  CHECK((code_of([&] { make_pretrain_batch(single, p, 1, 0); }) == ErrorCode::CorpusTooSmall));
}

TEST_CASE("oracle inverts the blend where sources differ") {
  Volume ib({1, 1, 1}, {1, 1, 1}, "b", 0.2f), iff({1, 1, 1}, {1, 1, 1}, "f", 0.8f), x({1, 1, 1}, {1, 1, 1}, "x", 0.65f);
  CHECK(recover_labels_oracle(x, ib, iff, 4, 1.0 / 16.0) == std::vector<int32_t>{3});

  const Volume same = ramp({4, 4, 4}, "s", 0.4);
  CoefficientMap m{{4, 4, 4}, 4, std::vector<int32_t>(64, 2)};
  const FusedSample s = fuse(same, same, m, true);
  const auto rec = recover_labels_oracle(s.X, same, same, 4, 1.0 / 16.0);
  CHECK(std::all_of(rec.begin(), rec.end(), [](int32_t v) { return v == kIndeterminate; }));
}

TEST_CASE("class 0 keeps positive frequency with the full-size patch budget") {
  FusionParams p;
  int64_t zeros = 0, total = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const CoefficientMap m = generate_coefficient_map(p, rng);
    zeros += std::count(m.classes.begin(), m.classes.end(), 0);
    total += static_cast<int64_t>(m.classes.size());
  }
  CHECK(zeros > 0);
  MESSAGE("class-0 fraction " << static_cast<double>(zeros) / static_cast<double>(total));
}
