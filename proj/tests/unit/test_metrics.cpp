#include "doctest_torch.hpp"

#include <cmath>
#include <fstream>

#include "oracles.hpp"
#include "test_support.hpp"
#include "vfseg/error.hpp"
#include "vfseg/metrics.hpp"
#include "vfseg/random.hpp"

using namespace vfseg;

namespace {

LabelVolume box(Shape3 s, std::array<int64_t, 3> lo, std::array<int64_t, 3> hi, int32_t c = 1,
                Spacing sp = {1, 1, 1}) {
  LabelVolume l(s, std::max(2, c + 1), sp);
  for (int64_t z = lo[0]; z < hi[0]; ++z)
    for (int64_t y = lo[1]; y < hi[1]; ++y)
      for (int64_t x = lo[2]; x < hi[2]; ++x) l.at(z, y, x) = c;
  return l;
}

LabelVolume random_mask(Shape3 s, double density, Rng& rng, Spacing sp) {
  LabelVolume l(s, 2, sp);
  // Blobby masks: random boxes rather than salt noise, so surfaces have interiors.
  const int boxes = static_cast<int>(rng.uniform_int(1, 4));
  for (int b = 0; b < boxes; ++b) {
    std::array<int64_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[static_cast<size_t>(a)] = rng.uniform_int(0, s[a] - 1);
      hi[static_cast<size_t>(a)] = rng.uniform_int(lo[static_cast<size_t>(a)] + 1, s[a]);
    }
    for (int64_t z = lo[0]; z < hi[0]; ++z)
      for (int64_t y = lo[1]; y < hi[1]; ++y)
        for (int64_t x = lo[2]; x < hi[2]; ++x) l.at(z, y, x) = 1;
  }
  for (auto& v : l.labels) {
    if (rng.uniform(0.0, 1.0) < density) v = 1 - v;
  }
  return l;
}

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

}  // namespace

TEST_CASE("dice hand cases") {
  const Shape3 s{4, 4, 4};
  const auto a = box(s, {0, 0, 0}, {2, 2, 2});
  CHECK(dice_coefficient(a, a, 1) == 1.0);
  CHECK((dice_coefficient(a, box(s, {2, 2, 2}, {4, 4, 4}), 1) == 0.0));
  CHECK((dice_coefficient(a, box(s, {0, 0, 1}, {2, 2, 3}), 1) == 0.5));
  const LabelVolume empty(s, 2);
  CHECK(dice_coefficient(empty, empty, 1) == 1.0);
  CHECK(dice_coefficient(a, empty, 1) == 0.0);
  CHECK((code_of([&] { dice_coefficient(a, LabelVolume({4, 4, 5}, 2), 1); }) == ErrorCode::ShapeMismatch));
}

TEST_CASE("assd hand cases") {
  const Shape3 s{6, 4, 4};
  const auto a = box(s, {1, 1, 1}, {3, 3, 3});
  CHECK(assd(a, a, 1, a.spacing).value() == 0.0);

  const Spacing sp{2, 1, 1};
  const auto p = box(s, {1, 2, 2}, {2, 3, 3}, 1, sp);
  const auto q = box(s, {4, 2, 2}, {5, 3, 3}, 1, sp);
  CHECK(assd(p, q, 1, sp).value() == 6.0);

  const LabelVolume empty(s, 2, sp);
  CHECK_FALSE(assd(p, empty, 1, sp).has_value());
  CHECK((code_of([&] { assd(p, box(s, {0, 0, 0}, {1, 1, 1}), 1, sp); }) == ErrorCode::SpacingMismatch));
  CHECK((code_of([&] { assd(p, LabelVolume({6, 4, 5}, 2, sp), 1, sp); }) == ErrorCode::ShapeMismatch));
}

TEST_CASE("surface excludes interior voxels and keeps border voxels") {
  const Shape3 s{5, 5, 5};
  std::vector<uint8_t> full(static_cast<size_t>(s.numel()), 1);
  const auto surf = surface_mask(full, s);
  CHECK(surf[static_cast<size_t>(s.index(2, 2, 2))] == 0);
  CHECK(surf[static_cast<size_t>(s.index(0, 2, 2))] == 1);
  CHECK(std::count(surf.begin(), surf.end(), uint8_t{1}) == 125 - 27);
}

TEST_CASE("distance transform matches brute force") {
  Rng rng(3);
  const Shape3 s{5, 6, 7};
  const Spacing sp{2.0, 1.0, 0.5};
  std::vector<uint8_t> set(static_cast<size_t>(s.numel()), 0);
  for (int i = 0; i < 6; ++i) set[static_cast<size_t>(rng.uniform_int(0, s.numel() - 1))] = 1;
  const auto dt = squared_distance_transform(set, s, sp);
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) {
        double best = INFINITY;
        for (int64_t i = 0; i < s.numel(); ++i) {
          if (!set[static_cast<size_t>(i)]) continue;
          const double dz = (z - i / (s.h * s.w)) * sp[0], dy = (y - (i / s.w) % s.h) * sp[1],
                       dx = (x - i % s.w) * sp[2];
          best = std::min(best, dz * dz + dy * dy + dx * dx);
        }
        CHECK(dt[static_cast<size_t>(s.index(z, y, x))] == best);
      }
  std::vector<uint8_t> none(static_cast<size_t>(s.numel()), 0);
  CHECK(std::isinf(squared_distance_transform(none, s, sp)[0]));
}

TEST_CASE("fast assd equals the all-pairs oracle exactly") {
  Rng rng(4);
  int defined = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Shape3 s{rng.uniform_int(2, 12), rng.uniform_int(2, 12), rng.uniform_int(2, 12)};
    const Spacing sp{static_cast<double>(rng.uniform_int(1, 4)), 1.0, trial % 2 ? 0.5 : 1.0};
    const auto a = random_mask(s, 0.05, rng, sp);
    const auto b = random_mask(s, 0.05, rng, sp);
    const auto fast = assd(a, b, 1, sp);
    const auto slow = oracle::assd_bruteforce(a, b, 1, sp);
    REQUIRE(fast.has_value() == slow.has_value());
    if (fast) {
      ++defined;
      CHECK(*fast == *slow);
    }
    CHECK(dice_coefficient(a, b, 1) == oracle::dice_count(a, b, 1));
  }
  CHECK(defined > 90);
}

TEST_CASE("symmetry and spacing covariance") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape3 s{8, 8, 8};
    const Spacing sp{1.5, 1.0, 0.75};
    const Spacing sp2{3.0, 2.0, 1.5};
    auto a = random_mask(s, 0.02, rng, sp);
    auto b = random_mask(s, 0.02, rng, sp);
    CHECK(dice_coefficient(a, b, 1) == dice_coefficient(b, a, 1));
    const auto ab = assd(a, b, 1, sp), ba = assd(b, a, 1, sp);
    REQUIRE(ab.has_value());
    CHECK(*ab == doctest::Approx(*ba).epsilon(1e-12));
    auto a2 = a, b2 = b;
    a2.spacing = b2.spacing = sp2;
    CHECK(*assd(a2, b2, 1, sp2) == doctest::Approx(2.0 * *ab).epsilon(1e-12));
    CHECK(dice_coefficient(a2, b2, 1) == dice_coefficient(a, b, 1));
  }
}

TEST_CASE("evaluate_case covers every foreground class") {
  const Shape3 s{6, 6, 6};
  LabelVolume gt(s, 3);
  for (int64_t x = 0; x < 3; ++x) gt.at(2, 2, x) = 1;
  gt.at(4, 4, 4) = 2;
  const auto perfect = evaluate_case("a", gt, gt);
  REQUIRE(perfect.classes.size() == 2);
  for (const auto& c : perfect.classes) {
    CHECK(c.dice == 1.0);
    CHECK(c.assd.value() == 0.0);
  }

  auto pred = gt;
  pred.at(4, 4, 4) = 0;
  const auto missing = evaluate_case("b", pred, gt);
  CHECK(missing.classes[1].dice == 0.0);
  CHECK_FALSE(missing.classes[1].assd.has_value());
}

TEST_CASE("report aggregates exclude the sentinel and round-trip through tsv") {
  MetricsReport r;
  r.num_classes = 3;
  r.cases.push_back({"case_a", {{0.5, 2.0}, {1.0, std::nullopt}}});
  r.cases.push_back({"case_b", {{0.75, 4.0}, {0.25, 1.0}}});

  CHECK(r.mean_dice(0) == 0.75);
  CHECK(r.mean_assd(0).value() == 2.0);
  const auto d1 = r.dice_summary(1);
  CHECK(d1.mean == 0.625);
  CHECK(d1.count == 2);
  const auto a2 = r.assd_summary(2);
  CHECK(a2.mean == 1.0);
  CHECK(a2.count == 1);
  CHECK(a2.undefined == 1);

  const auto back = MetricsReport::from_tsv(r.to_tsv());
  CHECK(back.num_classes == 3);
  REQUIRE(back.cases.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(back.cases[i].id == r.cases[i].id);
    for (size_t c = 0; c < 2; ++c) {
      CHECK(back.cases[i].classes[c].dice == r.cases[i].classes[c].dice);
      CHECK(back.cases[i].classes[c].assd == r.cases[i].classes[c].assd);
    }
  }

  testing::TempDir dir("metrics");
  r.save(dir / "report.tsv");
  std::ifstream in(dir / "report.tsv");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == r.to_tsv());

  const auto table = r.to_text_table();
  CHECK(table.find("62.50") != std::string::npos);
  CHECK(table.find(" *1") != std::string::npos);
}
