#include "doctest.h"
#include "pabr/rng.hpp"
#include "pabr/types.hpp"

using namespace pabr;

namespace {

FeatureMap<double> random_map(int h, int w, int c, MapRole role,
                              rng::Engine& gen) {
  FeatureMap<double> map(h, w, c, role);
  for (Eigen::Index s = 0; s < map.data.cols(); ++s)
    for (Eigen::Index i = 0; i < map.data.rows(); ++i)
      map.data(i, s) = gen.next_uniform(-2.0, 2.0);
  return map;
}

}  // namespace

TEST_CASE("descriptor_at single-location map") {
  FeatureMap<double> map(1, 1, 2, MapRole::appearance);
  map.data.col(0) << 5.0, 7.0;
  auto d = descriptor_at(map, 0, 0);
  CHECK(d[0] == 5.0);
  CHECK(d[1] == 7.0);
}

TEST_CASE("descriptor_at row-major indexing") {
  // data [1,2,3,4] in row-major (y, x, channel) order on a 2x2 grid
  FeatureMap<double> map(2, 2, 1, MapRole::appearance);
  map.data << 1, 2, 3, 4;
  CHECK(descriptor_at(map, 1, 0)[0] == 2.0);
  CHECK(descriptor_at(map, 0, 1)[0] == 3.0);
}

TEST_CASE("descriptor_at reconstructs the flat payload") {
  rng::Engine gen(11);
  auto map = random_map(4, 3, 6, MapRole::raw, gen);
  std::vector<double> concat;
  for (int y = 0; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x) {
      auto d = descriptor_at(map, x, y);
      for (Eigen::Index i = 0; i < d.size(); ++i) concat.push_back(d[i]);
    }
  REQUIRE(concat.size() == static_cast<std::size_t>(map.data.size()));
  const double* flat = map.data.data();
  for (std::size_t i = 0; i < concat.size(); ++i) CHECK(concat[i] == flat[i]);
}

TEST_CASE("descriptor_at rejects out-of-bounds positions") {
  FeatureMap<double> map(2, 3, 1, MapRole::raw);
  CHECK_THROWS_AS(descriptor_at(map, 3, 0), RangeError);
  CHECK_THROWS_AS(descriptor_at(map, 0, 2), RangeError);
  CHECK_THROWS_AS(descriptor_at(map, -1, 0), RangeError);
}

TEST_CASE("validate_map on a well-formed map") {
  rng::Engine gen(12);
  auto map = random_map(3, 3, 2, MapRole::part, gen);
  CHECK(validate_map(map).empty());
}

TEST_CASE("validate_map reports a length mismatch") {
  FeatureMap<double> map(2, 2, 1, MapRole::raw);
  map.data.conservativeResize(1, 3);  // h*w*c - 1 values
  auto v = validate_map(map);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == "length");
}

TEST_CASE("validate_map locates non-finite values by flat index") {
  rng::Engine gen(13);
  auto map = random_map(2, 3, 4, MapRole::raw, gen);
  double* flat = map.data.data();
  flat[7] = std::numeric_limits<double>::quiet_NaN();
  flat[20] = std::numeric_limits<double>::infinity();
  auto v = validate_map(map);
  REQUIRE(v.size() == 2);
  CHECK(v[0].kind == "non-finite");
  CHECK(v[0].flat_index == 7);
  CHECK(v[1].flat_index == 20);
}

TEST_CASE("feature map constructors reject bad shapes") {
  CHECK_THROWS_AS(FeatureMap<double>(0, 2, 1, MapRole::raw), ValidationError);
  CHECK_THROWS_AS(FeatureMap<double>(2, -1, 1, MapRole::raw), ValidationError);
  MatrixX<double> wrong(2, 3);
  wrong.setZero();
  CHECK_THROWS_AS(FeatureMap<double>(2, 2, 2, MapRole::raw, wrong),
                  ValidationError);
}

TEST_CASE("embedding layout lengths and equality") {
  auto exact = EmbeddingLayout::Exact(4, 3);
  CHECK(exact.length() == 12);
  auto sketched = EmbeddingLayout::Sketched(64);
  CHECK(sketched.length() == 64);
  CHECK(exact != sketched);
  CHECK(exact == EmbeddingLayout::Exact(4, 3));
  CHECK(exact != EmbeddingLayout::Exact(3, 4));
  CHECK_THROWS_AS(EmbeddingLayout::Exact(0, 3), ValidationError);
  CHECK_THROWS_AS(EmbeddingLayout::Sketched(0), ValidationError);
}

TEST_CASE("embedding construction enforces layout length and norm flag") {
  VectorX<double> v(6);
  v << 1, 0, 0, 0, 0, 0;
  CHECK_NOTHROW(Embedding<double>(v, EmbeddingLayout::Exact(3, 2), true));
  CHECK_THROWS_AS(Embedding<double>(v, EmbeddingLayout::Exact(2, 2), false),
                  DimensionError);
  VectorX<double> not_unit(2);
  not_unit << 3, 4;
  CHECK_THROWS_AS(Embedding<double>(not_unit, EmbeddingLayout::Sketched(2), true),
                  ValidationError);
  // the zero vector is exempt so degenerate markers can round-trip
  VectorX<double> zero = VectorX<double>::Zero(2);
  CHECK_NOTHROW(Embedding<double>(zero, EmbeddingLayout::Sketched(2), true));
}

TEST_CASE("image sample requires matching grids") {
  FeatureMap<double> a(2, 2, 3, MapRole::raw);
  FeatureMap<double> p_ok(2, 2, 2, MapRole::raw);
  FeatureMap<double> p_bad(3, 2, 2, MapRole::raw);
  CHECK_NOTHROW(ImageSample<double>("s1", 0, 0, a, p_ok));
  CHECK_THROWS_AS(ImageSample<double>("s2", 0, 0, a, p_bad), DimensionError);
}

TEST_CASE("split parsing round-trips and rejects junk") {
  CHECK(split_from_string("train") == Split::train);
  CHECK(split_from_string("query") == Split::query);
  CHECK(split_from_string("gallery") == Split::gallery);
  CHECK_THROWS_AS(split_from_string("probe"), FormatError);
  CHECK(to_string(Split::gallery) == std::string("gallery"));
}

TEST_CASE("manifest split filtering") {
  DatasetManifest m;
  m.entries.push_back({"a", 0, 0, "a.fm", "ap.fm", Split::train});
  m.entries.push_back({"b", 1, 0, "b.fm", "bp.fm", Split::query});
  m.entries.push_back({"c", 1, 1, "c.fm", "cp.fm", Split::gallery});
  CHECK(m.with_split(Split::train).size() == 1);
  CHECK(m.with_split(Split::query)[0].sample_id == "b");
}

TEST_CASE("counter rng is stateless and reproducible") {
  CHECK(rng::at(42, 0, 0) == rng::at(42, 0, 0));
  CHECK(rng::at(42, 0, 0) != rng::at(42, 0, 1));
  CHECK(rng::at(42, 0, 0) != rng::at(42, 1, 0));
  CHECK(rng::at(42, 0, 0) != rng::at(43, 0, 0));

  rng::Engine a(7, 3), b(7, 3);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng utility draws stay in range") {
  rng::Engine gen(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = gen.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const auto below = gen.next_below(7);
    CHECK(below < 7);
    const auto between = gen.next_between(-3, 3);
    CHECK(between >= -3);
    CHECK(between <= 3);
  }
  auto perm = gen.permutation(50);
  std::vector<bool> seen(50, false);
  for (auto idx : perm) {
    CHECK(!seen[idx]);
    seen[idx] = true;
  }
}

TEST_CASE("rng normal draws have sane first moments") {
  rng::Engine gen(99);
  double sum = 0, sumsq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = gen.next_normal();
    sum += x;
    sumsq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sumsq / n - 1.0) < 0.05);
}
