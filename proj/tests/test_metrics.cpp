#include "support.hpp"

#include <fstream>
#include <sstream>

#include "udet/gradcheck.hpp"
#include "udet/metrics.hpp"

using namespace udet;
using Td = Tensor<double>;

namespace {

double bce_value(std::vector<double> pred, std::vector<double> target, double w) {
  Tape<double> tape;
  const Shape s{1, 1, 1, pred.size()};
  return weighted_bce(tape, Td(s, std::move(pred)), Td(s, std::move(target)), ClassWeight{w}).item();
}

BinaryMask random_mask(Rng& rng, std::size_t h, std::size_t w, double p) {
  BinaryMask m(h, w);
  for (auto& v : m.values) v = uniform01(rng) < p;
  return m;
}

}  // namespace

TEST_CASE("weighted BCE examples") {
  CHECK(bce_value({0.5}, {1}, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_value({0.5}, {1}, 2) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(bce_value({0.5}, {0}, 2) == bce_value({0.5}, {0}, 1));
  CHECK(bce_value({1e-7}, {0}, 1) < 1e-6);
  // clamped at the ends
  CHECK(std::isfinite(bce_value({0.0, 1.0}, {1, 0}, 3)));
  CHECK(bce_value({0.0}, {1}, 1) == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
}

TEST_CASE("weighted BCE errors") {
  Tape<double> tape;
  CHECK_THROWS_AS(weighted_bce(tape, Td(Shape{1, 1, 2, 2}, 0.5), Td(Shape{1, 1, 2, 3}), ClassWeight{1}), ShapeError);
  CHECK_THROWS_AS(weighted_bce(tape, Td(Shape{1, 1, 1, 1}, 0.5), Td(Shape{1, 1, 1, 1}, 0.3), ClassWeight{1}),
                  std::invalid_argument);
}

TEST_CASE("unit weight equals plain BCE and larger weight costs more") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p(64), y(64);
    for (std::size_t i = 0; i < 64; ++i) {
      p[i] = uniform(rng, 0.01, 0.99);
      y[i] = uniform01(rng) < 0.3 ? 1 : 0;
    }
    y[0] = 1;
    CHECK(bce_value(p, y, 1) == doctest::Approx(binary_cross_entropy(p, y)).epsilon(1e-12));
    double prev = bce_value(p, y, 0.5);
    for (double w : {1.0, 2.0, 10.0, 63.0}) {
      const double cur = bce_value(p, y, w);
      CHECK(cur > prev);
      prev = cur;
    }
  }
}

TEST_CASE("weighted BCE gradient") {
  Rng rng(4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Td p = test::random_tensor<double>({2, 1, 3, 3}, rng, 0.05, 0.95);
    Td y(p.shape());
    for (double& v : y.data()) v = uniform01(rng) < 0.4;
    const auto r = grad_check(
        [y](Tape<double>& t, std::span<const Td> in) { return weighted_bce(t, in[0], y, ClassWeight{4.0}); }, {p},
        1e-4);
    CHECK(r.passed);
  }
}

TEST_CASE("class weight estimation") {
  BinaryMask one(64, 64);
  for (std::size_t i = 0; i < 64; ++i) one.values[i] = 1;
  const BinaryMask set1[] = {one};
  CHECK(estimate_class_weight(set1).positive == 63);

  BinaryMask a(10, 10), b(10, 10);
  for (std::size_t i = 0; i < 10; ++i) a.values[i] = 1;
  for (std::size_t i = 0; i < 30; ++i) b.values[i] = 1;
  const BinaryMask set2[] = {a, b};
  CHECK(estimate_class_weight(set2).positive == 4);

  const BinaryMask all[] = {BinaryMask(4, 4, 1)};
  CHECK(estimate_class_weight(all).positive == 0);
  const BinaryMask none[] = {BinaryMask(4, 4, 0)};
  CHECK_THROWS_AS(estimate_class_weight(none), std::invalid_argument);
}

TEST_CASE("overlap metric examples") {
  BinaryMask gt(4, 4), sv(4, 4);
  SUBCASE("identical") {
    gt.at(1, 1) = sv.at(1, 1) = 1;
    CHECK(*dsc(gt, sv) == 1);
    CHECK(*sen(gt, sv) == 1);
    CHECK(*ppv(gt, sv) == 1);
  }
  SUBCASE("disjoint") {
    gt.at(0, 0) = 1;
    sv.at(3, 3) = 1;
    CHECK(*dsc(gt, sv) == 0);
    CHECK(*sen(gt, sv) == 0);
    CHECK(*ppv(gt, sv) == 0);
  }
  SUBCASE("half overlap") {
    for (std::size_t x = 0; x < 4; ++x) gt.at(0, x) = 1;
    sv.at(0, 2) = sv.at(0, 3) = sv.at(1, 0) = sv.at(1, 1) = 1;
    CHECK(*dsc(gt, sv) == 0.5);
    CHECK(*sen(gt, sv) == 0.5);
    CHECK(*ppv(gt, sv) == 0.5);
  }
  SUBCASE("empty denominators are undefined") {
    CHECK_FALSE(dsc(gt, sv).has_value());
    CHECK_FALSE(sen(gt, sv).has_value());
    CHECK_FALSE(ppv(gt, sv).has_value());
    sv.at(0, 0) = 1;
    CHECK(*dsc(gt, sv) == 0);
    CHECK_FALSE(sen(gt, sv).has_value());
    CHECK(*ppv(gt, sv) == 0);
  }
  SUBCASE("shape mismatch") { CHECK_THROWS_AS(dsc(gt, BinaryMask(4, 5)), std::invalid_argument); }
}

TEST_CASE("overlap metric identities on random pairs") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    BinaryMask gt = random_mask(rng, 16, 16, uniform(rng, 0.05, 0.6));
    BinaryMask sv = random_mask(rng, 16, 16, uniform(rng, 0.05, 0.6));
    gt.values[0] = 1;
    sv.values[255] = 1;
    const double d = *dsc(gt, sv), s = *sen(gt, sv), p = *ppv(gt, sv);
    if (s + p > 0) CHECK(std::abs(d - 2 * s * p / (s + p)) <= 1e-12);
    CHECK(*dsc(sv, gt) == d);
    CHECK(*sen(gt, sv) == *ppv(sv, gt));
  }
}

TEST_CASE("binarize") {
  const std::vector<float> half(6, 0.5f), below(6, 0.49f);
  CHECK(binarize(half, 2, 3).count() == 6);
  CHECK(binarize(below, 2, 3).count() == 0);
  Rng rng(2);
  std::vector<float> p(100);
  for (float& v : p) v = static_cast<float>(uniform01(rng));
  const BinaryMask once = binarize(p, 10, 10);
  CHECK(binarize(once) == once);
  CHECK_THROWS_AS(binarize(p, 3, 3), std::invalid_argument);
}

TEST_CASE("DSC histogram") {
  SUBCASE("perfect record lands in the last bin") {
    const MetricsRecord r{"a", 0, 1.0, 1.0, 1.0};
    const Histogram h = dsc_histogram(std::span(&r, 1), 10);
    REQUIRE(h.bins.size() == 10);
    CHECK(h.bins.back().count == 1);
    CHECK(h.bins.back().hi == 1.0);
  }
  SUBCASE("uniform spacing fills each bin once") {
    std::vector<MetricsRecord> rs;
    for (int i = 0; i < 10; ++i) rs.push_back({"r", 0, (i + 0.5) / 10, {}, {}});
    const Histogram h = dsc_histogram(rs, 10);
    for (const auto& b : h.bins) CHECK(b.count == 1);
  }
  SUBCASE("totals on random data") {
    Rng rng(5);
    std::vector<MetricsRecord> rs;
    std::size_t undefined = 0;
    for (int i = 0; i < 500; ++i) {
      MetricsRecord r{"r", 0, uniform01(rng), {}, {}};
      if (i % 7 == 0) {
        r.dsc.reset();
        ++undefined;
      }
      if (i % 11 == 0 && r.dsc) r.dsc = 1.0;
      rs.push_back(r);
    }
    for (std::size_t bins : {1, 3, 10, 17}) {
      const Histogram h = dsc_histogram(rs, bins);
      std::size_t total = 0;
      for (const auto& b : h.bins) total += b.count;
      CHECK(total + h.excluded == rs.size());
      CHECK(h.excluded == undefined);
    }
  }
  CHECK_THROWS_AS(dsc_histogram({}, 0), std::invalid_argument);
}

TEST_CASE("summaries and CSV output") {
  const std::vector<std::optional<double>> v{0.5, std::nullopt, 0.5, 0.5};
  const Summary s = summarize(v);
  CHECK(s.mean == 0.5);
  CHECK(s.sd == 0);
  CHECK(s.count == 3);
  CHECK(s.excluded == 1);
  const std::vector<double> d{1, 2, 3, 4};
  CHECK(summarize(d).sd == doctest::Approx(std::sqrt(5.0 / 3)).epsilon(1e-12));

  const auto dir = test::temp_dir("metrics");
  {
    MetricsLog log(dir / "m.csv");
    log.append(1, 0, "train", MetricsRecord{"aggregate", 0.25, 0.5, std::nullopt, 1.0});
  }
  std::ifstream in(dir / "m.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "epoch,fold,split,loss,dsc,sen,ppv");
  CHECK(row.starts_with("1,0,train,"));
  CHECK(row.find("nan") != std::string::npos);

  Histogram h;
  h.bins = {{0, 0.5, 2}, {0.5, 1, 3}};
  write_histogram_csv(h, dir / "h.csv");
  std::ifstream hin(dir / "h.csv");
  std::getline(hin, header);
  CHECK(header == "bin_lo,bin_hi,count");
}
