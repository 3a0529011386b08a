#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "physio/dataset.hpp"
#include "test_support.hpp"

using namespace physio;
namespace fs = std::filesystem;

namespace {

ToyDatasetSpec small_toy() {
  ToyDatasetSpec spec;
  spec.classes = {{2.0, 1.0}, {5.0, 0.8}};
  spec.seq_len = 16;
  spec.channels = 2;
  spec.n_per_class = 12;
  spec.noise_std = 0.05;
  spec.seed = 7;
  return spec;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("physio_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("toy dataset construction") {
  ToyDatasetSpec spec;
  spec.classes = {{2.0, 1.0}, {5.0, 1.0}};
  spec.seq_len = 32;
  spec.channels = 1;
  spec.n_per_class = 200;
  spec.noise_std = 0.05;
  auto b = make_toy_dataset(spec);
  CHECK(b.train.size() == 400);
  CHECK(b.test.size() == 100);
  CHECK(b.seq_len() == 32);
  CHECK(b.channels() == 1);
  CHECK(b.num_classes() == 2);

  SECTION("zero noise collapses each class to one waveform") {
    spec.noise_std = 0.0;
    spec.n_per_class = 5;
    auto z = make_toy_dataset(spec);
    for (const auto& s : z.train)
      for (const auto& r : z.train)
        if (s.label == r.label) CHECK((s.values - r.values).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("duplicate frequencies are rejected") {
    spec.classes = {{2.0, 1.0}, {2.0, 0.5}};
    CHECK_THROWS_AS(make_toy_dataset(spec), std::invalid_argument);
  }

  SECTION("deterministic under seed") {
    auto b2 = make_toy_dataset(spec);
    REQUIRE(b2.train.size() == b.train.size());
    for (std::size_t i = 0; i < b.train.size(); ++i)
      CHECK((b.train[i].values - b2.train[i].values).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("normalization round-trips and clamps degenerate channels") {
  Rng rng(3);
  std::vector<SequenceSample> raw(6);
  for (auto& s : raw) {
    s.values = testsup::random_matrix(rng, 10, 3, 4.0);
    s.values.col(2).setConstant(2.5);  // degenerate channel
    s.label = 1;
  }
  const auto norm = compute_norm_stats(raw);
  CHECK(norm.std(2) == 1.0);
  for (const auto& s : raw) {
    const auto back = denormalize_values(normalize_values(s.values, norm), norm);
    for (int t = 0; t < s.values.rows(); ++t)
      for (int c = 0; c < s.values.cols(); ++c)
        CHECK(std::abs(back(t, c) - s.values(t, c)) <=
              1e-5 * std::max(1.0, std::abs(s.values(t, c))));
  }
}

TEST_CASE("dataset save/load round-trip") {
  const auto dir = fresh_dir("roundtrip");
  auto b = make_toy_dataset(small_toy());
  save_dataset(b, dir);
  auto loaded = load_dataset(dir);
  CHECK(loaded.name == b.name);
  CHECK(loaded.classes == b.classes);
  REQUIRE(loaded.train.size() == b.train.size());
  REQUIRE(loaded.test.size() == b.test.size());
  for (std::size_t i = 0; i < b.train.size(); ++i) {
    CHECK(loaded.train[i].label == b.train[i].label);
    CHECK((loaded.train[i].values - b.train[i].values).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK(dataset_fingerprint(loaded) == dataset_fingerprint(b));

  SECTION("second save/load is exact (text precision reached fixpoint)") {
    const auto dir2 = fresh_dir("roundtrip2");
    save_dataset(loaded, dir2);
    auto loaded2 = load_dataset(dir2);
    for (std::size_t i = 0; i < loaded.train.size(); ++i)
      CHECK((loaded2.train[i].values - loaded.train[i].values).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("dataset loader error paths") {
  const auto dir = fresh_dir("loader_errors");
  CHECK_THROWS_AS(load_dataset(dir / "missing"), std::runtime_error);

  auto b = make_toy_dataset(small_toy());
  save_dataset(b, dir);

  SECTION("missing split file") {
    fs::remove(dir / "test.csv");
    CHECK_THROWS_WITH(load_dataset(dir), Catch::Matchers::ContainsSubstring("test.csv"));
  }
  SECTION("row width mismatch") {
    std::ofstream(dir / "train.csv") << "1,0.5,0.25\n";
    CHECK_THROWS_WITH(load_dataset(dir), Catch::Matchers::ContainsSubstring("fields"));
  }
  SECTION("unknown class index") {
    std::string row = "7";
    for (int i = 0; i < 16 * 2; ++i) row += ",0.0";
    std::ofstream(dir / "train.csv") << row << "\n";
    CHECK_THROWS_WITH(load_dataset(dir), Catch::Matchers::ContainsSubstring("class"));
  }
  SECTION("non-numeric field") {
    std::string row = "1";
    for (int i = 0; i < 16 * 2 - 1; ++i) row += ",0.0";
    row += ",oops";
    std::ofstream(dir / "train.csv") << row << "\n";
    CHECK_THROWS_WITH(load_dataset(dir), Catch::Matchers::ContainsSubstring("numeric"));
  }
}

TEST_CASE("subsample keeps every factor-th step") {
  SequenceSample s;
  s.values.resize(6, 1);
  s.values << 0, 1, 2, 3, 4, 5;
  s.label = 1;

  auto half = subsample(s, 2);
  REQUIRE(half.values.rows() == 3);
  CHECK(half.values(0, 0) == 0);
  CHECK(half.values(1, 0) == 2);
  CHECK(half.values(2, 0) == 4);

  CHECK((subsample(s, 1).values - s.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(subsample(s, 0), std::invalid_argument);
  CHECK_THROWS_AS(subsample(s, 7), std::invalid_argument);

  SECTION("300 Hz window decimated by 10") {
    SequenceSample big;
    big.values = Eigen::MatrixXd::Random(300, 2);
    big.label = 1;
    CHECK(subsample(big, 10).values.rows() == 30);
  }

  SECTION("composition: subsample(subsample(x,a),b) == subsample(x,a*b)") {
    Rng rng(5);
    SequenceSample x;
    x.values = testsup::random_matrix(rng, 60, 2);
    x.label = 1;
    for (int a : {1, 2, 3})
      for (int c : {1, 2, 5}) {
        const auto lhs = subsample(subsample(x, a), c);
        const auto rhs = subsample(x, a * c);
        CHECK((lhs.values - rhs.values).cwiseAbs().maxCoeff() == 0.0);
      }
  }
}

TEST_CASE("stratified split") {
  Rng rng(9);
  std::vector<SequenceSample> pool;
  for (int i = 0; i < 418; ++i) {
    SequenceSample s;
    s.values = testsup::random_matrix(rng, 4, 1);
    s.label = i < 280 ? 1 : 2;  // imbalanced like the two-rhythm corpus
    pool.push_back(std::move(s));
  }
  auto [train, test] = split(pool, 0.75, 42);
  CHECK(train.size() + test.size() == 418);
  CHECK(std::abs(static_cast<int>(train.size()) - 314) <= 1);

  SECTION("determinism") {
    auto [t2, s2] = split(pool, 0.75, 42);
    REQUIRE(t2.size() == train.size());
    for (std::size_t i = 0; i < train.size(); ++i)
      CHECK((t2[i].values - train[i].values).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("per-class counts within one of the global ratio") {
    std::vector<SequenceSample> even;
    for (int i = 0; i < 100; ++i) {
      SequenceSample s;
      s.values = Eigen::MatrixXd::Zero(2, 1);
      s.label = 1 + i % 2;
      even.push_back(std::move(s));
    }
    auto [tr, te] = split(even, 0.7, 1);
    int c1 = 0, c2 = 0;
    for (const auto& s : tr) (s.label == 1 ? c1 : c2)++;
    CHECK(std::abs(c1 - 35) <= 1);
    CHECK(std::abs(c2 - 35) <= 1);
  }

  SECTION("empty input rejected") {
    std::vector<SequenceSample> none;
    CHECK_THROWS_AS(split(none, 0.5, 0), std::invalid_argument);
  }
}

TEST_CASE("mcar masking") {
  Rng rng(2);
  SequenceSample s;
  s.values = testsup::random_matrix(rng, 400, 2);
  s.label = 1;

  SECTION("rate zero keeps everything") {
    auto ms = apply_mcar_mask(s, 0.0, 3);
    CHECK(ms.missing_count() == 0);
    CHECK((ms.observed - s.values).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("rate 0.25 lands inside the binomial 99% interval") {
    auto ms = apply_mcar_mask(s, 0.25, 3);
    // mean 100, sd sqrt(400*0.25*0.75) ~ 8.66; 2.576 sd on each side
    CHECK(ms.missing_count() >= 78);
    CHECK(ms.missing_count() <= 122);
    CHECK(ms.scenario == MaskScenario::mcar);
  }

  SECTION("same seed, same mask; masked rows zeroed") {
    auto a = apply_mcar_mask(s, 0.3, 11);
    auto b = apply_mcar_mask(s, 0.3, 11);
    CHECK(a.mask == b.mask);
    for (int t = 0; t < 400; ++t)
      if (a.mask[t] == 0)
        CHECK(a.observed.row(t).cwiseAbs().maxCoeff() == 0.0);
      else
        CHECK((a.observed.row(t) - s.values.row(t)).cwiseAbs().maxCoeff() == 0.0);
  }

  CHECK_THROWS_AS(apply_mcar_mask(s, 1.0, 0), std::invalid_argument);
}

TEST_CASE("segment masking") {
  Rng rng(4);
  SequenceSample s;
  s.values = testsup::random_matrix(rng, 40, 1);
  s.label = 1;

  SECTION("one run of round(rate*T) zeros") {
    auto ms = apply_segment_mask(s, 0.25, 5);
    CHECK(ms.missing_count() == 10);
    int first = -1, last = -1;
    for (int t = 0; t < 40; ++t)
      if (ms.mask[t] == 0) {
        if (first < 0) first = t;
        last = t;
      }
    CHECK(last - first + 1 == 10);  // contiguous
    CHECK(ms.scenario == MaskScenario::segment);
  }

  SECTION("start index roughly uniform over [0, 30]") {
    std::vector<int> counts(31, 0);
    const int trials = 1000;
    for (int seed = 0; seed < trials; ++seed) {
      auto ms = apply_segment_mask(s, 0.25, seed);
      int first = 0;
      while (ms.mask[first] == 1) ++first;
      counts[first] += 1;
    }
    const double expected = trials / 31.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // df=30; 59.7 is the 0.1% critical value
    CHECK(chi2 < 59.7);
  }

  CHECK_THROWS_AS(apply_segment_mask(s, 0.0, 0), std::invalid_argument);
  SECTION("rate*T < 1 rejected") {
    SequenceSample tiny;
    tiny.values = Eigen::MatrixXd::Zero(10, 1);
    tiny.label = 1;
    CHECK_THROWS_AS(apply_segment_mask(tiny, 0.04, 0), std::invalid_argument);
  }
}
