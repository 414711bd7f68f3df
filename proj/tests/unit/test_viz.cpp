#include <doctest.h>

#include <fstream>
#include <numeric>
#include <sstream>

#include "detco/errors.hpp"
#include "detco/viz.hpp"
#include "helpers.hpp"

using namespace detco;
using namespace detco::viz;

namespace {

Tensor random_features(int c, int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<float> n;
  Tensor t({c, h, w});
  for (float& v : t.values()) v = n(rng);
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One metrics line with every branch of every stage set to `v`.
std::string record(int step, double v) {
  trainer::StepRecord r;
  r.step = step;
  r.lr = 0.01;
  for (auto& b : r.report.per_stage) b = {v, v, v};
  r.report.total = 3 * v;
  return trainer::metrics_line(r);
}

}  // namespace

TEST_CASE("attention output shape and range") {
  std::mt19937_64 rng(41);
  const AttentionMap big = attention_map(random_features(2048, 14, 14, rng));
  CHECK(big.values.rows() == 14);
  CHECK(big.values.cols() == 14);
  CHECK(big.channels == 2048);
  CHECK(big.values.minCoeff() == 0.0);
  CHECK(big.values.maxCoeff() == 1.0);

  Tensor batched({1, 3, 7, 5});
  for (float& v : batched.values()) v = std::normal_distribution<float>()(rng);
  const AttentionMap b = attention_map(batched, Reduction::kMax);
  CHECK(b.values.rows() == 7);
  CHECK(b.values.cols() == 5);
  CHECK_THROWS_AS(attention_map(Tensor({2, 3, 7, 5})), InputError);
}

TEST_CASE("a normalized single-channel map is a fixed point") {
  Tensor t({1, 3, 3});
  const float vals[] = {0.0f, 0.25f, 0.5f, 1.0f, 0.125f, 0.75f, 0.3f, 0.9f, 0.6f};
  std::copy(std::begin(vals), std::end(vals), t.data());
  const AttentionMap a = attention_map(t);
  for (int i = 0; i < 9; ++i) CHECK(a.values(i / 3, i % 3) == static_cast<double>(vals[i]));
}

TEST_CASE("channel stack {v, -v} reduces to |v|") {
  std::mt19937_64 rng(42);
  Tensor t({2, 4, 6});
  std::normal_distribution<float> n;
  std::vector<double> absv(24);
  for (int i = 0; i < 24; ++i) {
    const float v = n(rng);
    t[i] = v;
    t[24 + i] = -v;
    absv[i] = std::abs(v);
  }
  const AttentionMap a = attention_map(t);
  const double lo = *std::min_element(absv.begin(), absv.end()), hi = *std::max_element(absv.begin(), absv.end());
  CHECK(a.raw_min == doctest::Approx(lo).epsilon(1e-12));
  CHECK(a.raw_max == doctest::Approx(hi).epsilon(1e-12));
  for (int i = 0; i < 24; ++i) CHECK(a.values(i / 6, i % 6) == doctest::Approx((absv[i] - lo) / (hi - lo)).epsilon(1e-9));
}

TEST_CASE("a constant map is flagged and zeroed") {
  const AttentionMap a = attention_map(Tensor({4, 3, 3}, 0.7f));
  CHECK(a.constant_input);
  CHECK(a.values.isZero());
}

TEST_CASE("attention is invariant to channel permutations") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = std::uniform_int_distribution<int>(1, 40)(rng);
    const Tensor t = random_features(c, 4, 4, rng);
    std::vector<int> perm(static_cast<std::size_t>(c));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor p({c, 4, 4});
    for (int ch = 0; ch < c; ++ch) std::copy_n(t.data() + perm[ch] * 16, 16, p.data() + ch * 16);
    for (Reduction r : {Reduction::kMeanAbs, Reduction::kMax}) {
      const AttentionMap a = attention_map(t, r), b = attention_map(p, r);
      REQUIRE(a.values == b.values);
    }
  }
}

TEST_CASE("overlay shape, zero blend and byte-identical output") {
  std::mt19937_64 rng(44);
  const Image img = testing::random_image(224, 224, 45);
  const AttentionMap amap = attention_map(random_features(8, 7, 7, rng));
  const Image out = overlay(img, amap);
  CHECK(out.height() == 224);
  CHECK(out.width() == 224);
  CHECK_FALSE(out == img);

  AttentionMap zero = amap;
  zero.values.setZero();
  CHECK(overlay(img, zero) == img);

  const auto dir = testing::temp_dir("overlay");
  write_overlay(img, amap, dir / "a.png");
  write_overlay(img, amap, dir / "b.png");
  CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
  const Image back = load_image(dir / "a.png");
  CHECK(back.height() == 224);
  std::filesystem::remove_all(dir);
}

TEST_CASE("plotting a metrics log") {
  const auto dir = testing::temp_dir("plot");
  {
    std::ofstream log(dir / "metrics.jsonl");
    for (int s = 1; s <= 300; ++s) log << record(s, 5.0 - s * 0.01) << '\n';
  }
  const PlotOutputs out = plot_metrics(dir / "metrics.jsonl", dir / "plots");
  CHECK(out.records == 300);
  CHECK(out.charts.size() == 5);
  CHECK(out.series.size() == 5);
  for (const auto& p : out.charts) CHECK(std::filesystem::exists(p));
  const std::string total = slurp(dir / "plots" / "total.csv");
  CHECK(std::count(total.begin(), total.end(), '\n') == 301);
  CHECK(total.rfind("step,total\n", 0) == 0);

  // Identical branches export byte-identical series.
  const std::string gg = slurp(dir / "plots" / "loss_gg.csv"), ll = slurp(dir / "plots" / "loss_ll.csv");
  CHECK(gg.rfind("step,stage2,stage3,stage4,stage5\n", 0) == 0);
  CHECK(gg == ll);
  std::filesystem::remove_all(dir);
}

TEST_CASE("metrics log errors") {
  const auto dir = testing::temp_dir("plot_bad");
  std::ofstream(dir / "empty.jsonl") << "\n\n";
  CHECK_THROWS_WITH_AS(read_metrics_log(dir / "empty.jsonl"), doctest::Contains("no records"), FormatError);
  std::ofstream(dir / "bad.jsonl") << record(1, 1.0) << "\n{oops\n";
  CHECK_THROWS_WITH_AS(read_metrics_log(dir / "bad.jsonl"), doctest::Contains(":2:"), FormatError);
  CHECK_THROWS_AS(read_metrics_log(dir / "missing.jsonl"), FileNotFoundError);
  CHECK_THROWS_AS(parse_reduction("median"), ConfigError);
  CHECK(parse_reduction(reduction_name(Reduction::kMax)) == Reduction::kMax);
  std::filesystem::remove_all(dir);
}
