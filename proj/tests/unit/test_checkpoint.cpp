#include <doctest.h>

#include <fstream>

#include "detco/checkpoint.hpp"
#include "detco/errors.hpp"
#include "helpers.hpp"

using namespace detco;
using checkpoint::Archive;

namespace {

Archive sample_archive() {
  Archive ar;
  Tensor t({2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1f * static_cast<float>(i) - 0.2f;
  ar.put("weights", t);
  Matrix m(2, 2);
  m << 1.0 / 3.0, -2.0, 1e-300, 4.5;
  ar.put("queue", m);
  const std::vector<std::int64_t> ints{-1, 0, 1LL << 40};
  ar.put("counters", ints);
  ar.metadata = R"({"step": 12, "note": "x"})";
  return ar;
}

}  // namespace

TEST_CASE("archives round-trip bit-exactly") {
  const auto dir = testing::temp_dir("ckpt");
  const Archive ar = sample_archive();
  ar.save(dir / "a.ckpt");
  const Archive back = Archive::load(dir / "a.ckpt");
  CHECK(back.names() == ar.names());
  CHECK(back.tensor("weights") == ar.tensor("weights"));
  CHECK(back.matrix("queue") == ar.matrix("queue"));
  CHECK(back.ints("counters") == ar.ints("counters"));
  CHECK(back.metadata.find("\"step\":12") != std::string::npos);
  CHECK_THROWS_AS(back.tensor("missing"), StructuralError);
  CHECK_THROWS_AS(back.tensor("queue"), FormatError);
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("damaged files are rejected") {
  const auto dir = testing::temp_dir("ckpt_bad");
  CHECK_THROWS_AS(Archive::load(dir / "none.ckpt"), FileNotFoundError);

  std::ofstream(dir / "junk.ckpt") << "definitely not a checkpoint";
  CHECK_THROWS_WITH_AS(Archive::load(dir / "junk.ckpt"), doctest::Contains("not a checkpoint"), FormatError);

  sample_archive().save(dir / "full.ckpt");
  const auto size = std::filesystem::file_size(dir / "full.ckpt");
  for (auto keep : {size - 1, size / 2, std::uintmax_t{30}}) {
    std::filesystem::copy_file(dir / "full.ckpt", dir / "cut.ckpt", std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(dir / "cut.ckpt", keep);
    CHECK_THROWS_AS(Archive::load(dir / "cut.ckpt"), FormatError);
  }
  std::filesystem::remove_all(dir);
}
