#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sparsesieve/data.hpp"

using namespace sparsesieve;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("sparsesieve_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("idx round trip reproduces images and labels exactly", "[data]") {
  Dataset src = synthetic_blobs(4, 6, 12, 12, 5);
  // quantize so the byte round trip is exact
  for (auto& img : src.images)
    for (auto& v : img.data) v = std::round(v * 255.0) / 255.0;

  TempDir tmp;
  write_idx(src, tmp.file("imgs"), tmp.file("labels"));
  Dataset back = load_idx(tmp.file("imgs"), tmp.file("labels"), src.classes);

  REQUIRE(back.size() == src.size());
  CHECK(back.height == 12);
  CHECK(back.width == 12);
  CHECK(back.labels == src.labels);
  for (std::size_t i = 0; i < src.size(); ++i) {
    REQUIRE(back.images[i].shape == src.images[i].shape);
    for (std::size_t j = 0; j < src.images[i].size(); ++j)
      CHECK_THAT(back.images[i].data[j], Catch::Matchers::WithinAbs(src.images[i].data[j], 1e-12));
  }
}

TEST_CASE("idx normalization endpoints: byte 255 -> 1.0, byte 0 -> 0.0", "[data]") {
  TempDir tmp;
  Dataset src;
  src.channels = 1;
  src.height = 1;
  src.width = 2;
  src.classes = 2;
  src.images.push_back(Tensor({1, 1, 2}, {1.0, 0.0}));
  src.labels.push_back(1);
  write_idx(src, tmp.file("i"), tmp.file("l"));
  Dataset back = load_idx(tmp.file("i"), tmp.file("l"), 2);
  CHECK(back.images[0].data == std::vector<double>{1.0, 0.0});
  CHECK(back.labels[0] == 1);
}

TEST_CASE("idx loader rejects bad magic and truncation", "[data]") {
  TempDir tmp;
  Dataset src = synthetic_blobs(2, 2, 8, 8, 3);
  write_idx(src, tmp.file("i"), tmp.file("l"));

  SECTION("label magic") {
    // image file used as a label file has the wrong magic
    CHECK_THROWS_WITH(load_idx(tmp.file("i"), tmp.file("i")),
                      Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("image magic") {
    CHECK_THROWS_WITH(load_idx(tmp.file("l"), tmp.file("l")),
                      Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("truncated payload") {
    fs::resize_file(tmp.file("i"), fs::file_size(tmp.file("i")) - 7);
    CHECK_THROWS_WITH(load_idx(tmp.file("i"), tmp.file("l")),
                      Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("count mismatch") {
    // append one label byte
    std::ofstream f(tmp.file("l"), std::ios::binary | std::ios::app);
    f.put(0);
    f.close();
    // header count no longer matches payload
    CHECK_THROWS(load_idx(tmp.file("i"), tmp.file("l")));
  }
  SECTION("missing file") {
    CHECK_THROWS_WITH(load_idx(tmp.file("nope"), tmp.file("l")),
                      Catch::Matchers::ContainsSubstring("nope"));
  }
}

TEST_CASE("gzip idx files load transparently by suffix", "[data]") {
  TempDir tmp;
  Dataset src = synthetic_blobs(3, 4, 8, 8, 9);
  for (auto& img : src.images)
    for (auto& v : img.data) v = std::round(v * 255.0) / 255.0;
  write_idx(src, tmp.file("i"), tmp.file("l"));

  for (const char* name : {"i", "l"}) {
    std::ifstream in(tmp.file(name), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    gzFile gz = gzopen(tmp.file(std::string(name) + ".gz").c_str(), "wb");
    REQUIRE(gz != nullptr);
    gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(gz);
  }
  Dataset back = load_idx(tmp.file("i.gz"), tmp.file("l.gz"), src.classes);
  REQUIRE(back.size() == src.size());
  CHECK(back.labels == src.labels);
  CHECK(back.images[0].data == src.images[0].data);
}

TEST_CASE("synthetic dataset is deterministic and in range", "[data]") {
  Dataset a = synthetic_blobs(10, 5, 28, 28, 11);
  Dataset b = synthetic_blobs(10, 5, 28, 28, 11);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.images[i].data == b.images[i].data);
  CHECK(a.labels == b.labels);

  for (const auto& img : a.images)
    for (double v : img.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }

  Dataset c = synthetic_blobs(10, 5, 28, 28, 12);
  CHECK(a.images[0].data != c.images[0].data);

  // same prototypes, different draw: same classes, different pixels
  Dataset d = synthetic_blobs(10, 5, 28, 28, 11, 999);
  CHECK(d.labels == a.labels);
  CHECK(d.images[0].data != a.images[0].data);
}

TEST_CASE("dataset validation catches label overflow and count mismatch", "[data]") {
  Dataset ds = synthetic_blobs(3, 2, 8, 8, 1);
  ds.labels[0] = 7;
  CHECK_THROWS(ds.validate());
  ds.labels[0] = 0;
  ds.labels.pop_back();
  CHECK_THROWS(ds.validate());
  CHECK_THROWS_AS(synthetic_blobs(1, 2, 8, 8, 1), std::invalid_argument);
}

TEST_CASE("batch plan partitions 10 items as 4,4,2 and respects the seed", "[data]") {
  Dataset ds = synthetic_blobs(2, 5, 8, 8, 2);
  REQUIRE(ds.size() == 10);
  auto batches = batch_iter(ds, 4);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);

  // no shuffle seed: original order
  std::size_t expect = 0;
  for (const auto& b : batches)
    for (std::size_t i : b) CHECK(i == expect++);

  auto s1 = batch_iter(ds, 4, 77);
  auto s2 = batch_iter(ds, 4, 77);
  CHECK(s1 == s2);
  CHECK(s1 != batches);
  CHECK_THROWS_AS(batch_iter(ds, 0), std::invalid_argument);
}
