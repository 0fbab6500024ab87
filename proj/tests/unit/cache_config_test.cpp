#include "test_support.hpp"

#include <fstream>

using namespace cocobm;

namespace {

void expect_rebuild_hint(const std::filesystem::path& p) {
  try {
    EmbeddingCache::load(p);
    FAIL() << "expected a corrupt-cache error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("delete the file and run `embed` again"), std::string::npos) << e.what();
  }
}

std::string bytes_of(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace

TEST(EmbeddingCacheFile, RoundTripAtFloat32) {
  fixtures::TempDir dir;
  EmbeddingCache c(3);
  c.put("a/1.jpg", fixtures::vec({0.1, -0.2, 1.0 / 3.0}));
  c.put("b/2.jpg", fixtures::vec({1, 2, 3}));
  c.put("a/1.jpg", fixtures::vec({0.5, 0.25, -1}));
  c.save(dir / "e.bin");
  auto d = EmbeddingCache::load(dir / "e.bin");
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.keys(), (std::vector<std::string>{"a/1.jpg", "b/2.jpg"}));
  EXPECT_EQ(*d.get("a/1.jpg"), fixtures::vec({0.5, 0.25, -1}));
  Vector b = *d.get("b/2.jpg");
  EXPECT_EQ(b(0), 1.0);
  EXPECT_FALSE(d.get("missing").has_value());
  // 8 magic + 4 dim + 8 count + 4 dtype + keys (4 + 7) * 2 + 2 * 3 * 4
  EXPECT_EQ(std::filesystem::file_size(dir / "e.bin"), 24u + 22u + 24u);
  EmbeddingCache f(1);
  f.put("x", fixtures::vec({1.0 / 3.0}));
  f.save(dir / "f.bin");
  EXPECT_EQ((*EmbeddingCache::load(dir / "f.bin").get("x"))(0), static_cast<double>(1.0f / 3.0f));
}

TEST(EmbeddingCacheFile, CorruptionIsReportedWithARebuildHint) {
  fixtures::TempDir dir;
  EmbeddingCache c(4);
  c.put("k", fixtures::vec({1, 2, 3, 4}));
  c.save(dir / "good.bin");
  std::string good = bytes_of(dir / "good.bin");

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  write_bytes(dir / "magic.bin", bad_magic);
  expect_rebuild_hint(dir / "magic.bin");

  write_bytes(dir / "header.bin", good.substr(0, 14));
  expect_rebuild_hint(dir / "header.bin");

  write_bytes(dir / "rows.bin", good.substr(0, good.size() - 3));
  expect_rebuild_hint(dir / "rows.bin");

  write_bytes(dir / "trailing.bin", good + "x");
  expect_rebuild_hint(dir / "trailing.bin");

  std::string dtype = good;
  dtype[20] = 2;
  write_bytes(dir / "dtype.bin", dtype);
  expect_rebuild_hint(dir / "dtype.bin");
}

TEST(EmbeddingCacheFile, DimensionChecks) {
  fixtures::TempDir dir;
  EmbeddingCache c(2);
  EXPECT_THROW(c.put("k", fixtures::vec({1, 2, 3})), Error);
  EXPECT_THROW(c.put("k", fixtures::vec({1, std::nan("")})), Error);
  EXPECT_THROW(EmbeddingCache(0), Error);
  c.put("k", fixtures::vec({1, 2}));
  c.save(dir / "c.bin");
  EXPECT_THROW(EmbeddingCache::load_or_create(dir / "c.bin", 3), Error);
  EXPECT_EQ(EmbeddingCache::load_or_create(dir / "none.bin", 3).size(), 0u);
}

TEST(RunConfigJson, RoundTripAndDefaults) {
  RunConfig c = planted_run_config(0.1, 4);
  c.out = "/tmp/somewhere";
  c.ta = 0.2;
  json j = c;
  RunConfig d = j.get<RunConfig>();
  EXPECT_EQ(json(d), j);
  EXPECT_EQ(d.world.noise, 0.1);
  EXPECT_EQ(d.seed, 4u);
  RunConfig empty = json::object().get<RunConfig>();
  EXPECT_EQ(empty.ta, 0.1);
  EXPECT_EQ(empty.tm, 0.3);
  EXPECT_EQ(empty.beta, 16u);
  EXPECT_EQ(empty.max_iterations, 10);
}

TEST(RunConfigJson, UnknownKeysAreRejected) {
  EXPECT_THROW(json::parse(R"({"bogus": 1})").get<RunConfig>(), Error);
  EXPECT_THROW(json::parse(R"({"agent": {"t_b": 1}})").get<RunConfig>(), Error);
  EXPECT_THROW(json::parse(R"({"train": {"lr": 1}})").get<RunConfig>(), Error);
}

TEST(RunConfigJson, ValidationRejectsOutOfRangeValues) {
  RunConfig c = planted_run_config();
  c.ta = 1.5;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("t_a"), std::string::npos);
  }
  c = planted_run_config();
  c.tm = -0.1;
  EXPECT_THROW(c.validate(), Error);
  c = planted_run_config();
  c.train_fraction = 0.9;
  EXPECT_THROW(c.validate(), Error);
  c = planted_run_config();
  c.backend = "real";
  EXPECT_THROW(c.validate(), Error);
}

TEST(RunConfigJson, InvalidConfigWritesNothing) {
  fixtures::TempDir dir;
  RunConfig c = fixtures::planted_config(dir / "run");
  c.ta = 1.5;
  EXPECT_THROW(cmd_ground(c), Error);
  EXPECT_FALSE(std::filesystem::exists(dir / "run"));
}

TEST(RunConfigJson, HashIgnoresOutputDirectory) {
  RunConfig a = planted_run_config(), b = planted_run_config();
  a.out = "/x";
  b.out = "/y";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(RunConfigJson, LoadFromFileReportsThePath) {
  fixtures::TempDir dir;
  write_text_file(dir / "c.json", R"({"agent": {"q": "eight"}})");
  try {
    load_run_config(dir / "c.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("c.json"), std::string::npos);
  }
}
