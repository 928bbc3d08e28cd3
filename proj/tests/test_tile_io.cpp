#include <gtest/gtest.h>

#include <cstring>
#include <set>

#include "rmau/tile_io.hpp"
#include "test_util.hpp"

using namespace rmau;
using rmau::testing::random_mask;
using rmau::testing::random_tile;
using rmau::testing::slurp;
using rmau::testing::TempDir;

namespace {

Errc code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::BadConfig;
}

Manifest numbered_manifest(int n) {
  Manifest m{{}, "fixture", "."};
  for (int i = 0; i < n; ++i) {
    SampleRecord r;
    r.tile_path = "tiles/" + std::to_string(i) + ".rst";
    r.image_label = i % 3 == 0 ? ImageLabel::landslide : ImageLabel::none;
    m.records.push_back(r);
  }
  return m;
}

std::vector<std::string> paths(const Manifest& m) {
  std::vector<std::string> out;
  for (const auto& r : m.records) out.push_back(r.tile_path);
  return out;
}

}  // namespace

TEST(TileFile, RandomTileRoundTripsBitExactly) {
  Xoshiro256 rng(11);
  TempDir dir("tio");
  const Tile t = random_tile(128, 128, 23, rng, -100.0, 100.0);
  save_tile(t, dir / "a.rst");
  const Tile back = load_tile(dir / "a.rst");
  EXPECT_EQ(back.height, 128);
  EXPECT_EQ(back.width, 128);
  EXPECT_EQ(back.channels, 23);
  EXPECT_EQ(std::memcmp(back.data.data(), t.data.data(), t.data.size() * 4), 0);
  // byte-level: re-saving the loaded tile reproduces the same file
  save_tile(back, dir / "b.rst");
  EXPECT_EQ(slurp(dir / "a.rst"), slurp(dir / "b.rst"));
}

TEST(TileFile, HeaderLayoutIsLittleEndian) {
  TempDir dir("tio");
  Tile t("x", 2, 3, 1);
  t.data = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f};
  save_tile(t, dir / "x.rst");
  const std::string bytes = slurp(dir / "x.rst");
  ASSERT_EQ(bytes.size(), 24u + 6u * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "RST1");
  const unsigned char expect[20] = {1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(std::memcmp(bytes.data() + 4, expect, 20), 0);
  // 1.0f = 0x3F800000
  EXPECT_EQ(static_cast<unsigned char>(bytes[24]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(bytes[27]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[26]), 0x80);
}

TEST(TileFile, WrongMagicIsBadMagic) {
  TempDir dir("tio");
  Xoshiro256 rng(1);
  save_tile(random_tile(4, 4, 2, rng), dir / "a.rst");
  std::string bytes = slurp(dir / "a.rst");
  bytes[0] = 'X';
  std::ofstream(dir / "bad.rst", std::ios::binary) << bytes;
  EXPECT_EQ(code_of([&] { load_tile(dir / "bad.rst"); }), Errc::BadMagic);
  EXPECT_EQ(code_of([&] { load_mask(dir / "bad.rst"); }), Errc::BadMagic);
}

TEST(TileFile, TruncatedRasterIsTruncatedFile) {
  TempDir dir("tio");
  Xoshiro256 rng(2);
  save_tile(random_tile(8, 8, 3, rng), dir / "a.rst");
  const std::string bytes = slurp(dir / "a.rst");
  std::ofstream(dir / "cut.rst", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_EQ(code_of([&] { load_tile(dir / "cut.rst"); }), Errc::TruncatedFile);
  std::ofstream(dir / "hdr.rst", std::ios::binary) << bytes.substr(0, 10);
  EXPECT_EQ(code_of([&] { load_tile(dir / "hdr.rst"); }), Errc::TruncatedFile);
}

TEST(TileFile, OtherVersionIsUnsupported) {
  TempDir dir("tio");
  Xoshiro256 rng(3);
  save_tile(random_tile(2, 2, 1, rng), dir / "a.rst");
  std::string bytes = slurp(dir / "a.rst");
  bytes[4] = 2;
  std::ofstream(dir / "v2.rst", std::ios::binary) << bytes;
  EXPECT_EQ(code_of([&] { load_tile(dir / "v2.rst"); }), Errc::UnsupportedVersion);
}

TEST(TileFile, MaskRoundTripAndDtypeCheck) {
  TempDir dir("tio");
  Xoshiro256 rng(4);
  const MaskImage m = random_mask(17, 9, rng);
  save_mask(m, dir / "m.rst");
  EXPECT_EQ(load_mask(dir / "m.rst"), m);
  EXPECT_EQ(slurp(dir / "m.rst").size(), 24u + 17u * 9u);
  // a mask file is not a tile and vice versa
  EXPECT_EQ(code_of([&] { load_tile(dir / "m.rst"); }), Errc::UnsupportedVersion);
  save_tile(random_tile(3, 3, 1, rng), dir / "t.rst");
  EXPECT_EQ(code_of([&] { load_mask(dir / "t.rst"); }), Errc::UnsupportedVersion);
}

TEST(TileFile, MissingFileIsIoFailure) {
  EXPECT_EQ(code_of([] { load_tile("/nonexistent/dir/x.rst"); }), Errc::IoFailure);
}

TEST(ManifestCsv, RoundTripsAndResolvesRelativeToItsDirectory) {
  TempDir dir("tio");
  Manifest m{{}, "x", dir.path()};
  SampleRecord a{"tiles/a.rst", "masks/a.rst", ImageLabel::landslide, Split::train};
  SampleRecord b{"tiles/b.rst", std::nullopt, ImageLabel::none, Split::test};
  SampleRecord c{"/abs/c.rst", "masks/c.rst", std::nullopt, Split::val};
  m.records = {a, b, c};
  write_manifest(m, dir / "manifest.csv");
  EXPECT_EQ(slurp(dir / "manifest.csv"),
            "tile_path,mask_path,image_label,split\n"
            "tiles/a.rst,masks/a.rst,landslide,train\n"
            "tiles/b.rst,,none,test\n"
            "/abs/c.rst,masks/c.rst,,val\n");
  const Manifest back = read_manifest(dir / "manifest.csv");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.records[0], a);
  EXPECT_EQ(back.records[1], b);
  EXPECT_EQ(back.records[2], c);
  EXPECT_EQ(back.resolve("tiles/a.rst"), dir.path() / "tiles/a.rst");
  EXPECT_EQ(back.resolve("/abs/c.rst"), std::filesystem::path("/abs/c.rst"));
  EXPECT_EQ(back.count(Split::train), 1u);
  EXPECT_EQ(back.with_split(Split::test).records.front(), b);
}

TEST(ManifestCsv, RejectsBadHeaderAndRecordsWithoutTarget) {
  EXPECT_EQ(code_of([] { parse_manifest("a,b,c,d\n", ".", "x"); }), Errc::BadConfig);
  EXPECT_EQ(code_of([] { parse_manifest("tile_path,mask_path,image_label,split\nt.rst,,,train\n", ".", "x"); }),
            Errc::BadConfig);
  EXPECT_EQ(code_of([] { parse_manifest("", ".", "x"); }), Errc::EmptyManifest);
  EXPECT_EQ(code_of([] { parse_manifest("tile_path,mask_path,image_label,split\nt.rst,,none,holdout\n", ".", "x"); }),
            Errc::BadConfig);
}

TEST(SplitDataset, PublicDatasetSizedCounts) {
  auto [train, test] = split_dataset(numbered_manifest(3044), 0.8, 42);
  EXPECT_EQ(train.size(), 2435u);
  EXPECT_EQ(test.size(), 609u);
  auto [btrain, btest] = split_dataset(numbered_manifest(2773), 0.7, 42);
  EXPECT_EQ(btrain.size(), 1941u);
  EXPECT_EQ(btest.size(), 832u);
}

TEST(SplitDataset, SameSeedSamePartition) {
  const Manifest m = numbered_manifest(10);
  const auto a = split_dataset(m, 0.7, 9);
  const auto b = split_dataset(m, 0.7, 9);
  EXPECT_EQ(paths(a.first), paths(b.first));
  EXPECT_EQ(paths(a.second), paths(b.second));
  EXPECT_EQ(a.first.size(), 7u);
  // a different seed eventually gives a different partition
  bool differs = false;
  for (std::uint64_t s = 10; s < 30 && !differs; ++s) differs = paths(split_dataset(m, 0.7, s).first) != paths(a.first);
  EXPECT_TRUE(differs);
}

// Independent re-implementation of the documented shuffle: splitmix64 seeding,
// xoshiro256**, Fisher-Yates from the back with j = next() % (i + 1).
namespace oracle {
std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
struct Xoshiro {
  std::uint64_t s[4];
  explicit Xoshiro(std::uint64_t seed) {
    for (auto& v : s) v = splitmix(seed);
  }
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t next() {
    const std::uint64_t r = rotl(s[1] * 5, 7) * 9, t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return r;
  }
};
}  // namespace oracle

TEST(SplitDataset, MatchesIndependentShuffleOracle) {
  std::uint64_t sm = 0;
  EXPECT_EQ(oracle::splitmix(sm), 0xE220A8397B1DCDAFULL);
  for (std::uint64_t seed : {0ULL, 1ULL, 12345ULL}) {
    const int n = 37;
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    oracle::Xoshiro rng(seed);
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.next() % static_cast<std::uint64_t>(i + 1)]);
    const int n_train = static_cast<int>(std::llround(0.8 * n));
    std::vector<bool> in_train(n, false);
    for (int i = 0; i < n_train; ++i) in_train[order[i]] = true;
    std::vector<std::string> expect_train, expect_test;
    for (int i = 0; i < n; ++i) (in_train[i] ? expect_train : expect_test).push_back("tiles/" + std::to_string(i) + ".rst");
    const auto [train, test] = split_dataset(numbered_manifest(n), 0.8, seed);
    EXPECT_EQ(paths(train), expect_train) << "seed " << seed;
    EXPECT_EQ(paths(test), expect_test) << "seed " << seed;
    for (const auto& r : train.records) EXPECT_EQ(r.split, Split::train);
    for (const auto& r : test.records) EXPECT_EQ(r.split, Split::test);
  }
}

TEST(SplitDatasetProperty, DisjointCoverInManifestOrder) {
  Xoshiro256 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(200));
    const double ratio = rng.uniform(0.05, 0.95);
    const Manifest m = numbered_manifest(n);
    const auto [train, test] = split_dataset(m, ratio, rng.next());
    EXPECT_EQ(train.size(), static_cast<std::size_t>(std::llround(ratio * n)));
    std::set<std::string> all;
    for (const auto& p : paths(train)) all.insert(p);
    for (const auto& p : paths(test)) EXPECT_TRUE(all.insert(p).second) << p << " in both parts";
    EXPECT_EQ(all.size(), static_cast<std::size_t>(n));
    // manifest order is kept within each part
    auto index = [](const std::string& p) { return std::stoi(p.substr(6)); };
    for (const auto* part : {&train, &test})
      for (std::size_t i = 1; i < part->size(); ++i)
        EXPECT_LT(index(part->records[i - 1].tile_path), index(part->records[i].tile_path));
  }
}

TEST(SplitDataset, Errors) {
  EXPECT_EQ(code_of([] { split_dataset(Manifest{}, 0.8, 0); }), Errc::EmptyManifest);
  EXPECT_EQ(code_of([] { split_dataset(numbered_manifest(3), 1.0, 0); }), Errc::BadConfig);
  EXPECT_EQ(code_of([] { split_dataset(numbered_manifest(3), 0.0, 0); }), Errc::BadConfig);
}

TEST(Synthetic, SameSeedGivesByteIdenticalDatasets) {
  TempDir a("syn"), b("syn");
  const Manifest ma = generate_synthetic_dataset(16, 14, 7, a.path());
  const Manifest mb = generate_synthetic_dataset(16, 14, 7, b.path());
  ASSERT_EQ(ma.size(), 16u);
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
  for (std::size_t i = 0; i < ma.size(); ++i) {
    EXPECT_EQ(slurp(ma.resolve(ma.records[i].tile_path)), slurp(mb.resolve(mb.records[i].tile_path)));
    EXPECT_EQ(slurp(ma.resolve(*ma.records[i].mask_path)), slurp(mb.resolve(*mb.records[i].mask_path)));
  }
}

TEST(Synthetic, DefaultMarginPositiveFractionWithinImbalanceBand) {
  for (std::uint64_t seed : {7ULL, 1ULL, 2ULL, 3ULL, 4ULL}) {
    TempDir dir("syn");
    const Manifest m = generate_synthetic_dataset(16, 14, seed, dir.path());
    std::size_t pos = 0, total = 0;
    for (const auto& r : m.records) {
      const auto s = load_sample(m, r);
      pos += s.mask.positives();
      total += s.mask.values.size();
    }
    const double frac = static_cast<double>(pos) / static_cast<double>(total);
    EXPECT_GE(frac, 0.005) << "seed " << seed;
    EXPECT_LE(frac, 0.10) << "seed " << seed;
  }
}

TEST(Synthetic, RecordsValidateAndLabelsFollowMasks) {
  for (int channels : {3, 14}) {
    TempDir dir("syn");
    const Manifest m = generate_synthetic_dataset(12, channels, 5, dir.path());
    const Manifest re = read_manifest(dir / "manifest.csv");
    EXPECT_EQ(re.records, m.records);
    bool saw_pos = false, saw_neg = false;
    for (const auto& r : re.records) {
      const auto s = load_sample(re, r);
      EXPECT_NO_THROW(validate_pair(s.tile, s.mask));
      EXPECT_EQ(s.tile.channels, channels);
      const bool pos = s.mask.positives() > 0;
      EXPECT_EQ(*r.image_label == ImageLabel::landslide, pos);
      saw_pos |= pos;
      saw_neg |= !pos;
    }
    EXPECT_TRUE(saw_pos);
    EXPECT_TRUE(saw_neg);
  }
}

TEST(Synthetic, SignalSitsInTheDocumentedBands) {
  SyntheticOptions opt;
  opt.noise = 0.0;
  const auto with = make_synthetic_sample(0, 14, 3, true, opt);
  opt.margin = 0.0;
  const auto without = make_synthetic_sample(0, 14, 3, true, opt);
  ASSERT_EQ(with.mask, without.mask);
  ASSERT_GT(with.mask.positives(), 0u);
  for (int r = 0; r < opt.size; ++r)
    for (int c = 0; c < opt.size; ++c)
      for (int ch = 0; ch < 14; ++ch) {
        const double d = with.tile.at(r, c, ch) - without.tile.at(r, c, ch);
        double expect = 0.0;
        if (with.mask.at(r, c)) expect = (ch == 3 || ch == 10 || ch == 11) ? 0.15 : ch == 7 ? -0.15 : 0.0;
        ASSERT_NEAR(d, expect, 1e-6) << r << "," << c << "," << ch;
      }
}

TEST(Synthetic, Errors) {
  TempDir dir("syn");
  EXPECT_EQ(code_of([&] { generate_synthetic_dataset(0, 14, 1, dir.path()); }), Errc::BadConfig);
  EXPECT_EQ(code_of([&] { generate_synthetic_dataset(2, 5, 1, dir.path()); }), Errc::BadConfig);
  EXPECT_EQ(code_of([&] { generate_synthetic_dataset(2, 3, 1, "/proc/forbidden/x"); }), Errc::IoFailure);
}

TEST(LoadSample, RecordWithoutMaskGetsEmptyMaskAndItsLabel) {
  TempDir dir("ls");
  Xoshiro256 rng(9);
  save_tile(random_tile(4, 4, 3, rng), dir / "t.rst");
  Manifest m{{}, "x", dir.path()};
  m.records.push_back({"t.rst", std::nullopt, ImageLabel::landslide, Split::train});
  const auto s = load_sample(m, m.records[0]);
  EXPECT_FALSE(s.has_mask);
  EXPECT_EQ(s.mask.positives(), 0u);
  EXPECT_EQ(s.label, ImageLabel::landslide);
}
