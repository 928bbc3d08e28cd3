#include <gtest/gtest.h>

#include <chrono>

#include "band_oracle.hpp"
#include "rmau/band_engineering.hpp"
#include "test_util.hpp"

using namespace rmau;
namespace orc = rmau::oracle;
using rmau::testing::random_tile;

namespace {

Band make_band(int h, int w, std::initializer_list<float> values) {
  Band b(h, w);
  b.values.assign(values);
  return b;
}

Tile sentinel_tile(int h, int w, Xoshiro256& rng) { return random_tile(h, w, 14, rng, 0.0, 1.0, sentinel_band_names()); }

orc::Raster from_tile(const Tile& t, int ch) {
  orc::Raster r(t.height, t.width);
  for (int i = 0; i < t.height; ++i)
    for (int j = 0; j < t.width; ++j) r.at(i, j) = t.at(i, j, ch);
  return r;
}

// Stored rasters are single precision; the oracle rounds at the same points.
orc::Raster as_float(orc::Raster r) {
  for (auto& v : r.v) v = static_cast<float>(v);
  return r;
}

double max_diff(const Tile& t, int ch, const orc::Raster& ref) {
  double worst = 0.0;
  for (int i = 0; i < t.height; ++i)
    for (int j = 0; j < t.width; ++j) worst = std::max(worst, std::abs(t.at(i, j, ch) - ref.at(i, j)));
  return worst;
}

Errc code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::BadConfig;
}

}  // namespace

TEST(BandOracle, EveryDerivedBandMatchesBruteForceOn50RandomTiles) {
  const auto t0 = std::chrono::steady_clock::now();
  Xoshiro256 rng(2024);
  const Tile probe = expand_bands(sentinel_tile(16, 16, rng), make_recipe("b15-26"));
  ASSERT_EQ(probe.channels, 26);
  double worst = 0.0;
  int canny_mismatch = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tile t = sentinel_tile(16, 16, rng);
    const Tile x = expand_bands(t, make_recipe("b15-26"));
    const auto b2 = from_tile(t, 1), b3 = from_tile(t, 2), b4 = from_tile(t, 3), b8 = from_tile(t, 7),
               b11 = from_tile(t, 10), b12 = from_tile(t, 11);
    const orc::Raster g = as_float(orc::gray(b2, b3, b4));
    const std::vector<orc::Raster> expect = {orc::norm(b2),       orc::norm(b3),     orc::norm(b4),
                                             orc::ratio(b8, b4),  orc::ratio(b8, b11), orc::ratio(b8, b12),
                                             g,                   orc::gauss10(g),   orc::median10(g),
                                             orc::grad_x(g),      orc::grad_y(g)};
    for (std::size_t k = 0; k < expect.size(); ++k) {
      const double d = max_diff(x, 14 + static_cast<int>(k), expect[k]);
      worst = std::max(worst, d);
      EXPECT_LE(d, 1e-6) << "band " << 15 + k << " trial " << trial;
    }
    const orc::Raster edges = orc::canny(as_float(orc::norm(g)));
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) canny_mismatch += x.at(i, j, 25) != static_cast<float>(edges.at(i, j));
  }
  EXPECT_EQ(canny_mismatch, 0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 10.0);
  RecordProperty("max_abs_diff", std::to_string(worst));
}

TEST(MinMaxNormalize, Examples) {
  EXPECT_EQ(minmax_normalize(make_band(1, 3, {0, 5, 10})).values, (std::vector<float>{0.0f, 0.5f, 1.0f}));
  EXPECT_EQ(minmax_normalize(make_band(2, 2, {3, 3, 3, 3})).values, std::vector<float>(4, 0.0f));
  const Band unit = make_band(1, 4, {0.0f, 0.25f, 1.0f, 0.5f});
  EXPECT_EQ(minmax_normalize(unit), unit);
}

TEST(SpectralIndexTest, Examples) {
  Tile t("t", 1, 1, 14, sentinel_band_names());
  t.at(0, 0, 7) = 0.6f;  // B8
  t.at(0, 0, 3) = 0.2f;  // B4
  EXPECT_NEAR(spectral_index(t, SpectralIndex::NDVI).values[0], 0.5, 1e-7);
  t.at(0, 0, 3) = 0.6f;
  EXPECT_EQ(spectral_index(t, SpectralIndex::NDVI).values[0], 0.0f);
  t.at(0, 0, 3) = 0.0f;
  t.at(0, 0, 7) = 0.0f;
  EXPECT_EQ(spectral_index(t, SpectralIndex::NDVI).values[0], 0.0f);
  t.at(0, 0, 7) = 0.5f;
  t.at(0, 0, 10) = 0.3f;
  t.at(0, 0, 11) = 0.1f;
  EXPECT_NEAR(spectral_index(t, SpectralIndex::NDMI).values[0], 0.2 / 0.8, 1e-7);
  EXPECT_NEAR(spectral_index(t, SpectralIndex::NBR).values[0], 0.4 / 0.6, 1e-7);
}

TEST(SpectralIndexTest, EqualBandsGiveZeroEverywhere) {
  Xoshiro256 rng(3);
  Tile t = sentinel_tile(8, 8, rng);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) t.at(r, c, 7) = t.at(r, c, 3);
  for (float v : spectral_index(t, SpectralIndex::NDVI).values) EXPECT_EQ(v, 0.0f);
}

TEST(SpectralIndexTest, MissingBandOnRgb) {
  Tile t("rgb", 2, 2, 3, rgb_band_names());
  EXPECT_EQ(code_of([&] { spectral_index(t, SpectralIndex::NDVI); }), Errc::MissingBand);
}

TEST(GrayscaleTest, Examples) {
  Tile t("t", 1, 2, 14, sentinel_band_names());
  for (int ch : {1, 2, 3}) t.at(0, 0, ch) = 0.7f;
  t.at(0, 1, 1) = 0.0f;
  t.at(0, 1, 2) = 0.3f;
  t.at(0, 1, 3) = 0.6f;
  const Band g = grayscale(t);
  EXPECT_NEAR(g.values[0], 0.7, 1e-7);
  EXPECT_NEAR(g.values[1], 0.3, 1e-7);
}

TEST(GrayscaleTest, SwappingB2AndB4LeavesGrayUnchanged) {
  Xoshiro256 rng(4);
  const Tile t = sentinel_tile(8, 8, rng);
  Tile s = t;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) std::swap(s.at(r, c, 1), s.at(r, c, 3));
  const Band a = grayscale(t), b = grayscale(s);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-7);
}

TEST(SmoothTest, ConstantBandStaysConstant) {
  const Band b(12, 12, 0.42f);
  for (auto kind : {SmoothKind::gaussian, SmoothKind::median})
    for (float v : smooth(b, kind).values) EXPECT_NEAR(v, 0.42f, 1e-6);
}

TEST(SmoothTest, MedianRemovesSingleImpulse) {
  Band b(16, 16);
  b.at(7, 9) = 5.0f;
  for (float v : smooth(b, SmoothKind::median).values) EXPECT_EQ(v, 0.0f);
}

TEST(SmoothTest, GaussianPreservesMassOfInteriorSignal) {
  Band b(32, 32);
  b.at(15, 16) = 1.0f;
  b.at(17, 14) = 0.5f;
  const Band s = smooth(b, SmoothKind::gaussian);
  double sum = 0.0;
  for (float v : s.values) sum += v;
  EXPECT_NEAR(sum, 1.5, 1e-4);
}

TEST(SmoothTest, WindowAnchorCoversMinusFiveToPlusFour) {
  // an impulse at (10,10) reaches outputs whose window [-5,+4] contains it
  Band b(24, 24);
  b.at(10, 10) = 1.0f;
  const Band s = smooth(b, SmoothKind::gaussian);
  EXPECT_GT(s.at(6, 6), 0.0f);    // offset +4
  EXPECT_EQ(s.at(5, 10), 0.0f);   // offset +5, outside
  EXPECT_GT(s.at(15, 15), 0.0f);  // offset -5
  EXPECT_EQ(s.at(16, 10), 0.0f);  // offset -6, outside
}

TEST(GradientsTest, ConstantAndRamp) {
  const auto [cx, cy] = gradients(Band(6, 6, 2.0f));
  for (float v : cx.values) EXPECT_EQ(v, 0.0f);
  for (float v : cy.values) EXPECT_EQ(v, 0.0f);
  Band ramp(6, 8);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 8; ++c) ramp.at(r, c) = static_cast<float>(c);
  const auto [gx, gy] = gradients(ramp);
  for (int r = 0; r < 6; ++r)
    for (int c = 1; c < 7; ++c) EXPECT_FLOAT_EQ(gx.at(r, c), 1.0f);
  EXPECT_FLOAT_EQ(gx.at(0, 0), 0.5f);  // replicated edge
  for (float v : gy.values) EXPECT_EQ(v, 0.0f);
}

TEST(GradientsTest, TransposeSwapsComponents) {
  Xoshiro256 rng(5);
  Band b(7, 11);
  for (auto& v : b.values) v = static_cast<float>(rng.uniform());
  const auto [gx, gy] = gradients(b);
  const auto [tx, ty] = gradients(transpose(b));
  EXPECT_EQ(tx, transpose(gy));
  EXPECT_EQ(ty, transpose(gx));
}

TEST(CannyTest, ConstantBandHasNoEdges) {
  for (float v : canny(Band(16, 16, 0.3f)).values) EXPECT_EQ(v, 0.0f);
}

TEST(CannyTest, VerticalStepGivesOneThinVerticalLine) {
  Band b(16, 16);
  for (int r = 0; r < 16; ++r)
    for (int c = 8; c < 16; ++c) b.at(r, c) = 1.0f;
  const Band e = canny(b);
  int column = -1;
  for (int r = 0; r < 16; ++r) {
    int count = 0;
    for (int c = 0; c < 16; ++c)
      if (e.at(r, c) == 1.0f) {
        ++count;
        if (column < 0) column = c;
        EXPECT_EQ(c, column) << "row " << r;
      }
    EXPECT_EQ(count, 1) << "row " << r;
  }
  EXPECT_TRUE(column == 7 || column == 8);
}

TEST(CannyTest, OutputIsBinary) {
  Xoshiro256 rng(6);
  Band b(20, 20);
  for (auto& v : b.values) v = static_cast<float>(rng.uniform());
  for (float v : canny(b).values) EXPECT_TRUE(v == 0.0f || v == 1.0f);
}

TEST(ExpandBands, RecipeChannelCounts) {
  Xoshiro256 rng(7);
  const Tile t = sentinel_tile(16, 16, rng);
  EXPECT_EQ(expand_bands(t, default_recipe()).channels, 23);
  EXPECT_EQ(expand_bands(t, make_recipe("b15-26")).channels, 26);
  EXPECT_EQ(expand_bands(t, make_recipe("b15-17")).channels, 17);
  EXPECT_EQ(expand_bands(t, make_recipe("b15-21")).channels, 21);
  EXPECT_EQ(expand_bands(t, make_recipe("b15-25")).channels, 25);
  EXPECT_EQ(expand_bands(t, make_recipe("none")), t);
  EXPECT_EQ(default_recipe().output_channels(14), 23);
  EXPECT_EQ(code_of([] { make_recipe("b15-99"); }), Errc::BadConfig);
}

TEST(ExpandBands, OriginalBandsKeptAndNamesFixed) {
  Xoshiro256 rng(8);
  const Tile t = sentinel_tile(16, 16, rng);
  const Tile x = expand_bands(t, make_recipe("b15-26"));
  const std::vector<std::string> tail = {"B2_norm", "B3_norm", "B4_norm", "NDVI",   "NDMI",   "NBR",
                                         "GRAY",    "GAUSS",   "MEDIAN",  "GRAD_X", "GRAD_Y", "CANNY"};
  ASSERT_EQ(x.band_names.size(), 26u);
  EXPECT_EQ(std::vector<std::string>(x.band_names.begin(), x.band_names.begin() + 14), sentinel_band_names());
  EXPECT_EQ(std::vector<std::string>(x.band_names.begin() + 14, x.band_names.end()), tail);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c)
      for (int ch = 0; ch < 14; ++ch) ASSERT_EQ(x.at(r, c, ch), t.at(r, c, ch));
  EXPECT_EQ(expand_bands(t, make_recipe("b15-26")), x);  // deterministic
  EXPECT_NO_THROW(validate_tile(x));
}

TEST(ExpandBands, RgbTilesMapOntoVisibleRolesAndSkipIndices) {
  Xoshiro256 rng(9);
  const Tile t = random_tile(16, 16, 3, rng, 0.0, 1.0, rgb_band_names());
  const Tile x = expand_bands(t, default_recipe());
  EXPECT_EQ(x.channels, 9);
  EXPECT_EQ(x.band_names, (std::vector<std::string>{"R", "G", "B", "B_norm", "G_norm", "R_norm", "GRAY", "GAUSS", "MEDIAN"}));
  // B_norm is the normalized blue band (the B2 role)
  const Band blue = minmax_normalize(extract_band(t, 2));
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) EXPECT_EQ(x.at(r, c, 3), blue.at(r, c));
  EXPECT_EQ(expand_bands(t, make_recipe("b15-26")).channels, 3 + 9);
}

TEST(ExpandBands, MissingSourceBand) {
  Tile t("odd", 4, 4, 5, {"a", "b", "c", "d", "e"});
  EXPECT_EQ(code_of([&] { expand_bands(t, default_recipe()); }), Errc::MissingBand);
}

TEST(ExpandBandsProperty, DerivedBandsRespectTheirRanges) {
  Xoshiro256 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    Tile t = sentinel_tile(16, 16, rng);
    // include some negative and zero-sum pixels
    t.at(0, 0, 7) = 0.0f;
    t.at(0, 0, 3) = 0.0f;
    t.at(1, 1, 7) = -0.2f;
    const Tile x = expand_bands(t, make_recipe("b15-26"));
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) {
        for (int ch = 14; ch < 17; ++ch) {
          EXPECT_GE(x.at(r, c, ch), 0.0f);
          EXPECT_LE(x.at(r, c, ch), 1.0f);
        }
        for (int ch = 17; ch < 20; ++ch) {
          EXPECT_GE(x.at(r, c, ch), -1.0f);
          EXPECT_LE(x.at(r, c, ch), 1.0f);
        }
        const float e = x.at(r, c, 25);
        EXPECT_TRUE(e == 0.0f || e == 1.0f);
      }
  }
}

TEST(BandNames, InferredFromChannelCount) {
  EXPECT_EQ(default_band_names(14), sentinel_band_names());
  EXPECT_EQ(default_band_names(3), rgb_band_names());
  EXPECT_EQ(default_band_names(23).back(), "MEDIAN");
  EXPECT_EQ(default_band_names(5).front(), "band_1");
}
