#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "oracles.hpp"
#include "tempdir.hpp"
#include "tokenlens/hsdio.hpp"

using namespace tokenlens;
using namespace tokenlens::hsd;

namespace {

TokenRoleMap roles_of(std::vector<TokenRole> r) {
  TokenRoleMap m;
  m.roles = std::move(r);
  m.prompt_id = "describe";
  m.image_id = "img";
  m.model_tag = "test";
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void put_u32_at(std::string& bytes, std::size_t offset, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes[offset + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

Errc read_error(const std::filesystem::path& p, std::string* message = nullptr) {
  try {
    read_dump(p);
  } catch (const HsdError& e) {
    if (message) *message = e.what();
    return e.code();
  }
  ADD_FAILURE() << "read_dump accepted " << p;
  return Errc::io;
}

class HsdFiles : public ::testing::Test {
 protected:
  TempDir dir{"hsd"};
  std::filesystem::path valid() {
    const auto p = dir / "valid.hsd";
    write_dump(make_dump({Matrix(2, 3, 1.5)}), roles_of({TokenRole::vision, TokenRole::text}), p);
    return p;
  }
};

}  // namespace

TEST_F(HsdFiles, ZeroMatrixRoundTripAndSize) {
  const auto p = dir / "zero.hsd";
  const auto dump = make_dump({Matrix(2, 3)});
  const auto roles = roles_of({TokenRole::vision, TokenRole::text});
  write_dump(dump, roles, p);
  EXPECT_EQ(std::filesystem::file_size(p), kHeaderBytes + 24);
  const auto back = read_dump(p);
  EXPECT_EQ(back.dump, dump);
  EXPECT_EQ(back.roles, roles);
  EXPECT_TRUE(std::filesystem::exists(dir / "zero.manifest"));
}

TEST_F(HsdFiles, HeaderLayoutIsLittleEndian) {
  write_dump(make_dump({Matrix(3, 2), Matrix(3, 2)}, true),
             roles_of({TokenRole::special, TokenRole::vision, TokenRole::text}), dir / "h.hsd");
  const auto bytes = slurp(dir / "h.hsd");
  const unsigned char expect[kHeaderBytes] = {'H', 'S', 'D', '1', 1, 0, 0, 0, 2, 0, 0, 0, 3,
                                              0,   0,   0,   2,   0, 0, 0, 0, 0, 0, 0, 1};
  ASSERT_GE(bytes.size(), kHeaderBytes);
  EXPECT_EQ(std::memcmp(bytes.data(), expect, kHeaderBytes), 0);
}

TEST_F(HsdFiles, RandomRoundTripsAreBitwise) {
  std::mt19937_64 rng(51);
  std::uniform_int_distribution<int> layers(1, 8), tokens(1, 64), dims(1, 32), role(0, 2);
  for (int t = 0; t < 40; ++t) {
    const int nl = layers(rng), nt = tokens(rng), d = dims(rng);
    std::vector<Matrix> mats;
    for (int l = 0; l < nl; ++l) mats.push_back(oracle::random_matrix(nt, d, rng));
    const auto dump = make_dump(mats, t % 2 == 0);
    std::vector<TokenRole> r(nt);
    for (auto& x : r) x = static_cast<TokenRole>(role(rng));
    const auto p = dir / ("r" + std::to_string(t) + ".hsd");
    write_dump(dump, roles_of(r), p);
    const auto back = read_dump(p);
    ASSERT_EQ(back.dump.layers.size(), dump.layers.size());
    for (std::size_t l = 0; l < dump.layers.size(); ++l)
      EXPECT_EQ(std::memcmp(back.dump.layers[l].data(), dump.layers[l].data(),
                            dump.layers[l].size() * sizeof(float)),
                0);
    EXPECT_EQ(back.dump.post_layernorm_final, dump.post_layernorm_final);
    EXPECT_EQ(back.roles.roles, r);
  }
}

TEST_F(HsdFiles, RoleLengthMismatchIsRefused) {
  try {
    write_dump(make_dump({Matrix(3, 2)}), roles_of({TokenRole::vision}), dir / "m.hsd");
    FAIL();
  } catch (const HsdError& e) {
    EXPECT_EQ(e.code(), Errc::shape_mismatch);
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
}

TEST_F(HsdFiles, BadMagic) {
  auto bytes = slurp(valid());
  bytes[3] = '2';
  spit(dir / "valid.hsd", bytes);
  EXPECT_EQ(read_error(dir / "valid.hsd"), Errc::bad_magic);
}

TEST_F(HsdFiles, TruncatedPayloadNamesSizes) {
  const auto p = valid();
  auto bytes = slurp(p);
  const auto full = bytes.size();
  bytes.pop_back();
  spit(p, bytes);
  std::string msg;
  EXPECT_EQ(read_error(p, &msg), Errc::truncated_payload);
  EXPECT_NE(msg.find("expected " + std::to_string(full)), std::string::npos) << msg;
  EXPECT_NE(msg.find("got " + std::to_string(full - 1)), std::string::npos) << msg;
}

TEST_F(HsdFiles, EveryHeaderFieldHasItsOwnError) {
  const auto base = slurp(valid());
  const auto p = dir / "valid.hsd";
  std::set<Errc> seen;
  auto check = [&](std::string bytes, Errc expected) {
    spit(p, bytes);
    const Errc got = read_error(p);
    EXPECT_EQ(got, expected) << to_string(expected);
    seen.insert(got);
  };
  std::string b = base;
  put_u32_at(b, 4, 2);
  check(b, Errc::unsupported_version);
  b = base;
  put_u32_at(b, 8, 0);
  check(b, Errc::zero_layers);
  b = base;
  put_u32_at(b, 12, 0);
  check(b, Errc::zero_tokens);
  b = base;
  put_u32_at(b, 16, 0);
  check(b, Errc::zero_dim);
  b = base;
  put_u32_at(b, 20, 1);
  check(b, Errc::unsupported_dtype);
  b = base;
  b[24] = 4;
  check(b, Errc::bad_flags);
  check(base.substr(0, 10), Errc::truncated_header);
  check(base + "x", Errc::trailing_bytes);
  EXPECT_EQ(seen.size(), 8u);
}

TEST_F(HsdFiles, NonFiniteEntryNamesPosition) {
  const auto p = valid();
  auto bytes = slurp(p);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  // layer 0, row 1, column 2 is the sixth float.
  std::memcpy(bytes.data() + kHeaderBytes + 5 * 4, &nan, 4);
  spit(p, bytes);
  std::string msg;
  EXPECT_EQ(read_error(p, &msg), Errc::non_finite);
  EXPECT_NE(msg.find("layer 0 row 1 column 2"), std::string::npos) << msg;
}

TEST_F(HsdFiles, MissingFilesMapToMissingInput) {
  try {
    read_dump(dir / "nope.hsd");
    FAIL();
  } catch (const HsdError& e) {
    EXPECT_EQ(e.code(), Errc::file_missing);
    EXPECT_EQ(e.kind(), ErrorKind::missing_input);
  }
  const auto p = valid();
  std::filesystem::remove(manifest_path(p));
  EXPECT_EQ(read_error(p), Errc::manifest_missing);
}

TEST_F(HsdFiles, BrokenManifest) {
  const auto p = valid();
  spit(manifest_path(p), "{not json");
  EXPECT_EQ(read_error(p), Errc::manifest_invalid);
  spit(manifest_path(p),
       R"({"format":"tokenlens-manifest","version":1,"prompt_id":"a","image_id":"b","model_tag":"c","roles":["vision","audio"]})");
  EXPECT_EQ(read_error(p), Errc::manifest_invalid);
  spit(manifest_path(p),
       R"({"format":"tokenlens-manifest","version":1,"prompt_id":"a","image_id":"b","model_tag":"c","roles":["vision"]})");
  EXPECT_EQ(read_error(p), Errc::shape_mismatch);
}

TEST(Slices, ByDefinition) {
  const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const auto dump = make_dump({m});
  const auto s = slice_modalities(dump, roles_of({TokenRole::vision, TokenRole::vision, TokenRole::text}), 0);
  EXPECT_EQ(s.vision, Matrix::from_rows({{1, 2}, {3, 4}}));
  EXPECT_EQ(s.text, Matrix::from_rows({{5, 6}}));
  EXPECT_EQ(s.multimodal, m);
  EXPECT_EQ(s.vision_rows, (std::vector<std::size_t>{0, 1}));
}

TEST(Slices, AllTextLeavesVisionEmpty) {
  const auto dump = make_dump({Matrix(2, 2, 1.0)});
  const auto s = slice_modalities(dump, roles_of({TokenRole::text, TokenRole::text}), 0);
  EXPECT_EQ(s.vision.rows(), 0u);
  EXPECT_EQ(s.text.rows(), 2u);
}

TEST(Slices, LayerOutOfRange) {
  const auto dump = make_dump({Matrix(2, 2, 1.0)});
  try {
    slice_modalities(dump, roles_of({TokenRole::text, TokenRole::vision}), 1);
    FAIL();
  } catch (const HsdError& e) {
    EXPECT_EQ(e.code(), Errc::layer_out_of_range);
  }
}

TEST(Slices, RowSetsPartitionTheLayer) {
  std::mt19937_64 rng(52);
  for (int t = 0; t < 20; ++t) {
    const Matrix m = oracle::random_matrix(20, 4, rng);
    const auto dump = make_dump({m});
    std::vector<TokenRole> r(20);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<TokenRole>(i % 3);
    std::shuffle(r.begin(), r.end(), rng);
    const auto roles = roles_of(r);
    const auto s = slice_modalities(dump, roles, 0);
    const Matrix stored = dump.layer_matrix(0);
    std::multiset<std::vector<double>> whole, parts;
    for (std::size_t i = 0; i < stored.rows(); ++i) {
      const auto row = stored.row(i);
      whole.emplace(row.begin(), row.end());
    }
    for (const Matrix* part : {&s.vision, &s.text}) {
      for (std::size_t i = 0; i < part->rows(); ++i) {
        const auto row = part->row(i);
        parts.emplace(row.begin(), row.end());
      }
    }
    for (std::size_t i : roles.indices(TokenRole::special)) {
      const auto row = stored.row(i);
      parts.emplace(row.begin(), row.end());
    }
    EXPECT_EQ(parts, whole);
    EXPECT_EQ(s.vision.rows() + s.text.rows() + roles.count(TokenRole::special), 20u);
    EXPECT_TRUE(std::is_sorted(s.vision_rows.begin(), s.vision_rows.end()));
  }
}

TEST(Roles, NamesRoundTrip) {
  for (auto r : {TokenRole::vision, TokenRole::text, TokenRole::special})
    EXPECT_EQ(parse_role(to_string(r)), r);
  EXPECT_THROW(parse_role("audio"), HsdError);
}
