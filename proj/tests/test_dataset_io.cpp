#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "prd/dataset_io.hpp"
#include "prd/mini_raven.hpp"

using namespace prd;
namespace fs = std::filesystem;

namespace {

const fs::path kData = fs::path(PRD_TEST_DATA) / "raven";

// Pixel formula used to write the fixture archives with numpy.
std::uint8_t fixture_pixel(int frame, int y, int x, int k) {
  return static_cast<std::uint8_t>((frame * 13 + y * 7 + x * 3 + k) % 256);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("prd_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_of(const fs::path& path) {
  try {
    load_raven_archive(path);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RavenArchive, LoadsStoredArchive) {
  const RpmProblem p = load_raven_archive(kData / "center_single" / "RAVEN_0_train.npz");
  EXPECT_EQ(p.id(), "center_single/RAVEN_0_train");
  EXPECT_EQ(p.configuration(), Configuration::kCenter);
  ASSERT_TRUE(p.answer().has_value());
  EXPECT_EQ(*p.answer(), 5);
  EXPECT_EQ(p.resolution(), 20);
  for (int f = 0; f < 16; ++f)
    for (int y = 0; y < 20; y += 3)
      for (int x = 0; x < 20; x += 5) EXPECT_EQ(p.cell(static_cast<std::size_t>(f)).at(y, x), fixture_pixel(f, y, x, 0));
}

TEST(RavenArchive, LoadsCompressedArchive) {
  const RpmProblem p = load_raven_archive(kData / "distribute_four" / "RAVEN_1_val.npz");
  EXPECT_EQ(p.configuration(), Configuration::kGrid2x2);
  EXPECT_EQ(*p.answer(), 2);
  EXPECT_EQ(p.resolution(), 24);
  EXPECT_EQ(p.candidates()[7].at(23, 23), fixture_pixel(15, 23, 23, 1));
}

TEST(RavenArchive, ErrorsNameTheOffendingField) {
  EXPECT_NE(error_of(kData / "center_single" / "RAVEN_2_fifteen_frames.npz").find("'image'"), std::string::npos);
  EXPECT_NE(error_of(kData / "center_single" / "RAVEN_3_no_target.npz").find("'target'"), std::string::npos);
  EXPECT_NE(error_of(kData / "center_single" / "RAVEN_4_bad_target.npz").find("'target'"), std::string::npos);
  EXPECT_NE(error_of(kData / "broken" / "RAVEN_5_unknown_dir.npz").find("configuration"), std::string::npos);
  EXPECT_FALSE(error_of(kData / "missing.npz").empty());
}

TEST(RavenArchive, FindsArchivesInSortedOrder) {
  const auto files = find_raven_archives(kData);
  ASSERT_EQ(files.size(), 6u);
  EXPECT_TRUE(std::is_sorted(files.begin(), files.end()));
}

TEST(Portable, RoundTripPreservesEverything) {
  const auto problems = fixtures::small_generated(3, 21, 32, {Configuration::kCenter, Configuration::kOutInCenter});
  const fs::path dir = scratch_dir("roundtrip");
  const PortableSummary s = save_portable(problems, dir);
  EXPECT_EQ(s.problems, problems.size());
  EXPECT_EQ(s.cell_files, problems.size() * 16);
  const auto back = load_portable(dir);
  ASSERT_EQ(back.size(), problems.size());
  for (std::size_t i = 0; i < problems.size(); ++i) EXPECT_EQ(back[i], problems[i]);
}

TEST(Portable, UnlabeledRoundTrip) {
  std::vector<RpmProblem> problems = {fixtures::pattern_problem("a/b", 1), fixtures::pattern_problem("c", 2, 3)};
  const fs::path dir = scratch_dir("unlabeled");
  save_portable(problems, dir);
  const auto back = load_portable(dir);
  EXPECT_FALSE(back[0].answer().has_value());
  EXPECT_EQ(*back[1].answer(), 3);
}

TEST(Portable, EmptyDatasetIsValid) {
  const fs::path dir = scratch_dir("empty");
  save_portable({}, dir);
  EXPECT_TRUE(load_portable(dir).empty());
}

TEST(Portable, MissingAndCorruptFilesAreListed) {
  std::vector<RpmProblem> problems = {fixtures::pattern_problem("p", 4, 1), fixtures::pattern_problem("q", 5, 2)};
  const fs::path dir = scratch_dir("integrity");
  save_portable(problems, dir);
  fs::remove(dir / "cells" / "p_03.png");
  // Replace one cell with a valid PNG of different content.
  io::write_png(dir / "cells" / "q_10.png", fixtures::flat_cell(16, 9));
  try {
    load_portable(dir);
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("p_03.png"), std::string::npos);
    EXPECT_NE(msg.find("q_10.png"), std::string::npos);
  }
}

TEST(Portable, GarbageCellIsCorrupt) {
  std::vector<RpmProblem> problems = {fixtures::pattern_problem("p", 4, 1)};
  const fs::path dir = scratch_dir("garbage");
  save_portable(problems, dir);
  std::ofstream(dir / "cells" / "p_00.png", std::ios::trunc) << "not a png";
  EXPECT_THROW(load_portable(dir), IntegrityError);
}

TEST(Portable, MissingManifestIsFormatError) {
  EXPECT_THROW(load_portable(scratch_dir("nomanifest")), FormatError);
}

TEST(Png, RoundTrip) {
  const fs::path dir = scratch_dir("png");
  const Cell c = fixtures::pattern_cell(13, 77);
  io::write_png(dir / "c.png", c);
  EXPECT_EQ(io::read_png(dir / "c.png"), c);
}
