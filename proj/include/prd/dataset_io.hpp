#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <map>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "prd/errors.hpp"
#include "prd/io/npz.hpp"
#include "prd/io/png.hpp"
#include "prd/problem.hpp"

namespace prd {

namespace fs = std::filesystem;

/// Reads one problem archive from the RAVEN distribution. The archive holds
/// `image` (16 x S x S uint8; frames 0-7 context, 8-15 candidates) and
/// `target` (scalar index). The configuration comes from the parent
/// directory name, e.g. `center_single/RAVEN_12_test.npz`.
inline RpmProblem load_raven_archive(const fs::path& path) {
  const std::string where = path.string();
  std::map<std::string, io::NpyArray> arrays;
  try {
    arrays = io::read_npz(path);
  } catch (const FormatError& e) {
    throw FormatError(where + ": " + e.what());
  }
  const auto img = arrays.find("image");
  if (img == arrays.end()) throw FormatError(where + ": missing field 'image'");
  const auto tgt = arrays.find("target");
  if (tgt == arrays.end()) throw FormatError(where + ": missing field 'target'");

  const io::NpyArray& image = img->second;
  if (image.descr != "|u1" && image.descr != "<u1") {
    throw FormatError(where + ": field 'image' has dtype " + image.descr + ", expected uint8");
  }
  if (image.shape.size() != 3 || image.shape[0] != kProblemCells || image.shape[1] != image.shape[2] ||
      image.shape[1] == 0) {
    std::string dims;
    for (std::size_t d : image.shape) dims += (dims.empty() ? "" : "x") + std::to_string(d);
    throw FormatError(where + ": field 'image' has shape " + dims + ", expected 16xSxS");
  }
  if (image.fortran_order) throw FormatError(where + ": field 'image' is Fortran-ordered");
  if (image.data.size() != image.element_count()) throw FormatError(where + ": field 'image' is truncated");

  const io::NpyArray& target = tgt->second;
  if (target.element_count() != 1) throw FormatError(where + ": field 'target' is not a scalar");
  long long answer = 0;
  if (target.descr == "<i8" && target.data.size() >= 8) {
    std::int64_t v;
    std::memcpy(&v, target.data.data(), 8);
    answer = v;
  } else if (target.descr == "<i4" && target.data.size() >= 4) {
    std::int32_t v;
    std::memcpy(&v, target.data.data(), 4);
    answer = v;
  } else if ((target.descr == "|u1" || target.descr == "|i1") && !target.data.empty()) {
    answer = target.data[0];
  } else {
    throw FormatError(where + ": field 'target' has unsupported dtype " + target.descr);
  }
  if (answer < 0 || answer >= static_cast<long long>(kCandidateCells)) {
    throw FormatError(where + ": field 'target' value " + std::to_string(answer) + " outside [0,7]");
  }

  const std::string dir = path.parent_path().filename().string();
  const auto configuration = parse_configuration(dir);
  if (!configuration) throw FormatError(where + ": cannot infer configuration from directory '" + dir + "'");

  const int side = static_cast<int>(image.shape[1]);
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  std::array<Cell, kContextCells> context;
  std::array<Cell, kCandidateCells> candidates;
  for (std::size_t i = 0; i < kProblemCells; ++i) {
    std::vector<std::uint8_t> px(image.data.begin() + static_cast<std::ptrdiff_t>(i * plane),
                                 image.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
    Cell c(side, std::move(px));
    if (i < kContextCells)
      context[i] = std::move(c);
    else
      candidates[i - kContextCells] = std::move(c);
  }
  return RpmProblem(dir + "/" + path.stem().string(), std::move(context), std::move(candidates), *configuration,
                    static_cast<int>(answer));
}

/// Every `*.npz` archive below `root`, in sorted path order.
inline std::vector<fs::path> find_raven_archives(const fs::path& root) {
  if (!fs::is_directory(root)) throw FormatError(root.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".npz") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Portable format: <dir>/manifest.jsonl plus <dir>/cells/<id>_<NN>.png.

namespace detail {

inline std::string cell_digest(const Cell& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : c.pixels()) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

inline std::string cell_file_name(const std::string& id, std::size_t index) {
  std::string safe = id;
  for (char& ch : safe)
    if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
  std::ostringstream out;
  out << safe << '_' << std::setw(2) << std::setfill('0') << index << ".png";
  return out.str();
}

inline nlohmann::json entity_to_json(const EntityAttributes& e) {
  return {{"type", e.type}, {"size", e.size}, {"color", e.color}};
}

inline EntityAttributes entity_from_json(const nlohmann::json& j) {
  return {j.at("type").get<int>(), j.at("size").get<int>(), j.at("color").get<int>()};
}

}  // namespace detail

inline nlohmann::json rules_to_json(const RuleAnnotation& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.system.entries) {
    entries.push_back({{"attribute", attribute_name(e.attribute)}, {"rule", rule_name(e.rule)}, {"param", e.param}});
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json cj = detail::entity_to_json(c.entity);
    cj["occupancy"] = c.occupancy;
    cj["fixed"] = c.fixed_component ? detail::entity_to_json(*c.fixed_component) : nlohmann::json(nullptr);
    cells.push_back(std::move(cj));
  }
  return {{"entries", std::move(entries)}, {"cells", std::move(cells)}};
}

inline RuleAnnotation rules_from_json(const nlohmann::json& j) {
  RuleAnnotation r;
  for (const auto& e : j.at("entries")) {
    const auto a = parse_attribute(e.at("attribute").get<std::string>());
    const auto k = parse_rule(e.at("rule").get<std::string>());
    if (!a || !k) throw FormatError("unknown attribute or rule in rules record");
    r.system.entries.push_back({*a, *k, e.at("param").get<int>()});
  }
  const auto& cells = j.at("cells");
  if (cells.size() != kProblemCells) throw FormatError("rules record must list 16 cell attribute sets");
  for (std::size_t i = 0; i < kProblemCells; ++i) {
    const auto& cj = cells[i];
    r.cells[i].entity = detail::entity_from_json(cj);
    r.cells[i].occupancy = cj.at("occupancy").get<std::uint16_t>();
    if (!cj.at("fixed").is_null()) r.cells[i].fixed_component = detail::entity_from_json(cj.at("fixed"));
  }
  return r;
}

struct PortableSummary {
  fs::path manifest;
  std::size_t problems = 0;
  std::size_t cell_files = 0;
};

/// Writes problems in the portable layout. Existing files are overwritten.
inline PortableSummary save_portable(std::span<const RpmProblem> problems, const fs::path& dir) {
  fs::create_directories(dir / "cells");
  PortableSummary summary;
  summary.manifest = dir / "manifest.jsonl";
  const fs::path tmp = dir / "manifest.jsonl.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    for (const RpmProblem& p : problems) {
      nlohmann::json rec;
      rec["id"] = p.id();
      rec["configuration"] = configuration_name(p.configuration());
      rec["answer"] = p.answer() ? nlohmann::json(*p.answer()) : nlohmann::json(nullptr);
      rec["rules"] = p.rules() ? rules_to_json(*p.rules()) : nlohmann::json(nullptr);
      nlohmann::json files = nlohmann::json::array();
      nlohmann::json digests = nlohmann::json::array();
      for (std::size_t i = 0; i < kProblemCells; ++i) {
        const std::string name = detail::cell_file_name(p.id(), i);
        io::write_png(dir / "cells" / name, p.cell(i));
        files.push_back(name);
        digests.push_back(detail::cell_digest(p.cell(i)));
        ++summary.cell_files;
      }
      rec["cells"] = std::move(files);
      rec["cell_digests"] = std::move(digests);
      out << rec.dump() << '\n';
      ++summary.problems;
    }
  }
  fs::rename(tmp, summary.manifest);
  return summary;
}

/// Reads a directory produced by save_portable, verifying every cell file
/// against the manifest digests.
inline std::vector<RpmProblem> load_portable(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw FormatError("missing manifest " + manifest.string());

  std::vector<RpmProblem> problems;
  std::vector<std::string> missing;
  std::vector<std::string> corrupt;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      const std::string id = rec.at("id").get<std::string>();
      const auto configuration = parse_configuration(rec.at("configuration").get<std::string>());
      if (!configuration) throw FormatError("unknown configuration for problem " + id);
      const auto& files = rec.at("cells");
      const auto& digests = rec.at("cell_digests");
      if (files.size() != kProblemCells || digests.size() != kProblemCells) {
        throw FormatError("problem " + id + " must list 16 cells");
      }
      std::array<Cell, kProblemCells> cells;
      bool complete = true;
      for (std::size_t i = 0; i < kProblemCells; ++i) {
        const fs::path file = dir / "cells" / files[i].get<std::string>();
        if (!fs::exists(file)) {
          missing.push_back(file.filename().string());
          complete = false;
          continue;
        }
        try {
          cells[i] = io::read_png(file);
        } catch (const FormatError&) {
          corrupt.push_back(file.filename().string());
          complete = false;
          continue;
        }
        if (detail::cell_digest(cells[i]) != digests[i].get<std::string>()) {
          corrupt.push_back(file.filename().string());
          complete = false;
        }
      }
      if (!complete) continue;
      std::array<Cell, kContextCells> context;
      std::array<Cell, kCandidateCells> candidates;
      std::copy_n(cells.begin(), kContextCells, context.begin());
      std::copy_n(cells.begin() + kContextCells, kCandidateCells, candidates.begin());
      std::optional<int> answer;
      if (!rec.at("answer").is_null()) answer = rec.at("answer").get<int>();
      std::optional<RuleAnnotation> rules;
      if (!rec.at("rules").is_null()) rules = rules_from_json(rec.at("rules"));
      problems.emplace_back(id, std::move(context), std::move(candidates), *configuration, answer, std::move(rules));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!missing.empty() || !corrupt.empty()) {
    std::string msg = "portable dataset " + dir.string() + " failed integrity check;";
    if (!missing.empty()) {
      msg += " missing:";
      for (const auto& m : missing) msg += " " + m;
      msg += ";";
    }
    if (!corrupt.empty()) {
      msg += " corrupt:";
      for (const auto& m : corrupt) msg += " " + m;
    }
    throw IntegrityError(msg);
  }
  return problems;
}

}  // namespace prd
