#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "udet/data.hpp"

namespace udet {

DatasetSplit split_dataset(std::size_t count, double test_fraction, std::size_t folds,
                           std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("split: need at least 2 folds");
  if (!(test_fraction >= 0 && test_fraction < 1))
    throw std::invalid_argument("split: test fraction must be in [0, 1)");

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0x73706c6974ULL}));
  for (std::size_t i = count; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }

  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(count) * test_fraction));
  DatasetSplit split;
  split.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  if (split.train.size() < folds)
    throw std::invalid_argument("split: " + std::to_string(split.train.size()) +
                                " training samples cannot fill " + std::to_string(folds) + " folds");
  if (test_fraction > 0 && split.test.empty())
    throw std::invalid_argument("split: test set would be empty");

  const std::size_t base = split.train.size() / folds, extra = split.train.size() % folds;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    split.folds.emplace_back(split.train.begin() + static_cast<std::ptrdiff_t>(pos),
                             split.train.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return split;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty manifest");
  const auto header = split_csv(line);
  const std::vector<std::string> expected{"id", "image_path", "mask_path", "diameter_mm", "attached"};
  if (header != expected)
    throw DataError(path.string() + ": header must be id,image_path,mask_path,diameter_mm,attached");

  std::vector<ManifestRow> rows;
  const auto base = path.parent_path();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != 5)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    ManifestRow r;
    r.id = cells[0];
    r.image_path = base / cells[1];
    r.mask_path = cells[2].empty() ? std::filesystem::path{} : base / cells[2];
    try {
      if (!cells[3].empty()) r.diameter_mm = std::stod(cells[3]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad diameter_mm");
    }
    if (!cells[4].empty()) r.attached = cells[4] == "1" || cells[4] == "true";
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "id,image_path,mask_path,diameter_mm,attached\n";
  const auto base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    return p.empty() ? std::string{} : p.lexically_relative(base).generic_string();
  };
  for (const auto& r : rows) {
    out << r.id << ',' << rel(r.image_path) << ',' << rel(r.mask_path) << ','
        << (r.diameter_mm ? format_value(*r.diameter_mm) : std::string{}) << ','
        << (r.attached ? (*r.attached ? "1" : "0") : "") << '\n';
  }
}

Sample load_sample(const ManifestRow& row) {
  Sample s;
  s.meta.id = row.id;
  s.meta.diameter_mm = row.diameter_mm;
  s.meta.attached = row.attached;
  s.image = image_from_volume(read_mhd(row.image_path));
  if (row.mask_path.empty()) throw DataError(row.id + ": no mask path");
  s.mask = mask_from_volume(read_mhd(row.mask_path));
  if (s.mask.height != s.image.height || s.mask.width != s.image.width)
    throw DataError(row.id + ": image and mask sizes differ");
  return s;
}

std::vector<Sample> load_dataset(const std::filesystem::path& manifest) {
  std::vector<Sample> out;
  for (const auto& row : read_manifest(manifest)) out.push_back(load_sample(row));
  return out;
}

}  // namespace udet
