// SPDX-License-Identifier: Apache-2.0
#include "pmae/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pmae/error.hpp"
#include "pmae/random.hpp"

namespace pmae {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::vector<std::vector<std::size_t>> rows_by_label(const SampleManifest& m, std::span<const std::size_t> rows) {
  std::vector<std::vector<std::size_t>> out(m.num_labels());
  for (auto r : rows) out[m.records.at(r).label_index].push_back(r);
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

std::size_t pick_val_count(std::size_t n, std::size_t test, std::size_t num_folds, double val_fraction) {
  const double rest = static_cast<double>(n - test);
  const double nominal_val = val_fraction * (1.0 - 1.0 / static_cast<double>(num_folds)) * static_cast<double>(n);
  const double slack = static_cast<double>(n) / static_cast<double>(num_folds) - static_cast<double>(test);
  const double lo = std::max({nominal_val - 1.0, nominal_val + slack - 1.0, 0.0});
  const double hi = std::min({nominal_val + 1.0, nominal_val + slack + 1.0, rest});
  const double target = val_fraction * rest;
  auto best = static_cast<std::size_t>(std::ceil(lo - 1e-9));
  for (auto v = best; static_cast<double>(v) <= hi + 1e-9; ++v) {
    if (std::abs(static_cast<double>(v) - target) < std::abs(static_cast<double>(best) - target)) best = v;
  }
  return best;
}

}  // namespace

std::filesystem::path SampleManifest::resolve(std::size_t i) const {
  std::filesystem::path p(records.at(i).path);
  return p.is_absolute() ? p : root / p;
}

std::vector<std::size_t> SampleManifest::label_indices() const {
  std::vector<std::size_t> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label_index);
  return out;
}

std::vector<std::size_t> SampleManifest::label_counts(std::span<const std::size_t> subset) const {
  std::vector<std::size_t> counts(num_labels(), 0);
  for (auto i : subset) ++counts[records.at(i).label_index];
  return counts;
}

SampleManifest make_manifest(std::vector<ManifestRecord> records, std::filesystem::path root) {
  if (records.empty()) throw DataError("manifest is empty");
  SampleManifest m;
  m.root = std::move(root);
  std::set<std::string> paths;
  std::set<std::string> labels;
  for (const auto& r : records) {
    if (r.path.empty()) throw DataError("manifest record with empty path");
    if (r.label.empty()) throw DataError("manifest record with empty label: " + r.path);
    if (!paths.insert(r.path).second) throw DataError("duplicate path in manifest: " + r.path);
    labels.insert(r.label);
  }
  m.labels.assign(labels.begin(), labels.end());
  for (auto& r : records) {
    r.label_index = static_cast<std::size_t>(std::lower_bound(m.labels.begin(), m.labels.end(), r.label) - m.labels.begin());
  }
  m.records = std::move(records);
  return m;
}

SampleManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<ManifestRecord> records;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (!header) {
      if (fields.size() < 2 || fields[0] != "path" || fields[1] != "label") {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected header path,label,source");
      }
      header = true;
      continue;
    }
    if (fields.size() < 2 || fields.size() > 4 || fields[0].empty() || fields[1].empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    records.push_back({fields[0], fields[1], fields.size() > 2 ? fields[2] : "", 0});
  }
  if (records.empty()) throw DataError("manifest " + path.string() + " has no records");
  auto m = make_manifest(std::move(records), path.parent_path());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!std::filesystem::exists(m.resolve(i))) m.warnings.push_back("missing image: " + m.resolve(i).string());
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const SampleManifest& manifest, std::span<const std::size_t> rows,
                   const std::string& split) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const auto base = std::filesystem::absolute(path).parent_path().lexically_normal();
  out << "path,label,source" << (split.empty() ? "" : ",split") << '\n';
  auto emit = [&](const ManifestRecord& r) {
    const auto written = std::filesystem::absolute(manifest.root / r.path).lexically_normal();
    const auto rel = written.lexically_relative(base);
    out << (rel.empty() ? written : rel).generic_string() << ',' << r.label << ',' << r.source;
    if (!split.empty()) out << ',' << split;
    out << '\n';
  };
  if (rows.empty()) {
    for (const auto& r : manifest.records) emit(r);
  } else {
    for (auto i : rows) emit(manifest.records.at(i));
  }
}

const char* part_name(Part p) {
  switch (p) {
    case Part::train: return "train";
    case Part::val: return "val";
    case Part::test: return "test";
  }
  return "?";
}

std::vector<std::size_t> FoldSplit::indices(Part p) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == p) out.push_back(i);
  }
  return out;
}

std::vector<FoldSplit> stratified_kfold(const SampleManifest& manifest, std::size_t num_folds, std::uint64_t seed,
                                        double val_fraction) {
  if (num_folds < 2) throw ConfigError("num_folds", "need at least 2 folds");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction", "must lie in [0,1)");
  std::vector<std::size_t> all(manifest.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto groups = rows_by_label(manifest, all);
  for (std::size_t l = 0; l < groups.size(); ++l) {
    if (groups[l].size() < num_folds) {
      throw DataError("label '" + manifest.labels[l] + "' has " + std::to_string(groups[l].size()) +
                      " samples, fewer than the " + std::to_string(num_folds) + " folds");
    }
    auto rng = make_rng(seed, stream::kSplit, {l});
    shuffle(groups[l].begin(), groups[l].end(), rng);
  }

  std::vector<FoldSplit> folds;
  for (std::size_t k = 0; k < num_folds; ++k) {
    FoldSplit split{k, num_folds, seed, std::vector<Part>(manifest.size(), Part::train)};
    for (const auto& g : groups) {
      const std::size_t n = g.size();
      const std::size_t begin = k * n / num_folds;
      const std::size_t end = (k + 1) * n / num_folds;
      for (std::size_t i = begin; i < end; ++i) split.assignment[g[i]] = Part::test;
      const std::size_t val = pick_val_count(n, end - begin, num_folds, val_fraction);
      std::size_t taken = 0;
      for (std::size_t i = 0; i < n && taken < val; ++i) {
        if (i >= begin && i < end) continue;
        split.assignment[g[i]] = Part::val;
        ++taken;
      }
    }
    folds.push_back(std::move(split));
  }
  return folds;
}

void write_split_files(const std::filesystem::path& dir, const SampleManifest& manifest, const FoldSplit& split) {
  for (auto p : {Part::train, Part::val, Part::test}) {
    const auto rows = split.indices(p);
    const auto name = "fold" + std::to_string(split.fold) + "_" + part_name(p) + ".csv";
    if (rows.empty()) {
      std::ofstream(dir / name, std::ios::trunc) << "path,label,source,split\n";
    } else {
      save_manifest(dir / name, manifest, rows, part_name(p));
    }
  }
}

std::size_t budget_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subset_fraction", "must lie in (0,1]");
  const auto rounded = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5 + 1e-9));
  return std::min(n, std::max<std::size_t>(1, rounded));
}

std::vector<std::size_t> sample_label_subset(const SampleManifest& manifest, std::span<const std::size_t> part,
                                             double fraction, std::uint64_t seed) {
  auto groups = rows_by_label(manifest, part);
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < groups.size(); ++l) {
    auto& g = groups[l];
    if (g.empty()) continue;
    auto rng = make_rng(seed, stream::kSubset, {l});
    shuffle(g.begin(), g.end(), rng);
    const auto m = budget_count(g.size(), fraction);
    out.insert(out.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(m));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace pmae
