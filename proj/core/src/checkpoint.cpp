// SPDX-License-Identifier: Apache-2.0
#include "pmae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "pmae/error.hpp"

namespace pmae {
namespace {

constexpr char kMagic[4] = {'M', 'A', 'E', 'M'};

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void flatten(const nlohmann::json& j, const std::string& prefix, std::map<std::string, nlohmann::json>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out[prefix] = j;
  }
}

}  // namespace

const TensorRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kMagic, 4);
  put_u32(out, checkpoint.version);
  const auto meta = checkpoint.meta.dump();
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  for (const auto& t : checkpoint.tensors) {
    if (shape_numel(t.shape) != t.values.size()) throw ShapeError("checkpoint record " + t.name + " has inconsistent shape");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto extent : t.shape) put_u32(out, static_cast<std::uint32_t>(extent));
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != std::string_view(kMagic, 4)) throw IoError("not a checkpoint (bad magic)");
  Checkpoint ckpt;
  ckpt.version = in.u32();
  if (ckpt.version != Checkpoint::kVersion) {
    throw ConfigError("checkpoint_version", "expected " + std::to_string(Checkpoint::kVersion) + ", found " +
                                                std::to_string(ckpt.version));
  }
  const auto meta_len = in.u32();
  try {
    ckpt.meta = nlohmann::json::parse(in.take(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint metadata: ") + e.what());
  }
  while (!in.done()) {
    TensorRecord rec;
    rec.name = std::string(in.take(in.u32()));
    const auto rank = in.u32();
    for (std::uint32_t i = 0; i < rank; ++i) rec.shape.push_back(in.u32());
    rec.values.resize(shape_numel(rec.shape));
    for (auto& v : rec.values) v = std::bit_cast<float>(in.u32());
    ckpt.tensors.push_back(std::move(rec));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = serialize_checkpoint(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

std::vector<ConfigDiff> diff_json(const nlohmann::json& expected, const nlohmann::json& actual) {
  std::map<std::string, nlohmann::json> a, b;
  flatten(expected, "", a);
  flatten(actual, "", b);
  std::vector<ConfigDiff> diffs;
  for (const auto& [key, value] : a) {
    auto it = b.find(key);
    if (it == b.end()) {
      diffs.push_back({key, value, nullptr});
    } else if (it->second != value) {
      diffs.push_back({key, value, it->second});
    }
  }
  for (const auto& [key, value] : b) {
    if (!a.contains(key)) diffs.push_back({key, nullptr, value});
  }
  return diffs;
}

std::string format_diffs(const std::vector<ConfigDiff>& diffs) {
  nlohmann::json report = nlohmann::json::array();
  for (const auto& d : diffs) report.push_back({{"key", d.key}, {"expected", d.expected}, {"actual", d.actual}});
  return report.dump();
}

void export_parameters(const ParamList<float>& params, Checkpoint& checkpoint, const std::string& prefix) {
  for (const auto& p : params) {
    auto v = p.tensor.values();
    checkpoint.tensors.push_back({prefix + p.name, p.tensor.shape(), {v.begin(), v.end()}});
  }
}

void import_parameters(const ParamList<float>& params, const Checkpoint& checkpoint, const std::string& prefix) {
  std::vector<std::string> missing;
  for (const auto& p : params) {
    const auto* rec = checkpoint.find(prefix + p.name);
    if (!rec) {
      missing.push_back(prefix + p.name);
      continue;
    }
    if (rec->shape != p.tensor.shape()) {
      throw ConfigError(p.name, "checkpoint shape " + shape_str(rec->shape) + " vs model " + shape_str(p.tensor.shape()));
    }
    auto dst = const_cast<Tensor<float>&>(p.tensor).mutable_values();
    std::copy(rec->values.begin(), rec->values.end(), dst.begin());
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ConfigError("checkpoint", "missing tensors: " + list);
  }
}

}  // namespace pmae
