#pragma once

// File formats: flat binary tensors, CSV tables and JSON documents.
//
// Binary tensor (".rplt"), all integers and reals little-endian:
//   bytes 0..3   magic "RPLT"
//   u32          format version (1)
//   u32          rank (always 4)
//   u64 x 4      n, c, h, w
//   f64 x n*c*h*w  values, row-major NCHW

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rpl/error.hpp"
#include "rpl/percep_loss.hpp"
#include "rpl/percep_net.hpp"
#include "rpl/tensor.hpp"
#include "rpl/toy_tasks.hpp"

namespace rpl {

/// Raised when a file cannot be read or written.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

namespace io {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

inline constexpr char kTensorMagic[4] = {'R', 'P', 'L', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kTensorMagic, 4);
  const std::uint32_t header[2] = {kTensorVersion, 4};
  os.write(reinterpret_cast<const char*>(header), sizeof header);
  const std::uint64_t dims[4] = {t.n(), t.c(), t.h(), t.w()};
  os.write(reinterpret_cast<const char*>(dims), sizeof dims);
  os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw IoError("write failed for " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  std::uint32_t header[2];
  std::uint64_t dims[4];
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(header), sizeof header);
  is.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!is || std::string(magic, 4) != std::string(kTensorMagic, 4) || header[0] != kTensorVersion || header[1] != 4)
    throw IoError(path.string() + " is not a version-1 rank-4 tensor file");
  Shape s{dims[0], dims[1], dims[2], dims[3]};
  std::vector<double> data(s.numel());
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!is) throw IoError(path.string() + " is truncated");
  return Tensor(s, std::move(data));
}

/// Label maps are stored as 1x1xHxW tensors of class indices.
inline Tensor label_tensor(const LabelMap& m) {
  Tensor t(Shape{1, 1, m.h, m.w});
  for (std::size_t k = 0; k < m.data.size(); ++k) t[k] = static_cast<double>(m.data[k]);
  return t;
}

/// Shortest round-trip decimal form.
inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

/// Writes `text` to `path`, failing loudly.
inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Simple CSV builder. An optional first line "# resolved_config=<json>"
/// carries the configuration that produced the table.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void set_preamble(const nlohmann::json& config) { preamble_ = "# resolved_config=" + config.dump() + "\n"; }

  CsvTable& row() {
    rows_.emplace_back();
    return *this;
  }
  CsvTable& cell(const std::string& v) {
    rows_.back().push_back(v);
    return *this;
  }
  CsvTable& cell(double v) { return cell(fmt(v)); }
  CsvTable& cell(std::size_t v) { return cell(std::to_string(v)); }
  CsvTable& cell(std::uint64_t v, int) { return cell(std::to_string(v)); }
  CsvTable& cell(bool v) { return cell(std::string(v ? "1" : "0")); }

  std::string str() const {
    std::string out = preamble_;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        const bool quote = cells[i].find_first_of(",\"\n") != std::string::npos;
        if (quote) {
          out += '"';
          for (char ch : cells[i]) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
          out += '"';
        } else {
          out += cells[i];
        }
      }
      out += '\n';
    };
    line(columns_);
    for (const auto& r : rows_) {
      if (r.size() != columns_.size()) throw ConfigError("csv row has " + std::to_string(r.size()) + " cells");
      line(r);
    }
    return out;
  }

  void write(const std::filesystem::path& path) const { write_text(path, str()); }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
  std::string preamble_;
};

/// Writes every sample as .rplt files plus manifest.csv
/// (columns: index, split, role, file, n, c, h, w).
inline void write_shapes_dataset(const std::filesystem::path& dir, const std::vector<ShapesSample>& train,
                                 const std::vector<ShapesSample>& eval) {
  ensure_dir(dir);
  CsvTable manifest({"index", "split", "role", "file", "n", "c", "h", "w"});
  auto emit = [&](const std::string& split, const std::vector<ShapesSample>& set) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      const std::pair<std::string, Tensor> parts[] = {{"image", set[i].image},
                                                      {"label", label_tensor(set[i].label)},
                                                      {"soft_target", set[i].soft_target}};
      for (const auto& [role, t] : parts) {
        const std::string file = split + "_" + std::to_string(i) + "_" + role + ".rplt";
        write_tensor(dir / file, t);
        manifest.row().cell(i).cell(split).cell(role).cell(file).cell(t.n()).cell(t.c()).cell(t.h()).cell(t.w());
      }
    }
  };
  emit("train", train);
  emit("eval", eval);
  manifest.write(dir / "manifest.csv");
}

inline void write_restore_dataset(const std::filesystem::path& dir, const std::vector<RestoreSample>& train,
                                  const std::vector<RestoreSample>& eval) {
  ensure_dir(dir);
  CsvTable manifest({"index", "split", "role", "file", "n", "c", "h", "w"});
  auto emit = [&](const std::string& split, const std::vector<RestoreSample>& set) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      const std::pair<std::string, const Tensor*> parts[] = {{"degraded", &set[i].degraded}, {"clean", &set[i].clean}};
      for (const auto& [role, t] : parts) {
        const std::string file = split + "_" + std::to_string(i) + "_" + role + ".rplt";
        write_tensor(dir / file, *t);
        manifest.row().cell(i).cell(split).cell(role).cell(file).cell(t->n()).cell(t->c()).cell(t->h()).cell(t->w());
      }
    }
  };
  emit("train", train);
  emit("eval", eval);
  manifest.write(dir / "manifest.csv");
}

}  // namespace io

// JSON mappings. Schema of a loss-network spec:
//   {"blocks": [2,2,3,3,3], "channels": [64,128,256,512,512], "kernel_size": 3,
//    "in_channels": 4, "init": "calibrated", "seed": 0}
// "init" takes "calibrated", "xavier", "gaussian:<sigma>" or "uniform:<a>".

inline void to_json(nlohmann::json& j, const PercepNetSpec& s) {
  j = nlohmann::json{{"blocks", s.blocks},           {"channels", s.channels},   {"kernel_size", s.kernel_size},
                     {"in_channels", s.in_channels}, {"init", to_string(s.init)}, {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, PercepNetSpec& s) {
  PercepNetSpec d;
  try {
    d.blocks = j.value("blocks", d.blocks);
    d.channels = j.value("channels", d.channels);
    d.kernel_size = j.value("kernel_size", d.kernel_size);
    d.in_channels = j.value("in_channels", d.in_channels);
    if (j.contains("init")) d.init = parse_init_scheme(j.at("init").get<std::string>());
    d.seed = j.value("seed", d.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("percep spec: ") + e.what());
  }
  d.validate();
  s = std::move(d);
}

/// "final", "equal", "halving" or an explicit list of per-block scales.
inline nlohmann::json levels_to_json(const LevelSelection& sel) {
  if (std::holds_alternative<levels::FinalOnly>(sel)) return "final";
  return std::get<levels::MultiLevel>(sel).scales;
}

inline LevelSelection parse_levels(const nlohmann::json& j, std::size_t block_count) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "final") return levels::FinalOnly{};
    if (s == "equal") return levels::MultiLevel{std::vector<double>(block_count, 1.0)};
    if (s == "halving") return levels::MultiLevel{halving_scales(block_count)};
    throw ConfigError("levels must be final, equal, halving or a list of scales, got '" + s + "'");
  }
  if (j.is_array()) {
    try {
      return levels::MultiLevel{j.get<std::vector<double>>()};
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("levels list must hold numbers");
    }
  }
  throw ConfigError("levels must be a string or list");
}

}  // namespace rpl
