#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "advxfer/errors.hpp"

namespace advxfer {

inline constexpr int kImageH = 64;
inline constexpr int kImageW = 64;
inline constexpr int kImageC = 3;
inline constexpr int kImagePixels = kImageC * kImageH * kImageW;

// Target label space: filling level as a fraction of capacity, plus the
// unknown class for opaque containers.
enum class FillClass : int { Empty0 = 0, Half50 = 1, Full90 = 2, Unknown = 3 };

inline constexpr int kTargetClasses = 4;

inline std::string fill_class_name(int label) {
  switch (label) {
    case 0: return "0";
    case 1: return "50";
    case 2: return "90";
    case 3: return "unknown";
  }
  return "s" + std::to_string(label);  // source-domain class indices
}

inline double fill_fraction(FillClass f) {
  switch (f) {
    case FillClass::Empty0: return 0.0;
    case FillClass::Half50: return 0.5;
    case FillClass::Full90: return 0.9;
    case FillClass::Unknown: return 0.0;
  }
  return 0.0;
}

enum class Transparency { Transparent, Translucent, Opaque };

inline const char* to_string(Transparency t) {
  switch (t) {
    case Transparency::Transparent: return "transparent";
    case Transparency::Translucent: return "translucent";
    case Transparency::Opaque: return "opaque";
  }
  return "?";
}

inline Transparency transparency_from_string(const std::string& s) {
  if (s == "transparent") return Transparency::Transparent;
  if (s == "translucent") return Transparency::Translucent;
  if (s == "opaque") return Transparency::Opaque;
  throw DataError("unknown transparency '" + s + "'");
}

struct SampleMeta {
  std::string container_id;
  std::string shape_family;
  Transparency transparency = Transparency::Transparent;
  bool occluded = false;
  int background_id = 0;
};

// One image: CHW float pixels in [0,1] plus label and container metadata.
struct ImageSample {
  std::vector<float> pixels;  // kImageC x kImageH x kImageW
  int label = 0;
  SampleMeta meta;
};

struct Dataset {
  std::vector<ImageSample> samples;
  std::string role;  // source | target-train | target-test
  std::string split_id;
  int num_classes = 0;

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
  }
};

inline uint8_t quantize_pixel(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

inline std::vector<uint8_t> quantize_pixels(const std::vector<float>& px) {
  std::vector<uint8_t> out(px.size());
  for (size_t i = 0; i < px.size(); ++i) out[i] = quantize_pixel(px[i]);
  return out;
}

// FNV-1a over quantized pixels and labels; stable across a disk roundtrip.
inline uint64_t dataset_fingerprint(const Dataset& ds) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : ds.samples) {
    auto q = quantize_pixels(s.pixels);
    feed(q.data(), q.size());
    int32_t lab = s.label;
    feed(&lab, sizeof(lab));
    feed(s.meta.container_id.data(), s.meta.container_id.size());
  }
  return h;
}

inline uint64_t image_hash(const ImageSample& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto q = quantize_pixels(s.pixels);
  for (uint8_t b : q) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

inline void write_ppm(const std::filesystem::path& path, const std::vector<float>& chw) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << kImageW << ' ' << kImageH << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(kImageW) * kImageC);
  for (int y = 0; y < kImageH; ++y) {
    for (int x = 0; x < kImageW; ++x)
      for (int c = 0; c < kImageC; ++c)
        row[static_cast<size_t>(x) * kImageC + c] =
            quantize_pixel(chw[(static_cast<size_t>(c) * kImageH + y) * kImageW + x]);
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::vector<float> read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w != kImageW || h != kImageH || maxval != 255)
    throw DataError("unexpected PPM header in " + path.string());
  is.get();  // single whitespace after maxval
  std::vector<uint8_t> raw(static_cast<size_t>(kImageH) * kImageW * kImageC);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (is.gcount() != static_cast<std::streamsize>(raw.size()))
    throw DataError("short pixel data in " + path.string());
  std::vector<float> chw(kImagePixels);
  for (int y = 0; y < kImageH; ++y)
    for (int x = 0; x < kImageW; ++x)
      for (int c = 0; c < kImageC; ++c)
        chw[(static_cast<size_t>(c) * kImageH + y) * kImageW + x] =
            static_cast<float>(raw[(static_cast<size_t>(y) * kImageW + x) * kImageC + c]) / 255.0f;
  return chw;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline int label_from_fill_class(const std::string& s) {
  if (s == "0") return 0;
  if (s == "50") return 1;
  if (s == "90") return 2;
  if (s == "unknown") return 3;
  if (s.size() > 1 && s[0] == 's') return std::stoi(s.substr(1));
  throw DataError("unrecognized fill_class '" + s + "' in manifest");
}

}  // namespace detail

inline constexpr const char* kManifestHeader =
    "filename,fill_class,container_id,shape_family,transparency,occluded,background_id";

// Images land under <root>/<role>/<container_id>/<index>.ppm with one
// manifest.csv row per sample, in sample order.
inline void write_dataset(const Dataset& ds, const std::string& root_dir) {
  namespace fs = std::filesystem;
  fs::path root(root_dir);
  fs::create_directories(root);
  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  std::unordered_map<std::string, int> counters;
  for (const auto& s : ds.samples) {
    int idx = counters[s.meta.container_id]++;
    char name[16];
    std::snprintf(name, sizeof(name), "%06d.ppm", idx);
    fs::path rel = fs::path(ds.role) / s.meta.container_id / name;
    fs::create_directories(root / fs::path(rel).parent_path());
    detail::write_ppm(root / rel, s.pixels);
    manifest << rel.generic_string() << ',' << fill_class_name(s.label) << ','
             << s.meta.container_id << ',' << s.meta.shape_family << ','
             << to_string(s.meta.transparency) << ',' << (s.meta.occluded ? 1 : 0) << ','
             << s.meta.background_id << '\n';
  }
  std::ofstream os(root / "manifest.csv", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + root_dir);
  os << manifest.str();
}

inline Dataset read_dataset(const std::string& root_dir) {
  namespace fs = std::filesystem;
  fs::path root(root_dir);
  std::ifstream is(root / "manifest.csv");
  if (!is) throw DataError("no manifest.csv under " + root_dir);
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty manifest in " + root_dir);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw DataError("unexpected manifest header in " + root_dir + ": " + line);

  Dataset ds;
  std::vector<std::string> missing;
  int max_label = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 7) throw DataError("malformed manifest row: " + line);
    fs::path rel(f[0]);
    if (!fs::exists(root / rel)) {
      missing.push_back(f[0]);
      continue;
    }
    ImageSample s;
    s.pixels = detail::read_ppm(root / rel);
    s.label = detail::label_from_fill_class(f[1]);
    max_label = std::max(max_label, s.label);
    s.meta.container_id = f[2];
    s.meta.shape_family = f[3];
    s.meta.transparency = transparency_from_string(f[4]);
    s.meta.occluded = f[5] == "1";
    s.meta.background_id = std::stoi(f[6]);
    if (ds.role.empty()) ds.role = rel.begin()->string();
    ds.samples.push_back(std::move(s));
  }
  if (!missing.empty()) {
    std::string msg = "manifest names missing files under " + root_dir + ":";
    for (size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
    if (missing.size() > 10) msg += " (+" + std::to_string(missing.size() - 10) + " more)";
    throw DataError(msg);
  }
  if (ds.samples.empty()) throw DataError("manifest has no rows in " + root_dir);
  ds.num_classes = ds.role == "source" ? max_label + 1 : kTargetClasses;
  return ds;
}

}  // namespace advxfer
