#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advxfer/crc32.hpp"
#include "advxfer/model.hpp"

namespace advxfer {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

inline constexpr char kCheckpointMagic[4] = {'M', 'R', 'V', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Ordered key=value record stored inside checkpoints. Order is preserved so
// save -> load -> save is byte-identical.
class Provenance {
 public:
  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = value;
        return;
      }
    entries_.emplace_back(key, value);
  }
  void set(const std::string& key, int64_t value) { set(key, std::to_string(value)); }
  void set(const std::string& key, uint64_t value) { set(key, std::to_string(value)); }

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return &v;
    return nullptr;
  }
  std::string get_or(const std::string& key, const std::string& def) const {
    const std::string* v = find(key);
    return v ? *v : def;
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
      out += k;
      out += '=';
      out += v;
      out += '\n';
    }
    return out;
  }

  static Provenance parse(const std::string& text) {
    Provenance p;
    size_t pos = 0;
    while (pos < text.size()) {
      size_t nl = text.find('\n', pos);
      if (nl == std::string::npos) nl = text.size();
      std::string line = text.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw CheckpointError(CheckpointFault::bad_contents, "provenance line without '='");
      p.entries_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return p;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
               static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  buf.append(b, 4);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, size_t pos = 0) : data_(data), pos_(pos) {}
  size_t pos() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }

  void need(size_t n, const char* what) const {
    if (remaining() < n)
      throw CheckpointError(CheckpointFault::truncated,
                            std::string("file ends inside ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    std::memcpy(&v, data_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(data_[pos_++]);
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  const char* raw(size_t n, const char* what) {
    need(n, what);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::string& data_;
  size_t pos_;
};

template <typename S>
constexpr uint8_t dtype_code() {
  return std::is_same_v<S, float> ? 0 : 1;
}

inline std::string widths_to_string(const std::array<int, 4>& w) {
  std::ostringstream os;
  os << w[0] << ',' << w[1] << ',' << w[2] << ',' << w[3];
  return os.str();
}

inline std::array<int, 4> widths_from_string(const std::string& s) {
  std::array<int, 4> w{};
  std::istringstream is(s);
  std::string tok;
  for (int i = 0; i < 4; ++i) {
    if (!std::getline(is, tok, ','))
      throw CheckpointError(CheckpointFault::bad_contents, "arch.widths needs 4 entries: " + s);
    w[i] = std::stoi(tok);
  }
  return w;
}

}  // namespace detail

// Layout: magic "MRV1", version u32, length-prefixed provenance text, tensor
// count u32, then per tensor: length-prefixed name, dtype code u8, rank u8,
// dims u32 each, raw values; trailing CRC32 over all preceding bytes.
// All integers little-endian.
template <typename S>
void save_checkpoint(MicroResNet<S>& model, const Provenance& extra, const std::string& path) {
  Provenance prov = extra;
  prov.set("arch.widths", detail::widths_to_string(model.widths()));
  prov.set("arch.num_classes", static_cast<int64_t>(model.num_classes()));
  prov.set("arch.frozen_prefix", static_cast<int64_t>(model.frozen_prefix()));
  prov.set("arch.precision", std::is_same_v<S, float> ? "single" : "double");

  std::string buf;
  buf.append(kCheckpointMagic, 4);
  detail::put_u32(buf, kCheckpointVersion);
  std::string ptext = prov.serialize();
  detail::put_u32(buf, static_cast<uint32_t>(ptext.size()));
  buf += ptext;

  auto tensors = model.named_tensors();
  detail::put_u32(buf, static_cast<uint32_t>(tensors.size()));
  for (auto& [name, t] : tensors) {
    detail::put_u32(buf, static_cast<uint32_t>(name.size()));
    buf += name;
    buf.push_back(static_cast<char>(detail::dtype_code<S>()));
    buf.push_back(static_cast<char>(t->rank()));
    for (int d : t->dims()) detail::put_u32(buf, static_cast<uint32_t>(d));
    size_t off = buf.size();
    buf.resize(off + t->values().size() * sizeof(S));
    std::memcpy(buf.data() + off, t->values().data(), t->values().size() * sizeof(S));
  }
  detail::put_u32(buf, crc32(buf.data(), buf.size()));

  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + tmp);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename S>
std::pair<MicroResNet<S>, Provenance> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  std::string data = ss.str();

  if (data.size() < 4 || std::memcmp(data.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError(CheckpointFault::bad_magic, path);

  detail::ByteReader r(data, 4);
  uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointFault::version_mismatch,
                          "found version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  uint32_t plen = r.u32("provenance length");
  Provenance prov = Provenance::parse(r.bytes(plen, "provenance"));

  const std::string* widths_s = prov.find("arch.widths");
  const std::string* classes_s = prov.find("arch.num_classes");
  if (!widths_s || !classes_s)
    throw CheckpointError(CheckpointFault::bad_contents, "missing arch keys in provenance");
  std::string want_prec = std::is_same_v<S, float> ? "single" : "double";
  if (prov.get_or("arch.precision", want_prec) != want_prec)
    throw CheckpointError(CheckpointFault::bad_contents,
                          "checkpoint precision is " + prov.get_or("arch.precision", "?") +
                              ", requested " + want_prec);

  MicroResNet<S> model = MicroResNet<S>::build(detail::widths_from_string(*widths_s),
                                               std::stoi(*classes_s), /*seed=*/0);
  model.set_frozen_prefix(std::stoi(prov.get_or("arch.frozen_prefix", "0")));

  auto tensors = model.named_tensors();
  uint32_t count = r.u32("tensor count");
  if (count != tensors.size())
    throw CheckpointError(CheckpointFault::bad_contents,
                          "tensor count " + std::to_string(count) + " != expected " +
                              std::to_string(tensors.size()));
  for (auto& [name, t] : tensors) {
    uint32_t nlen = r.u32("name length");
    std::string fname = r.bytes(nlen, "name");
    if (fname != name)
      throw CheckpointError(CheckpointFault::bad_contents,
                            "tensor '" + fname + "' where '" + name + "' expected");
    uint8_t dtype = r.u8("dtype");
    if (dtype != detail::dtype_code<S>())
      throw CheckpointError(CheckpointFault::bad_contents, "dtype mismatch on " + name);
    uint8_t rank = r.u8("rank");
    if (rank != static_cast<uint8_t>(t->rank()))
      throw CheckpointError(CheckpointFault::bad_contents, "rank mismatch on " + name);
    for (int i = 0; i < rank; ++i) {
      uint32_t d = r.u32("dim");
      if (d != static_cast<uint32_t>(t->dim(i)))
        throw CheckpointError(CheckpointFault::bad_contents, "dim mismatch on " + name);
    }
    const char* raw = r.raw(t->values().size() * sizeof(S), "tensor values");
    std::memcpy(t->values().data(), raw, t->values().size() * sizeof(S));
  }
  if (r.remaining() < 4) throw CheckpointError(CheckpointFault::truncated, "missing CRC32");
  if (r.remaining() > 4)
    throw CheckpointError(CheckpointFault::bad_contents, "trailing bytes after tensors");
  uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, data.data() + data.size() - 4, 4);
  if (crc32(data.data(), data.size() - 4) != stored_crc)
    throw CheckpointError(CheckpointFault::checksum_mismatch, path);
  return {std::move(model), std::move(prov)};
}

}  // namespace advxfer
