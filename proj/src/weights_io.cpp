#include "prl/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

namespace prl {
namespace {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw IoError("weights: truncated at byte " + std::to_string(pos_) + " (need " +
                    std::to_string(n) + " more)");
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_weights(const std::vector<NamedTensor>& entries) {
  std::vector<std::uint8_t> out{'P', 'R', 'L', 'W'};
  put_u32(out, kWeightsVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  std::set<std::string> seen;
  for (const NamedTensor& e : entries) {
    if (!seen.insert(e.name).second) throw IoError("weights: duplicate entry name " + e.name);
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw IoError("weights: name too long: " + e.name.substr(0, 32) + "...");
    }
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    const Shape& s = e.value.shape();
    put_u8(out, static_cast<std::uint8_t>(s.rank()));
    for (int i = 0; i < s.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(s[i]));
    for (float f : e.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

std::vector<NamedTensor> decode_weights(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4);
  if (std::memcmp(magic, "PRLW", 4) != 0) throw IoError("weights: bad magic (expected PRLW)");
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion) {
    throw IoError("weights: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> entries;
  entries.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t len = r.u16();
    const auto* name = r.take(len);
    NamedTensor e;
    e.name.assign(reinterpret_cast<const char*>(name), len);
    const int rank = r.u8();
    if (rank > Shape::kMaxRank) throw IoError("weights: entry " + e.name + " has rank > 4");
    std::vector<int> ext(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32();
      if (d == 0 || d > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
        throw IoError("weights: entry " + e.name + " has invalid extent " + std::to_string(d));
      }
      ext[static_cast<std::size_t>(i)] = static_cast<int>(d);
    }
    const Shape shape{std::span<const int>(ext)};
    std::vector<float> data(shape.numel());
    for (float& f : data) f = std::bit_cast<float>(r.u32());
    e.value = Tensor(shape, std::move(data));
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw IoError("weights: trailing bytes after entry " + std::to_string(count));
  return entries;
}

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  const auto bytes = encode_weights(entries);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

}  // namespace prl
