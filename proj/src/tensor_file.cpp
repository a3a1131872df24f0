#include "rvd/tensor_file.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "rvd/errors.hpp"

namespace rvd::io {
namespace {

constexpr char kMagic[4] = {'R', 'V', 'T', 'F'};
constexpr uint8_t kKindSingle = 0;
constexpr uint8_t kKindDirectory = 1;
constexpr uint8_t kDtypeF32 = 0;
constexpr int64_t kMaxElems = int64_t(1) << 33;  // 32 GiB of f32, far beyond use

void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_payload(std::string& buf, const TensorF& t) {
  // Serialize explicitly as little-endian f32 regardless of host order.
  const float* d = t.data();
  const size_t start = buf.size();
  buf.resize(start + static_cast<size_t>(t.numel()) * 4);
  char* p = buf.data() + start;
  for (int64_t i = 0; i < t.numel(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, &d[i], 4);
    p[4 * i + 0] = static_cast<char>(bits & 0xff);
    p[4 * i + 1] = static_cast<char>((bits >> 8) & 0xff);
    p[4 * i + 2] = static_cast<char>((bits >> 16) & 0xff);
    p[4 * i + 3] = static_cast<char>((bits >> 24) & 0xff);
  }
}

void put_tensor(std::string& buf, const TensorF& t) {
  if (t.rank() > 255) throw IoError(IoErrorCode::kDimOverflow, "rank > 255");
  buf.push_back(static_cast<char>(t.rank()));
  for (int64_t d : t.shape()) {
    if (d < 0 || d > std::numeric_limits<uint32_t>::max())
      throw IoError(IoErrorCode::kDimOverflow, "dim " + std::to_string(d));
    put_u32(buf, static_cast<uint32_t>(d));
  }
  put_payload(buf, t);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(bytes_[pos_++]);
  }
  uint16_t u16() {
    need(2);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 2;
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
  }
  uint32_t u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 4;
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }

  std::string str(size_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  void header(uint8_t expected_kind) {
    need(4);
    if (std::memcmp(bytes_.data(), kMagic, 4) != 0)
      throw IoError(IoErrorCode::kBadMagic, path_ + ": not a tensor file");
    pos_ = 4;
    const uint16_t version = u16();
    if (version != kTensorFileVersion)
      throw IoError(IoErrorCode::kBadVersion,
                    path_ + ": unsupported version " + std::to_string(version));
    const uint8_t kind = u8();
    if (kind != expected_kind)
      throw IoError(IoErrorCode::kBadRecord,
                    path_ + ": expected " +
                        std::string(expected_kind == kKindSingle ? "single-tensor"
                                                                 : "directory") +
                        " file");
    const uint8_t dtype = u8();
    if (dtype != kDtypeF32)
      throw IoError(IoErrorCode::kBadRecord,
                    path_ + ": unsupported dtype tag " + std::to_string(dtype));
  }

  TensorF tensor() {
    const uint8_t rank = u8();
    Shape shape(rank);
    int64_t elems = 1;
    for (int i = 0; i < rank; ++i) {
      shape[i] = u32();
      if (shape[i] == 0 || elems > kMaxElems / std::max<int64_t>(shape[i], 1))
        throw IoError(IoErrorCode::kDimOverflow, path_ + ": implausible dims");
      elems *= shape[i];
    }
    need(static_cast<size_t>(elems) * 4);
    TensorF t(shape);
    float* d = t.mut_data();
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    for (int64_t i = 0; i < elems; ++i) {
      const uint32_t bits = static_cast<uint32_t>(p[4 * i]) |
                            (static_cast<uint32_t>(p[4 * i + 1]) << 8) |
                            (static_cast<uint32_t>(p[4 * i + 2]) << 16) |
                            (static_cast<uint32_t>(p[4 * i + 3]) << 24);
      std::memcpy(&d[i], &bits, 4);
    }
    pos_ += static_cast<size_t>(elems) * 4;
    return t;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) {
    if (bytes_.size() - pos_ < n)
      throw IoError(IoErrorCode::kTruncated, path_ + ": truncated file");
  }

  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoErrorCode::kOpenFailed, "write failed for " + path);
}

std::string file_header(uint8_t kind) {
  std::string buf(kMagic, 4);
  put_u16(buf, kTensorFileVersion);
  buf.push_back(static_cast<char>(kind));
  buf.push_back(static_cast<char>(kDtypeF32));
  return buf;
}

}  // namespace

void write_tensor(const std::string& path, const TensorF& t) {
  std::string buf = file_header(kKindSingle);
  put_tensor(buf, t);
  spit(path, buf);
}

TensorF read_tensor(const std::string& path) {
  Reader r(slurp(path), path);
  r.header(kKindSingle);
  TensorF t = r.tensor();
  if (!r.at_end())
    throw IoError(IoErrorCode::kBadRecord, path + ": trailing bytes");
  return t;
}

void write_tensor_map(const std::string& path, const NamedTensors& tensors) {
  std::string buf = file_header(kKindDirectory);
  if (tensors.size() > std::numeric_limits<uint32_t>::max())
    throw IoError(IoErrorCode::kDimOverflow, "too many tensors");
  put_u32(buf, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<uint16_t>::max())
      throw IoError(IoErrorCode::kBadRecord, "tensor name too long: " + name);
    put_u16(buf, static_cast<uint16_t>(name.size()));
    buf += name;
    put_tensor(buf, t);
  }
  spit(path, buf);
}

NamedTensors read_tensor_map(const std::string& path) {
  Reader r(slurp(path), path);
  r.header(kKindDirectory);
  const uint32_t count = r.u32();
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    std::string name = r.str(name_len);
    out.emplace_back(std::move(name), r.tensor());
  }
  if (!r.at_end())
    throw IoError(IoErrorCode::kBadRecord, path + ": trailing bytes");
  return out;
}

const TensorF& find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IoError(IoErrorCode::kBadRecord, "missing tensor '" + name + "'");
}

bool has_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

}  // namespace rvd::io
