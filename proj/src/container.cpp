#include "vamp/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vamp {

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string get_string(std::uint64_t len, const char* what) {
    need(len, what);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw FormatError(FormatError::Kind::kTruncated, std::string("truncated file while reading ") + what);
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& ContainerContents::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw FormatError(FormatError::Kind::kSchema, "missing tensor '" + name + "'");
}

std::string encode_container(const ContainerContents& c) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, c.version);
  put_le<std::uint64_t>(out, c.config_text.size());
  out += c.config_text;
  put_le<std::uint64_t>(out, c.tensors.size());
  for (const auto& nt : c.tensors) {
    put_le<std::uint64_t>(out, nt.name.size());
    out += nt.name;
    put_le<std::uint64_t>(out, nt.tensor.rank());
    for (auto dim : nt.tensor.shape()) put_le<std::uint64_t>(out, dim);
    for (double v : nt.tensor.data()) put_le<float>(out, static_cast<float>(v));
  }
  if (c.has_trailer) {
    put_le<std::uint64_t>(out, c.rng_state.size());
    for (auto w : c.rng_state) put_le<std::uint64_t>(out, w);
    const auto& p = c.prototypes;
    const std::uint64_t width = p.vectors.empty() ? 0 : p.vectors.front().size();
    put_le<std::uint64_t>(out, p.vectors.size());
    put_le<std::uint64_t>(out, width);
    for (std::size_t i = 0; i < p.vectors.size(); ++i) {
      put_le<std::uint64_t>(out, p.support[i]);
      for (double v : p.vectors[i]) put_le<float>(out, static_cast<float>(v));
    }
  }
  return out;
}

ContainerContents decode_container(const std::string& bytes, bool expect_trailer) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(FormatError::Kind::kBadMagic, "not a VAMP container (bad magic bytes)");
  }
  Reader r(bytes);
  r.get_string(sizeof(kMagic), "magic");
  ContainerContents c;
  c.version = r.get<std::uint32_t>("version");
  if (c.version != kFormatVersion) {
    throw FormatError(FormatError::Kind::kVersion, "unsupported format version " + std::to_string(c.version) +
                                                       " (expected " + std::to_string(kFormatVersion) + ")");
  }
  c.config_text = r.get_string(r.get<std::uint64_t>("config length"), "config text");
  const auto count = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.get_string(r.get<std::uint64_t>("name length"), "tensor name");
    const auto rank = r.get<std::uint64_t>("rank");
    if (rank > 8) throw FormatError(FormatError::Kind::kSchema, "implausible rank for " + nt.name);
    Shape shape;
    for (std::uint64_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint64_t>("dims"));
    const std::size_t n = shape_numel(shape);
    if (n > bytes.size()) throw FormatError(FormatError::Kind::kTruncated, "truncated payload for " + nt.name);
    std::vector<double> values(n);
    for (auto& v : values) v = static_cast<double>(r.get<float>("tensor payload"));
    nt.tensor = Tensor(std::move(shape), std::move(values));
    c.tensors.push_back(std::move(nt));
  }
  if (expect_trailer) {
    c.has_trailer = true;
    const auto words = r.get<std::uint64_t>("rng state length");
    for (std::uint64_t i = 0; i < words; ++i) c.rng_state.push_back(r.get<std::uint64_t>("rng state"));
    const auto classes = r.get<std::uint64_t>("prototype count");
    const auto width = r.get<std::uint64_t>("prototype width");
    for (std::uint64_t i = 0; i < classes; ++i) {
      c.prototypes.support.push_back(r.get<std::uint64_t>("prototype support"));
      std::vector<double> v(width);
      for (auto& x : v) x = static_cast<double>(r.get<float>("prototype values"));
      c.prototypes.vectors.push_back(std::move(v));
    }
  }
  if (!r.at_end()) throw FormatError(FormatError::Kind::kSchema, "trailing bytes after container");
  return c;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::kIo, "failed writing " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void round_tensor_f32(Tensor& t) {
  for (double& v : t.mutable_data()) v = round_f32(v);
}

}  // namespace vamp
