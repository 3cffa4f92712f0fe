#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vamp/tensor.hpp"

// Versioned little-endian container shared by dataset and checkpoint files:
//
//   "VAMP" | u32 version | u64 len + config text |
//   u64 count | { u64 len + name | u64 rank | u64 dims[rank] | f32 payload }*
//
// Checkpoints append an rng block (u64 count + u64 words) and a prototype
// block (u64 classes, u64 width, { u64 support + f32 values[width] }*).
namespace vamp {

inline constexpr char kMagic[4] = {'V', 'A', 'M', 'P'};
inline constexpr std::uint32_t kFormatVersion = 1;

class FormatError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kVersion, kTruncated, kIo, kSchema };
  FormatError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct PrototypeBlock {
  std::vector<std::uint64_t> support;
  std::vector<std::vector<double>> vectors;
};

struct ContainerContents {
  std::uint32_t version = kFormatVersion;
  std::string config_text;
  std::vector<NamedTensor> tensors;
  bool has_trailer = false;  // rng + prototype blocks present
  std::vector<std::uint64_t> rng_state;
  PrototypeBlock prototypes;

  const Tensor& find(const std::string& name) const;
};

std::string encode_container(const ContainerContents& contents);
ContainerContents decode_container(const std::string& bytes, bool expect_trailer);

void write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

// Values are stored as float32; this is the rounding applied on save.
inline double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }
void round_tensor_f32(Tensor& t);

}  // namespace vamp
