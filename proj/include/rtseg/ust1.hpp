#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rtseg/tensor.hpp"

// "UST1" binary tensor records, little-endian throughout:
//   magic "UST1" | u32 rank | rank x u32 dims | u8 dtype | raw row-major payload
// dtype codes: 0 = f32, 1 = u16, 2 = u8.

namespace rtseg::ust1 {

enum Dtype : std::uint8_t { F32 = 0, U16 = 1, U8 = 2 };

struct Record {
  std::vector<std::uint32_t> dims;
  std::uint8_t dtype = F32;
  std::vector<unsigned char> payload;

  std::int64_t count() const;
};

void write_record(std::ostream& os, const Record& rec);
// `source` names the stream in error messages (typically the file path).
Record read_record(std::istream& is, const std::string& source);

void write_file(const std::string& path, const Record& rec);
Record read_file(const std::string& path);

Record from_tensor(const Tensor& t);              // f32 record (f64 is downcast)
Tensor to_tensor(const Record& rec, Scalar s = Scalar::F32);

Record from_u16(const std::vector<std::uint32_t>& dims, const std::vector<std::uint16_t>& v);
Record from_u8(const std::vector<std::uint32_t>& dims, const std::vector<std::uint8_t>& v);
std::vector<std::uint16_t> to_u16(const Record& rec);
std::vector<std::uint8_t> to_u8(const Record& rec);

}  // namespace rtseg::ust1
