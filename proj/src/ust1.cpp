#include "rtseg/ust1.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "rtseg/errors.hpp"

namespace rtseg::ust1 {

namespace {

constexpr char kMagic[4] = {'U', 'S', 'T', '1'};

std::size_t dtype_size(std::uint8_t dtype) {
  switch (dtype) {
    case F32: return 4;
    case U16: return 2;
    case U8: return 1;
    default: throw DataError("ust1: unknown dtype code " + std::to_string(dtype));
  }
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& source) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw DataError("ust1: truncated header in " + source);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::int64_t Record::count() const {
  std::int64_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

void write_record(std::ostream& os, const Record& rec) {
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(rec.dims.size()));
  for (std::uint32_t d : rec.dims) put_u32(os, d);
  os.put(static_cast<char>(rec.dtype));
  os.write(reinterpret_cast<const char*>(rec.payload.data()),
           static_cast<std::streamsize>(rec.payload.size()));
  if (!os) throw DataError("ust1: write failed");
}

Record read_record(std::istream& is, const std::string& source) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("ust1: bad magic in " + source);
  Record rec;
  std::uint32_t rank = get_u32(is, source);
  if (rank > 8) throw DataError("ust1: implausible rank " + std::to_string(rank) + " in " + source);
  rec.dims.resize(rank);
  for (std::uint32_t i = 0; i < rank; ++i) rec.dims[i] = get_u32(is, source);
  int dt = is.get();
  if (dt < 0) throw DataError("ust1: truncated dtype byte in " + source);
  rec.dtype = static_cast<std::uint8_t>(dt);
  const std::size_t bytes = dtype_size(rec.dtype) * static_cast<std::size_t>(rec.count());
  rec.payload.resize(bytes);
  if (!is.read(reinterpret_cast<char*>(rec.payload.data()), static_cast<std::streamsize>(bytes)))
    throw DataError("ust1: truncated payload in " + source + ", expected " +
                    std::to_string(bytes) + " bytes");
  return rec;
}

void write_file(const std::string& path, const Record& rec) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("ust1: cannot open " + path + " for writing");
  write_record(os, rec);
}

Record read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("ust1: cannot open " + path);
  return read_record(is, path);
}

Record from_tensor(const Tensor& t) {
  Record rec;
  rec.dtype = F32;
  for (int d : t.shape()) rec.dims.push_back(static_cast<std::uint32_t>(d));
  rec.payload.resize(4 * static_cast<std::size_t>(t.numel()));
  if (t.scalar_type() == Scalar::F32) {
    std::memcpy(rec.payload.data(), t.data<float>().data(), rec.payload.size());
  } else {
    float* out = reinterpret_cast<float*>(rec.payload.data());
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = static_cast<float>(t.at(i));
  }
  return rec;
}

Tensor to_tensor(const Record& rec, Scalar s) {
  if (rec.dtype != F32) throw DataError("ust1: record is not f32");
  std::vector<int> shape;
  for (std::uint32_t d : rec.dims) shape.push_back(static_cast<int>(d));
  if (shape.empty()) shape = {1};
  Tensor t = Tensor::zeros(shape, s);
  const float* in = reinterpret_cast<const float*>(rec.payload.data());
  if (s == Scalar::F32)
    std::memcpy(t.data<float>().data(), in, rec.payload.size());
  else
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, in[i]);
  return t;
}

Record from_u16(const std::vector<std::uint32_t>& dims, const std::vector<std::uint16_t>& v) {
  Record rec;
  rec.dims = dims;
  rec.dtype = U16;
  rec.payload.resize(2 * v.size());
  std::memcpy(rec.payload.data(), v.data(), rec.payload.size());
  return rec;
}

Record from_u8(const std::vector<std::uint32_t>& dims, const std::vector<std::uint8_t>& v) {
  Record rec;
  rec.dims = dims;
  rec.dtype = U8;
  rec.payload = v;
  return rec;
}

std::vector<std::uint16_t> to_u16(const Record& rec) {
  if (rec.dtype != U16) throw DataError("ust1: record is not u16");
  std::vector<std::uint16_t> v(rec.payload.size() / 2);
  std::memcpy(v.data(), rec.payload.data(), rec.payload.size());
  return v;
}

std::vector<std::uint8_t> to_u8(const Record& rec) {
  if (rec.dtype != U8) throw DataError("ust1: record is not u8");
  return rec.payload;
}

}  // namespace rtseg::ust1
