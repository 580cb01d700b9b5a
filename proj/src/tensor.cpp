#include "mdood/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "mdood/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "the exchange format is little-endian and byte swapping is not implemented");

namespace mdood {

int exit_code_for(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kIo:
      return 2;
    case ErrorCategory::kValidation:
      return 3;
    case ErrorCategory::kNumeric:
      return 4;
  }
  return 1;
}

const char* to_string(ParseError::Kind kind) {
  switch (kind) {
    case ParseError::Kind::kBadMagic:
      return "BadMagic";
    case ParseError::Kind::kUnknownDtype:
      return "UnknownDtype";
    case ParseError::Kind::kBadShape:
      return "BadShape";
    case ParseError::Kind::kTruncatedHeader:
      return "TruncatedHeader";
    case ParseError::Kind::kTruncatedData:
      return "TruncatedData";
    case ParseError::Kind::kTrailingBytes:
      return "TrailingBytes";
    case ParseError::Kind::kVersionMismatch:
      return "VersionMismatch";
  }
  return "Unknown";
}

ParseError::ParseError(Kind kind, std::uint64_t offset, const std::string& detail)
    : ValidationError(std::string(to_string(kind)) + " at byte " + std::to_string(offset) +
                      (detail.empty() ? "" : ": " + detail)),
      kind_(kind),
      offset_(offset),
      detail_(detail) {}

const char* to_string(DType dtype) {
  switch (dtype) {
    case DType::kF32:
      return "f32";
    case DType::kF64:
      return "f64";
    case DType::kU8:
      return "u8";
  }
  return "?";
}

std::size_t element_size(DType dtype) {
  switch (dtype) {
    case DType::kF32:
      return 4;
    case DType::kF64:
      return 8;
    case DType::kU8:
      return 1;
  }
  return 0;
}

std::size_t element_count(const Shape& shape) {
  std::size_t count = 1;
  for (std::size_t extent : shape) {
    if (extent != 0 && count > std::numeric_limits<std::size_t>::max() / extent) {
      throw ValidationError("tensor shape " + shape_to_string(shape) + " overflows size_t");
    }
    count *= extent;
  }
  return count;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  validate();
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  validate();
}

Tensor::Tensor(Shape shape, std::vector<std::uint8_t> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  validate();
}

Tensor Tensor::zeros(DType dtype, Shape shape) {
  const std::size_t n = element_count(shape);
  switch (dtype) {
    case DType::kF32:
      return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
    case DType::kF64:
      return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    case DType::kU8:
      return Tensor(std::move(shape), std::vector<std::uint8_t>(n, 0));
  }
  throw ValidationError("unknown dtype");
}

void Tensor::validate() const {
  if (shape_.empty() || shape_.size() > kMaxTensorRank) {
    throw ValidationError("tensor rank must be in [1, 5], got " + std::to_string(shape_.size()));
  }
  for (std::size_t extent : shape_) {
    if (extent == 0) {
      throw ValidationError("tensor extents must be >= 1, got " + shape_to_string(shape_));
    }
  }
  const std::size_t expected = element_count(shape_);
  const std::size_t actual = std::visit([](const auto& v) { return v.size(); }, data_);
  if (expected != actual) {
    throw ValidationError("tensor shape " + shape_to_string(shape_) + " needs " +
                          std::to_string(expected) + " elements, buffer has " +
                          std::to_string(actual));
  }
}

DType Tensor::dtype() const { return static_cast<DType>(data_.index()); }

std::size_t Tensor::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

namespace {

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::kF32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::kF64;
}
template <>
constexpr DType dtype_of<std::uint8_t>() {
  return DType::kU8;
}

}  // namespace

template <typename T>
std::span<const T> Tensor::values() const {
  if (const auto* v = std::get_if<std::vector<T>>(&data_)) return {v->data(), v->size()};
  throw ValidationError(std::string("tensor holds ") + to_string(dtype()) + ", requested " +
                        to_string(dtype_of<T>()));
}

template <typename T>
std::span<T> Tensor::values() {
  if (auto* v = std::get_if<std::vector<T>>(&data_)) return {v->data(), v->size()};
  throw ValidationError(std::string("tensor holds ") + to_string(dtype()) + ", requested " +
                        to_string(dtype_of<T>()));
}

template std::span<const float> Tensor::values<float>() const;
template std::span<const double> Tensor::values<double>() const;
template std::span<const std::uint8_t> Tensor::values<std::uint8_t>() const;
template std::span<float> Tensor::values<float>();
template std::span<double> Tensor::values<double>();
template std::span<std::uint8_t> Tensor::values<std::uint8_t>();

std::span<const std::byte> Tensor::bytes() const {
  return std::visit(
      [](const auto& v) { return std::as_bytes(std::span(v.data(), v.size())); }, data_);
}

std::vector<double> Tensor::to_f64() const {
  return std::visit(
      [](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype() || a.shape_ != b.shape_) return false;
  const auto ab = a.bytes();
  const auto bb = b.bytes();
  return ab.size() == bb.size() && std::equal(ab.begin(), ab.end(), bb.begin());
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'H', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> buf;
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf.data(), buf.size());
}

// Bounded reader that tracks its position relative to the enclosing file.
class RecordReader {
 public:
  RecordReader(std::istream& in, std::uint64_t base, std::uint64_t limit)
      : in_(in), base_(base), limit_(limit) {}

  std::uint64_t offset() const { return base_ + consumed_; }

  // Reads exactly `n` bytes or throws `kind` at the first missing byte.
  void read(char* dst, std::uint64_t n, ParseError::Kind kind) {
    const std::uint64_t available = limit_ - consumed_;
    if (n > available) {
      // Consume what is there so the error offset is the first missing byte.
      std::uint64_t got = 0;
      if (available > 0) {
        in_.read(dst, static_cast<std::streamsize>(available));
        got = static_cast<std::uint64_t>(in_.gcount());
      }
      throw ParseError(kind, base_ + consumed_ + got,
                       "needed " + std::to_string(n) + " bytes, " +
                           std::to_string(available) + " remain");
    }
    in_.read(dst, static_cast<std::streamsize>(n));
    const auto got = static_cast<std::uint64_t>(in_.gcount());
    if (got != n) {
      throw ParseError(kind, base_ + consumed_ + got, "unexpected end of stream");
    }
    consumed_ += n;
  }

  std::uint8_t u8(ParseError::Kind kind) {
    char c;
    read(&c, 1, kind);
    return static_cast<std::uint8_t>(c);
  }

  std::uint64_t u64(ParseError::Kind kind) {
    std::array<unsigned char, 8> buf;
    read(reinterpret_cast<char*>(buf.data()), 8, kind);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
  }

  std::uint64_t remaining() const { return limit_ - consumed_; }

 private:
  std::istream& in_;
  std::uint64_t base_;
  std::uint64_t limit_;
  std::uint64_t consumed_ = 0;
};

template <typename T>
Tensor read_payload(RecordReader& reader, Shape shape, std::size_t count) {
  std::vector<T> values(count);
  reader.read(reinterpret_cast<char*>(values.data()), count * sizeof(T),
              ParseError::Kind::kTruncatedData);
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace

void write_tensor_header(std::ostream& out, DType dtype, const Shape& shape) {
  out.write(kMagic.data(), kMagic.size());
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(shape.size()));
  for (std::size_t extent : shape) put_u64(out, extent);
}

void write_tensor(const Tensor& tensor, std::ostream& out) {
  write_tensor_header(out, tensor.dtype(), tensor.shape());
  const auto bytes = tensor.bytes();
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void write_tensor(const Tensor& tensor, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_tensor(tensor, out);
  out.flush();
  if (!out) throw IoError("failed writing tensor to '" + path.string() + "'");
}

Tensor read_tensor(std::istream& in, std::uint64_t base_offset, std::uint64_t limit) {
  RecordReader reader(in, base_offset, limit);

  std::array<char, 4> magic;
  reader.read(magic.data(), magic.size(), ParseError::Kind::kTruncatedHeader);
  if (magic != kMagic) {
    throw ParseError(ParseError::Kind::kBadMagic, base_offset,
                     "expected \"MHT1\", found \"" + std::string(magic.data(), 4) + "\"");
  }

  const std::uint64_t dtype_offset = reader.offset();
  const std::uint8_t dtype_code = reader.u8(ParseError::Kind::kTruncatedHeader);
  if (dtype_code > static_cast<std::uint8_t>(DType::kU8)) {
    throw ParseError(ParseError::Kind::kUnknownDtype, dtype_offset,
                     "dtype code " + std::to_string(dtype_code));
  }
  const auto dtype = static_cast<DType>(dtype_code);

  const std::uint64_t ndim_offset = reader.offset();
  const std::uint8_t ndim = reader.u8(ParseError::Kind::kTruncatedHeader);
  if (ndim < 1 || ndim > kMaxTensorRank) {
    throw ParseError(ParseError::Kind::kBadShape, ndim_offset,
                     "ndim " + std::to_string(ndim) + " outside [1, 5]");
  }

  Shape shape(ndim);
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint64_t extent_offset = reader.offset();
    const std::uint64_t extent = reader.u64(ParseError::Kind::kTruncatedHeader);
    if (extent == 0) {
      throw ParseError(ParseError::Kind::kBadShape, extent_offset,
                       "zero extent on axis " + std::to_string(i));
    }
    if (count > std::numeric_limits<std::uint64_t>::max() / extent) {
      throw ParseError(ParseError::Kind::kBadShape, extent_offset, "element count overflows");
    }
    count *= extent;
    shape[i] = static_cast<std::size_t>(extent);
  }

  // Refuse to allocate for payloads the record cannot contain.
  const std::uint64_t esize = element_size(dtype);
  if (count > reader.remaining() / esize) {
    in.seekg(0, std::ios::end);
    throw ParseError(ParseError::Kind::kTruncatedData, reader.offset() + reader.remaining(),
                     "payload needs " + std::to_string(count) + " x " + std::to_string(esize) +
                         " bytes, " + std::to_string(reader.remaining()) + " remain");
  }

  const auto n = static_cast<std::size_t>(count);
  switch (dtype) {
    case DType::kF32:
      return read_payload<float>(reader, std::move(shape), n);
    case DType::kF64:
      return read_payload<double>(reader, std::move(shape), n);
    case DType::kU8:
      return read_payload<std::uint8_t>(reader, std::move(shape), n);
  }
  throw ParseError(ParseError::Kind::kUnknownDtype, dtype_offset, "");
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  try {
    Tensor t = read_tensor(in, 0, size);
    const std::uint64_t used = tensor_header_size(t.ndim()) + t.byte_size();
    if (used != size) {
      throw ParseError(ParseError::Kind::kTrailingBytes, used,
                       std::to_string(size - used) + " unexpected bytes after payload");
    }
    return t;
  } catch (const ParseError& e) {
    throw ParseError(e.kind(), e.offset(), e.detail() + " (in '" + path.string() + "')");
  }
}

}  // namespace mdood
