#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace mdood {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2 };

const char* to_string(DType dtype);
std::size_t element_size(DType dtype);

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxTensorRank = 5;

// Number of elements described by `shape`; throws ValidationError on
// overflow.
std::size_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major tensor of f32, f64 or u8 elements.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values);
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, std::vector<std::uint8_t> values);

  static Tensor zeros(DType dtype, Shape shape);

  DType dtype() const;
  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const;
  std::size_t byte_size() const { return size() * element_size(dtype()); }

  // Typed element access; throws ValidationError when T does not match
  // dtype().
  template <typename T>
  std::span<const T> values() const;
  template <typename T>
  std::span<T> values();

  // Raw little-endian bytes of the element buffer.
  std::span<const std::byte> bytes() const;

  // Copy of the elements widened to f64.
  std::vector<double> to_f64() const;

  // Bytewise equality of dtype, shape and element data.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  void validate() const;

  Shape shape_;
  std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint8_t>> data_;
};

// Binary exchange format (all integers little-endian, no padding):
//   "MHT1" | dtype u8 | ndim u8 | ndim x u64 extents | raw element data
void write_tensor(const Tensor& tensor, const std::filesystem::path& path);
void write_tensor(const Tensor& tensor, std::ostream& out);

Tensor read_tensor(const std::filesystem::path& path);

// Writes only the header of a record; the caller streams exactly
// element_count(shape) elements of `dtype` afterwards.
void write_tensor_header(std::ostream& out, DType dtype, const Shape& shape);

// Size in bytes of a record header for a tensor of rank `ndim`.
constexpr std::uint64_t tensor_header_size(std::size_t ndim) { return 4 + 1 + 1 + 8 * ndim; }

// Reads one tensor record from `in`. `base_offset` is the position of the
// record inside the enclosing file and is only used in error messages;
// `limit` bounds the number of bytes the record may occupy.
Tensor read_tensor(std::istream& in, std::uint64_t base_offset, std::uint64_t limit);

}  // namespace mdood
