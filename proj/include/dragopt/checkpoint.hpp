#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dragopt::checkpoint {

enum class DType { kF32, kF64 };

struct Tensor {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::int64_t> shape;
  std::vector<float> f32;
  std::vector<double> f64;

  std::size_t numel() const;
};

// Text manifest ("name dtype shape byte_offset" per tensor, optional
// "# key=value" attribute lines), the line "DATA", then the little-endian
// payload in manifest order.
struct Container {
  std::map<std::string, std::string> attributes;
  std::vector<Tensor> tensors;

  const Tensor& get(const std::string& name) const;
  void add_f32(std::string name, std::vector<std::int64_t> shape, std::vector<float> data);
  void add_f64(std::string name, std::vector<std::int64_t> shape, std::vector<double> data);
};

void write(const std::filesystem::path& path, const Container& container);
Container read(const std::filesystem::path& path);

}  // namespace dragopt::checkpoint
