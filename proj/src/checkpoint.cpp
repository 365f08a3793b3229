#include "dragopt/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dragopt/error.hpp"

namespace dragopt::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

std::size_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::int64_t b) { return a * static_cast<std::size_t>(b); });
}

const Tensor& Container::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw Error(ErrorCode::kFormat, "checkpoint has no tensor '" + name + "'");
}

void Container::add_f32(std::string name, std::vector<std::int64_t> shape, std::vector<float> data) {
  Tensor t{std::move(name), DType::kF32, std::move(shape), std::move(data), {}};
  if (t.numel() != t.f32.size()) throw Error(ErrorCode::kInvalidArgument, "shape/data mismatch for " + t.name);
  tensors.push_back(std::move(t));
}

void Container::add_f64(std::string name, std::vector<std::int64_t> shape, std::vector<double> data) {
  Tensor t{std::move(name), DType::kF64, std::move(shape), {}, std::move(data)};
  if (t.numel() != t.f64.size()) throw Error(ErrorCode::kInvalidArgument, "shape/data mismatch for " + t.name);
  tensors.push_back(std::move(t));
}

void write(const std::filesystem::path& path, const Container& container) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& [key, value] : container.attributes) out << "# " << key << '=' << value << '\n';
  std::size_t offset = 0;
  for (const auto& t : container.tensors) {
    if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "tensor names must be non-empty and whitespace-free");
    }
    out << t.name << ' ' << (t.dtype == DType::kF32 ? "f32" : "f64") << ' ';
    for (std::size_t k = 0; k < t.shape.size(); ++k) out << (k ? "," : "") << t.shape[k];
    out << ' ' << offset << '\n';
    offset += t.numel() * (t.dtype == DType::kF32 ? 4 : 8);
  }
  out << "DATA\n";
  for (const auto& t : container.tensors) {
    if (t.dtype == DType::kF32) {
      out.write(reinterpret_cast<const char*>(t.f32.data()), static_cast<std::streamsize>(t.f32.size() * 4));
    } else {
      out.write(reinterpret_cast<const char*>(t.f64.data()), static_cast<std::streamsize>(t.f64.size() * 8));
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

Container read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  Container c;
  std::vector<std::size_t> offsets;
  std::string line;
  bool saw_data = false;
  while (std::getline(in, line)) {
    if (line == "DATA") {
      saw_data = true;
      break;
    }
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::kFormat, "bad attribute line: " + line);
      c.attributes[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    std::istringstream ls(line);
    Tensor t;
    std::string dtype;
    std::string shape;
    std::size_t offset = 0;
    if (!(ls >> t.name >> dtype >> shape >> offset)) throw Error(ErrorCode::kFormat, "bad manifest line: " + line);
    if (dtype == "f32") {
      t.dtype = DType::kF32;
    } else if (dtype == "f64") {
      t.dtype = DType::kF64;
    } else {
      throw Error(ErrorCode::kFormat, "unknown dtype " + dtype);
    }
    std::istringstream ss(shape);
    std::string dim;
    while (std::getline(ss, dim, ',')) t.shape.push_back(std::stoll(dim));
    offsets.push_back(offset);
    c.tensors.push_back(std::move(t));
  }
  if (!saw_data) throw Error(ErrorCode::kFormat, "missing DATA marker in " + path.string());
  std::size_t expected = 0;
  for (std::size_t k = 0; k < c.tensors.size(); ++k) {
    auto& t = c.tensors[k];
    if (offsets[k] != expected) throw Error(ErrorCode::kFormat, "non-contiguous offset for " + t.name);
    const std::size_t n = t.numel();
    if (t.dtype == DType::kF32) {
      t.f32.resize(n);
      in.read(reinterpret_cast<char*>(t.f32.data()), static_cast<std::streamsize>(n * 4));
      expected += n * 4;
    } else {
      t.f64.resize(n);
      in.read(reinterpret_cast<char*>(t.f64.data()), static_cast<std::streamsize>(n * 8));
      expected += n * 8;
    }
    if (!in) throw Error(ErrorCode::kFormat, "truncated payload for " + t.name);
  }
  return c;
}

}  // namespace dragopt::checkpoint
