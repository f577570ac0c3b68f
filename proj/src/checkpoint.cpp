#include "segres/checkpoint.hpp"

#include <cstring>

namespace segres::bin {

namespace {

template <typename T>
void write_raw(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint stream truncated");
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_raw(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_raw(os, v); }
void write_i64(std::ostream& os, std::int64_t v) { write_raw(os, v); }
void write_f64(std::ostream& os, double v) { write_raw(os, v); }

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}

std::uint32_t read_u32(std::istream& is) { return read_raw<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_raw<std::uint64_t>(is); }
std::int64_t read_i64(std::istream& is) { return read_raw<std::int64_t>(is); }
double read_f64(std::istream& is) { return read_raw<double>(is); }

std::string read_string(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  if (!is) throw IoError("checkpoint stream truncated in string");
  return s;
}

void write_tensor(std::ostream& os, const Tensor<float>& t) {
  write_u32(os, std::uint32_t(t.n));
  write_u32(os, std::uint32_t(t.c));
  write_u32(os, std::uint32_t(t.h));
  write_u32(os, std::uint32_t(t.w));
  os.write(reinterpret_cast<const char*>(t.data.data()),
           std::streamsize(t.size() * std::int64_t(sizeof(float))));
}

Tensor<float> read_tensor(std::istream& is) {
  const int n = int(read_u32(is));
  const int c = int(read_u32(is));
  const int h = int(read_u32(is));
  const int w = int(read_u32(is));
  Tensor<float> t(n, c, h, w);
  is.read(reinterpret_cast<char*>(t.data.data()),
          std::streamsize(t.size() * std::int64_t(sizeof(float))));
  if (!is) throw IoError("checkpoint stream truncated in tensor");
  return t;
}

void write_params(std::ostream& os, const std::vector<Param<float>*>& params) {
  write_u64(os, params.size());
  for (const auto* p : params) write_tensor(os, p->value);
}

void read_params(std::istream& is, const std::vector<Param<float>*>& params) {
  const std::uint64_t n = read_u64(is);
  if (n != params.size())
    throw IoError("checkpoint parameter count mismatch: file has " + std::to_string(n) +
                  ", model has " + std::to_string(params.size()));
  for (auto* p : params) {
    Tensor<float> t = read_tensor(is);
    if (!t.same_shape(p->value))
      throw IoError("checkpoint parameter shape mismatch: " + t.shape_str() + " vs " +
                    p->value.shape_str());
    p->value = std::move(t);
  }
}

}  // namespace segres::bin
