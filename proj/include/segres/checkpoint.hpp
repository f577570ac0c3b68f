#pragma once

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "segres/layers.hpp"

namespace segres {

// Little-endian binary primitives for checkpoint/segmenter files. Writes are
// deterministic so save -> load -> save round-trips byte-identically.
namespace bin {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_i64(std::ostream& os, std::int64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);

std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
std::int64_t read_i64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);

void write_tensor(std::ostream& os, const Tensor<float>& t);
Tensor<float> read_tensor(std::istream& is);

// Values only; shapes must already match the constructed layers.
void write_params(std::ostream& os, const std::vector<Param<float>*>& params);
void read_params(std::istream& is, const std::vector<Param<float>*>& params);

}  // namespace bin

}  // namespace segres
