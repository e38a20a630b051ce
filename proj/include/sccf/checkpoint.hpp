#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "sccf/tensor.hpp"

namespace sccf {

// Binary tensor container: magic "SCCF", u32 format version, then per tensor
// u32 name length + UTF-8 name + u32 rank + u32 dims[] + little-endian f32
// payload, and a trailing u64 step counter. The tensor list has no count
// field; readers stop when exactly 8 bytes remain in the section.
inline constexpr uint32_t kContainerVersion = 1;

void write_container(std::ostream& out, const std::map<std::string, Tensor>& tensors, uint64_t step);

// Reads a container occupying the next `section_bytes` bytes of the stream
// (pass the remaining file size when the container runs to EOF).
void read_container(std::istream& in, uint64_t section_bytes, std::map<std::string, Tensor>& tensors,
                    uint64_t& step);

// Checkpoint files are a single container holding the parameter entries plus
// optimizer state under names suffixed ".m"/".v".
void save_checkpoint(const std::string& path, const ParameterStore& store);
ParameterStore load_checkpoint(const std::string& path);

uint64_t file_size_bytes(const std::string& path);

}  // namespace sccf
