#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "freqclick/autograd.h"

namespace freqclick {

// On-disk layout:
//
//   freqclick-checkpoint 1
//   meta <key>=<value>                         (any number)
//   param name=<n> dtype=<d> shape=<a,b,..> offset=<o> length=<l>
//   blob length=<total>
//   end
//   <total raw little-endian bytes>
//
// Complex parameters are written with a complex dtype and their complex
// shape (the trailing interleave axis of 2 is dropped).
struct CheckpointEntry {
  std::string name;
  DType dtype = DType::kReal32;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<CheckpointEntry> entries;
  std::vector<std::uint8_t> blob;

  const CheckpointEntry* find(const std::string& name) const;
};

template <typename T>
Checkpoint make_checkpoint(const ParamSet<T>& params, std::map<std::string, std::string> meta = {});

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
std::string serialize_checkpoint(const Checkpoint& ckpt);

// Throws FormatError on malformed headers or any byte-length inconsistency.
Checkpoint read_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(const std::string& bytes);

// Copy values into same-named parameters, converting between real-32 and
// real-64 as needed. Every parameter in `params` must be present with a
// matching shape.
template <typename T>
void load_parameters(const Checkpoint& ckpt, ParamSet<T>& params);

}  // namespace freqclick
