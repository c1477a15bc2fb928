// comsl/checkpoint.h

// Copyright 2026  comsl authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Binary checkpoint archive.  Layout (little-endian):
//   "CMSL" | u32 version | u32 array count
//   per array: u32 name length | name | u32 dtype (0 = f32, 1 = f64) |
//              u32 rank | u32 dims[rank] | raw values
//   u32 text length | config text

#ifndef COMSL_CHECKPOINT_H_
#define COMSL_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace comsl {

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string &msg) : std::runtime_error(msg) {}
};

constexpr uint32_t kCheckpointVersion = 1;

struct ArchiveArray {
  std::string name;
  uint32_t dtype = 0;
  std::vector<uint32_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;

  static ArchiveArray F32(std::string name, std::vector<uint32_t> dims, std::vector<float> v);
  static ArchiveArray F64(std::string name, std::vector<uint32_t> dims, std::vector<double> v);
  size_t size() const { return dtype == 0 ? f32.size() : f64.size(); }
};

struct Archive {
  std::vector<ArchiveArray> arrays;
  std::string config_text;

  const ArchiveArray *Find(const std::string &name) const;
};

/// Writes atomically (temporary file, then rename).
void WriteArchive(const std::filesystem::path &path, const Archive &archive);
Archive ReadArchive(const std::filesystem::path &path);

}  // namespace comsl

#endif  // COMSL_CHECKPOINT_H_
