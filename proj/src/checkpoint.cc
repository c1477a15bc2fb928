// src/checkpoint.cc

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

#include "comsl/checkpoint.h"

#include <cstring>
#include <fstream>
#include <iterator>

namespace comsl {

namespace {

void PutU32(std::string &out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}
  uint32_t U32() {
    uint32_t v;
    std::memcpy(&v, Take(4), 4);
    return v;
  }
  const char *Take(size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError(path_ + ": truncated checkpoint");
    const char *p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool AtEnd() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

ArchiveArray ArchiveArray::F32(std::string name, std::vector<uint32_t> dims, std::vector<float> v) {
  ArchiveArray a;
  a.name = std::move(name);
  a.dtype = 0;
  a.dims = std::move(dims);
  a.f32 = std::move(v);
  return a;
}

ArchiveArray ArchiveArray::F64(std::string name, std::vector<uint32_t> dims, std::vector<double> v) {
  ArchiveArray a;
  a.name = std::move(name);
  a.dtype = 1;
  a.dims = std::move(dims);
  a.f64 = std::move(v);
  return a;
}

const ArchiveArray *Archive::Find(const std::string &name) const {
  for (const auto &a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void WriteArchive(const std::filesystem::path &path, const Archive &archive) {
  std::string out = "CMSL";
  PutU32(out, kCheckpointVersion);
  PutU32(out, static_cast<uint32_t>(archive.arrays.size()));
  for (const ArchiveArray &a : archive.arrays) {
    size_t expect = 1;
    for (uint32_t d : a.dims) expect *= d;
    if (expect != a.size()) throw CheckpointError("array " + a.name + ": dims do not match values");
    PutU32(out, static_cast<uint32_t>(a.name.size()));
    out += a.name;
    PutU32(out, a.dtype);
    PutU32(out, static_cast<uint32_t>(a.dims.size()));
    for (uint32_t d : a.dims) PutU32(out, d);
    if (a.dtype == 0)
      out.append(reinterpret_cast<const char *>(a.f32.data()), a.f32.size() * sizeof(float));
    else
      out.append(reinterpret_cast<const char *>(a.f64.data()), a.f64.size() * sizeof(double));
  }
  PutU32(out, static_cast<uint32_t>(archive.config_text.size()));
  out += archive.config_text;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("I/O error writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive ReadArchive(const std::filesystem::path &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}), path.string());
  if (std::memcmp(r.Take(4), "CMSL", 4) != 0)
    throw CheckpointError(path.string() + ": format error (bad magic)");
  const uint32_t version = r.U32();
  if (version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": unsupported format version " + std::to_string(version));
  Archive archive;
  const uint32_t count = r.U32();
  for (uint32_t i = 0; i < count; ++i) {
    ArchiveArray a;
    const uint32_t name_len = r.U32();
    a.name.assign(r.Take(name_len), name_len);
    a.dtype = r.U32();
    if (a.dtype > 1) throw CheckpointError(path.string() + ": unknown dtype in " + a.name);
    const uint32_t rank = r.U32();
    size_t n = 1;
    for (uint32_t k = 0; k < rank; ++k) {
      a.dims.push_back(r.U32());
      n *= a.dims.back();
    }
    if (a.dtype == 0) {
      a.f32.resize(n);
      std::memcpy(a.f32.data(), r.Take(n * sizeof(float)), n * sizeof(float));
    } else {
      a.f64.resize(n);
      std::memcpy(a.f64.data(), r.Take(n * sizeof(double)), n * sizeof(double));
    }
    archive.arrays.push_back(std::move(a));
  }
  const uint32_t text_len = r.U32();
  archive.config_text.assign(r.Take(text_len), text_len);
  if (!r.AtEnd()) throw CheckpointError(path.string() + ": trailing bytes after config block");
  return archive;
}

}  // namespace comsl
