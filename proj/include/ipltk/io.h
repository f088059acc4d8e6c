// ipltk/io.h

// Copyright 2026 The ipltk Authors

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

#ifndef IPLTK_IO_H_
#define IPLTK_IO_H_

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ipltk/base.h"

namespace ipltk {

// Little-endian binary writer over an in-memory buffer. Files are written
// in one shot through WriteFileAtomic.
class BinaryWriter {
 public:
  void Magic(std::string_view magic) { bytes_.append(magic); }
  void U8(uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void U32(uint32_t v);
  void F32(float v);
  void F64(double v);
  void Str(std::string_view s);  // u32 length + bytes
  const std::string &bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class BinaryReader {
 public:
  BinaryReader(std::string bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}
  static BinaryReader FromFile(const std::filesystem::path &path);

  // Throws ParseError unless the next bytes equal `magic`.
  void ExpectMagic(std::string_view magic);
  uint8_t U8();
  uint32_t U32();
  float F32();
  double F64();
  std::string Str();
  bool AtEnd() const { return pos_ == bytes_.size(); }
  void ExpectEnd();
  const std::string &source() const { return source_; }

 private:
  void Need(size_t n);
  std::string bytes_;
  std::string source_;
  size_t pos_ = 0;
};

std::string ReadFileToString(const std::filesystem::path &path);

// Writes to a temporary sibling and renames over the target, so readers
// never observe a partially written file.
void WriteFileAtomic(const std::filesystem::path &path, std::string_view data);

// Splits on a single-character delimiter, keeping empty fields.
std::vector<std::string> SplitString(std::string_view line, char delim);

// Reads text lines, stripping a trailing '\r'.
std::vector<std::string> ReadLines(const std::filesystem::path &path);

}  // namespace ipltk

#endif  // IPLTK_IO_H_
