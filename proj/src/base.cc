// src/base.cc

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

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>
#include <vector>

#include "ipltk/base.h"
#include "ipltk/io.h"

namespace ipltk {

namespace {
std::atomic<int> g_default_workers{1};

// splitmix64 finalizer.
uint64_t Mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

uint64_t DeriveSeed(uint64_t base, uint64_t tag) {
  return Mix(Mix(base) ^ Mix(tag + 0x632be59bd9b4e019ULL));
}

uint64_t DeriveSeed(uint64_t base, const std::string &tag) {
  // FNV-1a, stable across platforms unlike std::hash.
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return DeriveSeed(base, h);
}

void SetDefaultWorkers(int workers) {
  g_default_workers = std::max(1, workers);
}

int DefaultWorkers() { return g_default_workers; }

void ParallelFor(size_t n, int workers,
                 const std::function<void(size_t)> &fn) {
  if (workers <= 0) workers = DefaultWorkers();
  size_t num_threads = std::min<size_t>(static_cast<size_t>(workers), n);
  if (num_threads <= 1) {
    for (size_t i = 0; i < n; i++) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(num_threads);
  for (size_t t = 0; t < num_threads; t++) {
    threads.emplace_back([&]() {
      while (true) {
        size_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto &t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Binary and text I/O.

void BinaryWriter::U32(uint32_t v) {
  for (int i = 0; i < 4; i++) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void BinaryWriter::F32(float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  U32(bits);
}

void BinaryWriter::F64(double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; i++)
    bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void BinaryWriter::Str(std::string_view s) {
  U32(static_cast<uint32_t>(s.size()));
  bytes_.append(s);
}

BinaryReader BinaryReader::FromFile(const std::filesystem::path &path) {
  return BinaryReader(ReadFileToString(path), path.string());
}

void BinaryReader::Need(size_t n) {
  if (pos_ + n > bytes_.size())
    throw ParseError(source_, 0,
                     "truncated binary data at byte " + std::to_string(pos_));
}

void BinaryReader::ExpectMagic(std::string_view magic) {
  Need(magic.size());
  if (std::string_view(bytes_).substr(pos_, magic.size()) != magic)
    throw ParseError(source_, 0,
                     "bad magic, expected '" + std::string(magic) + "'");
  pos_ += magic.size();
}

uint8_t BinaryReader::U8() {
  Need(1);
  return static_cast<uint8_t>(bytes_[pos_++]);
}

uint32_t BinaryReader::U32() {
  Need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; i++)
    v |= static_cast<uint32_t>(static_cast<uint8_t>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

float BinaryReader::F32() {
  uint32_t bits = U32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double BinaryReader::F64() {
  Need(8);
  uint64_t bits = 0;
  for (int i = 0; i < 8; i++)
    bits |= static_cast<uint64_t>(static_cast<uint8_t>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 8;
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string BinaryReader::Str() {
  uint32_t n = U32();
  Need(n);
  std::string s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

void BinaryReader::ExpectEnd() {
  if (!AtEnd())
    throw ParseError(source_, 0, "trailing bytes after payload");
}

std::string ReadFileToString(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

void WriteFileAtomic(const std::filesystem::path &path, std::string_view data) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::string> SplitString(std::string_view line, char delim) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> ReadLines(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace ipltk
