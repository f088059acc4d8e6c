// tests/base_test.cc

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

#include <atomic>
#include <vector>

#include "doctest.h"
#include "ipltk/base.h"
#include "ipltk/io.h"
#include "test_util.h"

namespace ipltk {
namespace {

TEST_CASE("DeriveSeed is deterministic and separates tags") {
  CHECK(DeriveSeed(1, "a") == DeriveSeed(1, "a"));
  CHECK(DeriveSeed(1, "a") != DeriveSeed(1, "b"));
  CHECK(DeriveSeed(1, "a") != DeriveSeed(2, "a"));
  CHECK(DeriveSeed(7, 3) == DeriveSeed(7, 3));
  CHECK(DeriveSeed(7, 3) != DeriveSeed(7, 4));
}

TEST_CASE("ParallelFor visits every index once for any worker count") {
  for (int workers : {1, 2, 3, 8}) {
    std::vector<std::atomic<int>> hits(101);
    ParallelFor(hits.size(), workers, [&](size_t i) { hits[i]++; });
    for (auto &h : hits) CHECK(h.load() == 1);
  }
  ParallelFor(0, 4, [](size_t) { FAIL("called on empty range"); });
}

TEST_CASE("ParallelFor propagates exceptions") {
  CHECK_THROWS_AS(ParallelFor(10, 2,
                              [](size_t i) {
                                if (i == 7) throw NumericalError("boom");
                              }),
                  NumericalError);
}

TEST_CASE("binary writer and reader round-trip") {
  BinaryWriter w;
  w.Magic("TST1");
  w.U8(200);
  w.U32(0xdeadbeef);
  w.F32(1.5f);
  w.F64(-2.25);
  w.Str("hello");
  BinaryReader r(w.bytes(), "mem");
  r.ExpectMagic("TST1");
  CHECK(r.U8() == 200);
  CHECK(r.U32() == 0xdeadbeefu);
  CHECK(r.F32() == 1.5f);
  CHECK(r.F64() == -2.25);
  CHECK(r.Str() == "hello");
  CHECK(r.AtEnd());
  CHECK_NOTHROW(r.ExpectEnd());
}

TEST_CASE("binary reader rejects wrong magic and truncation") {
  BinaryReader bad("NOPE", "mem");
  CHECK_THROWS_AS(bad.ExpectMagic("TST1"), ParseError);
  BinaryWriter w;
  w.U32(5);
  BinaryReader r(w.bytes().substr(0, 3), "mem");
  CHECK_THROWS_AS(r.U32(), ParseError);
}

TEST_CASE("atomic file writes replace content and leave no temp files") {
  testing::TempDir dir("base");
  auto p = dir / "sub/file.txt";
  WriteFileAtomic(p, "one");
  WriteFileAtomic(p, "two");
  CHECK(ReadFileToString(p) == "two");
  int n = 0;
  for ([[maybe_unused]] auto &e : std::filesystem::directory_iterator(p.parent_path())) ++n;
  CHECK(n == 1);
}

TEST_CASE("text helpers") {
  CHECK(SplitString("a\t\tb", '\t') == std::vector<std::string>{"a", "", "b"});
  testing::TempDir dir("base");
  WriteFileAtomic(dir / "l.txt", "x\r\ny\n");
  CHECK(ReadLines(dir / "l.txt") == std::vector<std::string>{"x", "y"});
}

TEST_CASE("error messages") {
  MissingArtifactError e("ws/ubm.gmm1", "train-ubm");
  CHECK(std::string(e.what()).find("run `ipltk train-ubm` first") != std::string::npos);
  ParseError p("f.txt", 3, "bad");
  CHECK(p.line() == 3);
  CHECK(std::string(p.what()) == "f.txt:3: bad");
}

}  // namespace
}  // namespace ipltk
