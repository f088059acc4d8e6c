// ipltk/base.h

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

#ifndef IPLTK_BASE_H_
#define IPLTK_BASE_H_

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

namespace ipltk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

// All library failures derive from Error. ValidationError covers bad input
// (CLI exit code 1); everything else is a runtime failure (exit code 2).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed text/binary input. The message carries the file and line.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string &where, size_t line, const std::string &what)
      : ValidationError(where + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  size_t line() const { return line_; }

 private:
  size_t line_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// An upstream pipeline artifact is absent; `prerequisite` names the CLI
// stage that produces it.
class MissingArtifactError : public Error {
 public:
  MissingArtifactError(const std::string &path, const std::string &prerequisite)
      : Error("missing artifact " + path + " (run `ipltk " + prerequisite +
              "` first)"),
        prerequisite_(prerequisite) {}
  const std::string &prerequisite() const { return prerequisite_; }

 private:
  std::string prerequisite_;
};

// Derives an independent stream seed from a base seed and a tag, so that
// each stage/sample gets its own reproducible RNG.
uint64_t DeriveSeed(uint64_t base, uint64_t tag);
uint64_t DeriveSeed(uint64_t base, const std::string &tag);

// Runs fn(i) for i in [0, n) on up to `workers` threads. Callers write
// results into index-addressed slots and reduce in index order afterwards,
// which keeps outputs independent of the worker count.
void ParallelFor(size_t n, int workers, const std::function<void(size_t)> &fn);

// Sets the default worker count used by library stages that parallelize.
void SetDefaultWorkers(int workers);
int DefaultWorkers();

inline bool AllFinite(const Eigen::Ref<const Matrix> &m) {
  return m.allFinite();
}

}  // namespace ipltk

#endif  // IPLTK_BASE_H_
