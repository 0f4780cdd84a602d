/*
 * Copyright (c) 2026 The zipkit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef ZIPKIT_TYPES_HPP
#define ZIPKIT_TYPES_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace zipkit {

/// Dense matrix in working precision. Storage blobs are binary32; all
/// in-memory math runs in binary64.
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// What a structure group prunes as a unit.
enum class GroupKind { attention_heads, ffn_columns, generic };

const char* to_string(GroupKind kind);
GroupKind group_kind_from_string(const std::string& s);

/// Error categories, mapped to CLI exit codes (input=2, table=3, numerical=4).
enum class ErrorKind { input, table, numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

class TableError : public Error {
public:
    explicit TableError(const std::string& what) : Error(ErrorKind::table, what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

/// Deterministic RNG used wherever reproducibility is a contract.
/// mt19937_64 output is pinned by the C++ standard; the double conversion is
/// done by hand because std::uniform_real_distribution is
/// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return engine_() % n; }

private:
    std::mt19937_64 engine_;
};

}  // namespace zipkit

#endif  // ZIPKIT_TYPES_HPP
