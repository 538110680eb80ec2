#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Shared error types and small utilities used across the library.

namespace dfdet {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or dimension disagreement between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A contract precondition was violated (bad argument, wrong call order).
class ContractError : public Error {
public:
    using Error::Error;
};

// A computation produced or encountered a non-finite value.
class NumericFault : public Error {
public:
    using Error::Error;
};

// File or parsing problem.
class IoError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

// FNV-1a over raw bytes; used for parameter-freeze assertions and probe hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace dfdet
