#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>

namespace gridgsp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error taxonomy. The CLI maps each class onto a distinct exit code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input text (case files, CSV). Carries a 1-based line number.
struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + msg), line_number(line) {}
    explicit ParseError(const std::string& msg) : Error(msg), line_number(0) {}
    std::size_t line_number;
};

/// Structurally valid input that violates a domain invariant.
struct ValidationError : Error {
    using Error::Error;
};

/// Bad run configuration (ranges, missing keys, insufficient history).
struct ConfigError : Error {
    using Error::Error;
};

/// Vector/matrix shape mismatch between a signal and its graph.
struct DimensionError : Error {
    using Error::Error;
};

/// Numerical failure; carries the offending residual when known.
struct NumericalError : Error {
    explicit NumericalError(const std::string& msg, double residual = 0.0)
        : Error(msg), residual(residual) {}
    double residual;
};

/// Network cannot support the requested operation (islanding, singular system).
struct TopologyError : Error {
    using Error::Error;
};

namespace rng {

/// splitmix64 step; used to derive decorrelated sub-seeds from one run seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic seed derivation: mixes a base seed with a stream tag and index.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
    std::uint64_t s = base;
    std::uint64_t a = splitmix64(s);
    s ^= stream * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = splitmix64(s);
    s ^= index + 0x517cc1b727220a95ULL;
    return a ^ b ^ splitmix64(s);
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

}  // namespace rng

/// Lossless double -> text (shortest form that round-trips).
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // prefer the shorter %.15g / %.16g form when they round-trip
    for (int prec = 15; prec <= 16; ++prec) {
        char shorter[32];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
        if (std::strtod(shorter, nullptr) == v) return shorter;
    }
    return buf;
}

}  // namespace gridgsp
