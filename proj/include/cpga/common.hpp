#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace cpga {

// Clamp floor for divisions, logarithms and pow bases.
inline constexpr float kEpsSafe = 1e-6f;

// Thrown on contract violations (bad shapes, invalid arguments).
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when an op produces or receives non-finite values.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Worker-thread cap shared by conv kernels and evaluation loops.
// Results are bitwise independent of the value; it only bounds parallelism.
void set_max_threads(int n);
int max_threads();

// Runs fn(begin, end) over a partition of [0, n). Chunks are contiguous and
// disjoint, so callers may write to disjoint output rows without locks.
void parallel_for(int n, const std::function<void(int, int)>& fn);

} // namespace cpga
