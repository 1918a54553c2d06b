#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <vector>

namespace rearm {

/// Row-major dense matrix; rows are nodes (users or items), columns are channels.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

using Index = std::int64_t;

/// Failure categories; each maps onto a CLI exit code.
enum class ErrorKind { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ConfigError(what);
}

// ---------------------------------------------------------------------------
// hashing

/// FNV-1a 64; used for dataset/config digests and dropout masks.
class Fnv1a {
public:
    Fnv1a& bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    template <typename T>
        requires std::is_arithmetic_v<T>
    Fnv1a& add(T v) {
        return bytes(&v, sizeof v);
    }
    Fnv1a& add(std::string_view s) {
        add<std::uint64_t>(s.size());
        return bytes(s.data(), s.size());
    }
    std::uint64_t value() const noexcept { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex_digest(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Uniform in [0,1) derived from a counter; stateless so row-parallel code stays deterministic.
inline double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    const std::uint64_t h = splitmix64(splitmix64(seed ^ splitmix64(stream)) + counter);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// threading

inline std::atomic<int>& thread_setting() {
    static std::atomic<int> n{1};
    return n;
}

/// 0 selects hardware concurrency.
inline void set_threads(int n) {
    if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    thread_setting().store(n);
}

/// Static contiguous partition of [0, n). Each index is visited exactly once, so
/// any per-index computation is independent of the worker count.
template <typename Fn>
void parallel_for(Index n, Fn&& fn) {
    const int workers = static_cast<int>(std::min<Index>(thread_setting().load(), std::max<Index>(n / 64, 1)));
    if (workers <= 1) {
        for (Index i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const Index chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const Index lo = w * chunk;
        const Index hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (Index i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// little-endian binary io

namespace io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw DataError("truncated " + what);
    return v;
}

inline void expect_magic(std::istream& is, std::string_view magic, const std::string& what) {
    std::string got(magic.size(), '\0');
    is.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (!is || got != magic) throw DataError(what + ": bad magic (expected \"" + std::string(magic) + "\")");
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return in;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    return out;
}

}  // namespace io

template <typename Scalar>
bool all_finite(const Matrix<Scalar>& m) {
    return m.allFinite();
}

}  // namespace rearm
