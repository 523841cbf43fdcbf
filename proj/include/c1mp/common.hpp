#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <sstream>
#include <utility>

namespace c1mp {

/// Base class for all library errors.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid user-supplied parameters (degrees, knot counts, config fields).
class parameter_error : public error {
public:
    using error::error;
};

/// Geometry is not usable (irregular mapping, AS-G1 infeasible, bad gluing).
class geometry_error : public error {
public:
    using error::error;
};

/// Inconsistent multi-patch topology (edge/vertex wiring).
class topology_error : public error {
public:
    using error::error;
};

/// Structural misuse of the hierarchy (non-nested levels, stalled loop, ...).
class structure_error : public error {
public:
    using error::error;
};

namespace detail {
template <class E, class... Args>
[[noreturn]] inline void throw_fmt(Args&&... args) {
    std::ostringstream os;
    (os << ... << std::forward<Args>(args));
    throw E(os.str());
}
} // namespace detail

#define C1MP_REQUIRE(cond, Err, ...)                                   \
    do {                                                               \
        if (!(cond)) ::c1mp::detail::throw_fmt<Err>(__VA_ARGS__);      \
    } while (0)

/// Exact dyadic rational s * 2^-level, used for element distances.
struct DyadicRational {
    long long num = 0; ///< s >= 0
    int level = 0;     ///< scale exponent

    double value() const { return static_cast<double>(num) / static_cast<double>(1LL << level); }

    /// Compare a*2^-la vs b*2^-lb exactly via a common scale.
    static int compare(const DyadicRational& a, const DyadicRational& b) {
        const int l = a.level > b.level ? a.level : b.level;
        const long long va = a.num << (l - a.level);
        const long long vb = b.num << (l - b.level);
        return va < vb ? -1 : (va > vb ? 1 : 0);
    }
    bool operator<(const DyadicRational& o) const { return compare(*this, o) < 0; }
    bool operator==(const DyadicRational& o) const { return compare(*this, o) == 0; }
    bool operator<=(const DyadicRational& o) const { return compare(*this, o) <= 0; }

    DyadicRational operator+(const DyadicRational& o) const {
        const int l = level > o.level ? level : o.level;
        return {(num << (l - level)) + (o.num << (l - o.level)), l};
    }
};

} // namespace c1mp
