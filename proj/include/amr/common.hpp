#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace amr {

// Error hierarchy. Every throw carries a short machine-readable code plus a
// human message; the CLI maps these to single-line errors and exit codes.
struct Error : std::runtime_error {
    std::string code;
    Error(std::string c, const std::string& msg) : std::runtime_error(msg), code(std::move(c)) {}
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& msg) : Error("invalid-argument", msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape-error", msg) {}
};

struct UnsupportedScheme : Error {
    explicit UnsupportedScheme(const std::string& msg) : Error("unsupported-scheme", msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io-error", msg) {}
};

struct LifecycleError : Error {
    explicit LifecycleError(const std::string& msg) : Error("lifecycle-error", msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config-error", msg) {}
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ')';
    return os.str();
}

inline void check_shape(bool ok, const std::string& op, const Shape& a, const Shape& b) {
    if (!ok) throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Worker cap: AMR_THREADS env var, else hardware concurrency.
inline int max_threads() {
    static int cached = [] {
        if (const char* env = std::getenv("AMR_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? static_cast<int>(hw) : 1;
    }();
    return cached;
}

// Chunked parallel-for. Each index is processed exactly once and writes must
// be disjoint per index, so the result is identical for any thread count.
// The first worker exception (if any) is rethrown on the calling thread.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    int nt = max_threads();
    if (nt <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(nt), n);
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    std::exception_ptr err;
    std::mutex err_mu;
    auto work = [&](std::size_t t) {
        try {
            for (std::size_t i = t; i < n; i += threads) fn(i);
        } catch (...) {
            std::lock_guard<std::mutex> lock(err_mu);
            if (!err) err = std::current_exception();
        }
    };
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work, t);
    work(0);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace amr
