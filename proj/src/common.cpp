#include "darkmatter/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dm {

const char* to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ErrorKind::degenerate_fit: return "degenerate_fit";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::io: return "io";
    case ErrorKind::schema: return "schema";
    }
    return "unknown";
}

void require_dims(Index got, Index want, const char* what)
{
    if (got != want) {
        throw DimensionMismatch(std::string(what) + ": expected " + std::to_string(want) + ", got "
                                + std::to_string(got));
    }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
{
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ stream) ^ index);
}

namespace {
std::atomic<unsigned> g_threads{0};
}

void set_thread_count(unsigned n) { g_threads.store(n); }

unsigned thread_count()
{
    unsigned n = g_threads.load();
    if (n == 0) {
        n = std::max(1u, std::thread::hardware_concurrency());
    }
    return n;
}

void parallel_for(Index n, const std::function<void(Index)>& fn)
{
    if (n <= 0) {
        return;
    }
    // Nested calls run inline on the calling worker.
    thread_local bool in_worker = false;
    const auto workers = static_cast<Index>(std::min<Index>(thread_count(), n));
    if (workers <= 1 || in_worker) {
        for (Index i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<Index> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        in_worker = true;
        for (;;) {
            const Index i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(n);
                return;
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (Index w = 0; w < workers; ++w) {
        pool.emplace_back(worker);
    }
    pool.clear();
    if (failure) {
        std::rethrow_exception(failure);
    }
}

double pearson(const Vector& a, const Vector& b)
{
    require_dims(b.size(), a.size(), "pearson");
    if (a.size() < 2) {
        throw InvalidArgument("pearson: need at least two samples");
    }
    const double ma = a.mean();
    const double mb = b.mean();
    const Vector ca = a.array() - ma;
    const Vector cb = b.array() - mb;
    const double va = ca.squaredNorm();
    const double vb = cb.squaredNorm();
    if (va <= 0.0 || vb <= 0.0) {
        throw DegenerateFit("pearson: zero variance input");
    }
    return ca.dot(cb) / std::sqrt(va * vb);
}

} // namespace dm
