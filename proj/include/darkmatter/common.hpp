#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dm {

// Rows are examples throughout the library.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

enum class ErrorKind {
    invalid_argument,
    dimension_mismatch,
    degenerate_fit,
    numerical,
    io,
    schema,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& w) : Error(ErrorKind::invalid_argument, w) {}
};
struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& w) : Error(ErrorKind::dimension_mismatch, w) {}
};
struct DegenerateFit : Error {
    explicit DegenerateFit(const std::string& w) : Error(ErrorKind::degenerate_fit, w) {}
};
struct NumericalError : Error {
    explicit NumericalError(const std::string& w) : Error(ErrorKind::numerical, w) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};
struct SchemaError : Error {
    explicit SchemaError(const std::string& w) : Error(ErrorKind::schema, w) {}
};

void require_dims(Index got, Index want, const char* what);

/// SplitMix64 finalizer. Used to derive independent stream seeds from a
/// base seed plus coordinates (row index, grid cell, step...).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0)
{
    return Rng(mix_seed(seed, stream, index));
}

// Distinct stream tags so that, e.g., weights and noise drawn for the same
// row never share a generator.
namespace stream {
inline constexpr std::uint64_t dictionary = 0x11;
inline constexpr std::uint64_t weights = 0x12;
inline constexpr std::uint64_t recon_noise = 0x13;
inline constexpr std::uint64_t split = 0x14;
inline constexpr std::uint64_t sae_init = 0x15;
inline constexpr std::uint64_t resample = 0x16;
inline constexpr std::uint64_t batches = 0x17;
inline constexpr std::uint64_t scales = 0x18;
inline constexpr std::uint64_t experiment = 0x19;
} // namespace stream

/// Process-wide worker count used by parallel_for. 0 means hardware concurrency.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs fn(i) for i in [0, n). Each index must write only its own output
/// slot; results are then independent of the worker count.
void parallel_for(Index n, const std::function<void(Index)>& fn);

double pearson(const Vector& a, const Vector& b);

} // namespace dm
