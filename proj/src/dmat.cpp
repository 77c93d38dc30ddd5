#include "darkmatter/dmat.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace dm {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'D', 'M', 'A', 'T', '\x01', '\0', '\0', '\0'};

std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    return out;
}

std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    return in;
}

std::uint64_t byte_size(const std::filesystem::path& path)
{
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec) {
        throw IoError("cannot stat '" + path.string() + "': " + ec.message());
    }
    return size;
}

template <typename T>
void put(std::ostream& out, T value)
{
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path)
{
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) {
        throw IoError("'" + path.string() + "': truncated file");
    }
    return value;
}

std::uint64_t checked_payload(std::uint64_t n, std::uint64_t d, const std::filesystem::path& path)
{
    constexpr auto max = std::numeric_limits<std::uint64_t>::max();
    if (d != 0 && n > max / d) {
        throw IoError("'" + path.string() + "': n*d overflows (n=" + std::to_string(n)
                      + ", d=" + std::to_string(d) + ")");
    }
    const std::uint64_t count = n * d;
    if (count > max / sizeof(float)) {
        throw IoError("'" + path.string() + "': n*d*4 overflows");
    }
    return count;
}

Matrix read_floats(std::istream& in, std::uint64_t n, std::uint64_t d, const std::filesystem::path& path)
{
    std::vector<float> buffer(static_cast<std::size_t>(n * d));
    in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    if (!in) {
        throw IoError("'" + path.string() + "': truncated payload");
    }
    Matrix m(static_cast<Index>(n), static_cast<Index>(d));
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        m.data()[i] = static_cast<double>(buffer[i]);
    }
    return m;
}

} // namespace

void write_dmat(const std::filesystem::path& path, const Matrix& data)
{
    auto out = open_out(path);
    out.write(kMagic.data(), kMagic.size());
    put<std::uint64_t>(out, static_cast<std::uint64_t>(data.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(data.cols()));
    std::vector<float> buffer(static_cast<std::size_t>(data.size()));
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        buffer[i] = static_cast<float>(data.data()[i]);
    }
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

ActivationBatch read_dmat(const std::filesystem::path& path)
{
    const auto actual = byte_size(path);
    auto in = open_in(path);
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) {
        throw IoError("'" + path.string() + "': bad magic, not a DMAT1 file");
    }
    const auto n = get<std::uint64_t>(in, path);
    const auto d = get<std::uint64_t>(in, path);
    if (n == 0 || d == 0) {
        throw IoError("'" + path.string() + "': empty batch (n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")");
    }
    const auto count = checked_payload(n, d, path);
    const std::uint64_t expected = 24 + count * sizeof(float);
    if (actual != expected) {
        throw IoError("'" + path.string() + "': truncated or oversized file: expected " + std::to_string(expected)
                      + " bytes, found " + std::to_string(actual));
    }
    ActivationBatch batch;
    batch.data = read_floats(in, n, d, path);
    batch.provenance = {Provenance::Source::loaded, 0, path.string()};
    return batch;
}

void write_weights(const std::filesystem::path& path, const std::vector<SparseRow>& rows)
{
    auto out = open_out(path);
    put<std::uint64_t>(out, rows.size());
    for (const auto& row : rows) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(row.size()));
        for (const auto& e : row) {
            put<std::uint32_t>(out, e.index);
            put<float>(out, e.value);
        }
    }
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

std::vector<SparseRow> read_weights(const std::filesystem::path& path)
{
    auto in = open_in(path);
    const auto n = get<std::uint64_t>(in, path);
    if (n > byte_size(path) / sizeof(std::uint32_t)) {
        throw IoError("'" + path.string() + "': row count exceeds file size");
    }
    std::vector<SparseRow> rows(static_cast<std::size_t>(n));
    for (auto& row : rows) {
        const auto count = get<std::uint32_t>(in, path);
        row.resize(count);
        for (auto& e : row) {
            e.index = get<std::uint32_t>(in, path);
            e.value = get<float>(in, path);
        }
    }
    return rows;
}

ActivationBatch read_raw_f32(const std::filesystem::path& path, std::uint64_t n, std::uint64_t d)
{
    if (n == 0 || d == 0) {
        throw InvalidArgument("raw import requires positive n and d");
    }
    const auto count = checked_payload(n, d, path);
    const auto actual = byte_size(path);
    const std::uint64_t expected = count * sizeof(float);
    if (actual != expected) {
        throw IoError("'" + path.string() + "': truncated or oversized raw file: expected " + std::to_string(expected)
                      + " bytes, found " + std::to_string(actual));
    }
    auto in = open_in(path);
    ActivationBatch batch;
    batch.data = read_floats(in, n, d, path);
    batch.provenance = {Provenance::Source::loaded, 0, path.string()};
    return batch;
}

ActivationFormat parse_activation_format(const std::string& s)
{
    if (s == "dmat") {
        return ActivationFormat::dmat;
    }
    if (s == "raw") {
        return ActivationFormat::raw;
    }
    throw InvalidArgument("unknown activation format '" + s + "'");
}

ActivationBatch import_activations(const std::filesystem::path& path, ActivationFormat format, std::uint64_t n,
                                   std::uint64_t d)
{
    ActivationBatch batch = format == ActivationFormat::dmat ? read_dmat(path) : read_raw_f32(path, n, d);
    auto sidecar = path;
    sidecar += ".weights";
    if (std::filesystem::exists(sidecar)) {
        auto rows = read_weights(sidecar);
        if (static_cast<Index>(rows.size()) != batch.rows()) {
            throw IoError("'" + sidecar.string() + "': row count " + std::to_string(rows.size())
                          + " does not match activations (" + std::to_string(batch.rows()) + ")");
        }
        batch.ground_truth = std::move(rows);
    }
    return batch;
}

void export_activations(const std::filesystem::path& path, const ActivationBatch& batch)
{
    write_dmat(path, batch.data);
    if (batch.ground_truth) {
        auto sidecar = path;
        sidecar += ".weights";
        write_weights(sidecar, *batch.ground_truth);
    }
}

} // namespace dm
