#include "diffedit/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "diffedit/error.hpp"

namespace diffedit {

namespace {

constexpr std::array<char, 4> kMagic{'T', 'N', 'S', 'R'};

void put_u32(std::ostream& os, std::uint32_t v) {
    std::array<unsigned char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

void put_f64(std::ostream& os, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu);
    os.write(reinterpret_cast<const char*>(b.data()), 8);
}

bool get_bytes(std::istream& is, unsigned char* out, std::size_t n) {
    is.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(is.gcount()) == n;
}

std::uint32_t get_u32(std::istream& is, const char* what) {
    std::array<unsigned char, 4> b{};
    if (!get_bytes(is, b.data(), 4)) throw IoError(std::string("truncated TNSR stream reading ") + what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    std::array<unsigned char, 8> b{};
    if (!get_bytes(is, b.data(), 8)) throw IoError("truncated TNSR stream reading values");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    return is;
}

} // namespace

void write_tnsr(std::ostream& os, const Tensor& t) {
    os.write(kMagic.data(), 4);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.values()) put_f64(os, v);
    if (!os) throw IoError("failed writing TNSR stream");
}

Tensor read_tnsr(std::istream& is) {
    std::array<char, 4> magic{};
    is.read(magic.data(), 4);
    if (is.gcount() != 4 || magic != kMagic) throw IoError("bad TNSR magic");
    std::uint32_t rank = get_u32(is, "rank");
    if (rank == 0 || rank > 16) throw IoError("bad TNSR rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
        d = get_u32(is, "dims");
        if (d == 0) throw IoError("TNSR dimension of size zero");
    }
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = get_f64(is);
    return Tensor(std::move(shape), std::move(data));
}

void save_tnsr(const std::filesystem::path& path, const Tensor& t) {
    auto os = open_out(path);
    write_tnsr(os, t);
}

Tensor load_tnsr(const std::filesystem::path& path) {
    auto is = open_in(path);
    try {
        return read_tnsr(is);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_bundle(std::ostream& os, const Bundle& bundle) {
    for (const auto& [name, tensor] : bundle) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tnsr(os, tensor);
    }
    if (!os) throw IoError("failed writing bundle stream");
}

Bundle read_bundle(std::istream& is) {
    Bundle bundle;
    while (is.peek() != std::char_traits<char>::eof()) {
        std::uint32_t len = get_u32(is, "name length");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (static_cast<std::uint32_t>(is.gcount()) != len) throw IoError("truncated bundle record name");
        auto [it, inserted] = bundle.emplace(name, read_tnsr(is));
        if (!inserted) throw IoError("duplicate bundle record '" + name + "'");
    }
    return bundle;
}

void save_bundle(const std::filesystem::path& path, const Bundle& bundle) {
    auto os = open_out(path);
    write_bundle(os, bundle);
}

Bundle load_bundle(const std::filesystem::path& path) {
    auto is = open_in(path);
    try {
        return read_bundle(is);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

const Tensor& bundle_get(const Bundle& bundle, const std::string& name) {
    auto it = bundle.find(name);
    if (it == bundle.end()) throw IoError("bundle has no record '" + name + "'");
    return it->second;
}

void save_pgm(const std::filesystem::path& path, const Tensor& image, double lo, double hi) {
    const std::size_t h = image.rows(), w = image.cols();
    auto os = open_out(path);
    os << "P5\n" << w << ' ' << h << "\n255\n";
    for (double v : image.values()) {
        double u = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        auto byte = static_cast<unsigned char>(std::lround(u * 255.0));
        os.put(static_cast<char>(byte));
    }
    if (!os) throw IoError("failed writing " + path.string());
}

} // namespace diffedit
