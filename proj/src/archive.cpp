#include "dhue/archive.hpp"

#include <bit>
#include <cstring>
#include <fmt/format.h>
#include <fstream>

#include "dhue/error.hpp"

namespace dhue {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

namespace {

template <class T>
void put(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& f, const std::filesystem::path& path) {
    T v{};
    if (!f.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated archive " + path.string());
    return v;
}

}  // namespace

void write_archive(const std::filesystem::path& path, const TensorArchive& a) {
    if (a.kind.size() != 4) throw FormatError("archive kind must be four characters");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f.write("DHUE", 4);
    f.write(a.kind.data(), 4);
    put(f, a.version);
    put(f, static_cast<std::uint64_t>(a.header.size()));
    f.write(a.header.data(), static_cast<std::streamsize>(a.header.size()));
    put(f, static_cast<std::uint32_t>(a.tensors.size()));
    for (const auto& t : a.tensors) {
        const Shape s = t.shape();
        for (int d : {s.n, s.c, s.h, s.w}) put(f, static_cast<std::int32_t>(d));
        f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!f) throw IoError("error writing " + path.string());
}

TensorArchive read_archive(const std::filesystem::path& path, const std::string& kind, std::uint32_t version) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint not found: " + path.string());
    char magic[8];
    if (!f.read(magic, 8) || std::memcmp(magic, "DHUE", 4) != 0) {
        throw FormatError(path.string() + " is not a dhue archive");
    }
    TensorArchive a;
    a.kind.assign(magic + 4, 4);
    if (a.kind != kind) throw FormatError(fmt::format("{} holds a '{}' archive, expected '{}'", path.string(), a.kind, kind));
    a.version = get<std::uint32_t>(f, path);
    if (a.version != version) {
        throw FormatError(fmt::format("{}: archive version {} unsupported (expected {})", path.string(), a.version, version));
    }
    const auto header_len = get<std::uint64_t>(f, path);
    if (header_len > (1u << 26)) throw FormatError("implausible header length in " + path.string());
    a.header.resize(header_len);
    if (!f.read(a.header.data(), static_cast<std::streamsize>(header_len))) throw FormatError("truncated archive " + path.string());
    const auto count = get<std::uint32_t>(f, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        Shape s;
        s.n = get<std::int32_t>(f, path);
        s.c = get<std::int32_t>(f, path);
        s.h = get<std::int32_t>(f, path);
        s.w = get<std::int32_t>(f, path);
        if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0 || s.size() > (1u << 28)) {
            throw FormatError("bad tensor shape in " + path.string());
        }
        Tensor t(s);
        if (!f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw FormatError("truncated archive " + path.string());
        }
        a.tensors.push_back(std::move(t));
    }
    return a;
}

}  // namespace dhue
