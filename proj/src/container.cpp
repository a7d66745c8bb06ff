#include "gcv/container.hpp"

#include <cstring>
#include <fstream>

namespace gcv {

namespace {

template <class T>
void write_raw(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

std::size_t dtype_width(std::uint32_t code) {
    switch (code) {
        case container_dtype::u8:
            return 1;
        case container_dtype::f32:
            return 4;
        case container_dtype::f64:
            return 8;
        case container_dtype::i64:
            return 8;
        default:
            throw IoError("unknown dtype code " + std::to_string(code));
    }
}

}  // namespace

const ContainerRecord* Container::find(const std::string& name) const {
    for (const auto& r : records) {
        if (r.name == name) {
            return &r;
        }
    }
    return nullptr;
}

const ContainerRecord& Container::require(const std::string& name) const {
    const auto* r = find(name);
    if (r == nullptr) {
        throw IoError("container is missing record '" + name + "'");
    }
    return *r;
}

void write_container(const std::filesystem::path& path, const Container& c) {
    if (c.magic.size() != 4) {
        throw IoError("container magic must be 4 characters");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw IoError("cannot open for writing: " + path.string());
    }
    os.write(c.magic.data(), 4);
    write_raw<std::uint32_t>(os, c.version);
    write_raw<std::uint64_t>(os, c.records.size());
    for (const auto& r : c.records) {
        write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        write_raw<std::uint32_t>(os, r.dtype);
        write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(r.shape.size()));
        std::int64_t numel = 1;
        for (auto e : r.shape) {
            write_raw<std::uint64_t>(os, static_cast<std::uint64_t>(e));
            numel *= e;
        }
        if (r.bytes.size() != static_cast<std::size_t>(numel) * dtype_width(r.dtype)) {
            throw IoError("record '" + r.name + "' payload does not match its shape");
        }
        os.write(reinterpret_cast<const char*>(r.bytes.data()),
                 static_cast<std::streamsize>(r.bytes.size()));
    }
    if (!os) {
        throw IoError("write failed: " + path.string());
    }
}

Container read_container(const std::filesystem::path& path, const std::string& expected_magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open container: " + path.string());
    }
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != expected_magic) {
        throw IoError("bad magic in " + path.string() + " (expected " + expected_magic + ")");
    }
    Container c;
    c.magic = expected_magic;
    c.version = read_raw<std::uint32_t>(is);
    auto count = read_raw<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        ContainerRecord r;
        auto name_len = read_raw<std::uint32_t>(is);
        r.name.resize(name_len);
        is.read(r.name.data(), name_len);
        r.dtype = read_raw<std::uint32_t>(is);
        auto ndims = read_raw<std::uint32_t>(is);
        std::int64_t numel = 1;
        r.shape.resize(ndims);
        for (auto& e : r.shape) {
            e = static_cast<std::int64_t>(read_raw<std::uint64_t>(is));
            numel *= e;
        }
        r.bytes.resize(static_cast<std::size_t>(numel) * dtype_width(r.dtype));
        is.read(reinterpret_cast<char*>(r.bytes.data()), static_cast<std::streamsize>(r.bytes.size()));
        if (!is) {
            throw IoError("truncated container: " + path.string());
        }
        c.records.push_back(std::move(r));
    }
    return c;
}

ContainerRecord make_blob_record(std::string name, const std::string& text) {
    ContainerRecord r;
    r.name = std::move(name);
    r.dtype = container_dtype::u8;
    r.shape = {static_cast<std::int64_t>(text.size())};
    r.bytes.assign(text.begin(), text.end());
    return r;
}

ContainerRecord make_blob_record(std::string name, const std::vector<std::uint8_t>& bytes) {
    ContainerRecord r;
    r.name = std::move(name);
    r.dtype = container_dtype::u8;
    r.shape = {static_cast<std::int64_t>(bytes.size())};
    r.bytes = bytes;
    return r;
}

std::string blob_as_text(const ContainerRecord& r) {
    if (r.dtype != container_dtype::u8) {
        throw IoError("record '" + r.name + "' is not a byte blob");
    }
    return {r.bytes.begin(), r.bytes.end()};
}

ContainerRecord make_i64_record(std::string name, const std::vector<std::int64_t>& values) {
    ContainerRecord r;
    r.name = std::move(name);
    r.dtype = container_dtype::i64;
    r.shape = {static_cast<std::int64_t>(values.size())};
    r.bytes.resize(values.size() * sizeof(std::int64_t));
    std::memcpy(r.bytes.data(), values.data(), r.bytes.size());
    return r;
}

std::vector<std::int64_t> i64_from_record(const ContainerRecord& r) {
    if (r.dtype != container_dtype::i64) {
        throw IoError("record '" + r.name + "' is not an i64 array");
    }
    std::vector<std::int64_t> v(r.bytes.size() / sizeof(std::int64_t));
    std::memcpy(v.data(), r.bytes.data(), r.bytes.size());
    return v;
}

}  // namespace gcv
