#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "gcv/tensor.hpp"

namespace gcv {

// Length-prefixed named-tensor container shared by checkpoints (GCKP),
// retrieval indices (GCIX) and decoder snapshots. Little-endian throughout.
// Record layout: u32 name_len, name bytes, u32 dtype code, u32 ndims,
// u64 extents..., then raw values.
struct ContainerRecord {
    std::string name;
    std::uint32_t dtype = 0;  // 1 = u8, 4 = f32, 8 = f64, 9 = i64
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> bytes;
};

struct Container {
    std::string magic;  // four characters
    std::uint32_t version = 1;
    std::vector<ContainerRecord> records;

    const ContainerRecord* find(const std::string& name) const;
    const ContainerRecord& require(const std::string& name) const;
    bool has(const std::string& name) const { return find(name) != nullptr; }
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path, const std::string& expected_magic);

namespace container_dtype {
inline constexpr std::uint32_t u8 = 1;
inline constexpr std::uint32_t f32 = 4;
inline constexpr std::uint32_t f64 = 8;
inline constexpr std::uint32_t i64 = 9;

template <class T>
constexpr std::uint32_t of();
template <>
constexpr std::uint32_t of<float>() {
    return f32;
}
template <>
constexpr std::uint32_t of<double>() {
    return f64;
}
}  // namespace container_dtype

template <class T>
ContainerRecord make_tensor_record(std::string name, const Tensor<T>& t) {
    ContainerRecord r;
    r.name = std::move(name);
    r.dtype = container_dtype::of<T>();
    r.shape = t.shape;
    r.bytes.resize(t.data.size() * sizeof(T));
    std::memcpy(r.bytes.data(), t.data.data(), r.bytes.size());
    return r;
}

template <class T>
Tensor<T> tensor_from_record(const ContainerRecord& r) {
    if (r.dtype != container_dtype::of<T>()) {
        throw MismatchError("container record '" + r.name + "' has dtype code " + std::to_string(r.dtype) +
                            ", expected " + std::to_string(container_dtype::of<T>()));
    }
    Tensor<T> t(r.shape);
    if (r.bytes.size() != t.data.size() * sizeof(T)) {
        throw IoError("container record '" + r.name + "' has inconsistent payload size");
    }
    std::memcpy(t.data.data(), r.bytes.data(), r.bytes.size());
    return t;
}

ContainerRecord make_blob_record(std::string name, const std::string& text);
ContainerRecord make_blob_record(std::string name, const std::vector<std::uint8_t>& bytes);
std::string blob_as_text(const ContainerRecord& r);

ContainerRecord make_i64_record(std::string name, const std::vector<std::int64_t>& values);
std::vector<std::int64_t> i64_from_record(const ContainerRecord& r);

}  // namespace gcv
