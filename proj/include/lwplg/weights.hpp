#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lwplg/tensor.hpp"

namespace lwplg {

// Named-tensor container with deterministic (insertion) iteration order.
// Serialized format, little-endian:
//   magic "LWPV", u32 version = 1, u32 entry count,
//   per entry: u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
//              u8 rank, u32 dims[rank], raw value buffer.
template <typename T>
class WeightStore {
public:
    Tensor4<T>& add(const std::string& name, Tensor4<T> t) {
        require(index_.find(name) == index_.end(), "WeightStore: duplicate name '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.emplace_back(name, std::move(t));
        return entries_.back().second;
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    Tensor4<T>& get(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), "WeightStore: unknown name '" + name + "'");
        return entries_[it->second].second;
    }
    const Tensor4<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "WeightStore: unknown name '" + name + "'");
        return entries_[it->second].second;
    }

    size_t size() const { return entries_.size(); }

    int64_t total_elements() const {
        int64_t total = 0;
        for (const auto& [name, t] : entries_) total += t.numel();
        return total;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<std::pair<std::string, Tensor4<T>>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(is.good(), "weights file: truncated while reading u32");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint8_t read_u8(std::istream& is) {
    char c;
    is.read(&c, 1);
    require(is.good(), "weights file: truncated while reading u8");
    return static_cast<uint8_t>(c);
}

}  // namespace detail

template <typename T>
void save_weights(const WeightStore<T>& store, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "save_weights: cannot open '" + path + "' for writing");
    os.write("LWPV", 4);
    detail::write_u32(os, 1);
    detail::write_u32(os, static_cast<uint32_t>(store.size()));
    for (const auto& [name, t] : store) {
        detail::write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const uint8_t dtype = static_cast<uint8_t>(dtype_of<T>());
        os.write(reinterpret_cast<const char*>(&dtype), 1);
        const uint8_t rank = 4;
        os.write(reinterpret_cast<const char*>(&rank), 1);
        detail::write_u32(os, static_cast<uint32_t>(t.shape.n));
        detail::write_u32(os, static_cast<uint32_t>(t.shape.c));
        detail::write_u32(os, static_cast<uint32_t>(t.shape.h));
        detail::write_u32(os, static_cast<uint32_t>(t.shape.w));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
    }
    require(os.good(), "save_weights: write failed for '" + path + "'");
}

template <typename T>
WeightStore<T> load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "load_weights: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    require(is.good() && std::memcmp(magic, "LWPV", 4) == 0,
            "load_weights: bad magic in '" + path + "'");
    const uint32_t version = detail::read_u32(is);
    require(version == 1, "load_weights: unsupported version " + std::to_string(version));
    const uint32_t count = detail::read_u32(is);
    WeightStore<T> store;
    for (uint32_t e = 0; e < count; ++e) {
        const uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        require(is.good(), "load_weights: truncated name");
        const uint8_t dtype = detail::read_u8(is);
        require(dtype == static_cast<uint8_t>(dtype_of<T>()),
                "load_weights: entry '" + name + "' has dtype tag " + std::to_string(dtype) +
                    ", expected " + std::to_string(static_cast<int>(dtype_of<T>())));
        const uint8_t rank = detail::read_u8(is);
        require(rank >= 1 && rank <= 4, "load_weights: entry '" + name + "' has rank " +
                                            std::to_string(rank));
        int64_t dims[4] = {1, 1, 1, 1};
        for (uint8_t d = 0; d < rank; ++d) dims[d] = detail::read_u32(is);
        Shape4 shape{dims[0], dims[1], dims[2], dims[3]};
        Tensor4<T> t = Tensor4<T>::zeros(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
        require(is.good(), "load_weights: truncated data for entry '" + name + "'");
        store.add(name, std::move(t));
    }
    return store;
}

}  // namespace lwplg
