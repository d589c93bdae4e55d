#pragma once

#include <bit>
#include <compare>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "magicstyle/errors.hpp"
#include "magicstyle/heads.hpp"
#include "magicstyle/schedule.hpp"

namespace magicstyle {

enum class Role : std::uint8_t { content = 0, style = 1 };

inline const char* to_string(Role r) { return r == Role::content ? "content" : "style"; }

struct CacheKey {
    Timestep timestep = 0;
    std::string site;
    Role role = Role::content;

    auto operator<=>(const CacheKey&) const = default;
};

using StoredHeads = BasicHeadTensor<float>;

// Content entries hold {Q, K, V}; style entries hold {K, V} only.
struct CachedFeatures {
    std::optional<StoredHeads> q;
    StoredHeads k;
    StoredHeads v;

    static CachedFeatures from_qkv(const QKV& qkv, Role role) {
        CachedFeatures f;
        if (role == Role::content) f.q = qkv.q.cast<float>();
        f.k = qkv.k.cast<float>();
        f.v = qkv.v.cast<float>();
        return f;
    }

    friend bool operator==(const CachedFeatures&, const CachedFeatures&) = default;
};

inline void validate_features(const CachedFeatures& f, Role role) {
    if (role == Role::content && !f.q) throw ValidationError("content features must carry a query");
    if (role == Role::style && f.q) throw ValidationError("style features must not carry a query");
    if (!f.k.same_shape(f.v)) {
        throw ValidationError("key " + f.k.shape_string() + " and value " + f.v.shape_string() +
                              " shapes differ");
    }
    if (f.q && (f.q->heads() != f.k.heads() || f.q->head_dim() != f.k.head_dim())) {
        throw ValidationError("query " + f.q->shape_string() + " incompatible with key " + f.k.shape_string());
    }
}

class FeatureStore {
public:
    void record(const CacheKey& key, CachedFeatures feats) {
        if (frozen_) throw ConstraintError("feature store is frozen");
        validate_features(feats, key.role);
        auto [it, inserted] = entries_.try_emplace(key, std::move(feats));
        if (!inserted) {
            throw DuplicateEntryError("duplicate " + std::string(to_string(key.role)) + " entry for timestep " +
                                      std::to_string(key.timestep) + " at site '" + key.site + "'");
        }
    }

    const CachedFeatures& lookup(const CacheKey& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw CacheMissError(key.timestep, key.site, to_string(key.role));
        return it->second;
    }

    bool contains(const CacheKey& key) const { return entries_.contains(key); }

    bool erase(const CacheKey& key) {
        if (frozen_) throw ConstraintError("feature store is frozen");
        return entries_.erase(key) > 0;
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    std::size_t count(Role role) const {
        std::size_t n = 0;
        for (const auto& [k, v] : entries_) n += k.role == role ? 1 : 0;
        return n;
    }

    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }

    const std::map<CacheKey, CachedFeatures>& entries() const { return entries_; }

private:
    std::map<CacheKey, CachedFeatures> entries_;
    bool frozen_ = false;
};

// --- persistence --------------------------------------------------------------
//
// Little-endian layout:
//   "MSFC" | u32 version | u32 entry count
//   entry: u32 timestep | u32 site length | site bytes | u8 role | u8 has_q |
//          array (q, if present) | array k | array v
//   array: u32 heads | u32 tokens | u32 head_dim | f32 values, row-major

inline constexpr char kCacheMagic[4] = {'M', 'S', 'F', 'C'};
inline constexpr std::uint32_t kCacheVersion = 1;

namespace io {

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    void array(const StoredHeads& a) {
        u32(static_cast<std::uint32_t>(a.heads()));
        u32(static_cast<std::uint32_t>(a.tokens()));
        u32(static_cast<std::uint32_t>(a.head_dim()));
        for (float v : a.values()) f32(v);
    }

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

    std::uint8_t u8() {
        need(1, "u8");
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string string(std::size_t n) {
        need(n, "string");
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    StoredHeads array() {
        const std::size_t start = pos_;
        const std::uint64_t heads = u32(), tokens = u32(), dim = u32();
        const std::uint64_t count = heads * tokens * dim;
        if (count * 4 > bytes_.size() - pos_) {
            throw FormatError(start, "array of " + std::to_string(count) + " floats exceeds remaining " +
                                         std::to_string(bytes_.size() - pos_) + " bytes");
        }
        std::vector<float> values(count);
        for (auto& v : values) v = f32();
        return {heads, tokens, dim, std::move(values)};
    }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(pos_, std::string("truncated input while reading ") + what);
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace io

inline std::vector<std::uint8_t> serialize(const FeatureStore& store) {
    io::ByteWriter w;
    w.raw(kCacheMagic, 4);
    w.u32(kCacheVersion);
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (const auto& [key, feats] : store.entries()) {
        w.u32(key.timestep);
        w.u32(static_cast<std::uint32_t>(key.site.size()));
        w.raw(key.site.data(), key.site.size());
        w.u8(static_cast<std::uint8_t>(key.role));
        w.u8(feats.q ? 1 : 0);
        if (feats.q) w.array(*feats.q);
        w.array(feats.k);
        w.array(feats.v);
    }
    return w.bytes();
}

inline FeatureStore deserialize(const std::vector<std::uint8_t>& bytes) {
    io::ByteReader r(bytes);
    if (r.string(4) != std::string(kCacheMagic, 4)) throw FormatError(0, "bad magic, expected 'MSFC'");
    if (const auto version = r.u32(); version != kCacheVersion) throw VersionError(version, kCacheVersion);
    const std::uint32_t count = r.u32();
    FeatureStore store;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t entry_start = r.offset();
        CacheKey key;
        key.timestep = r.u32();
        key.site = r.string(r.u32());
        const std::uint8_t role = r.u8();
        if (role > 1) throw FormatError(r.offset() - 1, "invalid role byte " + std::to_string(role));
        key.role = static_cast<Role>(role);
        const std::uint8_t has_q = r.u8();
        if (has_q > 1) throw FormatError(r.offset() - 1, "invalid has_q byte " + std::to_string(has_q));
        CachedFeatures feats;
        if (has_q) feats.q = r.array();
        feats.k = r.array();
        feats.v = r.array();
        try {
            store.record(key, std::move(feats));
        } catch (const Error& e) {
            throw FormatError(entry_start, std::string("invalid entry: ") + e.what());
        }
    }
    if (!r.at_end()) throw FormatError(r.offset(), "trailing bytes after last entry");
    return store;
}

inline void save(const FeatureStore& store, const std::filesystem::path& path) {
    io::write_file(path, serialize(store));
}

inline FeatureStore load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

}  // namespace magicstyle
