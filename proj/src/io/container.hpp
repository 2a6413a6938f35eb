#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace avdit {

// Versioned binary tensor container.
//
//   magic "AVDT" | u32 version | u64 count
//   per entry: u32 name_len | name | u32 ndim | u64 dims[] | u8 dtype | payload
//   trailing u32 crc32 over everything before it
//
// dtype tags: 0 = f32, 2 = u8 (raw bytes, dims = [len]). Payloads are
// little-endian. Saves are atomic (temp file + rename) and round-trip
// bit-identically.
class TensorContainer {
public:
    static constexpr uint32_t kMagic = 0x54445641;  // "AVDT" little-endian
    static constexpr uint32_t kVersion = 1;
    static constexpr uint8_t kDtypeF32 = 0;
    static constexpr uint8_t kDtypeU8 = 2;

    struct Entry {
        std::string name;
        Shape shape;
        uint8_t dtype = kDtypeF32;
        std::vector<uint8_t> payload;
    };

    void add_f32(const std::string& name, const Array<float>& a);
    void add_bytes(const std::string& name, const std::string& bytes);

    const Entry* find(const std::string& name) const;
    Array<float> get_f32(const std::string& name) const;
    std::string get_bytes(const std::string& name) const;

    size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

    void save(const std::string& path) const;
    std::vector<uint8_t> serialize() const;
    static TensorContainer load(const std::string& path);
    static TensorContainer deserialize(const std::vector<uint8_t>& bytes,
                                       const std::string& origin = "<memory>");

private:
    std::vector<Entry> entries_;
};

uint32_t crc32_bytes(const uint8_t* data, size_t n);

}  // namespace avdit
