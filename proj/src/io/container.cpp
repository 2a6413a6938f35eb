#include "io/container.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace avdit {

static_assert(std::endian::native == std::endian::little,
              "container assumes a little-endian host");

uint32_t crc32_bytes(const uint8_t* data, size_t n) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

namespace {

template <class T>
void put(std::vector<uint8_t>& out, T v) {
    size_t off = out.size();
    out.resize(off + sizeof(T));
    std::memcpy(out.data() + off, &v, sizeof(T));
}

template <class T>
T take(const std::vector<uint8_t>& in, size_t& off, const std::string& origin) {
    if (off + sizeof(T) > in.size()) throw IoError(origin + ": truncated container");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

void TensorContainer::add_f32(const std::string& name, const Array<float>& a) {
    Entry e;
    e.name = name;
    e.shape = a.shape;
    e.dtype = kDtypeF32;
    e.payload.resize(a.v.size() * sizeof(float));
    std::memcpy(e.payload.data(), a.v.data(), e.payload.size());
    entries_.push_back(std::move(e));
}

void TensorContainer::add_bytes(const std::string& name, const std::string& bytes) {
    Entry e;
    e.name = name;
    e.shape = {static_cast<int64_t>(bytes.size())};
    e.dtype = kDtypeU8;
    e.payload.assign(bytes.begin(), bytes.end());
    entries_.push_back(std::move(e));
}

const TensorContainer::Entry* TensorContainer::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return &e;
    return nullptr;
}

Array<float> TensorContainer::get_f32(const std::string& name) const {
    const Entry* e = find(name);
    if (!e) throw IoError("container: no entry named '" + name + "'");
    if (e->dtype != kDtypeF32) throw IoError("container: entry '" + name + "' is not f32");
    Array<float> a(e->shape);
    std::memcpy(a.v.data(), e->payload.data(), e->payload.size());
    return a;
}

std::string TensorContainer::get_bytes(const std::string& name) const {
    const Entry* e = find(name);
    if (!e) throw IoError("container: no entry named '" + name + "'");
    if (e->dtype != kDtypeU8) throw IoError("container: entry '" + name + "' is not bytes");
    return std::string(e->payload.begin(), e->payload.end());
}

std::vector<uint8_t> TensorContainer::serialize() const {
    std::vector<uint8_t> out;
    put<uint32_t>(out, kMagic);
    put<uint32_t>(out, kVersion);
    put<uint64_t>(out, entries_.size());
    for (const auto& e : entries_) {
        put<uint32_t>(out, static_cast<uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        put<uint32_t>(out, static_cast<uint32_t>(e.shape.size()));
        for (int64_t d : e.shape) put<uint64_t>(out, static_cast<uint64_t>(d));
        put<uint8_t>(out, e.dtype);
        out.insert(out.end(), e.payload.begin(), e.payload.end());
    }
    put<uint32_t>(out, crc32_bytes(out.data(), out.size()));
    return out;
}

void TensorContainer::save(const std::string& path) const {
    std::vector<uint8_t> bytes = serialize();
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for write: " + tmp);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("short write: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("cannot rename " + tmp + " to " + path);
}

TensorContainer TensorContainer::deserialize(const std::vector<uint8_t>& bytes,
                                             const std::string& origin) {
    if (bytes.size() < 20) throw IoError(origin + ": truncated container");
    uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    uint32_t actual_crc = crc32_bytes(bytes.data(), bytes.size() - 4);
    if (stored_crc != actual_crc)
        throw IoError(origin + ": checksum mismatch (file corrupt)");
    size_t off = 0;
    uint32_t magic = take<uint32_t>(bytes, off, origin);
    if (magic != kMagic) throw IoError(origin + ": not an AVDT container");
    uint32_t version = take<uint32_t>(bytes, off, origin);
    if (version != kVersion)
        throw IoError(origin + ": container version " + std::to_string(version) +
                      " is not supported by this build (expected " + std::to_string(kVersion) +
                      ")");
    uint64_t count = take<uint64_t>(bytes, off, origin);
    TensorContainer c;
    for (uint64_t i = 0; i < count; ++i) {
        Entry e;
        uint32_t name_len = take<uint32_t>(bytes, off, origin);
        if (off + name_len > bytes.size()) throw IoError(origin + ": truncated container");
        e.name.assign(bytes.begin() + off, bytes.begin() + off + name_len);
        off += name_len;
        uint32_t ndim = take<uint32_t>(bytes, off, origin);
        int64_t n = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            int64_t dim = static_cast<int64_t>(take<uint64_t>(bytes, off, origin));
            e.shape.push_back(dim);
            n *= dim;
        }
        e.dtype = take<uint8_t>(bytes, off, origin);
        size_t elem = e.dtype == kDtypeF32 ? 4 : 1;
        if (e.dtype != kDtypeF32 && e.dtype != kDtypeU8)
            throw IoError(origin + ": unknown dtype tag " + std::to_string(e.dtype));
        size_t bytes_needed = static_cast<size_t>(n) * elem;
        if (off + bytes_needed > bytes.size()) throw IoError(origin + ": truncated container");
        e.payload.assign(bytes.begin() + off, bytes.begin() + off + bytes_needed);
        off += bytes_needed;
        c.entries_.push_back(std::move(e));
    }
    if (off != bytes.size() - 4) throw IoError(origin + ": trailing bytes in container");
    return c;
}

TensorContainer TensorContainer::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open container: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return deserialize(bytes, path);
}

}  // namespace avdit
