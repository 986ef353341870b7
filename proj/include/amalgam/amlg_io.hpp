#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "amalgam/tensor.hpp"

namespace amalgam {

static_assert(std::endian::native == std::endian::little,
              "AMLG I/O assumes a little-endian host");

// AMLG tensor archive:
//   magic "AMLG", u16 version = 1, u8 reserved (0x4C marks a local-only
//   secret file), then records of
//   { u16 name length, name bytes, u8 dtype (1=f32 2=f64 3=i64),
//     u8 ndim, ndim x u64 dims, row-major payload }.
// All integers and payloads little-endian.

constexpr uint8_t kAmlgLocalOnly = 0x4C;

struct AmlgRecord {
    std::string name;
    Tensor tensor;
};

struct AmlgFile {
    uint8_t reserved = 0;
    std::vector<AmlgRecord> records;

    const Tensor* find(const std::string& name) const {
        for (const auto& r : records)
            if (r.name == name) return &r.tensor;
        return nullptr;
    }

    const Tensor& at(const std::string& name) const {
        const Tensor* t = find(name);
        if (!t) throw std::runtime_error("archive: missing record '" + name + "'");
        return *t;
    }
};

namespace detail {

template <class T>
void write_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T read_le(const std::string& in, size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw std::runtime_error("archive: truncated file");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace detail

inline std::string amlg_to_bytes(const std::vector<AmlgRecord>& records, uint8_t reserved = 0) {
    std::string out;
    out += "AMLG";
    detail::write_le<uint16_t>(out, 1);
    detail::write_le<uint8_t>(out, reserved);
    for (const auto& r : records) {
        if (r.name.size() > 0xFFFF)
            throw std::invalid_argument("archive: record name too long: " + r.name);
        detail::write_le<uint16_t>(out, uint16_t(r.name.size()));
        out += r.name;
        detail::write_le<uint8_t>(out, uint8_t(r.tensor.dtype()));
        detail::write_le<uint8_t>(out, uint8_t(r.tensor.rank()));
        for (int64_t d : r.tensor.shape()) detail::write_le<uint64_t>(out, uint64_t(d));
        out.append(static_cast<const char*>(r.tensor.raw_data()), r.tensor.byte_size());
    }
    return out;
}

inline AmlgFile amlg_from_bytes(const std::string& in) {
    size_t pos = 0;
    if (in.size() < 7 || in.compare(0, 4, "AMLG") != 0)
        throw std::runtime_error("archive: bad magic, not an AMLG file");
    pos = 4;
    const uint16_t version = detail::read_le<uint16_t>(in, pos);
    if (version != 1)
        throw std::runtime_error("archive: unsupported version " + std::to_string(version));
    AmlgFile file;
    file.reserved = detail::read_le<uint8_t>(in, pos);
    while (pos < in.size()) {
        const uint16_t nlen = detail::read_le<uint16_t>(in, pos);
        if (pos + nlen > in.size()) throw std::runtime_error("archive: truncated record name");
        std::string name = in.substr(pos, nlen);
        pos += nlen;
        const uint8_t dt = detail::read_le<uint8_t>(in, pos);
        if (dt < 1 || dt > 3)
            throw std::runtime_error("archive: record '" + name + "' has unknown dtype " +
                                     std::to_string(dt));
        const uint8_t ndim = detail::read_le<uint8_t>(in, pos);
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) d = int64_t(detail::read_le<uint64_t>(in, pos));
        Tensor t = Tensor::zeros(shape, DType(dt));
        if (pos + t.byte_size() > in.size())
            throw std::runtime_error("archive: truncated payload in record '" + name + "'");
        std::memcpy(t.raw_data(), in.data() + pos, t.byte_size());
        pos += t.byte_size();
        file.records.push_back({std::move(name), std::move(t)});
    }
    return file;
}

inline void write_amlg(const std::string& path, const std::vector<AmlgRecord>& records,
                       uint8_t reserved = 0) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("archive: cannot open '" + path + "' for writing");
    const std::string bytes = amlg_to_bytes(records, reserved);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw std::runtime_error("archive: write failed for '" + path + "'");
}

inline AmlgFile read_amlg(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("archive: cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return amlg_from_bytes(bytes);
}

// Small text payloads (metadata, id maps) ride inside tensor archives as
// i64 byte tensors.
inline Tensor text_to_tensor(const std::string& text) {
    std::vector<int64_t> bytes(text.size());
    for (size_t i = 0; i < text.size(); ++i) bytes[i] = int64_t(uint8_t(text[i]));
    if (bytes.empty()) bytes.push_back(0);
    const int64_t n = int64_t(bytes.size());
    return Tensor::of_i64({n}, std::move(bytes));
}

inline std::string tensor_to_text(const Tensor& t) {
    if (t.dtype() != DType::i64) throw std::runtime_error("archive: text record is not i64");
    std::string out;
    out.reserve(size_t(t.numel()));
    for (int64_t v : t.i64()) {
        if (v == 0) break;
        out.push_back(char(uint8_t(v)));
    }
    return out;
}

}  // namespace amalgam
