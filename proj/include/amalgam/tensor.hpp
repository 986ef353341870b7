#pragma once

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace amalgam {

enum class DType : uint8_t { f32 = 1, f64 = 2, i64 = 3 };

inline const char* dtype_name(DType dt) {
    switch (dt) {
        case DType::f32: return "f32";
        case DType::f64: return "f64";
        case DType::i64: return "i64";
    }
    return "?";
}

inline std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major n-dimensional array. Rank 0 is a scalar (numel 1).
class Tensor {
public:
    Tensor() : dtype_(DType::f32), data_(std::vector<float>{}) {}

    static Tensor zeros(std::vector<int64_t> shape, DType dt = DType::f32) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.dtype_ = dt;
        int64_t n = count(t.shape_);
        switch (dt) {
            case DType::f32: t.data_ = std::vector<float>(size_t(n), 0.0f); break;
            case DType::f64: t.data_ = std::vector<double>(size_t(n), 0.0); break;
            case DType::i64: t.data_ = std::vector<int64_t>(size_t(n), 0); break;
        }
        return t;
    }

    static Tensor of_f32(std::vector<int64_t> shape, std::vector<float> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.dtype_ = DType::f32;
        check_size(t.shape_, data.size());
        t.data_ = std::move(data);
        return t;
    }

    static Tensor of_f64(std::vector<int64_t> shape, std::vector<double> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.dtype_ = DType::f64;
        check_size(t.shape_, data.size());
        t.data_ = std::move(data);
        return t;
    }

    static Tensor of_i64(std::vector<int64_t> shape, std::vector<int64_t> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.dtype_ = DType::i64;
        check_size(t.shape_, data.size());
        t.data_ = std::move(data);
        return t;
    }

    static Tensor scalar(double v, DType dt = DType::f32) {
        Tensor t = zeros({}, dt);
        t.set_flat(0, v);
        return t;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    DType dtype() const { return dtype_; }
    int64_t numel() const { return count(shape_); }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }

    std::vector<float>& f32() { return std::get<std::vector<float>>(data_); }
    const std::vector<float>& f32() const { return std::get<std::vector<float>>(data_); }
    std::vector<double>& f64() { return std::get<std::vector<double>>(data_); }
    const std::vector<double>& f64() const { return std::get<std::vector<double>>(data_); }
    std::vector<int64_t>& i64() { return std::get<std::vector<int64_t>>(data_); }
    const std::vector<int64_t>& i64() const { return std::get<std::vector<int64_t>>(data_); }

    bool is_floating() const { return dtype_ == DType::f32 || dtype_ == DType::f64; }

    // Generic element access, for oracles and format code; not for hot loops.
    double get_flat(int64_t i) const {
        switch (dtype_) {
            case DType::f32: return f32()[size_t(i)];
            case DType::f64: return f64()[size_t(i)];
            case DType::i64: return double(i64()[size_t(i)]);
        }
        return 0;
    }

    void set_flat(int64_t i, double v) {
        switch (dtype_) {
            case DType::f32: f32()[size_t(i)] = float(v); break;
            case DType::f64: f64()[size_t(i)] = v; break;
            case DType::i64: i64()[size_t(i)] = int64_t(v); break;
        }
    }

    Tensor to_dtype(DType dt) const {
        if (dt == dtype_) return *this;
        Tensor out = zeros(shape_, dt);
        for (int64_t i = 0; i < numel(); ++i) out.set_flat(i, get_flat(i));
        return out;
    }

    const void* raw_data() const {
        switch (dtype_) {
            case DType::f32: return f32().data();
            case DType::f64: return f64().data();
            case DType::i64: return i64().data();
        }
        return nullptr;
    }

    void* raw_data() {
        return const_cast<void*>(static_cast<const Tensor*>(this)->raw_data());
    }

    size_t byte_size() const {
        return size_t(numel()) * (dtype_ == DType::f32 ? 4 : 8);
    }

    bool same_bits(const Tensor& o) const {
        if (dtype_ != o.dtype_ || shape_ != o.shape_) return false;
        if (numel() == 0) return true;
        return std::memcmp(raw_data(), o.raw_data(), byte_size()) == 0;
    }

    static int64_t count(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 1) throw std::invalid_argument("tensor: shape entry " + std::to_string(d) + " < 1");
            n *= d;
        }
        return n;
    }

private:
    static void check_size(const std::vector<int64_t>& shape, size_t n) {
        if (count(shape) != int64_t(n))
            throw std::invalid_argument("tensor: " + std::to_string(n) + " values do not fill shape " + shape_str(shape));
    }

    std::vector<int64_t> shape_;
    DType dtype_;
    std::variant<std::vector<float>, std::vector<double>, std::vector<int64_t>> data_;
};

}  // namespace amalgam
