#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sparsesync/bytes.hpp"
#include "sparsesync/error.hpp"
#include "sparsesync/precision.hpp"

namespace sparsesync {

using Shape = std::vector<std::uint64_t>;

/// Flat indices are signed-32-bit addressable.
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;

inline std::uint64_t shape_numel(const Shape& shape) {
    std::uint64_t n = 1;
    for (auto d : shape) {
        if (d == 0) fail(Errc::InvalidArgument, "zero-sized dimension");
        if (n > kMaxElements / d) fail(Errc::IndexOverflow, "tensor exceeds 2^31 elements");
        n *= d;
    }
    if (n >= kMaxElements) fail(Errc::IndexOverflow, "tensor exceeds 2^31 elements");
    return n;
}

inline std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Named, shaped, packed row-major tensor of raw little-endian scalar bits.
class TensorBuf {
public:
    TensorBuf() = default;

    TensorBuf(std::string name, DType dtype, Shape shape)
        : name_(std::move(name)), dtype_(dtype), shape_(std::move(shape)) {
        numel_ = shape_numel(shape_);
        data_.assign(numel_ * width_bytes(dtype_), 0);
    }

    TensorBuf(std::string name, DType dtype, Shape shape, Bytes data)
        : name_(std::move(name)), dtype_(dtype), shape_(std::move(shape)), data_(std::move(data)) {
        numel_ = shape_numel(shape_);
        if (data_.size() != numel_ * width_bytes(dtype_)) {
            fail(Errc::ShapeMismatch, "tensor '" + name_ + "': " + std::to_string(data_.size()) +
                                          " bytes for shape " + shape_string(shape_) + " of " +
                                          std::string(dtype_name(dtype_)));
        }
    }

    static TensorBuf from_floats(std::string name, DType dtype, Shape shape, std::span<const float> values) {
        TensorBuf t(std::move(name), dtype, std::move(shape));
        if (values.size() != t.numel()) fail(Errc::ShapeMismatch, "value count does not match shape");
        cast_buffer_into(values, dtype, t.data_.data());
        return t;
    }

    const std::string& name() const noexcept { return name_; }
    DType dtype() const noexcept { return dtype_; }
    const Shape& shape() const noexcept { return shape_; }
    std::uint64_t numel() const noexcept { return numel_; }
    std::size_t byte_size() const noexcept { return data_.size(); }

    ByteView bytes() const noexcept { return data_; }
    std::span<std::uint8_t> mutable_bytes() noexcept { return data_; }

    std::uint32_t bits_at(std::size_t i) const noexcept { return load_element(data_.data(), dtype_, i); }
    void set_bits(std::size_t i, std::uint32_t bits) noexcept { store_element(data_.data(), dtype_, i, bits); }
    float value_at(std::size_t i) const noexcept { return decode_scalar({dtype_, bits_at(i)}); }

    bool same_layout(const TensorBuf& o) const noexcept { return dtype_ == o.dtype_ && shape_ == o.shape_; }

    friend bool operator==(const TensorBuf& a, const TensorBuf& b) {
        return a.name_ == b.name_ && a.dtype_ == b.dtype_ && a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::string name_;
    DType dtype_ = DType::FP32;
    Shape shape_;
    std::uint64_t numel_ = 0;
    Bytes data_;
};

/// Name -> tensor map that iterates in insertion order (the model's order).
class NamedTensors {
public:
    using iterator = std::vector<TensorBuf>::iterator;
    using const_iterator = std::vector<TensorBuf>::const_iterator;

    void insert(TensorBuf t) {
        if (index_.contains(t.name())) fail(Errc::InvalidArgument, "duplicate tensor name '" + t.name() + "'");
        index_.emplace(t.name(), tensors_.size());
        tensors_.push_back(std::move(t));
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    const TensorBuf* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &tensors_[it->second];
    }
    TensorBuf* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &tensors_[it->second];
    }

    const TensorBuf& at(const std::string& name) const {
        if (auto* t = find(name)) return *t;
        fail(Errc::UnknownTensor, "no tensor named '" + name + "'");
    }
    TensorBuf& at(const std::string& name) {
        if (auto* t = find(name)) return *t;
        fail(Errc::UnknownTensor, "no tensor named '" + name + "'");
    }

    std::size_t size() const noexcept { return tensors_.size(); }
    bool empty() const noexcept { return tensors_.empty(); }
    iterator begin() noexcept { return tensors_.begin(); }
    iterator end() noexcept { return tensors_.end(); }
    const_iterator begin() const noexcept { return tensors_.begin(); }
    const_iterator end() const noexcept { return tensors_.end(); }

    std::uint64_t total_numel() const noexcept {
        std::uint64_t n = 0;
        for (auto& t : tensors_) n += t.numel();
        return n;
    }

    friend bool operator==(const NamedTensors& a, const NamedTensors& b) { return a.tensors_ == b.tensors_; }

private:
    std::vector<TensorBuf> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Same names, same order, same shapes and dtypes.
inline bool same_schema(const NamedTensors& a, const NamedTensors& b) {
    if (a.size() != b.size()) return false;
    auto ia = a.begin();
    for (auto ib = b.begin(); ib != b.end(); ++ia, ++ib) {
        if (ia->name() != ib->name() || !ia->same_layout(*ib)) return false;
    }
    return true;
}

} // namespace sparsesync
