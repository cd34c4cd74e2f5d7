#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmnet/error.hpp"

namespace mmnet {

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const
    {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense 4-D array in row-major (n, c, h, w) order. Float is the working
/// precision; double is used for gradient checks.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T(0));
    BasicTensor(Shape shape, std::vector<T> values);
    BasicTensor(int n, int c, int h, int w, T fill = T(0)) : BasicTensor(Shape{n, c, h, w}, fill) {}

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t offset(int in, int ic, int ih, int iw) const
    {
        return ((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + ih) * shape_.w + iw;
    }
    T& operator()(int in, int ic, int ih, int iw) { return data_[offset(in, ic, ih, iw)]; }
    const T& operator()(int in, int ic, int ih, int iw) const { return data_[offset(in, ic, ih, iw)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    /// Pointer to the (in, ic) spatial plane.
    T* plane(int in, int ic) { return data_.data() + offset(in, ic, 0, 0); }
    const T* plane(int in, int ic) const { return data_.data() + offset(in, ic, 0, 0); }

    BasicTensor reshaped(Shape shape) const;
    void fill(T v);

    template <typename U>
    BasicTensor<U> cast() const
    {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    bool all_finite() const;
    /// Throws NumericError naming `op` if any element is NaN/Inf.
    void require_finite(std::string_view op) const;

    bool operator==(const BasicTensor&) const = default;

private:
    Shape shape_{};
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Spectrum of a real tensor, stored as interleaved (re, im) pairs.
template <typename T>
struct BasicComplexTensor {
    Shape shape{};
    std::vector<std::complex<T>> data;

    BasicComplexTensor() = default;
    explicit BasicComplexTensor(Shape s) : shape(s), data(s.numel()) {}

    std::complex<T>* plane(int in, int ic) { return data.data() + (static_cast<std::size_t>(in) * shape.c + ic) * shape.plane(); }
    const std::complex<T>* plane(int in, int ic) const
    {
        return data.data() + (static_cast<std::size_t>(in) * shape.c + ic) * shape.plane();
    }
};

using ComplexTensor = BasicComplexTensor<float>;

/// Ordered, uniquely named parameter tensors. A gradient set is a ParamSet
/// with the same names and shapes (see zeros_like).
template <typename T>
class ParamSet {
public:
    struct Entry {
        std::string name;
        BasicTensor<T> value;
        bool operator==(const Entry&) const = default;
    };

    BasicTensor<T>& add(std::string name, BasicTensor<T> value);
    BasicTensor<T>& at(std::string_view name);
    const BasicTensor<T>& at(std::string_view name) const;
    BasicTensor<T>* find(std::string_view name);
    const BasicTensor<T>* find(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }

    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;
    Entry& operator[](std::size_t i) { return entries_[i]; }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    ParamSet zeros_like() const;
    void set_zero();
    /// Throws ShapeError unless `other` has identical names and shapes.
    void require_congruent(const ParamSet& other) const;

    template <typename U>
    ParamSet<U> cast() const
    {
        ParamSet<U> out;
        for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
        return out;
    }

    bool operator==(const ParamSet&) const = default;

private:
    std::vector<Entry> entries_;
};

using Params = ParamSet<float>;
using ParamsD = ParamSet<double>;

} // namespace mmnet
