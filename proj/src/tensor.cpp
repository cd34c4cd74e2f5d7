#include "mmnet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace mmnet {

std::string Shape::str() const
{
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape)
{
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw ShapeError("negative tensor dimension " + shape.str());
    data_.assign(shape.numel(), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values))
{
    if (data_.size() != shape.numel())
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match dims " +
                         shape.str());
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const
{
    if (shape.numel() != data_.size())
        throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    return BasicTensor(shape, data_);
}

template <typename T>
void BasicTensor<T>::fill(T v)
{
    std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool BasicTensor<T>::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void BasicTensor<T>::require_finite(std::string_view op) const
{
    if (!all_finite()) throw NumericError("non-finite value produced by " + std::string(op));
}

template <typename T>
BasicTensor<T>& ParamSet<T>::add(std::string name, BasicTensor<T> value)
{
    if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    entries_.push_back({std::move(name), std::move(value)});
    return entries_.back().value;
}

template <typename T>
BasicTensor<T>* ParamSet<T>::find(std::string_view name)
{
    for (auto& e : entries_)
        if (e.name == name) return &e.value;
    return nullptr;
}

template <typename T>
const BasicTensor<T>* ParamSet<T>::find(std::string_view name) const
{
    for (const auto& e : entries_)
        if (e.name == name) return &e.value;
    return nullptr;
}

template <typename T>
BasicTensor<T>& ParamSet<T>::at(std::string_view name)
{
    if (auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

template <typename T>
const BasicTensor<T>& ParamSet<T>::at(std::string_view name) const
{
    if (const auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const
{
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.value.size();
    return total;
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const
{
    ParamSet out;
    for (const auto& e : entries_) out.add(e.name, BasicTensor<T>(e.value.shape()));
    return out;
}

template <typename T>
void ParamSet<T>::set_zero()
{
    for (auto& e : entries_) e.value.fill(T(0));
}

template <typename T>
void ParamSet<T>::require_congruent(const ParamSet& other) const
{
    if (other.size() != size())
        throw ShapeError("parameter count mismatch: " + std::to_string(size()) + " vs " +
                         std::to_string(other.size()));
    for (std::size_t i = 0; i < size(); ++i) {
        if (entries_[i].name != other.entries_[i].name)
            throw ShapeError("parameter name mismatch at index " + std::to_string(i) + ": '" +
                             entries_[i].name + "' vs '" + other.entries_[i].name + "'");
        if (!(entries_[i].value.shape() == other.entries_[i].value.shape()))
            throw ShapeError("shape mismatch for parameter '" + entries_[i].name + "': " +
                             entries_[i].value.shape().str() + " vs " + other.entries_[i].value.shape().str());
    }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class ParamSet<float>;
template class ParamSet<double>;

} // namespace mmnet
