#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldlab {

// Dense row-major tensor. Copies are shallow (shared storage); ops always
// allocate fresh storage for their outputs, so aliasing is read-only.
template <class Real>
struct TensorT {
    std::vector<int> shape;
    std::shared_ptr<std::vector<Real>> store;

    TensorT() : store(std::make_shared<std::vector<Real>>()) {}

    explicit TensorT(std::vector<int> s)
        : shape(std::move(s)),
          store(std::make_shared<std::vector<Real>>(count(shape), Real(0))) {}

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dim");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }

    static TensorT full(std::vector<int> s, Real v) {
        TensorT t(std::move(s));
        std::fill(t.store->begin(), t.store->end(), v);
        return t;
    }

    static TensorT scalar(Real v) { return full({1}, v); }

    static TensorT from(std::vector<int> s, std::vector<Real> values) {
        if (count(s) != values.size())
            throw std::invalid_argument("tensor: value count does not match shape");
        TensorT t;
        t.shape = std::move(s);
        t.store = std::make_shared<std::vector<Real>>(std::move(values));
        return t;
    }

    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return store->size(); }
    bool empty() const { return store->empty(); }

    Real* data() { return store->data(); }
    const Real* data() const { return store->data(); }

    Real& operator[](std::size_t i) { return (*store)[i]; }
    Real operator[](std::size_t i) const { return (*store)[i]; }

    // Shallow reshape; element count must be preserved.
    TensorT reshaped(std::vector<int> s) const {
        if (count(s) != size()) throw std::invalid_argument("reshape: element count mismatch");
        TensorT t;
        t.shape = std::move(s);
        t.store = store;
        return t;
    }

    TensorT clone() const {
        TensorT t;
        t.shape = shape;
        t.store = std::make_shared<std::vector<Real>>(*store);
        return t;
    }

    template <class R2>
    TensorT<R2> cast() const {
        TensorT<R2> t;
        t.shape = shape;
        t.store = std::make_shared<std::vector<R2>>(size());
        for (std::size_t i = 0; i < size(); ++i) (*t.store)[i] = static_cast<R2>((*store)[i]);
        return t;
    }

    void fill(Real v) { std::fill(store->begin(), store->end(), v); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }
};

template <class Real>
inline void check_same_shape(const TensorT<Real>& a, const TensorT<Real>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace ldlab
