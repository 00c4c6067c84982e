#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace stap {

/// Eager shape violation; thrown at call time, never silently broadcast.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Malformed or non-finite input data.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite value produced where a finite one was required.
struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of 64-bit floats.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> v;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        v.assign(count(shape), 0.0);
    }

    Tensor(std::vector<std::size_t> s, std::vector<double> values)
        : shape(std::move(s)), v(std::move(values)) {
        if (count(shape) != v.size()) {
            throw ShapeError("tensor: shape product " + std::to_string(count(shape)) +
                             " != value count " + std::to_string(v.size()));
        }
    }

    static Tensor scalar(double x) { return Tensor({1}, {x}); }

    static Tensor from_vector(std::vector<double> values) {
        std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    std::size_t numel() const { return v.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t dim(std::size_t i) const {
        if (i >= shape.size()) throw ShapeError("tensor: dim index out of range");
        return shape[i];
    }

    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }

    /// Rank-2 access, row-major.
    double& at(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }

    double item() const {
        if (numel() != 1) throw ShapeError("tensor: item() on non-scalar");
        return v[0];
    }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const;

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const;
};

/// Throws ShapeError unless a and b have identical shapes.
void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

/// Named trainable tensor with an accumulated gradient buffer.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, Tensor init)
        : name(std::move(n)), value(std::move(init)), grad(value.shape) {}

    void zero_grad() { grad.fill(0.0); }

    std::size_t numel() const { return value.numel(); }
};

}  // namespace stap
