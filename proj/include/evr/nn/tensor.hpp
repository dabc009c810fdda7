#pragma once
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "evr/errors.hpp"

namespace evr::nn {

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + ")";
}

inline std::size_t shape_numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int e : s) n *= std::size_t(e);
    return n;
}

// Dense n-d array. float for training/inference throughput, double for
// gradient checks; same code path for both.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw ShapeError("tensor: data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static TensorT zeros(std::vector<int> s) {
        TensorT t;
        t.shape = std::move(s);
        t.data.assign(shape_numel(t.shape), T(0));
        return t;
    }
    static TensorT full(std::vector<int> s, T v) {
        TensorT t = zeros(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    std::size_t numel() const { return data.size(); }
    int dim(int i) const { return shape[std::size_t(i)]; }
    int ndim() const { return int(shape.size()); }

    T& operator[](std::size_t i) { return data[i]; }
    T operator[](std::size_t i) const { return data[i]; }

    // (C,H,W) indexing
    T& at3(int c, int y, int x) {
        return data[(std::size_t(c) * shape[1] + y) * shape[2] + x];
    }
    T at3(int c, int y, int x) const {
        return data[(std::size_t(c) * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }
    bool operator==(const TensorT&) const = default;
};

template <class T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

// Row-major GEMM backed by BLAS: C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

} // namespace evr::nn
