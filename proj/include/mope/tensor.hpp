#pragma once

#include <cmath>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mope/common.hpp"

namespace mope {

// Dense row-major tensor of 64-bit floats, rank <= 3. Immutable by
// convention once handed to the graph; surgery and optimizers mutate their
// own copies.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(numel(), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (data_.size() != numel())
            throw_error("dimension", "tensor data length does not match shape");
        if (checked_mode()) check_finite();
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        if (checked_mode()) t.check_finite();
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor identity(int n) {
        Tensor t({n, n});
        for (int i = 0; i < n; ++i) t.data_[static_cast<std::size_t>(i) * n + i] = 1.0;
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

    std::size_t numel() const {
        std::size_t n = 1;
        for (int d : shape_) n *= static_cast<std::size_t>(d);
        return n;
    }

    bool is_scalar() const { return numel() == 1; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * dim(1) + j]; }
    double& at(int b, int i, int j) {
        return data_[(static_cast<std::size_t>(b) * dim(1) + i) * dim(2) + j];
    }
    double at(int b, int i, int j) const {
        return data_[(static_cast<std::size_t>(b) * dim(1) + i) * dim(2) + j];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) os << ", ";
            os << shape_[i];
        }
        os << ")";
        return os.str();
    }

    void check_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) throw_error("numeric", "non-finite value in tensor");
    }

private:
    void validate_shape() const {
        if (shape_.empty() || shape_.size() > 3)
            throw_error("dimension", "tensor rank must be between 1 and 3");
        for (int d : shape_)
            if (d <= 0) throw_error("dimension", "tensor dims must be positive");
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw_error("dimension", std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                     b.shape_str());
}

}  // namespace mope
