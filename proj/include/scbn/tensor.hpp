#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace scbn {

// Thrown for malformed shapes, channel mismatches and similar caller errors.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a numeric invariant breaks (non-finite gradient, empty mask, ...).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::int64_t count() const {
        return std::int64_t(n) * c * h * w;
    }
    bool operator==(const Shape& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

// Dense NCHW tensor, row-major within each plane.
template <class S>
struct Tensor {
    using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

    Shape shape;
    Array data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s), data(Array::Zero(s.count())) {}

    static Tensor zeros(Shape s) { return Tensor(s); }

    static Tensor full(Shape s, S v) {
        Tensor t(s);
        t.data.setConstant(v);
        return t;
    }

    static Tensor randn(Shape s, std::mt19937_64& rng, S stddev = S(1)) {
        Tensor t(s);
        std::normal_distribution<double> dist(0.0, double(stddev));
        for (std::int64_t i = 0; i < t.data.size(); ++i) t.data[i] = S(dist(rng));
        return t;
    }

    std::int64_t size() const { return data.size(); }

    std::int64_t index(int n, int c, int y, int x) const {
        return ((std::int64_t(n) * shape.c + c) * shape.h + y) * shape.w + x;
    }
    S& at(int n, int c, int y, int x) { return data[index(n, c, y, x)]; }
    S at(int n, int c, int y, int x) const { return data[index(n, c, y, x)]; }

    bool all_finite() const { return data.isFinite().all(); }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.data = data.template cast<T>();
        return out;
    }
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ShapeError(what);
}

}  // namespace scbn
