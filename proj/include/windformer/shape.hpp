#pragma once

#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "windformer/errors.hpp"

namespace windformer {

// Dense row-major extents. Rank 4 is the largest the network ever needs
// (batch x turbines x tokens x width).
struct Shape {
    std::vector<int64_t> dims;

    Shape() = default;
    Shape(std::initializer_list<int64_t> d) : dims(d) { validate(); }
    explicit Shape(std::vector<int64_t> d) : dims(std::move(d)) { validate(); }

    int64_t rank() const { return static_cast<int64_t>(dims.size()); }

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : dims) n *= d;
        return n;
    }

    int64_t operator[](int64_t i) const { return dims[static_cast<size_t>(i)]; }

    bool operator==(const Shape& o) const { return dims == o.dims; }
    bool operator!=(const Shape& o) const { return dims != o.dims; }

    std::string str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < dims.size(); ++i) {
            if (i) os << ", ";
            os << dims[i];
        }
        os << "]";
        return os.str();
    }

  private:
    void validate() const {
        for (int64_t d : dims) {
            if (d < 1) throw ShapeError("Shape extents must be >= 1, got " + str());
        }
    }
};

}  // namespace windformer
