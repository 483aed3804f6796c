#pragma once

#include <cstddef>
#include <vector>

namespace pd {

/// Dense row-major float32 matrix. Vectors are rows x 1.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0f) {}

    float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Tensor& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

} // namespace pd
