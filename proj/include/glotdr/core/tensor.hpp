#ifndef GLOTDR_CORE_TENSOR_HPP
#define GLOTDR_CORE_TENSOR_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace glotdr {

// Batches are stored one sample per row.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(const std::string& what, int index)
        : std::runtime_error(what + " (index " + std::to_string(index) + ")"), index_(index)
    {
    }
    int index() const noexcept { return index_; }

private:
    int index_;
};

/// Shaped row-major value array, used at IO boundaries (IDX files). Numeric
/// code works on Eigen batches; `as_batch()` views the leading axis as rows.
struct Tensor {
    std::vector<std::size_t> shape;
    Vector values;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, Vector v) : shape(std::move(s)), values(std::move(v))
    {
        if (static_cast<std::size_t>(values.size()) != element_count(shape))
            throw DimensionError("tensor value count does not match shape");
    }

    static std::size_t element_count(const std::vector<std::size_t>& s)
    {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    Matrix as_batch() const
    {
        if (shape.empty())
            return Matrix::Constant(1, 1, values.size() ? values(0) : 0.0);
        const auto rows = static_cast<Eigen::Index>(shape.front());
        const auto cols = rows == 0 ? Eigen::Index{0} : values.size() / rows;
        Matrix out(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            out.row(r) = values.segment(r * cols, cols).transpose();
        return out;
    }
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m)
{
    return m.allFinite();
}

} // namespace glotdr

#endif // GLOTDR_CORE_TENSOR_HPP
