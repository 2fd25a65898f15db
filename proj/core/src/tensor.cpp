#include "emdc/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace emdc {

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
    std::int64_t n = 1;
    for (int d : shape_) {
        if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension in " + shape_to_string(shape_));
        n *= d;
    }
    if (shape_.size() > 4) throw std::invalid_argument("Tensor: rank > 4 not supported");
    data_.assign(static_cast<size_t>(n), fill);
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<double> values) {
    Tensor t(std::move(shape));
    if (t.numel() != static_cast<std::int64_t>(values.size()))
        throw std::invalid_argument("Tensor::from_vector: element count mismatch");
    t.data_ = std::move(values);
    return t;
}

void Tensor::fill(double v) {
    for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::item() const {
    if (numel() != 1) throw std::logic_error("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return data_[0];
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::string shape_to_string(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

}  // namespace emdc
