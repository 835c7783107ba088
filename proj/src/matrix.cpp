// SPDX-License-Identifier: Apache-2.0
#include "lradiff/matrix.hpp"

namespace lradiff {

void affine_forward(const Matrix& in, const Matrix& weight, const Matrix& bias, Matrix& out) {
    const std::size_t batch = in.rows(), n_in = in.cols(), n_out = weight.rows();
    if (weight.cols() != n_in || bias.cols() != n_out)
        throw std::invalid_argument("affine_forward: shape mismatch");
    out = Matrix(batch, n_out);
    for (std::size_t r = 0; r < batch; ++r) {
        const double* x = in.row(r).data();
        double* y = out.row(r).data();
        for (std::size_t o = 0; o < n_out; ++o)
            y[o] = dot(x, weight.row(o).data(), n_in) + bias(0, o);
    }
}

void affine_backward(const Matrix& in, const Matrix& weight, const Matrix& d_out, Matrix& d_weight,
                     Matrix& d_bias, Matrix* d_in) {
    const std::size_t batch = in.rows(), n_in = in.cols(), n_out = weight.rows();
    for (std::size_t r = 0; r < batch; ++r) {
        const double* x = in.row(r).data();
        for (std::size_t o = 0; o < n_out; ++o) {
            const double g = d_out(r, o);
            if (g == 0.0) continue;
            double* dw = d_weight.row(o).data();
            for (std::size_t i = 0; i < n_in; ++i) dw[i] += g * x[i];
            d_bias(0, o) += g;
        }
    }
    if (d_in == nullptr) return;
    *d_in = Matrix(batch, n_in);
    for (std::size_t r = 0; r < batch; ++r) {
        double* dx = d_in->row(r).data();
        for (std::size_t o = 0; o < n_out; ++o) {
            const double g = d_out(r, o);
            if (g == 0.0) continue;
            const double* w = weight.row(o).data();
            for (std::size_t i = 0; i < n_in; ++i) dx[i] += g * w[i];
        }
    }
}

Matrix hconcat(std::span<const Matrix* const> parts) {
    if (parts.empty()) return {};
    const std::size_t rows = parts.front()->rows();
    std::size_t cols = 0;
    for (const Matrix* p : parts) {
        if (p->rows() != rows) throw std::invalid_argument("hconcat: row count mismatch");
        cols += p->cols();
    }
    Matrix out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double* dst = out.row(r).data();
        for (const Matrix* p : parts) {
            auto src = p->row(r);
            std::copy(src.begin(), src.end(), dst);
            dst += src.size();
        }
    }
    return out;
}

std::size_t argmax(std::span<const double> v) noexcept {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace lradiff
