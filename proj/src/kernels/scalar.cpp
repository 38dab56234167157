#include "irstyle/kernels.hpp"

namespace irstyle::kernels {

namespace {

void add_f(const float* a, const float* b, float* out, std::size_t n) { ref::add(a, b, out, n); }
void sub_f(const float* a, const float* b, float* out, std::size_t n) { ref::sub(a, b, out, n); }
void mul_f(const float* a, const float* b, float* out, std::size_t n) { ref::mul(a, b, out, n); }
void axpy_f(float alpha, const float* x, float* y, std::size_t n) { ref::axpy(alpha, x, y, n); }
void scale_f(float alpha, const float* x, float* out, std::size_t n) { ref::scale(alpha, x, out, n); }
void mul_acc_f(const float* a, const float* b, float* y, std::size_t n) { ref::mul_acc(a, b, y, n); }
void leaky_f(const float* x, float* out, std::size_t n, float slope) {
  ref::leaky_relu(x, out, n, slope);
}
void leaky_back_f(const float* x, const float* g, float* gi, std::size_t n, float slope) {
  ref::leaky_relu_backward(x, g, gi, n, slope);
}
double sum_f(const float* x, std::size_t n) { return ref::sum(x, n); }
void gemm_f(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const float* a,
            const float* b, float* c, bool accumulate) {
  ref::gemm(ta, tb, m, n, k, a, b, c, accumulate);
}
void depthwise_f(const float* in, std::size_t planes, std::size_t h, std::size_t w,
                 const float* kernel, std::size_t ksize, float* out) {
  ref::depthwise_forward(in, planes, h, w, kernel, ksize, out);
}

constexpr KernelTable kScalar{
    Isa::scalar, add_f,  sub_f,  mul_f,  axpy_f,      scale_f,
    mul_acc_f,   leaky_f, leaky_back_f, sum_f, gemm_f, depthwise_f,
};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace irstyle::kernels
