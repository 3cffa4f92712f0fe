#pragma once

#include <cstddef>
#include <vector>

#include "vamp/tensor.hpp"

// Differentiable kernels. Every op takes the tape to record onto; a null tape
// (or inputs that do not require grad) evaluates without recording.
namespace vamp {

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape* tape, const Tensor& a);

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double s);
// a[m x n] + v broadcast over rows, v holding n values.
Tensor add_row_vector(Tape* tape, const Tensor& a, const Tensor& v);

Tensor exp(Tape* tape, const Tensor& a);
Tensor clamp(Tape* tape, const Tensor& a, double lo, double hi);
Tensor gelu(Tape* tape, const Tensor& a);
// Harness self-test hook: scales the GELU derivative used in backward.
// Anything other than 1.0 deliberately breaks gradients.
void set_gelu_backward_fault(double factor);

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta);
Tensor softmax_rows(Tape* tape, const Tensor& x);
Tensor log_softmax_rows(Tape* tape, const Tensor& x);
// Scales each row to unit L2 norm; zero rows raise NumericError.
Tensor normalize_rows(Tape* tape, const Tensor& x);

Tensor sum(Tape* tape, const Tensor& a);
Tensor mean(Tape* tape, const Tensor& a);
// Scalar at flat index.
Tensor element(Tape* tape, const Tensor& a, std::size_t index);

Tensor reshape(Tape* tape, const Tensor& a, Shape shape);
Tensor slice_rows(Tape* tape, const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(Tape* tape, const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(Tape* tape, const std::vector<Tensor>& parts);
Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts);

// Sum over coordinates of KL(N(mu_q, e^lv_q) || N(mu_p, e^lv_p)), closed form.
Tensor gaussian_kl(Tape* tape, const Tensor& mu_q, const Tensor& log_var_q, const Tensor& mu_p,
                   const Tensor& log_var_p);

// Pre-norm transformer block weights for width d.
struct TransformerBlockParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor w_qkv, b_qkv;  // d x 3d, 3d
  Tensor w_out, b_out;  // d x d, d
  Tensor ln2_gamma, ln2_beta;
  Tensor w_fc1, b_fc1;  // d x 4d, 4d
  Tensor w_fc2, b_fc2;  // 4d x d, d

  std::size_t width() const { return ln1_gamma.size(); }
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

// Per-head attention weights captured for inspection.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

// x + MHA(LN1(x)), then h + MLP(LN2(h)). Bidirectional, no masking.
Tensor attention_block(Tape* tape, const Tensor& x, const TransformerBlockParams& params,
                       std::size_t heads, AttentionTrace* trace = nullptr);

// Centred rows projected onto the top two principal directions (power
// iteration with deflation). Non-differentiable.
struct PcaResult {
  Tensor coords;                     // n x 2
  std::vector<double> components;    // 2 x d, row-major
  std::vector<double> explained;     // eigenvalues of the two components
};
PcaResult pca_project_2d(const Tensor& rows, int max_iters = 200, double tol = 1e-10);

}  // namespace vamp
