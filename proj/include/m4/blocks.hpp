#pragma once

#include <optional>

#include "m4/matrix.hpp"
#include "m4/trace.hpp"

namespace m4 {

enum class BlockKind { Encoder, Decoder };  // decoder applies causal masking

struct TransformerBlockSpec {
    std::size_t model_dim = 0;
    std::size_t heads = 0;
    std::size_t ffn_dim = 0;
    BlockKind kind = BlockKind::Encoder;

    void validate() const;  // model_dim divisible by heads, nonzero
};

// Pre-norm block: x + Attn(LN(x)), then x + FFN(LN(x)). Weights are stored
// (d_in x d_out) for row-vector activations: y = x * W.
struct BlockWeights {
    Matrix wq, wk, wv, wo;          // model_dim x model_dim
    Matrix w1, w2;                  // model_dim x ffn_dim, ffn_dim x model_dim
    std::vector<double> ln1_gain, ln1_bias;
    std::vector<double> ln2_gain, ln2_bias;

    static BlockWeights random(const TransformerBlockSpec& spec, rng& gen);
    // residual-only block: zeroed output projection and zeroed second FFN matrix
    static BlockWeights passthrough(const TransformerBlockSpec& spec);
};

// Low-rank bypass for one projection: effective W = W + scaling * (B*A)^T,
// with A (rank x d_in) and B (d_out x rank), i.e. y += scaling * (x*A^T)*B^T.
struct LoraPatch {
    const Matrix* a = nullptr;
    const Matrix* b = nullptr;
    double scaling = 1.0;
};

struct BlockAdapters {
    std::optional<LoraPatch> query;
    std::optional<LoraPatch> value;
};

// Traced primitives. FLOPs: 2*m*k*n per (m x k)*(k x n) product, one FLOP per
// output element for elementwise ops, zero for pure data movement.
Matrix matmul(const Matrix& a, const Matrix& b, OpTrace* trace);
Matrix matmul_nt(const Matrix& a, const Matrix& b, OpTrace* trace);  // a * b^T
Matrix add(const Matrix& a, const Matrix& b, OpTrace* trace);
Matrix add_rowvec(const Matrix& a, const Matrix& row, OpTrace* trace);  // broadcast a 1xN row
Matrix l2_normalize_rows(const Matrix& a, OpTrace* trace);
Matrix scale(const Matrix& a, double s, OpTrace* trace);
Matrix transpose(const Matrix& a, OpTrace* trace);
Matrix softmax_rows(const Matrix& a, bool causal, OpTrace* trace);
Matrix layer_norm(const Matrix& a, const std::vector<double>& gain, const std::vector<double>& bias,
                  OpTrace* trace);
Matrix gelu(const Matrix& a, OpTrace* trace);
Matrix embedding_lookup(const Matrix& table, const std::vector<std::uint32_t>& ids, OpTrace* trace);
Matrix mean_pool_rows(const Matrix& a, OpTrace* trace);
Matrix concat_rows(const Matrix& a, const Matrix& b, OpTrace* trace);
std::size_t argmax_row(const Matrix& a, std::size_t row, OpTrace* trace);

// Linear projection with optional LoRA bypass.
Matrix project(const Matrix& x, const Matrix& w, const LoraPatch* lora, OpTrace* trace);

Matrix block_forward(const TransformerBlockSpec& spec, const BlockWeights& w, const Matrix& input,
                     const BlockAdapters* adapters, OpTrace* trace);

double gelu_scalar(double x);

}  // namespace m4
