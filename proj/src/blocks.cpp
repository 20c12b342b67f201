#include "m4/blocks.hpp"

#include <cmath>

namespace m4 {

namespace {
constexpr double kLnEps = 1e-5;
}

void TransformerBlockSpec::validate() const {
    if (model_dim == 0 || heads == 0 || ffn_dim == 0)
        fail(errc::invalid_argument, "block spec: zero dimension");
    if (model_dim % heads != 0) fail(errc::invalid_argument, "block spec: model_dim not divisible by heads");
}

BlockWeights BlockWeights::random(const TransformerBlockSpec& spec, rng& gen) {
    spec.validate();
    const auto d = spec.model_dim;
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    BlockWeights w;
    w.wq = Matrix::random_uniform(d, d, gen, -s, s);
    w.wk = Matrix::random_uniform(d, d, gen, -s, s);
    w.wv = Matrix::random_uniform(d, d, gen, -s, s);
    w.wo = Matrix::random_uniform(d, d, gen, -s, s);
    w.w1 = Matrix::random_uniform(d, spec.ffn_dim, gen, -s, s);
    w.w2 = Matrix::random_uniform(spec.ffn_dim, d, gen, -s, s);
    w.ln1_gain.assign(d, 1.0);
    w.ln1_bias.assign(d, 0.0);
    w.ln2_gain.assign(d, 1.0);
    w.ln2_bias.assign(d, 0.0);
    return w;
}

BlockWeights BlockWeights::passthrough(const TransformerBlockSpec& spec) {
    spec.validate();
    const auto d = spec.model_dim;
    BlockWeights w;
    w.wq = Matrix::identity(d);
    w.wk = Matrix::identity(d);
    w.wv = Matrix::identity(d);
    w.wo = Matrix(d, d);  // zero: attention contributes nothing to the residual
    w.w1 = Matrix(d, spec.ffn_dim);
    w.w2 = Matrix(spec.ffn_dim, d);
    w.ln1_gain.assign(d, 1.0);
    w.ln1_bias.assign(d, 0.0);
    w.ln2_gain.assign(d, 1.0);
    w.ln2_bias.assign(d, 0.0);
    return w;
}

Matrix matmul(const Matrix& a, const Matrix& b, OpTrace* trace) {
    if (a.cols != b.rows) fail(errc::dimension_mismatch, "matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
        }
    }
    if (trace) trace->record(OpKind::MatMul, 2ull * a.rows * a.cols * b.cols, out.rows, out.cols);
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b, OpTrace* trace) {
    if (a.cols != b.cols) fail(errc::dimension_mismatch, "matmul_nt: inner dimensions differ");
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            out.at(i, j) = acc;
        }
    }
    if (trace) trace->record(OpKind::MatMul, 2ull * a.rows * a.cols * b.rows, out.rows, out.cols);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b, OpTrace* trace) {
    if (!a.same_shape(b)) fail(errc::dimension_mismatch, "add: shape mismatch");
    Matrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    if (trace) trace->record(OpKind::Add, a.size(), out.rows, out.cols);
    return out;
}

Matrix add_rowvec(const Matrix& a, const Matrix& row, OpTrace* trace) {
    if (row.rows != 1 || row.cols != a.cols) fail(errc::dimension_mismatch, "add_rowvec: shape mismatch");
    Matrix out(a.rows, a.cols);
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c = 0; c < a.cols; ++c) out.at(r, c) = a.at(r, c) + row.at(0, c);
    if (trace) trace->record(OpKind::Add, a.size(), out.rows, out.cols);
    return out;
}

Matrix l2_normalize_rows(const Matrix& a, OpTrace* trace) {
    Matrix out(a.rows, a.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
        double norm = 0.0;
        for (std::size_t c = 0; c < a.cols; ++c) norm += a.at(r, c) * a.at(r, c);
        const double inv = norm > 0.0 ? 1.0 / std::sqrt(norm) : 0.0;
        for (std::size_t c = 0; c < a.cols; ++c) out.at(r, c) = a.at(r, c) * inv;
    }
    if (trace) trace->record(OpKind::Mul, a.size(), out.rows, out.cols);
    return out;
}

Matrix scale(const Matrix& a, double s, OpTrace* trace) {
    Matrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * s;
    if (trace) trace->record(OpKind::Mul, a.size(), out.rows, out.cols);
    return out;
}

Matrix transpose(const Matrix& a, OpTrace* trace) {
    Matrix out(a.cols, a.rows);
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c = 0; c < a.cols; ++c) out.at(c, r) = a.at(r, c);
    if (trace) trace->record(OpKind::Transpose, 0, out.rows, out.cols);
    return out;
}

Matrix softmax_rows(const Matrix& a, bool causal, OpTrace* trace) {
    Matrix out(a.rows, a.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
        const std::size_t limit = causal ? std::min(a.cols, r + 1) : a.cols;
        double mx = -1e300;
        for (std::size_t c = 0; c < limit; ++c) mx = std::max(mx, a.at(r, c));
        double denom = 0.0;
        for (std::size_t c = 0; c < limit; ++c) denom += std::exp(a.at(r, c) - mx);
        for (std::size_t c = 0; c < limit; ++c) out.at(r, c) = std::exp(a.at(r, c) - mx) / denom;
        // masked positions stay zero
    }
    if (trace) trace->record(OpKind::Softmax, a.size(), out.rows, out.cols);
    return out;
}

Matrix layer_norm(const Matrix& a, const std::vector<double>& gain, const std::vector<double>& bias,
                  OpTrace* trace) {
    if (gain.size() != a.cols || bias.size() != a.cols)
        fail(errc::dimension_mismatch, "layer_norm: gain/bias size mismatch");
    Matrix out(a.rows, a.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < a.cols; ++c) mean += a.at(r, c);
        mean /= static_cast<double>(a.cols);
        double var = 0.0;
        for (std::size_t c = 0; c < a.cols; ++c) {
            const double d = a.at(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(a.cols);
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        for (std::size_t c = 0; c < a.cols; ++c)
            out.at(r, c) = (a.at(r, c) - mean) * inv * gain[c] + bias[c];
    }
    if (trace) trace->record(OpKind::LayerNorm, a.size(), out.rows, out.cols);
    return out;
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Matrix gelu(const Matrix& a, OpTrace* trace) {
    Matrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = gelu_scalar(a.data[i]);
    if (trace) trace->record(OpKind::GELU, a.size(), out.rows, out.cols);
    return out;
}

Matrix embedding_lookup(const Matrix& table, const std::vector<std::uint32_t>& ids, OpTrace* trace) {
    Matrix out(ids.size(), table.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= table.rows) fail(errc::invalid_argument, "embedding_lookup: id out of range");
        for (std::size_t c = 0; c < table.cols; ++c) out.at(i, c) = table.at(ids[i], c);
    }
    if (trace) trace->record(OpKind::Embedding, 0, out.rows, out.cols);
    return out;
}

Matrix mean_pool_rows(const Matrix& a, OpTrace* trace) {
    if (a.rows == 0) fail(errc::invalid_argument, "mean_pool_rows: empty input");
    Matrix out(1, a.cols);
    for (std::size_t c = 0; c < a.cols; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < a.rows; ++r) acc += a.at(r, c);
        out.at(0, c) = acc / static_cast<double>(a.rows);
    }
    if (trace) trace->record(OpKind::ReduceMean, a.cols, out.rows, out.cols);
    return out;
}

Matrix concat_rows(const Matrix& a, const Matrix& b, OpTrace* trace) {
    if (a.cols != b.cols && !a.empty() && !b.empty())
        fail(errc::dimension_mismatch, "concat_rows: column mismatch");
    if (a.empty()) return b;
    if (b.empty()) return a;
    Matrix out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    if (trace) trace->record(OpKind::Concat, 0, out.rows, out.cols);
    return out;
}

std::size_t argmax_row(const Matrix& a, std::size_t row, OpTrace* trace) {
    if (row >= a.rows || a.cols == 0) fail(errc::invalid_argument, "argmax_row: bad row");
    std::size_t best = 0;
    for (std::size_t c = 1; c < a.cols; ++c)
        if (a.at(row, c) > a.at(row, best)) best = c;
    if (trace) trace->record(OpKind::ArgMax, a.cols, 1, 1);
    return best;
}

Matrix project(const Matrix& x, const Matrix& w, const LoraPatch* lora, OpTrace* trace) {
    Matrix y = matmul(x, w, trace);
    if (lora && lora->a && lora->b) {
        if (lora->a->cols != x.cols || lora->b->cols != lora->a->rows || lora->b->rows != w.cols)
            fail(errc::dimension_mismatch, "lora patch dimensions do not match projection");
        Matrix u = matmul_nt(x, *lora->a, trace);       // tokens x rank
        Matrix v = matmul_nt(u, *lora->b, trace);       // tokens x d_out
        y = add(y, scale(v, lora->scaling, trace), trace);
    }
    return y;
}

namespace {

Matrix head_slice(const Matrix& m, std::size_t head, std::size_t head_dim) {
    Matrix out(m.rows, head_dim);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < head_dim; ++c) out.at(r, c) = m.at(r, head * head_dim + c);
    return out;
}

void head_merge(Matrix& dst, const Matrix& part, std::size_t head, std::size_t head_dim) {
    for (std::size_t r = 0; r < part.rows; ++r)
        for (std::size_t c = 0; c < head_dim; ++c) dst.at(r, head * head_dim + c) = part.at(r, c);
}

}  // namespace

Matrix block_forward(const TransformerBlockSpec& spec, const BlockWeights& w, const Matrix& input,
                     const BlockAdapters* adapters, OpTrace* trace) {
    spec.validate();
    if (input.cols != spec.model_dim) fail(errc::dimension_mismatch, "block_forward: input cols != model_dim");
    const std::size_t head_dim = spec.model_dim / spec.heads;
    const bool causal = spec.kind == BlockKind::Decoder;

    const Matrix normed = layer_norm(input, w.ln1_gain, w.ln1_bias, trace);
    const LoraPatch* lq = adapters && adapters->query ? &*adapters->query : nullptr;
    const LoraPatch* lv = adapters && adapters->value ? &*adapters->value : nullptr;
    const Matrix q = project(normed, w.wq, lq, trace);
    const Matrix k = project(normed, w.wk, nullptr, trace);
    const Matrix v = project(normed, w.wv, lv, trace);

    Matrix attn(input.rows, spec.model_dim);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (std::size_t h = 0; h < spec.heads; ++h) {
        // head split/merge is data movement, not a traced primitive
        const Matrix qh = head_slice(q, h, head_dim);
        const Matrix kh = head_slice(k, h, head_dim);
        const Matrix vh = head_slice(v, h, head_dim);
        const Matrix kt = transpose(kh, trace);
        const Matrix scores = scale(matmul(qh, kt, trace), inv_sqrt, trace);
        const Matrix probs = softmax_rows(scores, causal, trace);
        const Matrix ctx = matmul(probs, vh, trace);
        head_merge(attn, ctx, h, head_dim);
    }
    const Matrix attn_out = matmul(attn, w.wo, trace);
    const Matrix x1 = add(input, attn_out, trace);

    const Matrix normed2 = layer_norm(x1, w.ln2_gain, w.ln2_bias, trace);
    const Matrix hidden = gelu(matmul(normed2, w.w1, trace), trace);
    const Matrix ffn_out = matmul(hidden, w.w2, trace);
    return add(x1, ffn_out, trace);
}

}  // namespace m4
