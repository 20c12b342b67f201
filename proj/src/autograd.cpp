#include "m4/autograd.hpp"

#include <cmath>
#include <memory>

namespace m4::ad {

namespace {

// plain helpers, no tracing
Matrix mm(const Matrix& a, const Matrix& b) { return matmul(a, b, nullptr); }
Matrix mm_nt(const Matrix& a, const Matrix& b) { return matmul_nt(a, b, nullptr); }

Matrix mm_tn(const Matrix& a, const Matrix& b) {  // a^T * b
    if (a.rows != b.rows) fail(errc::dimension_mismatch, "mm_tn: shape mismatch");
    Matrix out(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.row(k);
        const double* brow = b.row(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = out.row(i);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

void accumulate(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

Graph::Id Graph::make(Matrix value, bool needs_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    if (needs_grad) n.grad = Matrix(n.value.rows, n.value.cols);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

Graph::Id Graph::input(Matrix value) { return make(std::move(value), false, nullptr); }

Graph::Id Graph::param(const Matrix& value) { return make(value, true, nullptr); }

double Graph::scalar(Id id) const {
    const Matrix& v = nodes_[id].value;
    if (v.rows != 1 || v.cols != 1) fail(errc::invalid_argument, "scalar: node is not 1x1");
    return v.data[0];
}

void Graph::backward(Id loss) {
    if (nodes_[loss].value.size() != 1) fail(errc::invalid_argument, "backward: loss must be scalar");
    if (!nodes_[loss].needs_grad) return;  // nothing trainable reaches the loss
    nodes_[loss].grad.data[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back();
    }
}

Graph::Id Graph::matmul(Id a, Id b) {
    Matrix v = mm(nodes_[a].value, nodes_[b].value);
    const bool ng = tracked(a) || tracked(b);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        nodes_[out].back = [this, a, b, out] {
            const Matrix& d = nodes_[out].grad;
            if (tracked(a)) accumulate(nodes_[a].grad, mm_nt(d, nodes_[b].value));
            if (tracked(b)) accumulate(nodes_[b].grad, mm_tn(nodes_[a].value, d));
        };
    }
    return out;
}

Graph::Id Graph::matmul_nt(Id a, Id b) {
    Matrix v = mm_nt(nodes_[a].value, nodes_[b].value);
    const bool ng = tracked(a) || tracked(b);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        nodes_[out].back = [this, a, b, out] {
            const Matrix& d = nodes_[out].grad;  // (ra x rb); C = A * B^T
            if (tracked(a)) accumulate(nodes_[a].grad, mm(d, nodes_[b].value));
            if (tracked(b)) accumulate(nodes_[b].grad, mm_tn(d, nodes_[a].value));
        };
    }
    return out;
}

Graph::Id Graph::add(Id a, Id b) {
    Matrix v = m4::add(nodes_[a].value, nodes_[b].value, nullptr);
    const bool ng = tracked(a) || tracked(b);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        nodes_[out].back = [this, a, b, out] {
            const Matrix& d = nodes_[out].grad;
            if (tracked(a)) accumulate(nodes_[a].grad, d);
            if (tracked(b)) accumulate(nodes_[b].grad, d);
        };
    }
    return out;
}

Graph::Id Graph::add_rowvec(Id a, Id row) {
    Matrix v = m4::add_rowvec(nodes_[a].value, nodes_[row].value, nullptr);
    const bool ng = tracked(a) || tracked(row);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        nodes_[out].back = [this, a, row, out] {
            const Matrix& d = nodes_[out].grad;
            if (tracked(a)) accumulate(nodes_[a].grad, d);
            if (tracked(row)) {
                Matrix& g = nodes_[row].grad;
                for (std::size_t r = 0; r < d.rows; ++r)
                    for (std::size_t c = 0; c < d.cols; ++c) g.at(0, c) += d.at(r, c);
            }
        };
    }
    return out;
}

Graph::Id Graph::scale(Id a, double s) {
    Matrix v = m4::scale(nodes_[a].value, s, nullptr);
    const bool ng = tracked(a);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        nodes_[out].back = [this, a, s, out] {
            accumulate(nodes_[a].grad, m4::scale(nodes_[out].grad, s, nullptr));
        };
    }
    return out;
}

Graph::Id Graph::slice_cols(Id a, std::size_t c0, std::size_t c1) {
    const Matrix& src = nodes_[a].value;
    if (c1 > src.cols || c0 >= c1) fail(errc::invalid_argument, "slice_cols: bad range");
    Matrix v(src.rows, c1 - c0);
    for (std::size_t r = 0; r < src.rows; ++r)
        for (std::size_t c = c0; c < c1; ++c) v.at(r, c - c0) = src.at(r, c);
    const bool ng = tracked(a);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        nodes_[out].back = [this, a, c0, out] {
            const Matrix& d = nodes_[out].grad;
            Matrix& g = nodes_[a].grad;
            for (std::size_t r = 0; r < d.rows; ++r)
                for (std::size_t c = 0; c < d.cols; ++c) g.at(r, c0 + c) += d.at(r, c);
        };
    }
    return out;
}

Graph::Id Graph::concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) fail(errc::invalid_argument, "concat_cols: empty");
    std::size_t cols = 0;
    const std::size_t rows = nodes_[parts[0]].value.rows;
    bool ng = false;
    for (Id p : parts) {
        cols += nodes_[p].value.cols;
        ng = ng || tracked(p);
    }
    Matrix v(rows, cols);
    std::size_t off = 0;
    for (Id p : parts) {
        const Matrix& m = nodes_[p].value;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < m.cols; ++c) v.at(r, off + c) = m.at(r, c);
        off += m.cols;
    }
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        auto ps = parts;
        nodes_[out].back = [this, ps, out] {
            const Matrix& d = nodes_[out].grad;
            std::size_t off2 = 0;
            for (Id p : ps) {
                Matrix& g = nodes_[p].grad;
                const std::size_t pc = nodes_[p].value.cols;
                if (tracked(p)) {
                    for (std::size_t r = 0; r < d.rows; ++r)
                        for (std::size_t c = 0; c < pc; ++c) g.at(r, c) += d.at(r, off2 + c);
                }
                off2 += pc;
            }
        };
    }
    return out;
}

Graph::Id Graph::concat_rows(const std::vector<Id>& parts) {
    if (parts.empty()) fail(errc::invalid_argument, "concat_rows: empty");
    std::size_t rows = 0;
    const std::size_t cols = nodes_[parts[0]].value.cols;
    bool ng = false;
    for (Id p : parts) {
        rows += nodes_[p].value.rows;
        ng = ng || tracked(p);
    }
    Matrix v(rows, cols);
    std::size_t off = 0;
    for (Id p : parts) {
        const Matrix& m = nodes_[p].value;
        std::copy(m.data.begin(), m.data.end(), v.data.begin() + static_cast<std::ptrdiff_t>(off * cols));
        off += m.rows;
    }
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        auto ps = parts;
        nodes_[out].back = [this, ps, out] {
            const Matrix& d = nodes_[out].grad;
            std::size_t off2 = 0;
            for (Id p : ps) {
                const std::size_t pr = nodes_[p].value.rows;
                if (tracked(p)) {
                    Matrix& g = nodes_[p].grad;
                    for (std::size_t r = 0; r < pr; ++r)
                        for (std::size_t c = 0; c < d.cols; ++c) g.at(r, c) += d.at(off2 + r, c);
                }
                off2 += pr;
            }
        };
    }
    return out;
}

Graph::Id Graph::layer_norm(Id a, const std::vector<double>& gain, const std::vector<double>& bias) {
    Matrix v = m4::layer_norm(nodes_[a].value, gain, bias, nullptr);
    const bool ng = tracked(a);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        auto g = gain;
        nodes_[out].back = [this, a, g, out] {
            constexpr double eps = 1e-5;
            const Matrix& x = nodes_[a].value;
            const Matrix& d = nodes_[out].grad;
            Matrix& gx = nodes_[a].grad;
            const std::size_t n = x.cols;
            for (std::size_t r = 0; r < x.rows; ++r) {
                double mean = 0.0;
                for (std::size_t c = 0; c < n; ++c) mean += x.at(r, c);
                mean /= static_cast<double>(n);
                double var = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    const double t = x.at(r, c) - mean;
                    var += t * t;
                }
                var /= static_cast<double>(n);
                const double inv = 1.0 / std::sqrt(var + eps);
                double mq = 0.0, mqx = 0.0;
                std::vector<double> q(n), xhat(n);
                for (std::size_t c = 0; c < n; ++c) {
                    xhat[c] = (x.at(r, c) - mean) * inv;
                    q[c] = d.at(r, c) * g[c];
                    mq += q[c];
                    mqx += q[c] * xhat[c];
                }
                mq /= static_cast<double>(n);
                mqx /= static_cast<double>(n);
                for (std::size_t c = 0; c < n; ++c)
                    gx.at(r, c) += (q[c] - mq - xhat[c] * mqx) * inv;
            }
        };
    }
    return out;
}

Graph::Id Graph::gelu(Id a) {
    Matrix v = m4::gelu(nodes_[a].value, nullptr);
    const bool ng = tracked(a);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        nodes_[out].back = [this, a, out] {
            const Matrix& x = nodes_[a].value;
            const Matrix& d = nodes_[out].grad;
            Matrix& g = nodes_[a].grad;
            constexpr double inv_sqrt2 = 0.7071067811865476;
            constexpr double inv_sqrt2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < x.data.size(); ++i) {
                const double xv = x.data[i];
                const double phi = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * xv * xv);
                g.data[i] += d.data[i] * (phi + xv * pdf);
            }
        };
    }
    return out;
}

Graph::Id Graph::softmax_rows(Id a, bool causal) {
    Matrix v = m4::softmax_rows(nodes_[a].value, causal, nullptr);
    const bool ng = tracked(a);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        nodes_[out].back = [this, a, out] {
            const Matrix& y = nodes_[out].value;
            const Matrix& d = nodes_[out].grad;
            Matrix& g = nodes_[a].grad;
            for (std::size_t r = 0; r < y.rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < y.cols; ++c) dot += d.at(r, c) * y.at(r, c);
                for (std::size_t c = 0; c < y.cols; ++c)
                    g.at(r, c) += (d.at(r, c) - dot) * y.at(r, c);
            }
        };
    }
    return out;
}

Graph::Id Graph::mean_pool_rows(Id a) {
    Matrix v = m4::mean_pool_rows(nodes_[a].value, nullptr);
    const bool ng = tracked(a);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        nodes_[out].back = [this, a, out] {
            const Matrix& d = nodes_[out].grad;
            Matrix& g = nodes_[a].grad;
            const double inv = 1.0 / static_cast<double>(g.rows);
            for (std::size_t r = 0; r < g.rows; ++r)
                for (std::size_t c = 0; c < g.cols; ++c) g.at(r, c) += d.at(0, c) * inv;
        };
    }
    return out;
}

Graph::Id Graph::l2_normalize_rows(Id a) {
    const Matrix& x = nodes_[a].value;
    Matrix v = m4::l2_normalize_rows(x, nullptr);
    const bool ng = tracked(a);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        nodes_[out].back = [this, a, out] {
            const Matrix& x2 = nodes_[a].value;
            const Matrix& y = nodes_[out].value;
            const Matrix& d = nodes_[out].grad;
            Matrix& g = nodes_[a].grad;
            for (std::size_t r = 0; r < x2.rows; ++r) {
                double norm = 0.0, ydotd = 0.0;
                for (std::size_t c = 0; c < x2.cols; ++c) norm += x2.at(r, c) * x2.at(r, c);
                norm = std::sqrt(norm);
                if (norm == 0.0) continue;
                for (std::size_t c = 0; c < x2.cols; ++c) ydotd += y.at(r, c) * d.at(r, c);
                for (std::size_t c = 0; c < x2.cols; ++c)
                    g.at(r, c) += (d.at(r, c) - y.at(r, c) * ydotd) / norm;
            }
        };
    }
    return out;
}

Graph::Id Graph::cross_entropy(Id logits, const std::vector<std::uint32_t>& targets) {
    const Matrix& x = nodes_[logits].value;
    if (targets.size() != x.rows) fail(errc::dimension_mismatch, "cross_entropy: one target per row");
    std::size_t valid = 0;
    double loss = 0.0;
    Matrix probs(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        double mx = x.at(r, 0);
        for (std::size_t c = 1; c < x.cols; ++c) mx = std::max(mx, x.at(r, c));
        double denom = 0.0;
        for (std::size_t c = 0; c < x.cols; ++c) denom += std::exp(x.at(r, c) - mx);
        for (std::size_t c = 0; c < x.cols; ++c) probs.at(r, c) = std::exp(x.at(r, c) - mx) / denom;
        if (targets[r] == kIgnore) continue;
        if (targets[r] >= x.cols) fail(errc::invalid_argument, "cross_entropy: target out of range");
        loss -= std::log(std::max(probs.at(r, targets[r]), 1e-300));
        ++valid;
    }
    if (valid == 0) fail(errc::invalid_argument, "cross_entropy: no valid targets");
    Matrix v(1, 1);
    v.data[0] = loss / static_cast<double>(valid);
    const bool ng = tracked(logits);
    Id out = make(std::move(v), ng, nullptr);
    if (ng) {
        auto t = targets;
        auto p = std::make_shared<Matrix>(std::move(probs));
        nodes_[out].back = [this, logits, out, t, p, valid] {
            const double dl = nodes_[out].grad.data[0] / static_cast<double>(valid);
            Matrix& g = nodes_[logits].grad;
            for (std::size_t r = 0; r < g.rows; ++r) {
                if (t[r] == kIgnore) continue;
                for (std::size_t c = 0; c < g.cols; ++c) {
                    const double onehot = c == t[r] ? 1.0 : 0.0;
                    g.at(r, c) += dl * (p->at(r, c) - onehot);
                }
            }
        };
    }
    return out;
}

Graph::Id tape_block_forward(Graph& g, const TransformerBlockSpec& spec, const TapeBlock& blk,
                             Graph::Id x) {
    spec.validate();
    const BlockWeights& w = *blk.w;
    const std::size_t head_dim = spec.model_dim / spec.heads;
    const bool causal = spec.kind == BlockKind::Decoder;

    const auto project = [&](Graph::Id input, const Matrix& weight, const TapeLora& lora) {
        Graph::Id y = g.matmul(input, g.input(weight));
        if (lora.present) {
            Graph::Id u = g.matmul_nt(input, lora.a);
            Graph::Id v = g.matmul_nt(u, lora.b);
            y = g.add(y, g.scale(v, blk.lora_scaling));
        }
        return y;
    };

    const Graph::Id normed = g.layer_norm(x, w.ln1_gain, w.ln1_bias);
    const Graph::Id q = project(normed, w.wq, blk.lora_q);
    const Graph::Id k = project(normed, w.wk, TapeLora{});
    const Graph::Id v = project(normed, w.wv, blk.lora_v);

    std::vector<Graph::Id> heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (std::size_t h = 0; h < spec.heads; ++h) {
        const std::size_t c0 = h * head_dim, c1 = (h + 1) * head_dim;
        const Graph::Id qh = g.slice_cols(q, c0, c1);
        const Graph::Id kh = g.slice_cols(k, c0, c1);
        const Graph::Id vh = g.slice_cols(v, c0, c1);
        const Graph::Id scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
        const Graph::Id probs = g.softmax_rows(scores, causal);
        heads.push_back(g.matmul(probs, vh));
    }
    const Graph::Id attn = g.concat_cols(heads);
    const Graph::Id x1 = g.add(x, g.matmul(attn, g.input(w.wo)));
    const Graph::Id normed2 = g.layer_norm(x1, w.ln2_gain, w.ln2_bias);
    const Graph::Id hidden = g.gelu(g.matmul(normed2, g.input(w.w1)));
    return g.add(x1, g.matmul(hidden, g.input(w.w2)));
}

}  // namespace m4::ad
