#pragma once

#include <functional>
#include <vector>

#include "m4/blocks.hpp"
#include "m4/matrix.hpp"

namespace m4::ad {

// Define-by-run reverse-mode tape over Matrix. A fresh Graph is built per
// training step; parameters live outside the graph and are registered each
// step, with gradients read back after backward().
class Graph {
public:
    using Id = std::size_t;
    static constexpr std::uint32_t kIgnore = 0xffffffffu;

    Id input(Matrix value);                // constant, no gradient
    Id param(const Matrix& value);         // tracked leaf
    const Matrix& value(Id id) const { return nodes_[id].value; }
    const Matrix& grad(Id id) const { return nodes_[id].grad; }

    Id matmul(Id a, Id b);
    Id matmul_nt(Id a, Id b);              // a * b^T
    Id add(Id a, Id b);
    Id add_rowvec(Id a, Id row);
    Id scale(Id a, double s);
    Id slice_cols(Id a, std::size_t c0, std::size_t c1);
    Id concat_cols(const std::vector<Id>& parts);
    Id concat_rows(const std::vector<Id>& parts);
    Id layer_norm(Id a, const std::vector<double>& gain, const std::vector<double>& bias);
    Id gelu(Id a);
    Id softmax_rows(Id a, bool causal);
    Id mean_pool_rows(Id a);
    Id l2_normalize_rows(Id a);
    // mean negative log softmax over rows whose target is not kIgnore; 1x1 output
    Id cross_entropy(Id logits, const std::vector<std::uint32_t>& targets);

    double scalar(Id id) const;
    void backward(Id loss);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        std::function<void()> back;  // accumulates into parents
    };
    std::vector<Node> nodes_;

    Id make(Matrix value, bool needs_grad, std::function<void()> back);
    bool tracked(Id id) const { return nodes_[id].needs_grad; }
    void bump(Id id) { nodes_[id].grad = Matrix(nodes_[id].value.rows, nodes_[id].value.cols); }
};

// Frozen block weights plus optional trainable LoRA ids on the tape.
struct TapeLora {
    Graph::Id a = 0;
    Graph::Id b = 0;
    bool present = false;
};

struct TapeBlock {
    const BlockWeights* w = nullptr;
    TapeLora lora_q, lora_v;
    double lora_scaling = 1.0;
};

// Mirrors block_forward() exactly; a unit test pins the equivalence.
Graph::Id tape_block_forward(Graph& g, const TransformerBlockSpec& spec, const TapeBlock& blk, Graph::Id x);

}  // namespace m4::ad
