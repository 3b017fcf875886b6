#pragma once

#include <cstddef>
#include <vector>

#include "acq/tensor.hpp"

namespace acq {

struct NodeId {
    std::size_t index = 0;
    friend bool operator==(NodeId, NodeId) = default;
};

/// Static computation graph with reverse-mode differentiation.
///
/// Nodes are appended in topological order; output shapes are inferred (and
/// checked) when a node is added. Leaves are either owned inputs, which can be
/// replaced between passes with set_input(), or borrowed parameters that must
/// outlive the graph. forward() evaluates every node; backward(loss) fills the
/// gradient of every node that depends on a leaf requiring gradients.
///
/// A Graph is single-threaded. Several graphs may borrow the same parameters
/// and run concurrently as long as nobody writes to those parameters.
class Graph {
public:
    NodeId input(Tensor value, bool requires_grad = true);
    NodeId parameter(const Tensor& value, bool requires_grad = true);

    /// Replaces an owned input; shape must not change. Invalidates the last pass.
    void set_input(NodeId leaf, Tensor value);
    /// Direct access to an owned input's storage. Invalidates the last pass.
    Tensor& mutable_input(NodeId leaf);

    /// Valid cross-correlation, stride 1: [N,C,H,W] * [K,C,kh,kw] + [K] -> [N,K,H-kh+1,W-kw+1].
    NodeId conv2d(NodeId input, NodeId kernel, NodeId bias);
    /// 2x2 window, stride 2. Ties route the gradient to the first element in row-major order.
    NodeId maxpool2x2(NodeId input);
    /// [N, ...] -> [N, prod(...)]
    NodeId flatten(NodeId input);
    /// [N,D] x [D,M] + [M] -> [N,M]
    NodeId dense(NodeId input, NodeId weight, NodeId bias);
    NodeId relu(NodeId input);
    /// Mean over the batch of -log softmax(logits)[label]; output shape [1].
    NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);
    void set_labels(NodeId loss, std::vector<int> labels);
    /// Sum of all elements; output shape [1].
    NodeId sum(NodeId input);

    void forward();
    void backward(NodeId loss);

    const Tensor& value(NodeId node) const;
    const Tensor& grad(NodeId node) const;
    const Shape& shape(NodeId node) const;
    /// Softmax probabilities cached by a softmax_cross_entropy node after forward().
    Tensor probabilities(NodeId loss) const;

    std::size_t node_count() const noexcept { return nodes_.size(); }
    bool forwarded() const noexcept { return forwarded_; }

private:
    enum class Op { Input, Parameter, Conv2d, MaxPool, Flatten, Dense, Relu, SoftmaxXent, Sum };

    struct Node {
        Op op = Op::Input;
        std::vector<std::size_t> inputs;
        Shape shape;
        Tensor owned;
        const Tensor* borrowed = nullptr;
        Tensor grad;
        bool requires_grad = false;
        // Per-op scratch kept between forward and backward.
        std::vector<double> cache;
        std::vector<std::size_t> indices;
        std::vector<int> labels;

        const Tensor& value() const { return borrowed ? *borrowed : owned; }
    };

    NodeId add(Node node);
    const Node& node_at(NodeId id) const;
    Node& node_at(NodeId id);

    void forward_conv(Node& node);
    void backward_conv(Node& node);
    void forward_pool(Node& node);
    void backward_pool(Node& node);
    void forward_dense(Node& node);
    void backward_dense(Node& node);
    void forward_xent(Node& node);
    void backward_xent(Node& node);

    std::vector<Node> nodes_;
    bool forwarded_ = false;
    bool backwarded_ = false;
};

}  // namespace acq
