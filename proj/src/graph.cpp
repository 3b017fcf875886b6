#include "acq/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "acq/errors.hpp"

namespace acq {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

constexpr std::size_t kDenseRowBlock = 4;

void require(bool condition, const std::string& message) {
    if (!condition) throw ContractError(message);
}

// out[k, p] = sum_q kernel[k, q] * cols[q, p] + bias[k], summed in q order.
void conv_sample_forward(const double* kernel, const double* bias, const double* cols, double* out,
                         std::size_t filters, std::size_t patch, std::size_t positions) {
    for (std::size_t k = 0; k < filters; ++k) {
        double* row = out + k * positions;
        std::fill(row, row + positions, 0.0);
        const double* weights = kernel + k * patch;
        for (std::size_t q = 0; q < patch; ++q) {
            const double w = weights[q];
            const double* col = cols + q * positions;
            for (std::size_t p = 0; p < positions; ++p) row[p] += w * col[p];
        }
        const double b = bias[k];
        for (std::size_t p = 0; p < positions; ++p) row[p] += b;
    }
}

}  // namespace

NodeId Graph::add(Node node) {
    nodes_.push_back(std::move(node));
    forwarded_ = false;
    backwarded_ = false;
    return NodeId{nodes_.size() - 1};
}

const Graph::Node& Graph::node_at(NodeId id) const {
    if (id.index >= nodes_.size()) throw ContractError("unknown graph node " + std::to_string(id.index));
    return nodes_[id.index];
}

Graph::Node& Graph::node_at(NodeId id) {
    if (id.index >= nodes_.size()) throw ContractError("unknown graph node " + std::to_string(id.index));
    return nodes_[id.index];
}

NodeId Graph::input(Tensor value, bool requires_grad) {
    Node node;
    node.op = Op::Input;
    node.shape = value.shape();
    node.owned = std::move(value);
    node.requires_grad = requires_grad;
    return add(std::move(node));
}

NodeId Graph::parameter(const Tensor& value, bool requires_grad) {
    Node node;
    node.op = Op::Parameter;
    node.shape = value.shape();
    node.borrowed = &value;
    node.requires_grad = requires_grad;
    return add(std::move(node));
}

void Graph::set_input(NodeId leaf, Tensor value) {
    Node& node = node_at(leaf);
    if (node.op != Op::Input) throw ContractError("set_input on a non-input node");
    if (value.shape() != node.shape)
        throw ContractError("set_input shape " + to_string(value.shape()) + " does not match " +
                            to_string(node.shape));
    node.owned = std::move(value);
    forwarded_ = false;
    backwarded_ = false;
}

Tensor& Graph::mutable_input(NodeId leaf) {
    Node& node = node_at(leaf);
    if (node.op != Op::Input) throw ContractError("mutable_input on a non-input node");
    forwarded_ = false;
    backwarded_ = false;
    return node.owned;
}

NodeId Graph::conv2d(NodeId input, NodeId kernel, NodeId bias) {
    const Shape& in = shape(input);
    const Shape& k = shape(kernel);
    const Shape& b = shape(bias);
    require(in.size() == 4 && k.size() == 4 && b.size() == 1,
            "conv2d expects input [N,C,H,W], kernel [K,C,kh,kw], bias [K]; got " + to_string(in) + ", " +
                to_string(k) + ", " + to_string(b));
    require(in[1] == k[1], "conv2d channel mismatch: input " + to_string(in) + " vs kernel " + to_string(k));
    require(k[2] <= in[2] && k[3] <= in[3],
            "conv2d kernel " + to_string(k) + " larger than input " + to_string(in));
    require(b[0] == k[0], "conv2d bias " + to_string(b) + " does not match kernel " + to_string(k));
    Node node;
    node.op = Op::Conv2d;
    node.inputs = {input.index, kernel.index, bias.index};
    node.shape = {in[0], k[0], in[2] - k[2] + 1, in[3] - k[3] + 1};
    node.requires_grad = node_at(input).requires_grad || node_at(kernel).requires_grad || node_at(bias).requires_grad;
    return add(std::move(node));
}

NodeId Graph::maxpool2x2(NodeId input) {
    const Shape& in = shape(input);
    require(in.size() == 4, "maxpool2x2 expects [N,C,H,W], got " + to_string(in));
    require(in[2] % 2 == 0 && in[3] % 2 == 0, "maxpool2x2 needs even H and W, got " + to_string(in));
    Node node;
    node.op = Op::MaxPool;
    node.inputs = {input.index};
    node.shape = {in[0], in[1], in[2] / 2, in[3] / 2};
    node.requires_grad = node_at(input).requires_grad;
    return add(std::move(node));
}

NodeId Graph::flatten(NodeId input) {
    const Shape& in = shape(input);
    require(!in.empty(), "flatten of a rank-0 tensor");
    Node node;
    node.op = Op::Flatten;
    node.inputs = {input.index};
    node.shape = {in[0], element_count(in) / in[0]};
    node.requires_grad = node_at(input).requires_grad;
    return add(std::move(node));
}

NodeId Graph::dense(NodeId input, NodeId weight, NodeId bias) {
    const Shape& in = shape(input);
    const Shape& w = shape(weight);
    const Shape& b = shape(bias);
    require(in.size() == 2 && w.size() == 2 && b.size() == 1,
            "dense expects input [N,D], weight [D,M], bias [M]; got " + to_string(in) + ", " + to_string(w) +
                ", " + to_string(b));
    require(in[1] == w[0], "dense inner dimension mismatch: input " + to_string(in) + " vs weight " + to_string(w));
    require(b[0] == w[1], "dense bias " + to_string(b) + " does not match weight " + to_string(w));
    Node node;
    node.op = Op::Dense;
    node.inputs = {input.index, weight.index, bias.index};
    node.shape = {in[0], w[1]};
    node.requires_grad = node_at(input).requires_grad || node_at(weight).requires_grad || node_at(bias).requires_grad;
    return add(std::move(node));
}

NodeId Graph::relu(NodeId input) {
    Node node;
    node.op = Op::Relu;
    node.inputs = {input.index};
    node.shape = shape(input);
    node.requires_grad = node_at(input).requires_grad;
    return add(std::move(node));
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
    const Shape& in = shape(logits);
    require(in.size() == 2, "softmax_cross_entropy expects logits [N,classes], got " + to_string(in));
    Node node;
    node.op = Op::SoftmaxXent;
    node.inputs = {logits.index};
    node.shape = {1};
    node.requires_grad = node_at(logits).requires_grad;
    NodeId id = add(std::move(node));
    set_labels(id, std::move(labels));
    return id;
}

void Graph::set_labels(NodeId loss, std::vector<int> labels) {
    Node& node = node_at(loss);
    if (node.op != Op::SoftmaxXent) throw ContractError("set_labels on a non-loss node");
    const Shape& in = nodes_[node.inputs[0]].shape;
    require(labels.size() == in[0], "softmax_cross_entropy got " + std::to_string(labels.size()) +
                                        " labels for logits " + to_string(in));
    for (int label : labels)
        require(label >= 0 && static_cast<std::size_t>(label) < in[1],
                "label " + std::to_string(label) + " out of range for logits " + to_string(in));
    node.labels = std::move(labels);
    forwarded_ = false;
    backwarded_ = false;
}

NodeId Graph::sum(NodeId input) {
    Node node;
    node.op = Op::Sum;
    node.inputs = {input.index};
    node.shape = {1};
    node.requires_grad = node_at(input).requires_grad;
    return add(std::move(node));
}

const Tensor& Graph::value(NodeId node) const {
    const Node& n = node_at(node);
    if (n.op != Op::Input && n.op != Op::Parameter && !forwarded_)
        throw StateError("value() of node " + std::to_string(node.index) + " before forward()");
    return n.value();
}

const Tensor& Graph::grad(NodeId node) const {
    const Node& n = node_at(node);
    if (!backwarded_) throw StateError("grad() before backward()");
    if (!n.requires_grad) throw StateError("node " + std::to_string(node.index) + " does not require gradients");
    return n.grad;
}

const Shape& Graph::shape(NodeId node) const { return node_at(node).shape; }

Tensor Graph::probabilities(NodeId loss) const {
    const Node& n = node_at(loss);
    if (n.op != Op::SoftmaxXent) throw ContractError("probabilities() on a non-loss node");
    if (!forwarded_) throw StateError("probabilities() before forward()");
    return Tensor(nodes_[n.inputs[0]].shape, n.cache);
}

void Graph::forward() {
    for (Node& node : nodes_) {
        if (node.op == Op::Input || node.op == Op::Parameter) {
            if (node.value().shape() != node.shape)
                throw ContractError("leaf value shape " + to_string(node.value().shape()) + " differs from " +
                                    to_string(node.shape));
            continue;
        }
        if (node.owned.shape() != node.shape) node.owned = Tensor(node.shape);
        switch (node.op) {
            case Op::Conv2d: forward_conv(node); break;
            case Op::MaxPool: forward_pool(node); break;
            case Op::Flatten: {
                const Tensor& in = nodes_[node.inputs[0]].value();
                std::copy(in.data().begin(), in.data().end(), node.owned.data().begin());
                break;
            }
            case Op::Dense: forward_dense(node); break;
            case Op::Relu: {
                const Tensor& in = nodes_[node.inputs[0]].value();
                for (std::size_t i = 0; i < in.size(); ++i) node.owned[i] = in[i] > 0.0 ? in[i] : 0.0;
                break;
            }
            case Op::SoftmaxXent: forward_xent(node); break;
            case Op::Sum: {
                const Tensor& in = nodes_[node.inputs[0]].value();
                double total = 0.0;
                for (double v : in.data()) total += v;
                node.owned[0] = total;
                break;
            }
            default: break;
        }
    }
    forwarded_ = true;
    backwarded_ = false;
}

void Graph::backward(NodeId loss) {
    if (!forwarded_) throw StateError("backward() called before forward()");
    Node& root = node_at(loss);
    if (root.shape != Shape{1}) throw ContractError("backward() needs a scalar node, got " + to_string(root.shape));
    for (Node& node : nodes_) {
        if (!node.requires_grad) continue;
        if (node.grad.shape() != node.shape)
            node.grad = Tensor(node.shape);
        else
            node.grad.fill(0.0);
    }
    if (root.requires_grad) root.grad[0] = 1.0;

    for (std::size_t i = loss.index + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad) continue;
        switch (node.op) {
            case Op::Input:
            case Op::Parameter: break;
            case Op::Conv2d: backward_conv(node); break;
            case Op::MaxPool: backward_pool(node); break;
            case Op::Flatten: {
                Node& in = nodes_[node.inputs[0]];
                if (!in.requires_grad) break;
                for (std::size_t j = 0; j < node.grad.size(); ++j) in.grad[j] += node.grad[j];
                break;
            }
            case Op::Dense: backward_dense(node); break;
            case Op::Relu: {
                Node& in = nodes_[node.inputs[0]];
                if (!in.requires_grad) break;
                const Tensor& x = in.value();
                for (std::size_t j = 0; j < x.size(); ++j)
                    if (x[j] > 0.0) in.grad[j] += node.grad[j];
                break;
            }
            case Op::SoftmaxXent: backward_xent(node); break;
            case Op::Sum: {
                Node& in = nodes_[node.inputs[0]];
                if (!in.requires_grad) break;
                const double g = node.grad[0];
                for (double& v : in.grad.data()) v += g;
                break;
            }
        }
    }
    backwarded_ = true;
}

void Graph::forward_conv(Node& node) {
    const Tensor& in = nodes_[node.inputs[0]].value();
    const Tensor& kernel = nodes_[node.inputs[1]].value();
    const Tensor& bias = nodes_[node.inputs[2]].value();
    const std::size_t n_batch = in.dim(0), channels = in.dim(1), height = in.dim(2), width = in.dim(3);
    const std::size_t filters = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::size_t out_h = node.shape[2], out_w = node.shape[3];
    const std::size_t patch = channels * kh * kw;
    const std::size_t positions = out_h * out_w;

    node.cache.resize(n_batch * patch * positions);
    for (std::size_t n = 0; n < n_batch; ++n) {
        double* cols = node.cache.data() + n * patch * positions;
        const double* image = in.raw() + n * channels * height * width;
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    double* dst = cols + ((c * kh + ky) * kw + kx) * positions;
                    for (std::size_t oy = 0; oy < out_h; ++oy) {
                        const double* src = image + (c * height + oy + ky) * width + kx;
                        std::copy(src, src + out_w, dst + oy * out_w);
                    }
                }
        conv_sample_forward(kernel.raw(), bias.raw(), cols, node.owned.raw() + n * filters * positions, filters,
                            patch, positions);
    }
}

void Graph::backward_conv(Node& node) {
    Node& in_node = nodes_[node.inputs[0]];
    Node& kernel_node = nodes_[node.inputs[1]];
    Node& bias_node = nodes_[node.inputs[2]];
    const Tensor& kernel = kernel_node.value();
    const std::size_t n_batch = node.shape[0], filters = node.shape[1];
    const std::size_t channels = in_node.shape[1], height = in_node.shape[2], width = in_node.shape[3];
    const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
    const std::size_t out_h = node.shape[2], out_w = node.shape[3];
    const std::size_t patch = channels * kh * kw;
    const std::size_t positions = out_h * out_w;

    ConstMatrixMap weights(kernel.raw(), filters, patch);
    RowMatrix dcols(patch, positions);
    for (std::size_t n = 0; n < n_batch; ++n) {
        ConstMatrixMap upstream(node.grad.raw() + n * filters * positions, filters, positions);
        ConstMatrixMap cols(node.cache.data() + n * patch * positions, patch, positions);
        if (kernel_node.requires_grad) {
            MatrixMap dkernel(kernel_node.grad.raw(), filters, patch);
            dkernel.noalias() += upstream * cols.transpose();
        }
        if (bias_node.requires_grad) {
            for (std::size_t k = 0; k < filters; ++k) {
                const double* row = node.grad.raw() + (n * filters + k) * positions;
                double total = 0.0;
                for (std::size_t p = 0; p < positions; ++p) total += row[p];
                bias_node.grad[k] += total;
            }
        }
        if (in_node.requires_grad) {
            dcols.noalias() = weights.transpose() * upstream;
            double* dimage = in_node.grad.raw() + n * channels * height * width;
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t ky = 0; ky < kh; ++ky)
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const double* src = dcols.data() + ((c * kh + ky) * kw + kx) * positions;
                        for (std::size_t oy = 0; oy < out_h; ++oy) {
                            double* dst = dimage + (c * height + oy + ky) * width + kx;
                            for (std::size_t ox = 0; ox < out_w; ++ox) dst[ox] += src[oy * out_w + ox];
                        }
                    }
        }
    }
}

void Graph::forward_pool(Node& node) {
    const Tensor& in = nodes_[node.inputs[0]].value();
    const std::size_t planes = in.dim(0) * in.dim(1), height = in.dim(2), width = in.dim(3);
    const std::size_t out_h = height / 2, out_w = width / 2;
    node.indices.resize(node.owned.size());
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < planes; ++plane) {
        const std::size_t base = plane * height * width;
        for (std::size_t oy = 0; oy < out_h; ++oy)
            for (std::size_t ox = 0; ox < out_w; ++ox, ++o) {
                std::size_t best = base + (2 * oy) * width + 2 * ox;
                const std::size_t window[3] = {best + 1, best + width, best + width + 1};
                for (std::size_t candidate : window)
                    if (in[candidate] > in[best]) best = candidate;
                node.owned[o] = in[best];
                node.indices[o] = best;
            }
    }
}

void Graph::backward_pool(Node& node) {
    Node& in = nodes_[node.inputs[0]];
    if (!in.requires_grad) return;
    for (std::size_t o = 0; o < node.indices.size(); ++o) in.grad[node.indices[o]] += node.grad[o];
}

void Graph::forward_dense(Node& node) {
    const Tensor& in = nodes_[node.inputs[0]].value();
    const Tensor& weight = nodes_[node.inputs[1]].value();
    const Tensor& bias = nodes_[node.inputs[2]].value();
    const std::size_t rows = in.dim(0), inner = in.dim(1), outputs = weight.dim(1);
    double* out = node.owned.raw();
    std::fill(out, out + rows * outputs, 0.0);
    // Row-blocked axpy form: each output row is accumulated in d order, so the
    // result for a row never depends on the batch it was evaluated in.
    for (std::size_t r0 = 0; r0 < rows; r0 += kDenseRowBlock) {
        const std::size_t r1 = std::min(rows, r0 + kDenseRowBlock);
        for (std::size_t d = 0; d < inner; ++d) {
            const double* wrow = weight.raw() + d * outputs;
            for (std::size_t r = r0; r < r1; ++r) {
                const double x = in[r * inner + d];
                if (x == 0.0) continue;
                double* orow = out + r * outputs;
                for (std::size_t m = 0; m < outputs; ++m) orow[m] += x * wrow[m];
            }
        }
    }
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t m = 0; m < outputs; ++m) out[r * outputs + m] += bias[m];
}

void Graph::backward_dense(Node& node) {
    Node& in_node = nodes_[node.inputs[0]];
    Node& weight_node = nodes_[node.inputs[1]];
    Node& bias_node = nodes_[node.inputs[2]];
    const std::size_t rows = node.shape[0], outputs = node.shape[1], inner = in_node.shape[1];
    ConstMatrixMap upstream(node.grad.raw(), rows, outputs);
    if (weight_node.requires_grad) {
        ConstMatrixMap x(in_node.value().raw(), rows, inner);
        MatrixMap dweight(weight_node.grad.raw(), inner, outputs);
        dweight.noalias() += x.transpose() * upstream;
    }
    if (bias_node.requires_grad) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t m = 0; m < outputs; ++m) bias_node.grad[m] += upstream(r, m);
    }
    if (in_node.requires_grad) {
        ConstMatrixMap weights(weight_node.value().raw(), inner, outputs);
        MatrixMap dx(in_node.grad.raw(), rows, inner);
        dx.noalias() += upstream * weights.transpose();
    }
}

void Graph::forward_xent(Node& node) {
    const Tensor& logits = nodes_[node.inputs[0]].value();
    const std::size_t rows = logits.dim(0), classes = logits.dim(1);
    node.cache.resize(rows * classes);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* z = logits.raw() + r * classes;
        double* p = node.cache.data() + r * classes;
        const double peak = *std::max_element(z, z + classes);
        double norm = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            p[c] = std::exp(z[c] - peak);
            norm += p[c];
        }
        for (std::size_t c = 0; c < classes; ++c) p[c] /= norm;
        const auto label = static_cast<std::size_t>(node.labels[r]);
        total += std::log(norm) + peak - z[label];
    }
    node.owned[0] = total / static_cast<double>(rows);
}

void Graph::backward_xent(Node& node) {
    Node& in = nodes_[node.inputs[0]];
    if (!in.requires_grad) return;
    const std::size_t rows = in.shape[0], classes = in.shape[1];
    const double scale = node.grad[0] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto label = static_cast<std::size_t>(node.labels[r]);
        for (std::size_t c = 0; c < classes; ++c) {
            const double onehot = c == label ? 1.0 : 0.0;
            in.grad[r * classes + c] += scale * (node.cache[r * classes + c] - onehot);
        }
    }
}

}  // namespace acq
