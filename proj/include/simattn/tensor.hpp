#ifndef SIMATTN_TENSOR_HPP
#define SIMATTN_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace simattn {

using Shape = std::vector<int>;

inline int numel(const Shape& s) {
    int n = 1;
    for (int d : s) n *= d;
    return n;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

class Tensor;
using GradFn = std::function<std::vector<Tensor>(const Tensor&)>;

// One op record in the computation graph. Inputs always carry smaller ids,
// so the graph is acyclic by construction and a reverse pass in decreasing
// id order is a valid topological order.
struct Node {
    std::uint64_t id = 0;
    const char* op = "";
    std::vector<Tensor> inputs;
    GradFn grad_fn;  // empty for leaves
};

struct Tape {
    std::uint64_t next_id = 1;
    bool recording = true;
};

inline Tape& tape() {
    thread_local Tape t;
    return t;
}

// Temporarily switches graph recording on or off.
struct RecordingGuard {
    bool saved;
    explicit RecordingGuard(bool on) : saved(tape().recording) { tape().recording = on; }
    ~RecordingGuard() { tape().recording = saved; }
};

// Dense row-major 64-bit tensor, optionally attached to the active graph.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : shape_(std::move(shape)), storage_(std::make_shared<std::vector<double>>(std::move(data))) {
        if (numel(shape_) != static_cast<int>(storage_->size()))
            throw std::invalid_argument("Tensor: shape/data size mismatch");
        if (requires_grad) {
            node_ = std::make_shared<Node>();
            node_->id = tape().next_id++;
            node_->op = "leaf";
        }
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        int n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor full(Shape shape, double v) {
        int n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v));
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int size() const { return storage_ ? static_cast<int>(storage_->size()) : 0; }
    const std::vector<double>& data() const { return *storage_; }
    std::vector<double>& mutable_data() { return *storage_; }
    double operator[](int i) const { return (*storage_)[i]; }

    bool has_node() const { return node_ != nullptr; }
    bool requires_grad() const { return node_ != nullptr; }
    const std::shared_ptr<Node>& node() const { return node_; }

    double item() const {
        if (size() != 1) throw std::invalid_argument("item(): tensor is not scalar");
        return (*storage_)[0];
    }

    // Same storage, severed from the graph.
    Tensor detach() const {
        Tensor t;
        t.shape_ = shape_;
        t.storage_ = storage_;
        return t;
    }

    // Internal: used by op constructors.
    void attach_node(const char* op, std::vector<Tensor> inputs, GradFn fn) {
        node_ = std::make_shared<Node>();
        node_->id = tape().next_id++;
        node_->op = op;
        node_->inputs = std::move(inputs);
        node_->grad_fn = std::move(fn);
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> storage_;
    std::shared_ptr<Node> node_;
};

inline void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x))
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
}

// Builds the result tensor and registers the op on the tape when recording
// and at least one input participates in the graph.
inline Tensor make_op(const char* op, Shape shape, std::vector<double> data,
                      std::vector<Tensor> inputs, GradFn fn) {
    check_finite(op, data);
    Tensor out(std::move(shape), std::move(data));
    bool any_grad = false;
    for (const Tensor& t : inputs)
        if (t.has_node()) { any_grad = true; break; }
    if (any_grad && tape().recording)
        out.attach_node(op, std::move(inputs), std::move(fn));
    return out;
}

// Gradients keyed by graph node, produced by backward().
class GradientMap {
public:
    void set(const Node* n, Tensor g) { grads_[n] = std::move(g); }
    bool contains(const Tensor& t) const {
        return t.has_node() && grads_.count(t.node().get()) > 0;
    }
    const Tensor& at(const Tensor& t) const {
        if (!t.has_node()) throw std::invalid_argument("GradientMap::at: tensor has no node");
        auto it = grads_.find(t.node().get());
        if (it == grads_.end())
            throw std::invalid_argument("GradientMap::at: no gradient recorded for tensor");
        return it->second;
    }
    // Zero tensor of t's shape when t received no gradient.
    Tensor at_or_zero(const Tensor& t) const {
        if (t.has_node()) {
            auto it = grads_.find(t.node().get());
            if (it != grads_.end()) return it->second;
        }
        return Tensor::zeros(t.shape());
    }

private:
    std::unordered_map<const Node*, Tensor> grads_;
};

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// Reverse accumulation from a scalar output. With create_graph the produced
// gradients are themselves graph nodes, so a later backward over an
// expression of gradients is valid (double backprop). Nodes listed in
// stop_at receive their gradient but are not propagated through.
inline GradientMap backward(const Tensor& output, bool create_graph = false,
                            const std::vector<Tensor>& stop_at = {}) {
    if (!output.has_node())
        throw std::invalid_argument("backward: output is not part of the active graph");
    if (output.size() != 1)
        throw std::invalid_argument("backward: output must be scalar");

    std::unordered_set<const Node*> stop;
    for (const Tensor& t : stop_at)
        if (t.has_node()) stop.insert(t.node().get());

    RecordingGuard guard(create_graph);

    std::unordered_map<const Node*, Tensor> acc;
    std::unordered_map<const Node*, std::shared_ptr<Node>> keep;
    auto cmp = [](const std::shared_ptr<Node>& a, const std::shared_ptr<Node>& b) {
        return a->id < b->id;
    };
    std::priority_queue<std::shared_ptr<Node>, std::vector<std::shared_ptr<Node>>, decltype(cmp)>
        frontier(cmp);
    std::unordered_set<const Node*> queued;

    acc[output.node().get()] = Tensor::full({1}, 1.0);
    frontier.push(output.node());
    queued.insert(output.node().get());
    keep[output.node().get()] = output.node();

    GradientMap result;
    while (!frontier.empty()) {
        std::shared_ptr<Node> n = frontier.top();
        frontier.pop();
        Tensor g = acc[n.get()];
        result.set(n.get(), g);
        if (!n->grad_fn || stop.count(n.get())) continue;
        std::vector<Tensor> input_grads = n->grad_fn(g);
        if (input_grads.size() != n->inputs.size())
            throw std::runtime_error("backward: grad_fn arity mismatch");
        for (size_t i = 0; i < n->inputs.size(); ++i) {
            const Tensor& in = n->inputs[i];
            if (!in.has_node() || !input_grads[i].defined()) continue;
            const Node* key = in.node().get();
            auto it = acc.find(key);
            if (it == acc.end()) {
                acc[key] = input_grads[i];
            } else if (create_graph) {
                it->second = add(it->second, input_grads[i]);
            } else {
                // raw accumulation, no graph growth
                Tensor sum = it->second.detach();
                Tensor fresh(sum.shape(), sum.data());
                auto& d = fresh.mutable_data();
                const auto& s = input_grads[i].data();
                for (size_t j = 0; j < d.size(); ++j) d[j] += s[j];
                it->second = fresh;
            }
            if (!queued.count(key)) {
                queued.insert(key);
                keep[key] = in.node();
                frontier.push(in.node());
            }
        }
    }
    return result;
}

}  // namespace simattn

#endif  // SIMATTN_TENSOR_HPP
