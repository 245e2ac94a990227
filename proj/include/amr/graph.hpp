#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "amr/array.hpp"
#include "amr/common.hpp"

namespace amr::tc {

// Handle into a Graph's tape. Plain index; cheap to copy into closures.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended in execution order; backward walks the
// tape once in reverse, then releases node storage so peak memory stays near
// the forward-pass working set. A graph is single-use: one forward build, at
// most one backward.
template <class T>
class Graph {
  public:
    using BackFn = std::function<void(Graph&, const Array<T>&)>;

    Var leaf(Array<T> v, bool needs_grad = false) {
        return record(std::move(v), needs_grad, nullptr);
    }

    // Leaf whose gradient is handed to an external sink (parameter banks).
    Var leaf_with_sink(Array<T> v, std::function<void(const Array<T>&)> sink) {
        return record(std::move(v), true,
                      [s = std::move(sink)](Graph&, const Array<T>& gout) { s(gout); });
    }

    Var record(Array<T> val, bool needs_grad, BackFn back) {
        Node n;
        n.val = std::move(val);
        n.needs_grad = needs_grad;
        n.back = needs_grad ? std::move(back) : nullptr;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Array<T>& val(Var x) const {
        const Node& n = node(x);
        if (n.released)
            throw LifecycleError("tensor value read after backward released this graph");
        return n.val;
    }

    const Shape& shape(Var x) const { return node(x).val.shape; }  // survives release

    bool wants_grad(Var x) const { return node(x).needs_grad; }

    // Gradient buffer, allocated to zeros on first touch.
    Array<T>& grad_buf(Var x) {
        Node& n = node(x);
        if (n.released) throw LifecycleError("gradient touched after backward released this graph");
        if (n.grad.size() == 0) n.grad = Array<T>(n.val.shape);
        return n.grad;
    }

    void add_grad(Var x, const Array<T>& g) {
        if (!wants_grad(x)) return;
        Array<T>& buf = grad_buf(x);
        if (buf.size() != g.size())
            throw ShapeError("gradient shape mismatch: " + shape_str(buf.shape) + " vs " +
                             shape_str(g.shape));
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
    }

    // Reverse sweep from loss. free_memory releases each node (value, grad,
    // closure) as soon as it has been processed.
    void backward(Var loss, bool free_memory = true) {
        if (backward_done_)
            throw LifecycleError("backward already ran on this graph; build a new graph");
        Node& ln = node(loss);
        if (ln.released) throw LifecycleError("loss node already released");
        if (ln.val.size() != 1)
            throw InvalidArgument("backward needs a scalar loss, got shape " +
                                  shape_str(ln.val.shape));
        backward_done_ = true;
        if (!ln.needs_grad) return;  // no parameters reachable
        grad_buf(loss).fill(T(1));
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.needs_grad && n.grad.size() != 0 && n.back) n.back(*this, n.grad);
            if (free_memory) release(n);
        }
    }

    bool backward_done() const { return backward_done_; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Array<T> val;
        Array<T> grad;
        BackFn back;
        bool needs_grad = false;
        bool released = false;
    };

    Node& node(Var x) {
        if (!x.valid() || x.id >= static_cast<int>(nodes_.size()))
            throw InvalidArgument("invalid graph handle");
        return nodes_[static_cast<std::size_t>(x.id)];
    }
    const Node& node(Var x) const {
        if (!x.valid() || x.id >= static_cast<int>(nodes_.size()))
            throw InvalidArgument("invalid graph handle");
        return nodes_[static_cast<std::size_t>(x.id)];
    }

    void release(Node& n) {
        std::vector<T>().swap(n.val.v);  // keep shape, drop data
        std::vector<T>().swap(n.grad.v);
        n.grad.shape.clear();
        n.back = nullptr;
        n.released = true;
    }

    // deque: references returned by val()/shape() stay valid while later
    // nodes are appended (a vector would reallocate under them)
    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace amr::tc
