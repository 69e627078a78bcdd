#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "windformer/shape.hpp"

namespace windformer {

class Value;
using ValuePtr = std::shared_ptr<Value>;

// One node of a differentiable computation graph. Nodes are immutable after
// construction except for the grad buffer. Graphs are built by the free
// functions in ops.hpp; backward(root) runs the recipes in reverse
// topological order.
class Value {
  public:
    Shape shape;
    std::vector<double> data;
    std::vector<ValuePtr> parents;
    // Accumulates parent grads given this node's grad. May be empty for leaves.
    std::function<void(const Value&)> backward_fn;
    const char* op = "leaf";
    std::string name;          // set for named parameters, else empty
    bool needs_grad = false;   // true for params and anything downstream of one
    uint64_t id = 0;           // creation order, used by the debug dump

    static ValuePtr leaf(Shape s, std::vector<double> d, bool needs_grad = false,
                         std::string name = {});
    static ValuePtr zeros(Shape s, bool needs_grad = false, std::string name = {});

    // Uninitialized-data node wired to its parents; callers fill data and
    // assign backward_fn. needs_grad is inherited from the parents.
    static ValuePtr make(Shape s, std::vector<ValuePtr> parents, const char* op);

    int64_t numel() const { return shape.numel(); }

    // Grad buffers are allocated on first use so forward-only evaluation
    // never pays for them.
    std::vector<double>& grad() {
        if (grad_.empty()) grad_.assign(static_cast<size_t>(numel()), 0.0);
        return grad_;
    }
    const std::vector<double>& grad_view() const { return grad_; }
    bool has_grad() const { return !grad_.empty(); }
    void zero_grad() {
        if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
    }

  private:
    std::vector<double> grad_;
};

// Topological order over every node reachable from root, parents before
// children, deterministic for a given construction order.
std::vector<Value*> topo_order(const ValuePtr& root);

// Reverse-mode sweep from a scalar root: root.grad = 1, then every backward
// recipe exactly once. Contributions from repeated uses accumulate.
void backward(const ValuePtr& root);

// Text edge list of the graph for inspection.
void dump_graph(const ValuePtr& root, std::ostream& os);

}  // namespace windformer
