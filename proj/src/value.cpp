#include "windformer/value.hpp"

#include <atomic>
#include <unordered_set>

#include "windformer/errors.hpp"

namespace windformer {

namespace {
std::atomic<uint64_t> g_next_id{1};
}

ValuePtr Value::leaf(Shape s, std::vector<double> d, bool needs_grad, std::string name) {
    if (static_cast<int64_t>(d.size()) != s.numel())
        throw ShapeError("leaf buffer size " + std::to_string(d.size()) +
                         " does not match shape " + s.str());
    auto v = std::make_shared<Value>();
    v->shape = std::move(s);
    v->data = std::move(d);
    v->needs_grad = needs_grad;
    v->name = std::move(name);
    v->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return v;
}

ValuePtr Value::zeros(Shape s, bool needs_grad, std::string name) {
    std::vector<double> d(static_cast<size_t>(s.numel()), 0.0);
    return leaf(std::move(s), std::move(d), needs_grad, std::move(name));
}

ValuePtr Value::make(Shape s, std::vector<ValuePtr> parents, const char* op) {
    auto v = std::make_shared<Value>();
    v->shape = std::move(s);
    v->data.resize(static_cast<size_t>(v->shape.numel()));
    v->parents = std::move(parents);
    v->op = op;
    for (const auto& p : v->parents)
        if (p->needs_grad) v->needs_grad = true;
    v->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return v;
}

std::vector<Value*> topo_order(const ValuePtr& root) {
    std::vector<Value*> order;
    std::unordered_set<const Value*> seen;
    // iterative post-order DFS; parent visit order matches construction order
    struct Frame {
        Value* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Value* p = f.node->parents[f.next_parent++].get();
            if (seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    return order;
}

void backward(const ValuePtr& root) {
    if (root->numel() != 1)
        throw ShapeError("backward requires a scalar root, got shape " + root->shape.str());
    auto order = topo_order(root);
    root->grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Value* v = *it;
        if (!v->backward_fn) continue;
        if (!v->needs_grad) continue;
        if (!v->has_grad()) continue;  // nothing flowed into this node
        v->backward_fn(*v);
    }
}

void dump_graph(const ValuePtr& root, std::ostream& os) {
    auto order = topo_order(root);
    for (Value* v : order) {
        os << "node " << v->id << " " << v->op << " " << v->shape.str();
        if (!v->name.empty()) os << " name=" << v->name;
        os << "\n";
        for (const auto& p : v->parents) os << "edge " << p->id << " -> " << v->id << "\n";
    }
}

}  // namespace windformer
