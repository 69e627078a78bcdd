#pragma once

#include <functional>
#include <string>
#include <vector>

#include "windformer/value.hpp"

namespace windformer {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int64_t worst_index = -1;
    bool finite = true;
};

struct GradReport {
    std::vector<GradCheckEntry> entries;
    double tol = 0.0;

    bool passed() const {
        for (const auto& e : entries)
            if (!e.finite || e.max_rel_err > tol) return false;
        return !entries.empty();
    }
    double worst() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_err);
        return w;
    }
    std::string summary() const;
};

// Central finite differences against the analytic gradients of the scalar
// loss produced by build_loss. build_loss must rebuild the graph from the
// same parameter leaves on every call and be deterministic. Relative error
// is |a - n| / max(|a|, |n|, 1e-8).
GradReport grad_check(const std::function<ValuePtr()>& build_loss,
                      const std::vector<ValuePtr>& params, double tol,
                      double step = 1e-5);

}  // namespace windformer
