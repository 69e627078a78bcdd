#include "windformer/grad_check.hpp"

#include <cmath>
#include <sstream>

#include "windformer/errors.hpp"

namespace windformer {

std::string GradReport::summary() const {
    std::ostringstream os;
    os << "grad check (tol " << tol << ")\n";
    for (const auto& e : entries) {
        os << "  " << (e.finite && e.max_rel_err <= tol ? "ok   " : "FAIL ") << e.name
           << "  max_rel_err=" << e.max_rel_err;
        if (!e.finite) os << "  (non-finite)";
        if (e.worst_index >= 0) os << "  at element " << e.worst_index;
        os << "\n";
    }
    return os.str();
}

GradReport grad_check(const std::function<ValuePtr()>& build_loss,
                      const std::vector<ValuePtr>& params, double tol, double step) {
    GradReport report;
    report.tol = tol;

    for (const auto& p : params) p->zero_grad();
    ValuePtr loss = build_loss();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p->grad());

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Value& p = *params[pi];
        GradCheckEntry entry;
        entry.name = p.name.empty() ? ("param" + std::to_string(pi)) : p.name;

        for (int64_t i = 0; i < p.numel(); ++i) {
            const double a = analytic[pi][static_cast<size_t>(i)];
            if (!std::isfinite(a)) {
                entry.finite = false;
                entry.worst_index = i;
                break;
            }
            const double orig = p.data[static_cast<size_t>(i)];
            const double h = step * std::max(1.0, std::abs(orig));
            p.data[static_cast<size_t>(i)] = orig + h;
            const double fp = build_loss()->data[0];
            p.data[static_cast<size_t>(i)] = orig - h;
            const double fm = build_loss()->data[0];
            p.data[static_cast<size_t>(i)] = orig;
            const double n = (fp - fm) / (2.0 * h);
            if (!std::isfinite(n)) {
                entry.finite = false;
                entry.worst_index = i;
                break;
            }
            const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
            }
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace windformer
