#include "cdnet/gradcheck.hpp"

#include <cmath>

namespace cdnet {

GradCheckReport gradcheck(
    const std::function<Tensor()>& loss,
    const std::vector<std::pair<std::string, Tensor>>& inputs,
    double h, double rel_floor, int64_t sample) {
  // Analytic pass.
  for (auto& [name, t] : inputs) {
    const_cast<Tensor&>(t).zero_grad();
    if (!t.requires_grad())
      throw ShapeError("gradcheck input '" + name + "' does not require grad");
  }
  Graph g;
  Tensor l0;
  {
    Graph::Scope scope(g);
    l0 = loss();
    if (l0.numel() != 1) throw ShapeError("gradcheck loss must be scalar");
    g.backward(l0);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& [name, t] : inputs) {
    if (!t.has_grad())
      // Never reached by backward: treat as all-zero analytic gradient.
      analytic.push_back(std::vector<double>(static_cast<size_t>(t.numel()), 0.0));
    else
      analytic.push_back(t.grad_ref());
  }

  GradCheckReport rep;
  for (size_t k = 0; k < inputs.size(); ++k) {
    Tensor t = inputs[k].second;
    auto& vals = t.data();
    const int64_t n = t.numel();
    // Probe every element, or a deterministic subset of `sample` of them.
    int64_t step = 1, count = n;
    if (sample > 0 && sample < n) {
      step = n / sample;
      count = sample;
    }
    for (int64_t s = 0; s < count; ++s) {
      const int64_t i = s * step;
      const double keep = vals[i];
      vals[i] = keep + h;
      const double fp = loss().item();
      vals[i] = keep - h;
      const double fm = loss().item();
      vals[i] = keep;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[k][static_cast<size_t>(i)];
      const double denom = std::max({std::fabs(num), std::fabs(ana), rel_floor});
      const double rel = std::fabs(num - ana) / denom;
      ++rep.checked;
      rep.max_abs_err = std::max(rep.max_abs_err, std::fabs(num - ana));
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = inputs[k].first;
        rep.worst_index = i;
      }
    }
  }
  return rep;
}

}  // namespace cdnet
