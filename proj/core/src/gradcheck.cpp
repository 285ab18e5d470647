#include "hg/gradcheck.hpp"

#include "hg/config.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace hg {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::vector<std::string> GradCheckReport::failures() const {
  std::vector<std::string> out;
  for (auto& e : entries)
    if (!e.passed) out.push_back(e.name);
  return out;
}

std::string GradCheckReport::to_string() const {
  std::ostringstream out;
  for (auto& e : entries) {
    out << (e.passed ? "ok   " : "FAIL ") << e.name << " checked=" << e.checked
        << " max_rel_err=" << e.max_rel_error << " worst_index=" << e.worst_index << '\n';
  }
  out << (passed() ? "PASS" : "FAIL") << " tol=" << tolerance << " max_rel_err=" << max_rel_error() << '\n';
  return out.str();
}

namespace {

double eval_loss(const std::function<Tensor()>& loss_fn, const std::string& name, std::size_t index,
                 double delta) {
  NoGradGuard guard;
  const double v = loss_fn().item();
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "grad_check: non-finite loss after perturbing " << name << '[' << index << "] by " << delta;
    throw NumericError(msg.str());
  }
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<Parameter>& params,
                           const GradCheckOptions& options) {
  for (auto& p : params) p.tensor.zero_grad();
  {
    Tensor loss = loss_fn();
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss at base point");
    loss.backward();
  }

  GradCheckReport report;
  report.tolerance = options.tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& param = params[pi];
    const std::size_t n = param.tensor.numel();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n > options.max_entries) {
      std::mt19937_64 rng(options.seed + 0x9e3779b97f4a7c15ULL * (pi + 1));
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries);
      std::sort(idx.begin(), idx.end());
    }
    const std::vector<double> analytic(param.tensor.grad().begin(), param.tensor.grad().end());

    GradCheckEntry entry;
    entry.name = param.name;
    auto data = param.tensor.mutable_data();
    for (std::size_t i : idx) {
      const double orig = data[i];
      data[i] = orig + options.eps;
      const double fp = eval_loss(loss_fn, param.name, i, options.eps);
      data[i] = orig - options.eps;
      const double fm = eval_loss(loss_fn, param.name, i, -options.eps);
      data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * options.eps);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > entry.max_rel_error || entry.checked == 0) {
        entry.max_rel_error = std::max(entry.max_rel_error, rel);
        if (rel >= entry.max_rel_error) entry.worst_index = i;
      }
      ++entry.checked;
    }
    entry.passed = entry.max_rel_error < options.tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace hg
