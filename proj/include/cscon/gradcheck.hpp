#pragma once

// Central finite-difference verification of analytic gradients. The loss
// builder is re-invoked for every probe, so it must be a pure function of the
// parameter store contents.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "cscon/common.hpp"
#include "cscon/params.hpp"
#include "cscon/tensor.hpp"

namespace cscon {

struct GradCheckOptions {
  double step = 1e-3;               // finite-difference half step
  double rel_tol = 1e-3;
  double abs_floor = 1e-6;          // denominators below this are clamped
  std::int64_t subsample_threshold = 10000;
  std::int64_t subsample_count = 10000;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  double frac_within_tol = 1.0;
  std::int64_t checked = 0;
  std::int64_t total = 0;

  bool pass(double frac_required, double max_allowed) const {
    return frac_within_tol >= frac_required && max_rel_err <= max_allowed;
  }
};

template <class Real>
GradCheckReport grad_check(const std::function<TensorT<Real>()>& make_loss,
                           ParamStoreT<Real>& store, const GradCheckOptions& opt = {}) {
  store.zero_grads();
  auto loss = make_loss();
  loss.backward();

  struct Slot {
    TensorT<Real> tensor;
    std::int64_t index;
    double analytic;
  };
  std::vector<Slot> slots;
  for (auto& e : store.entries()) {
    for (std::int64_t i = 0; i < e.tensor.numel(); ++i)
      slots.push_back({e.tensor, i, static_cast<double>(e.tensor.grad()[i])});
  }

  GradCheckReport report;
  report.total = static_cast<std::int64_t>(slots.size());

  std::vector<std::size_t> pick(slots.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  if (report.total > opt.subsample_threshold) {
    Rng rng(mix64(opt.seed, 0x6fd7a1c3));
    rng.shuffle(pick);
    pick.resize(static_cast<std::size_t>(opt.subsample_count));
  }

  std::int64_t within = 0;
  for (auto si : pick) {
    auto& slot = slots[si];
    Real& theta = slot.tensor.values()[slot.index];
    const Real saved = theta;
    const Real hi = static_cast<Real>(static_cast<double>(saved) + opt.step);
    const Real lo = static_cast<Real>(static_cast<double>(saved) - opt.step);
    double f_hi, f_lo;
    {
      NoGradGuard ng;
      theta = hi;
      f_hi = static_cast<double>(make_loss().item());
      theta = lo;
      f_lo = static_cast<double>(make_loss().item());
      theta = saved;
    }
    const double width = static_cast<double>(hi) - static_cast<double>(lo);
    const double fd = (f_hi - f_lo) / width;
    const double denom =
        std::max({std::abs(slot.analytic), std::abs(fd), opt.abs_floor / opt.rel_tol});
    const double rel = std::abs(slot.analytic - fd) / denom;
    report.max_rel_err = std::max(report.max_rel_err, rel);
    if (rel <= opt.rel_tol) ++within;
    ++report.checked;
  }
  report.frac_within_tol =
      report.checked ? static_cast<double>(within) / static_cast<double>(report.checked) : 1.0;
  return report;
}

}  // namespace cscon
