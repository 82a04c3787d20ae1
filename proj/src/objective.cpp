#include "cmt/objective.hpp"

#include <cmath>

namespace cmt {
namespace {

struct SubjectResult {
  double forward = 0.0;
  double backward = 0.0;
  double smooth = 0.0;
  VectorField grad_v;
  std::vector<double> grad_t;
};

void check_inputs(const ScalarField& tmpl, std::span<const ScalarField> targets,
                  std::span<const VelocityField> velocities) {
  if (targets.size() != velocities.size() || targets.empty()) {
    throw Error(ErrorCode::InvalidArgument, "objective needs one velocity field per target");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    require_same_grid(tmpl.grid(), targets[i].grid(), "objective target");
    require_same_grid(tmpl.grid(), velocities[i].grid, "objective velocity");
  }
}

SubjectResult subject_terms(const ScalarField& tmpl, const ScalarField& target, const VelocityField& v,
                            const ObjectiveWeights& w, double inv_n, bool want_grad, bool want_template_grad) {
  SubjectResult r;
  const std::size_t n = tmpl.size();
  if (want_grad) {
    r.grad_v = VectorField(v.grid);
    if (want_template_grad) r.grad_t.assign(n, 0.0);
  }
  std::span<double> grad_t(r.grad_t);

  if (w.lambda1 != 0.0) {
    const auto tape = detail::exponentiate_with_tape(v, 1.0);
    const ScalarField warped = warp_image(tmpl, tape.result());
    if (want_grad) {
      std::vector<double> g_warped(n, 0.0);
      r.forward = similarity_with_gradient(w.similarity, warped, target, w.lambda1 * inv_n, g_warped, {});
      VectorField g_u(v.grid);
      detail::warp_image_backward(tmpl, tape.result(), g_warped, grad_t, &g_u);
      detail::exponentiate_backward(tape, g_u, r.grad_v);
    } else {
      r.forward = similarity(w.similarity, warped, target);
    }
  }
  if (w.lambda2 != 0.0) {
    const auto tape = detail::exponentiate_with_tape(v, -1.0);
    const ScalarField warped = warp_image(target, tape.result());
    if (want_grad) {
      std::vector<double> g_warped(n, 0.0);
      r.backward = similarity_with_gradient(w.similarity, warped, tmpl, w.lambda2 * inv_n, g_warped, grad_t);
      VectorField g_u(v.grid);
      detail::warp_image_backward(target, tape.result(), g_warped, {}, &g_u);
      detail::exponentiate_backward(tape, g_u, r.grad_v);
    } else {
      r.backward = similarity(w.similarity, warped, tmpl);
    }
  }
  if (w.lambda3 != 0.0) {
    if (want_grad) {
      r.smooth = reg_smoothness_with_gradient(v, w.lambda3 * inv_n, r.grad_v);
    } else {
      r.smooth = reg_smoothness(v);
    }
  }
  return r;
}

ObjectiveGradient run(const ScalarField& tmpl, std::span<const ScalarField> targets,
                      std::span<const VelocityField> velocities, const ObjectiveWeights& w, bool want_grad,
                      bool want_template_grad, int threads) {
  check_inputs(tmpl, targets, velocities);
  const std::size_t count = targets.size();
  const double inv_n = 1.0 / static_cast<double>(count);
  std::vector<SubjectResult> results(count);
  parallel_for(count, threads, [&](std::size_t i) {
    results[i] = subject_terms(tmpl, targets[i], velocities[i], w, inv_n, want_grad, want_template_grad);
  });

  ObjectiveGradient out;
  // fixed subject order keeps the reduction independent of thread count
  for (const auto& r : results) {
    out.value.forward_similarity += r.forward * inv_n;
    out.value.backward_similarity += r.backward * inv_n;
    out.value.smoothness += r.smooth * inv_n;
  }
  if (want_grad) {
    out.velocity_grads.reserve(count);
    for (auto& r : results) out.velocity_grads.push_back(std::move(r.grad_v));
    if (want_template_grad) {
      out.template_grad = ScalarField(tmpl.grid(), 0.0);
      for (const auto& r : results) {
        for (std::size_t x = 0; x < r.grad_t.size(); ++x) out.template_grad[x] += r.grad_t[x];
      }
    }
  }
  if (w.lambda4 != 0.0) {
    out.value.centering = want_grad ? reg_centering_with_gradient(velocities, w.lambda4, out.velocity_grads)
                                    : reg_centering(velocities);
  }
  out.value.total = w.lambda1 * out.value.forward_similarity + w.lambda2 * out.value.backward_similarity +
                    w.lambda3 * out.value.smoothness + w.lambda4 * out.value.centering;
  if (!std::isfinite(out.value.total)) throw Error(ErrorCode::NonFinite, "objective is not finite");
  return out;
}

}  // namespace

ObjectiveValue evaluate_objective(const ScalarField& tmpl, std::span<const ScalarField> targets,
                                  std::span<const VelocityField> velocities, const ObjectiveWeights& w,
                                  int threads) {
  return run(tmpl, targets, velocities, w, false, false, threads).value;
}

ObjectiveGradient objective_gradient(const ScalarField& tmpl, std::span<const ScalarField> targets,
                                     std::span<const VelocityField> velocities, const ObjectiveWeights& w,
                                     bool want_template_grad, int threads) {
  return run(tmpl, targets, velocities, w, true, want_template_grad, threads);
}

std::uint64_t objective_cell_signature(const ScalarField& tmpl, std::span<const VelocityField> velocities) {
  (void)tmpl;
  std::uint64_t h = 0;
  for (const auto& v : velocities) {
    for (double sign : {1.0, -1.0}) {
      const auto tape = detail::exponentiate_with_tape(v, sign);
      h = h * 1099511628211ULL + detail::cell_signature(tape);
    }
  }
  return h;
}

}  // namespace cmt
