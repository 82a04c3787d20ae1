#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmt/losses.hpp"
#include "cmt/warp.hpp"

namespace cmt {

/// Weights and similarity kernel of the joint template/registration
/// objective
///
///   sum_i [ l1 sim(T o phi_i, m_i) + l2 sim(m_i o phi_i^-1, T) ] / n
///     + l3 mean_i smooth(v_i) + l4 centering({v_i})
///
/// with phi_i = exp(v_i), phi_i^-1 = exp(-v_i).
struct ObjectiveWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double lambda4 = 1.0;
  SimilarityTerm similarity;
};

struct ObjectiveValue {
  double total = 0.0;
  double forward_similarity = 0.0;   // mean over subjects, unweighted
  double backward_similarity = 0.0;  // mean over subjects, unweighted
  double smoothness = 0.0;           // mean over subjects, unweighted
  double centering = 0.0;            // unweighted
};

struct ObjectiveGradient {
  ObjectiveValue value;
  ScalarField template_grad;                // empty when not requested
  std::vector<VectorField> velocity_grads;  // one per subject
};

/// Inputs share one grid. `targets` are the masked subject images.
ObjectiveValue evaluate_objective(const ScalarField& tmpl, std::span<const ScalarField> targets,
                                  std::span<const VelocityField> velocities, const ObjectiveWeights& w,
                                  int threads = 1);

ObjectiveGradient objective_gradient(const ScalarField& tmpl, std::span<const ScalarField> targets,
                                     std::span<const VelocityField> velocities, const ObjectiveWeights& w,
                                     bool want_template_grad, int threads = 1);

/// Identifies the piecewise-smooth region of the objective (the set of
/// trilinear cells touched by every warp and squaring step).
std::uint64_t objective_cell_signature(const ScalarField& tmpl, std::span<const VelocityField> velocities);

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Callers write
/// results to per-index slots so output does not depend on scheduling.
template <class F>
void parallel_for(std::size_t count, int threads, F&& fn);

}  // namespace cmt

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace cmt {

template <class F>
void parallel_for(std::size_t count, int threads, F&& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace cmt
