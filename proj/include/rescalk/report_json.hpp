#pragma once

// JSON form of a SelectionReport. Everything except the "timing" object is
// a deterministic function of the inputs and the seeds.

#include <string>

#include <json.hpp>

#include "rescalk/model_select.hpp"

namespace rescalk {

template <typename T>
nlohmann::json report_to_json(const SelectionReport<T>& rep) {
  using nlohmann::json;
  const RescalkConfig& c = rep.config;
  json out;
  out["k_opt"] = rep.k_opt;
  out["low_confidence"] = rep.low_confidence;
  out["parameters"] = {
      {"k_min", c.k_min},
      {"k_max", c.k_max},
      {"r", c.r},
      {"tau_s", c.tau_s},
      {"perturbation_delta", c.perturb.delta},
      {"perturbation_seed", c.perturb.seed},
      {"max_iters", c.solver.max_iters},
      {"epsilon", c.solver.epsilon},
      {"seed", c.solver.seed},
      {"cluster_max_iters", c.cluster.max_iters},
      {"regression_max_iters", c.regression.max_iters},
      {"regression_tol", c.regression.rel_change_tol},
  };
  json per_k = json::object();
  json timing = json::object();
  double total = 0.0;
  for (const auto& e : rep.entries) {
    per_k[std::to_string(e.k)] = {
        {"s_min", e.s_min},
        {"s_avg", e.s_avg},
        {"rel_error", e.rel_error},
        {"single_cluster", e.single_cluster},
        {"cluster_converged", e.cluster_converged},
        {"cluster_iterations", e.cluster_iterations},
    };
    timing[std::to_string(e.k)] = e.seconds;
    total += e.seconds;
  }
  out["per_k"] = std::move(per_k);
  out["timing"] = {{"per_k_seconds", std::move(timing)}, {"total_seconds", total}};
  return out;
}

}  // namespace rescalk
