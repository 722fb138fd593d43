// Plants a rank-4 structure, factorizes it, and selects k.

#include <iostream>

#include "rescalk/rescalk.hpp"

int main() {
  using namespace rescalk;

  SynthSpec spec;
  spec.n = 48;
  spec.m = 4;
  spec.k = 4;
  spec.seed = 11;
  const auto data = generate(spec);

  SolverConfig cfg;
  cfg.max_iters = 500;
  cfg.seed = 1;
  const auto fit = rescal_solve(data.X, 4, cfg);
  std::cout << "k = 4: relative error " << fit.error_trace.back() << " after " << fit.iterations << " iterations\n";

  // The same solve on a 2 x 2 grid.
  const auto blocks = partition(data.X, 2);
  const auto grid = spawn_grid(4, [&](GridContext& ctx) {
    const auto res = dist_rescal_solve(blocks[static_cast<std::size_t>(ctx.rank())], 4, cfg, ctx);
    return res.error_trace.back();
  });
  std::cout << "k = 4 on 4 ranks: relative error " << grid.front() << "\n";

  RescalkConfig sel;
  sel.k_min = 2;
  sel.k_max = 6;
  sel.r = 8;
  sel.solver.max_iters = 500;
  const auto report = rescalk_select(data.X, sel);
  for (const auto& e : report.entries) {
    std::cout << "k = " << e.k << "  s_min " << e.s_min << "  s_avg " << e.s_avg << "  error " << e.rel_error << "\n";
  }
  std::cout << "selected k = " << report.k_opt << "\n";
}
