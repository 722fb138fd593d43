// rescalk command-line tool.
//
//   rescalk synth   --n 64 --m 8 --k 5 --out data/
//   rescalk rescal  --input data/tensor.rsk --k 5 --out fit/
//   rescalk rescalk --input data/tensor.rsk --k-min 2 --k-max 8 --out sel/
//   rescalk bench   --kind strong --p 1,4,9 --n 128 --m 4 --k 8
//   rescalk replay  --manifest sel/manifest.json
//
// Exit codes: 0 success, 2 usage, 3 data or I/O, 4 numerical failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rescalk/rescalk.hpp"
#include "rescalk/report_json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rescalk;

namespace {

constexpr const char* kVersion = "1.0.0";

enum Exit { ok = 0, usage = 2, data = 3, numerical = 4, other = 1 };

struct SynthOpts {
  Index n = 0, m = 0, k = 0;
  double noise = 0.01;
  std::uint64_t seed = 0;
  std::string profile = "bump";
  double width = 0.0;
  double spacing = 0.0;
  double density = 1.0;
  std::string precision = "f64";
  std::string out;
};

struct RescalOpts {
  std::string input;
  Index k = 0;
  int iters = 1000;
  std::uint64_t seed = 0;
  double eps = 1e-16;
  double tol = 0.0;
  std::string init = "random";
  int grid = 1;
  std::string precision = "f64";
  std::string out;
};

struct RescalkOpts {
  std::string input;
  Index k_min = 0, k_max = 0;
  int r = 10;
  int iters = 1000;
  double delta = 0.02;
  double tau = 0.75;
  std::uint64_t seed = 0;
  double eps = 1e-16;
  int grid = 1;
  int threads = 0;
  std::string precision = "f64";
  std::string out;
};

struct BenchOpts {
  std::string kind = "strong";
  std::vector<int> ps{1};
  std::vector<Index> ks;
  Index n = 128, m = 4, k = 8;
  double density = 1.0;
  int iters = 10;
  std::uint64_t seed = 0;
  std::string out;
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream o(p, std::ios::binary);
  if (!o) throw IoError("cannot write " + p.string());
  o << s;
  if (!o) throw IoError("write failed: " + p.string());
}

fs::path prepare_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

void write_manifest(const fs::path& dir, const std::string& cmd, const json& params, const std::vector<std::string>& outputs,
                    double seconds) {
  json m;
  m["tool"] = "rescalk";
  m["version"] = kVersion;
  m["subcommand"] = cmd;
  m["parameters"] = params;
  m["outputs"] = outputs;
  m["timing"] = {{"seconds", seconds}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- synth

template <typename T>
int do_synth(const SynthOpts& o) {
  const auto t0 = std::chrono::steady_clock::now();
  SynthSpec spec;
  spec.n = o.n;
  spec.m = o.m;
  spec.k = o.k;
  spec.noise = o.noise;
  spec.seed = o.seed;
  spec.width = o.width;
  spec.min_spacing = o.spacing;
  spec.profile = o.profile == "rectified" ? FeatureProfile::rectified_gaussian : FeatureProfile::gaussian_bump;
  const SynthData<T> d = generate<T>(spec);
  const fs::path dir = prepare_dir(o.out);

  std::vector<std::string> outputs;
  if (o.density < 1.0) {
    save_sparse(sparsify(d.X, o.density), dir / "tensor.coo");
    outputs.push_back("tensor.coo");
  } else {
    save_dense(d.X, dir / "tensor.rsk");
    outputs.push_back("tensor.rsk");
  }
  save_matrix(d.A, dir / "A_true.rsm");
  save_core(d.R, dir / "R_true.rsk");
  json truth = {{"n", spec.n},
                {"m", spec.m},
                {"k", spec.k},
                {"profile", o.profile},
                {"width", spec.profile == FeatureProfile::gaussian_bump ? spec.resolved_width() : 0.0},
                {"min_spacing", spec.profile == FeatureProfile::gaussian_bump ? spec.resolved_spacing() : 0.0},
                {"centers", d.centers},
                {"noise", spec.noise},
                {"seed", spec.seed},
                {"A", "A_true.rsm"},
                {"R", "R_true.rsk"}};
  write_text(dir / "truth.json", truth.dump(2) + "\n");
  outputs.insert(outputs.end(), {"A_true.rsm", "R_true.rsk", "truth.json"});

  const json params = {{"n", o.n},           {"m", o.m},         {"k", o.k},         {"noise", o.noise},
                       {"seed", o.seed},     {"profile", o.profile}, {"width", o.width}, {"spacing", o.spacing},
                       {"density", o.density}, {"precision", o.precision}, {"out", o.out}};
  write_manifest(dir, "synth", params, outputs, since(t0));
  std::cout << "wrote " << dir.string() << "\n";
  return Exit::ok;
}

// ---------------------------------------------------------------- rescal

template <typename X>
SolveResult<typename X::Scalar> solve_any(const X& x, const RescalOpts& o, const SolverConfig& cfg) {
  using T = typename X::Scalar;
  if (o.grid == 1) return rescal_solve(x, o.k, cfg);
  const int g = grid_dim_for(o.grid);
  if (o.k < 1 || o.k > x.n()) throw ArgumentError("k must satisfy 1 <= k <= n");
  const RescalFactors<T> init =
      cfg.init == InitMode::nndsvd ? nndsvd_init(x, o.k, cfg) : random_init<T>(x.n(), o.k, x.m(), cfg.seed);
  const auto blocks = partition(x, g);
  auto per_rank = spawn_grid(o.grid, [&](GridContext& ctx) {
    const auto& b = blocks[static_cast<std::size_t>(ctx.rank())];
    auto res = dist_rescal_solve_from(b, dist_init_from(b, init), cfg, ctx);
    SolveResult<T> s;
    s.factors = gather_factors(res.factors, ctx);
    s.error_trace = std::move(res.error_trace);
    s.iterations = res.iterations;
    return s;
  });
  return std::move(per_rank.front());
}

template <typename T>
int do_rescal(const RescalOpts& o) {
  const auto t0 = std::chrono::steady_clock::now();
  SolverConfig cfg;
  cfg.max_iters = o.iters;
  cfg.seed = o.seed;
  cfg.epsilon = o.eps;
  if (o.tol > 0.0) cfg.tolerance = o.tol;
  cfg.init = o.init == "nndsvd" ? InitMode::nndsvd : InitMode::random;

  const AnyTensor<T> x = load_tensor<T>(o.input, sniff_format(o.input));
  const SolveResult<T> res = std::visit([&](const auto& t) { return solve_any(t, o, cfg); }, x);

  const fs::path dir = prepare_dir(o.out);
  save_matrix(res.factors.A, dir / "A.rsm");
  save_core(res.factors.R, dir / "R.rsk");
  json trace = {{"iterations", res.iterations},
                {"final_error", res.error_trace.empty() ? 0.0 : res.error_trace.back()},
                {"error_trace", res.error_trace}};
  write_text(dir / "trace.json", trace.dump(2) + "\n");

  const json params = {{"input", o.input}, {"k", o.k},         {"iters", o.iters}, {"seed", o.seed},
                       {"eps", o.eps},     {"tol", o.tol},     {"init", o.init},   {"grid", o.grid},
                       {"precision", o.precision}, {"out", o.out}};
  write_manifest(dir, "rescal", params, {"A.rsm", "R.rsk", "trace.json"}, since(t0));
  std::cout << "iterations " << res.iterations << ", final relative error "
            << (res.error_trace.empty() ? 0.0 : res.error_trace.back()) << "\n";
  return Exit::ok;
}

// ---------------------------------------------------------------- rescalk

template <typename X>
SelectionReport<typename X::Scalar> select_any(const X& x, const RescalkConfig& cfg, int grid) {
  if (grid == 1) return rescalk_select(x, cfg);
  const auto blocks = partition(x, grid_dim_for(grid));
  auto per_rank = spawn_grid(grid, [&](GridContext& ctx) {
    return rescalk_select(blocks[static_cast<std::size_t>(ctx.rank())], cfg, ctx);
  });
  return std::move(per_rank.front());
}

template <typename T>
int do_rescalk(const RescalkOpts& o) {
  const auto t0 = std::chrono::steady_clock::now();
  RescalkConfig cfg;
  cfg.k_min = o.k_min;
  cfg.k_max = o.k_max;
  cfg.r = o.r;
  cfg.solver.max_iters = o.iters;
  cfg.solver.seed = o.seed;
  cfg.solver.epsilon = o.eps;
  cfg.perturb.delta = o.delta;
  cfg.perturb.seed = o.seed;
  cfg.tau_s = o.tau;
  cfg.threads = o.threads;

  const AnyTensor<T> x = load_tensor<T>(o.input, sniff_format(o.input));
  const SelectionReport<T> rep = std::visit([&](const auto& t) { return select_any(t, cfg, o.grid); }, x);

  const fs::path dir = prepare_dir(o.out);
  write_text(dir / "report.json", report_to_json(rep).dump(2) + "\n");
  std::ostringstream csv;
  csv << std::setprecision(17) << "k,s_min,s_avg,rel_error\n";
  for (const auto& e : rep.entries) csv << e.k << ',' << e.s_min << ',' << e.s_avg << ',' << e.rel_error << '\n';
  write_text(dir / "curves.csv", csv.str());
  const auto& best = rep.at(rep.k_opt);
  save_matrix(best.A_median, dir / "A_kopt.rsm");
  save_core(best.R, dir / "R_kopt.rsk");

  const json params = {{"input", o.input}, {"k_min", o.k_min}, {"k_max", o.k_max}, {"r", o.r},
                       {"iters", o.iters}, {"delta", o.delta}, {"tau", o.tau},     {"seed", o.seed},
                       {"eps", o.eps},     {"grid", o.grid},   {"threads", o.threads}, {"precision", o.precision},
                       {"out", o.out}};
  write_manifest(dir, "rescalk", params, {"report.json", "curves.csv", "A_kopt.rsm", "R_kopt.rsk"}, since(t0));
  std::cout << "k_opt " << rep.k_opt << (rep.low_confidence ? " (low confidence)" : "") << "\n";
  return Exit::ok;
}

// ---------------------------------------------------------------- bench

int do_bench(const BenchOpts& o) {
  const auto t0 = std::chrono::steady_clock::now();
  HarnessConfig cfg;
  cfg.kind = o.kind == "weak" ? ScalingKind::weak : o.kind == "k" ? ScalingKind::k_scaling : ScalingKind::strong;
  cfg.ps = o.ps;
  cfg.ks = o.ks;
  cfg.n = o.n;
  cfg.m = o.m;
  cfg.k = o.k;
  cfg.density = o.density;
  cfg.iters = o.iters;
  cfg.seed = o.seed;
  const auto recs = scaling_harness<double>(cfg);
  std::ostringstream csv;
  write_scaling_csv(csv, recs);
  if (o.out.empty()) {
    std::cout << csv.str();
  } else {
    const fs::path file(o.out);
    if (file.has_parent_path()) prepare_dir(file.parent_path().string());
    write_text(file, csv.str());
    const json params = {{"kind", o.kind}, {"p", o.ps},       {"k_values", o.ks}, {"n", o.n},
                         {"m", o.m},       {"k", o.k},        {"density", o.density}, {"iters", o.iters},
                         {"seed", o.seed}, {"out", o.out}};
    const fs::path dir = file.has_parent_path() ? file.parent_path() : fs::path(".");
    write_manifest(dir, "bench", params, {file.filename().string()}, since(t0));
  }
  return Exit::ok;
}

// ---------------------------------------------------------------- dispatch

int run(std::vector<std::string> args);

// Rebuilds the command line recorded in a manifest.
std::vector<std::string> args_from_manifest(const json& m, const std::string& out_override) {
  const std::string cmd = m.at("subcommand").get<std::string>();
  std::vector<std::string> args{"rescalk", cmd};
  static const std::map<std::string, std::string> flag_names = {{"k_min", "--k-min"}, {"k_max", "--k-max"},
                                                                {"k_values", "--ks"}};
  for (const auto& [key, value] : m.at("parameters").items()) {
    if (key == "out" && !out_override.empty()) {
      args.push_back("--out");
      args.push_back(out_override);
      continue;
    }
    const auto it = flag_names.find(key);
    std::string flag = it != flag_names.end() ? it->second : "--" + key;
    if (value.is_array()) {
      if (value.empty()) continue;
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + v.dump();
      args.push_back(flag);
      args.push_back(joined);
    } else if (value.is_string()) {
      if (value.get<std::string>().empty()) continue;
      args.push_back(flag);
      args.push_back(value.get<std::string>());
    } else {
      args.push_back(flag);
      // Shortest round-trip form keeps doubles exact.
      args.push_back(value.dump());
    }
  }
  return args;
}

int do_replay(const std::string& manifest, const std::string& out_override) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest);
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  if (m.value("subcommand", "") == "replay") throw ArgumentError("a replay manifest cannot be replayed");
  return run(args_from_manifest(m, out_override));
}

int code_of(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const RankFailure& f) {
    try {
      f.rethrow_cause();
    } catch (...) {
      return code_of(std::current_exception());
    }
  } catch (const ArgumentError&) {
    return Exit::usage;
  } catch (const NumericalError&) {
    return Exit::numerical;
  } catch (const DataError&) {
    return Exit::data;
  } catch (const ShapeError&) {
    return Exit::data;
  } catch (const IoError&) {
    return Exit::data;
  } catch (...) {
    return Exit::other;
  }
  return Exit::other;
}

int report_failure(const std::exception_ptr& e) {
  const int code = code_of(e);
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& x) {
    const char* label = code == Exit::usage       ? "usage error"
                        : code == Exit::numerical ? "numerical failure"
                        : code == Exit::data      ? "data error"
                                                  : "error";
    std::cerr << label << ": " << x.what() << "\n";
  } catch (...) {
    std::cerr << "error: unknown exception\n";
  }
  return code;
}

int run(std::vector<std::string> args) {
  CLI::App app{"Non-negative RESCAL factorization with automatic rank selection"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "generate a tensor with a planted factorization");
  synth->add_option("--n", so.n, "entities")->required()->check(CLI::PositiveNumber);
  synth->add_option("--m", so.m, "relations")->required()->check(CLI::PositiveNumber);
  synth->add_option("--k", so.k, "planted latent dimension")->required()->check(CLI::PositiveNumber);
  synth->add_option("--noise", so.noise, "relative noise level eta")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--seed", so.seed);
  synth->add_option("--profile", so.profile, "feature profile")->check(CLI::IsMember({"bump", "rectified"}));
  synth->add_option("--width", so.width, "bump width (0 = 0.2/k)");
  synth->add_option("--spacing", so.spacing, "minimum center spacing (0 = 0.8/k)");
  synth->add_option("--density", so.density, "keep this fraction of entries (sparse output)")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--precision", so.precision)->check(CLI::IsMember({"f32", "f64"}));
  synth->add_option("--out", so.out, "output directory")->required();

  RescalOpts ro;
  auto* rescal = app.add_subcommand("rescal", "factorize a tensor with a fixed k");
  rescal->add_option("--input", ro.input)->required()->check(CLI::ExistingFile);
  rescal->add_option("--k", ro.k)->required()->check(CLI::PositiveNumber);
  rescal->add_option("--iters", ro.iters)->check(CLI::PositiveNumber);
  rescal->add_option("--seed", ro.seed);
  rescal->add_option("--eps", ro.eps)->check(CLI::PositiveNumber);
  rescal->add_option("--tol", ro.tol, "stop once the relative error is below this (0 = off)");
  rescal->add_option("--init", ro.init)->check(CLI::IsMember({"random", "nndsvd"}));
  rescal->add_option("--grid", ro.grid, "ranks p (perfect square)")->check(CLI::PositiveNumber);
  rescal->add_option("--precision", ro.precision)->check(CLI::IsMember({"f32", "f64"}));
  rescal->add_option("--out", ro.out)->required();

  RescalkOpts ko;
  auto* rk = app.add_subcommand("rescalk", "select k by perturbation stability");
  rk->add_option("--input", ko.input)->required()->check(CLI::ExistingFile);
  rk->add_option("--k-min", ko.k_min)->required()->check(CLI::PositiveNumber);
  rk->add_option("--k-max", ko.k_max)->required()->check(CLI::PositiveNumber);
  rk->add_option("--r", ko.r, "perturbations per k")->check(CLI::Range(2, 100000));
  rk->add_option("--iters", ko.iters)->check(CLI::PositiveNumber);
  rk->add_option("--delta", ko.delta, "perturbation half-width");
  rk->add_option("--tau", ko.tau, "silhouette threshold");
  rk->add_option("--seed", ko.seed);
  rk->add_option("--eps", ko.eps)->check(CLI::PositiveNumber);
  rk->add_option("--grid", ko.grid)->check(CLI::PositiveNumber);
  rk->add_option("--threads", ko.threads, "worker threads (0 = RESCALK_THREADS or all cores)");
  rk->add_option("--precision", ko.precision)->check(CLI::IsMember({"f32", "f64"}));
  rk->add_option("--out", ko.out)->required();

  BenchOpts bo;
  auto* bench = app.add_subcommand("bench", "scaling benchmark with counted operations");
  bench->add_option("--kind", bo.kind)->check(CLI::IsMember({"strong", "weak", "k"}));
  bench->add_option("--p", bo.ps, "comma separated rank counts")->delimiter(',');
  bench->add_option("--ks", bo.ks, "comma separated k values (k scaling)")->delimiter(',');
  bench->add_option("--n", bo.n)->check(CLI::PositiveNumber);
  bench->add_option("--m", bo.m)->check(CLI::PositiveNumber);
  bench->add_option("--k", bo.k)->check(CLI::PositiveNumber);
  bench->add_option("--density", bo.density)->check(CLI::Range(0.0, 1.0));
  bench->add_option("--iters", bo.iters)->check(CLI::PositiveNumber);
  bench->add_option("--seed", bo.seed);
  bench->add_option("--out", bo.out, "CSV file (default: stdout)");

  std::string manifest, replay_out;
  auto* replay = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  replay->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  replay->add_option("--out", replay_out, "write outputs here instead of the recorded directory");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Exit::ok : Exit::usage;
  }

  try {
    if (*synth) return so.precision == "f32" ? do_synth<float>(so) : do_synth<double>(so);
    if (*rescal) return ro.precision == "f32" ? do_rescal<float>(ro) : do_rescal<double>(ro);
    if (*rk) {
      if (ko.k_min > ko.k_max) throw ArgumentError("--k-min must not exceed --k-max");
      return ko.precision == "f32" ? do_rescalk<float>(ko) : do_rescalk<double>(ko);
    }
    if (*bench) return do_bench(bo);
    if (*replay) return do_replay(manifest, replay_out);
  } catch (...) {
    return report_failure(std::current_exception());
  }
  return Exit::usage;
}

}  // namespace

int main(int argc, char** argv) {
  return run(std::vector<std::string>(argv, argv + argc));
}
