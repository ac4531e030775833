// slowfast-pm: command-line front end for the stochastic slow-fast Hopf
// laboratory.  Every subcommand is a thin shell around one library entry
// point; all numerical work lives in the headers under include/slowfast/.
//
// Exit codes: 0 success, 2 usage / argument errors, 3 runtime failures
// (blow-up, degenerate importance weights, unwritable output).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slowfast/bounds.hpp"
#include "slowfast/csv.hpp"
#include "slowfast/defect.hpp"
#include "slowfast/girsanov.hpp"
#include "slowfast/integrate.hpp"
#include "slowfast/measure.hpp"
#include "slowfast/params.hpp"
#include "slowfast/systems.hpp"
#include "slowfast/tau_opt.hpp"
#include "slowfast/wasserstein.hpp"

namespace {

using namespace slowfast;

constexpr const char* k_version = "slowfast-pm 1.0.0";

// ---------------------------------------------------------------------------
//  Small shared helpers
// ---------------------------------------------------------------------------

/// Adds a scalar option that keeps only its last occurrence, so values from a
/// spliced-in config file are overridden by explicit command-line flags.
template <typename T>
CLI::Option* opt(CLI::App* sub, const std::string& name, T& var,
                 const std::string& help) {
  return sub->add_option(name, var, help)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

/// Output stream selected by --out ('-' = stdout), with a final write check.
struct Sink {
  std::ofstream file;
  std::ostream* os = &std::cout;
  std::string path;

  explicit Sink(const std::string& p) : path(p) {
    if (path != "-") {
      file.open(path, std::ios::binary);  // binary: identical bytes everywhere
      if (!file) throw std::runtime_error("cannot open output file: " + path);
      os = &file;
    }
  }
  std::ostream& stream() { return *os; }
  void finish() {
    os->flush();
    if (!os->good()) throw std::runtime_error("write failed: " + path);
  }
};

std::vector<double> parse_double_list(const std::string& csv,
                                      const char* what) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      while (used < tok.size() &&
             std::isspace(static_cast<unsigned char>(tok[used])))
        ++used;
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string(what) +
                                  ": cannot parse number '" + tok + "'");
    }
  }
  if (out.empty())
    throw std::invalid_argument(std::string(what) + ": empty list");
  return out;
}

std::vector<std::string> component_labels(SystemId id) {
  switch (id) {
    case SystemId::original_cartesian: return {"x", "y", "z"};
    case SystemId::reduced_cartesian: return {"x", "y"};
    case SystemId::original_polar:
    case SystemId::transformed_polar:
    case SystemId::transformed_polar_aug: return {"r", "theta", "z"};
    case SystemId::reduced_polar: return {"r", "theta"};
    case SystemId::augmented_original: return {"r", "theta", "z", "m"};
    case SystemId::augmented_reduced: return {"r", "theta", "m"};
  }
  return {};
}

// ---------------------------------------------------------------------------
//  Shared option groups
// ---------------------------------------------------------------------------

/// Model parameters: a named case plus individual overrides.
struct ParamArgs {
  std::string case_label = "I";
  std::optional<double> lambda, freq, gamma, epsilon, sigma, tau;
  std::string m_kind = "cubic";

  void add_to(CLI::App* sub, bool with_tau = true) {
    opt(sub, "--case", case_label,
        "Built-in parameter case: I, II, III, or IV")
        ->capture_default_str();
    opt(sub, "--lambda", lambda, "Override the linear instability rate");
    opt(sub, "--freq", freq, "Override the angular frequency");
    opt(sub, "--gamma", gamma, "Override the cubic coupling strength");
    opt(sub, "--epsilon", epsilon,
        "Override the fast time scale (case III: sweep value, default 1e-2)");
    opt(sub, "--sigma", sigma, "Override the noise amplitude");
    if (with_tau)
      opt(sub, "--tau", tau, "Memory horizon for memory-manifold work");
    opt(sub, "--m-kind", m_kind,
        "Memory-process law: cubic or ou")
        ->check(CLI::IsMember({"cubic", "ou"}))
        ->capture_default_str();
  }

  bool ou() const { return m_kind == "ou"; }
  MKind mkind() const { return ou() ? MKind::ou : MKind::cubic; }

  ModelParams resolve() const {
    ModelParams p =
        case_params(parse_case_id(case_label), epsilon.value_or(1e-2));
    if (lambda) p.lambda = *lambda;
    if (freq) p.f = *freq;
    if (gamma) p.gamma = *gamma;
    if (epsilon) p.epsilon = *epsilon;
    if (sigma) p.sigma = *sigma;
    if (tau) p.tau = *tau;
    p.validate();
    return p;
  }
};

/// Ensemble controls shared by every sampling subcommand.
struct RunArgs {
  double horizon = 100.0;
  double dt = 0.0;
  double burn_in = -1.0;
  std::size_t thin = 0;
  std::uint64_t seed = 1;
  std::size_t n_traj = 1;
  int threads = 1;

  void add_to(CLI::App* sub) {
    opt(sub, "--horizon", horizon, "Sampled time span per trajectory")
        ->capture_default_str();
    opt(sub, "--dt", dt, "Step size (0 = stiffness-aware default)");
    opt(sub, "--burn-in", burn_in, "Discarded initial span (-1 = automatic)");
    opt(sub, "--thin", thin, "Steps between retained samples (0 = automatic)");
    opt(sub, "--seed", seed, "Master seed; fixes the whole run")
        ->capture_default_str();
    opt(sub, "--n-traj", n_traj, "Independent trajectories");
    opt(sub, "--threads", threads,
        "Worker threads (results do not depend on the count)");
  }

  RunControls controls() const {
    RunControls rc;
    rc.horizon = horizon;
    rc.dt = dt;
    rc.burn_in = burn_in;
    rc.thin = thin;
    rc.seed = seed;
    rc.n_traj = n_traj;
    rc.threads = threads;
    return rc;
  }
};

std::string* add_out_option(CLI::App* sub, std::string& out) {
  sub->add_option("--out", out,
                  "Output file; '-' writes to stdout "
                  "(falls back to $SLOWFAST_PM_OUT)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
      ->envname("SLOWFAST_PM_OUT")
      ->capture_default_str();
  return &out;
}

// ---------------------------------------------------------------------------
//  simulate
// ---------------------------------------------------------------------------

struct SimulateCmd {
  ParamArgs pa;
  std::string system = "original_polar";
  std::string x0_csv;
  double horizon = 10.0;
  double dt = 0.0;
  std::uint64_t seed = 1;
  std::size_t record_stride = 0;
  std::string out = "-";

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand(
        "simulate", "Integrate one trajectory and write t plus the state");
    pa.add_to(sub);
    opt(sub, "--system", system,
        "System to integrate (original_polar, reduced_polar, "
        "original_cartesian, reduced_cartesian, transformed_polar, "
        "augmented_original, augmented_reduced, transformed_polar_aug)")
        ->capture_default_str();
    opt(sub, "--x0", x0_csv,
        "Initial state as a comma list (default: system-specific point)");
    opt(sub, "--horizon", horizon, "Integration time span")
        ->capture_default_str();
    opt(sub, "--dt", dt, "Step size (0 = stiffness-aware default)");
    opt(sub, "--seed", seed, "Master seed")->capture_default_str();
    opt(sub, "--record-stride", record_stride,
        "Keep every k-th node (0 = about 1000 rows)");
    add_out_option(sub, out);
    sub->callback([this] { run(); });
  }

  void run() const {
    const ModelParams p = pa.resolve();
    SystemSpec spec{parse_system_id(system), p, pa.mkind()};
    const std::vector<double> x0 =
        x0_csv.empty() ? default_x0(spec)
                       : parse_double_list(x0_csv, "--x0");
    if (x0.size() != static_cast<std::size_t>(state_dim(spec.id)))
      throw std::invalid_argument("--x0: expected " +
                                  std::to_string(state_dim(spec.id)) +
                                  " components for " + system);
    const double step = dt > 0.0 ? dt : default_dt(p);
    const auto n_steps =
        static_cast<std::size_t>(std::llround(horizon / step));
    IntegrateOptions io;
    io.record_stride = record_stride > 0
                           ? record_stride
                           : std::max<std::size_t>(1, n_steps / 1000);
    const Path path =
        integrate(spec, x0, horizon, step, make_plan(spec, seed, 0, step), io);

    Sink sink(out);
    auto& os = sink.stream();
    os << "# slowfast-pm simulate system=" << system
       << " case=" << pa.case_label << " seed=" << seed
       << " dt=" << format_g(step) << '\n';
    os << 't';
    for (const auto& label : component_labels(spec.id)) os << ',' << label;
    os << '\n';
    const std::size_t stride = path.record_stride;
    for (std::size_t j = 0; j < path.n_nodes(); ++j) {
      const std::size_t k = std::min(j * stride, n_steps);
      os << format_g(static_cast<double>(k) * step);
      for (double v : path.node(j)) os << ',' << format_g(v);
      os << '\n';
    }
    sink.finish();
  }
};

// ---------------------------------------------------------------------------
//  measure
// ---------------------------------------------------------------------------

struct MeasureCmd {
  ParamArgs pa;
  RunArgs ra;
  std::string system = "original_polar";
  std::string marginal = "radial";
  int hist_bins = 0;
  bool dump = false;
  std::string out = "-";

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand(
        "measure",
        "Sample the long-run law of one system and summarize a marginal");
    pa.add_to(sub);
    ra.add_to(sub);
    opt(sub, "--system", system, "System to sample")->capture_default_str();
    opt(sub, "--marginal", marginal,
        "Which marginal: radial or a component name (r, theta, z, m, x, y)")
        ->capture_default_str();
    auto* hist = opt(sub, "--hist", hist_bins,
                     "Write an equal-width density histogram with N bins");
    sub->add_flag("--dump", dump, "Write the raw marginal samples instead")
        ->excludes(hist);
    add_out_option(sub, out);
    sub->callback([this] { run(); });
  }

  std::vector<double> pick_marginal(const InvariantRun& run) const {
    if (marginal == "radial") return radial_marginal(run);
    const auto labels = component_labels(run.system);
    const auto it = std::find(labels.begin(), labels.end(), marginal);
    if (it == labels.end())
      throw std::invalid_argument("--marginal: system " +
                                  std::string(system_name(run.system)) +
                                  " has no component '" + marginal + "'");
    return component_marginal(
        run, static_cast<int>(std::distance(labels.begin(), it)));
  }

  void run() const {
    const ModelParams p = pa.resolve();
    SystemSpec spec{parse_system_id(system), p, pa.mkind()};
    const InvariantRun inv =
        estimate_invariant(spec, default_x0(spec), ra.controls());
    const std::vector<double> xs = pick_marginal(inv);

    Sink sink(out);
    auto& os = sink.stream();
    os << "# slowfast-pm measure system=" << system
       << " case=" << pa.case_label << " marginal=" << marginal
       << " seed=" << ra.seed << " n=" << xs.size() << '\n';
    if (hist_bins > 0) {
      os << "left,right,density\n";
      for (const auto& row : histogram(xs, hist_bins))
        os << format_g(row.left) << ',' << format_g(row.right) << ','
           << format_g(row.density) << '\n';
    } else if (dump) {
      write_samples_csv(os, marginal, xs);
    } else {
      const BlockStats bs = block_stats(xs, inv.block_offsets);
      os << "stat,value\n";
      os << "n_samples," << xs.size() << '\n';
      os << "dt," << format_g(inv.dt) << '\n';
      os << "burn_in," << format_g(inv.burn_in) << '\n';
      os << "thin," << inv.thin << '\n';
      os << "reflection_rate," << format_g(inv.reflection_rate()) << '\n';
      os << "mean," << format_g(bs.mean) << '\n';
      os << "mean_stderr," << format_g(bs.stderr_mean) << '\n';
      os << "sd," << format_g(std::sqrt(variance(xs))) << '\n';
      os << "m2," << format_g(moment(xs, 2.0)) << '\n';
      os << "m4," << format_g(moment(xs, 4.0)) << '\n';
      os << "block_ess," << format_g(bs.ess) << '\n';
      if (marginal == "radial" || marginal == "r") {
        os << "r_star," << format_g(r_star(p)) << '\n';
        os << "tail_beyond_r_star," << format_g(tail_integral(xs, r_star(p)))
           << '\n';
      }
    }
    sink.finish();
  }
};

// ---------------------------------------------------------------------------
//  defect
// ---------------------------------------------------------------------------

struct DefectCmd {
  ParamArgs pa;
  RunArgs ra;
  std::string manifold = "slow";
  bool tau_opt_flag = false;
  std::size_t m_count = 0;
  std::uint64_t m_seed = k_default_m_seed;
  std::string out = "-";

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand(
        "defect",
        "Measure how well a reduction law parameterizes the fast variable");
    pa.add_to(sub);
    ra.add_to(sub);
    opt(sub, "--manifold", manifold, "Which reduction: slow, pm, or both")
        ->check(CLI::IsMember({"slow", "pm", "both"}))
        ->capture_default_str();
    sub->add_flag("--tau-opt", tau_opt_flag,
                  "Choose the memory horizon by minimizing the defect");
    opt(sub, "--m-count", m_count, "Memory sample size (0 = automatic)");
    opt(sub, "--m-seed", m_seed, "Memory sample seed")->capture_default_str();
    add_out_option(sub, out);
    sub->callback([this] { run(); });
  }

  void run() const {
    const ModelParams p = pa.resolve();
    SystemSpec orig{SystemId::original_polar, p};
    const InvariantRun inv =
        estimate_invariant(orig, default_x0(orig), ra.controls());
    const PairedRZ rz = rz_marginal(inv);

    std::vector<DefectReport> rows;
    if (manifold == "slow" || manifold == "both") {
      DefectReport rep = compute_defect(rz, ManifoldSpec::slow());
      rep.case_id = pa.case_label;
      rows.push_back(std::move(rep));
    }
    if (manifold == "pm" || manifold == "both") {
      double tau_val = 0.0;
      if (tau_opt_flag) {
        TauOptControls tc;
        tc.m_count = m_count;
        tc.m_seed = m_seed;
        tc.ou_memory = pa.ou();
        tau_val = optimize_tau(rz, p.epsilon, p.sigma, tc).tau_opt;
      } else if (pa.tau) {
        tau_val = *pa.tau;
      } else {
        throw std::invalid_argument(
            "defect: the pm manifold needs --tau or --tau-opt");
      }
      const std::size_t n_m =
          m_count > 0 ? m_count : MSamples::default_count(rz.r.size());
      const MSamples m = pa.ou() ? MSamples::gaussian(p.sigma, n_m, m_seed)
                                 : MSamples::cubic(p.sigma, n_m, m_seed);
      DefectReport rep =
          compute_defect(rz, ManifoldSpec::pm(tau_val, p.epsilon, pa.ou()), &m);
      rep.case_id = pa.case_label;
      rows.push_back(std::move(rep));
    }

    Sink sink(out);
    sink.stream() << "# slowfast-pm defect case=" << pa.case_label
                  << " seed=" << ra.seed << " n=" << rz.r.size() << '\n';
    write_defect_csv(sink.stream(), rows);
    sink.finish();
  }
};

// ---------------------------------------------------------------------------
//  tau
// ---------------------------------------------------------------------------

struct TauCmd {
  ParamArgs pa;
  RunArgs ra;
  std::size_t m_count = 0;
  std::uint64_t m_seed = k_default_m_seed;
  bool curve = false;
  std::string out = "-";

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand(
        "tau", "Optimize the memory horizon of the pm reduction");
    pa.add_to(sub, /*with_tau=*/false);
    ra.add_to(sub);
    opt(sub, "--m-count", m_count, "Memory sample size (0 = automatic)");
    opt(sub, "--m-seed", m_seed, "Memory sample seed")->capture_default_str();
    sub->add_flag("--curve", curve,
                  "Write the full defect-versus-horizon scan instead of the "
                  "summary");
    add_out_option(sub, out);
    sub->callback([this] { run(); });
  }

  void run() const {
    const ModelParams p = pa.resolve();
    SystemSpec orig{SystemId::original_polar, p};
    const InvariantRun inv =
        estimate_invariant(orig, default_x0(orig), ra.controls());
    const PairedRZ rz = rz_marginal(inv);

    TauOptControls tc;
    tc.m_count = m_count;
    tc.m_seed = m_seed;
    tc.ou_memory = pa.ou();
    const TauOptResult res = optimize_tau(rz, p.epsilon, p.sigma, tc);

    Sink sink(out);
    auto& os = sink.stream();
    os << "# slowfast-pm tau case=" << pa.case_label << " seed=" << ra.seed
       << " m_kind=" << pa.m_kind << " n=" << rz.r.size() << '\n';
    if (curve) {
      os << "# tau_opt=" << format_g(res.tau_opt)
         << " q_opt=" << format_g(res.q_opt)
         << " c_opt=" << format_g(res.c_opt)
         << " c_star=" << format_g(res.c_star)
         << " non_unimodal=" << (res.non_unimodal ? 1 : 0) << '\n';
      os << "tau,q\n";
      for (const auto& pt : res.curve)
        os << format_g(pt.tau) << ',' << format_g(pt.q) << '\n';
    } else {
      os << "stat,value\n";
      os << "tau_opt," << format_g(res.tau_opt) << '\n';
      os << "q_opt," << format_g(res.q_opt) << '\n';
      os << "c_opt," << format_g(res.c_opt) << '\n';
      os << "c_star," << format_g(res.c_star) << '\n';
      os << "non_unimodal," << (res.non_unimodal ? 1 : 0) << '\n';
      os << "n_samples," << rz.r.size() << '\n';
    }
    sink.finish();
  }
};

// ---------------------------------------------------------------------------
//  bounds and table
// ---------------------------------------------------------------------------

struct BoundsCmd {
  ParamArgs pa;
  RunArgs ra;
  std::vector<std::string> bound_names;
  double reduced_horizon = 0.0;
  std::size_t m_count = 0;
  std::uint64_t m_seed = k_default_m_seed;
  std::string epsilons_csv;  ///< table mode only
  bool table_mode = false;
  std::string out = "-";

  void attach_bounds(CLI::App& app) {
    auto* sub = app.add_subcommand(
        "bounds", "Assemble and check the measure-closeness bounds");
    add_shared(sub);
    sub->callback([this] { run(); });
  }

  void attach_table(CLI::App& app) {
    auto* sub = app.add_subcommand(
        "table",
        "Sweep the time-scale parameter and tabulate one bound per value");
    table_mode = true;
    pa.case_label = "III";
    add_shared(sub);
    opt(sub, "--epsilons", epsilons_csv,
        "Comma list of time-scale values (default 1e-4,1e-2,1e-1)");
    sub->callback([this] { run(); });
  }

  void add_shared(CLI::App* sub) {
    pa.add_to(sub);
    ra.add_to(sub);
    sub->add_option("--bound", bound_names,
                    "Bound id (repeatable): slow_rstar, slow_rdet, pm_rstar, "
                    "pm_rdet, or all; default: every bound the arguments "
                    "allow")
        ->expected(-1);
    opt(sub, "--reduced-horizon", reduced_horizon,
        "Horizon override for the reduced-law run (0 = same as --horizon)");
    opt(sub, "--m-count", m_count, "Memory sample size (0 = automatic)");
    opt(sub, "--m-seed", m_seed, "Memory sample seed")->capture_default_str();
    add_out_option(sub, out);
  }

  std::vector<BoundId> resolve_bounds() const {
    std::vector<std::string> names = bound_names;
    if (names.size() == 1 && names[0] == "all")
      names = {"slow_rstar", "slow_rdet", "pm_rstar", "pm_rdet"};
    if (names.empty()) {
      names = {"slow_rstar", "slow_rdet"};
      if (pa.tau) {
        names.push_back("pm_rstar");
        names.push_back("pm_rdet");
      }
    }
    std::vector<BoundId> ids;
    ids.reserve(names.size());
    for (const auto& n : names) ids.push_back(parse_bound_id(n));
    return ids;
  }

  void run() const {
    const std::vector<BoundId> ids = resolve_bounds();
    for (BoundId id : ids)
      if (bound_is_pm(id) && !pa.tau)
        throw std::invalid_argument(std::string("bounds: ") + bound_name(id) +
                                    " needs --tau");

    BoundRunControls brc;
    brc.original = ra.controls();
    brc.reduced = ra.controls();
    brc.reduced.seed = ra.seed + 1;  // independent streams for the two laws
    if (reduced_horizon > 0.0) brc.reduced.horizon = reduced_horizon;
    brc.tau = pa.tau;
    brc.m_kind = pa.mkind();
    brc.m_count = m_count;
    brc.m_seed = m_seed;

    std::vector<double> eps_list;
    if (table_mode)
      eps_list = epsilons_csv.empty()
                     ? std::vector<double>{1e-4, 1e-2, 1e-1}
                     : parse_double_list(epsilons_csv, "--epsilons");
    else
      eps_list = {pa.epsilon.value_or(pa.resolve().epsilon)};

    std::vector<BoundReport> rows;
    for (double eps : eps_list) {
      ParamArgs pe = pa;
      if (table_mode) pe.epsilon = eps;
      const ModelParams p = pe.resolve();
      for (BoundId id : ids)
        rows.push_back(evaluate_bound(id, p, pe.case_label, brc));
    }

    Sink sink(out);
    sink.stream() << "# slowfast-pm " << (table_mode ? "table" : "bounds")
                  << " case=" << pa.case_label << " seed=" << ra.seed << '\n';
    write_bounds_csv(sink.stream(), rows);
    sink.finish();
  }
};

// ---------------------------------------------------------------------------
//  girsanov
// ---------------------------------------------------------------------------

struct GirsanovCmd {
  ParamArgs pa;
  std::string variant = "slow";
  std::string check = "transitions";
  double horizon = 1.0;
  double dt = 1e-3;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 1;
  int threads = 1;
  double ess_gate = 100.0;
  double envelope_m = 0.0;
  std::size_t n_batches = 32;
  std::size_t record_every = 0;
  std::string out = "-";

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand(
        "girsanov",
        "Check the change-of-measure coupling between the reduced and "
        "original radial laws");
    pa.add_to(sub);
    opt(sub, "--variant", variant, "Coupling gain: slow or pm")
        ->check(CLI::IsMember({"slow", "pm"}))
        ->capture_default_str();
    opt(sub, "--check", check,
        "What to verify: transitions (weighted one-step law) or envelope "
        "(pathwise second-moment decay)")
        ->check(CLI::IsMember({"transitions", "envelope"}))
        ->capture_default_str();
    opt(sub, "--horizon", horizon, "Coupling time span (capped at 2)")
        ->capture_default_str();
    opt(sub, "--dt", dt, "Step size")->capture_default_str();
    opt(sub, "--n-paths", n_paths, "Coupled paths")->capture_default_str();
    opt(sub, "--seed", seed, "Master seed")->capture_default_str();
    opt(sub, "--threads", threads, "Worker threads");
    opt(sub, "--ess-gate", ess_gate,
        "Minimum effective sample size before the run is declared "
        "unreliable")
        ->capture_default_str();
    opt(sub, "--m", envelope_m,
        "Fixed memory value for the envelope (pm variant)");
    opt(sub, "--n-batches", n_batches, "Envelope batch count")
        ->capture_default_str();
    opt(sub, "--record-every", record_every,
        "Envelope node stride (0 = about 2000 nodes)");
    add_out_option(sub, out);
    sub->callback([this] { run(); });
  }

  void run() const {
    const ModelParams p = pa.resolve();
    GirsanovControls gc;
    gc.variant = variant == "pm" ? GainVariant::stochastic_pm
                                 : GainVariant::slow_manifold;
    gc.horizon = horizon;
    gc.dt = dt;
    gc.n_paths = n_paths;
    gc.seed = seed;
    gc.threads = threads;
    gc.tau = pa.tau;
    gc.m_kind = pa.mkind();
    gc.ess_gate = ess_gate;

    Sink sink(out);
    if (check == "transitions") {
      const GirsanovReport rep = transition_preservation_check(p, gc);
      write_girsanov_csv(sink.stream(), rep);
    } else {
      EnvelopeOptions eo;
      eo.n_batches = n_batches;
      eo.record_every = record_every;
      eo.envelope_m = envelope_m;
      const EnvelopeReport rep = gronwall_envelope_check(p, gc, eo);
      write_envelope_csv(sink.stream(), rep);
    }
    sink.finish();
  }
};

// ---------------------------------------------------------------------------
//  --config splicing
// ---------------------------------------------------------------------------

/// Extracts --config FILE from argv, reads the file, and splices its tokens
/// right after the subcommand name so explicit flags win (last one counts).
std::vector<std::string> assemble_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);

  std::string config_path;
  for (auto it = args.begin(); it != args.end();) {
    if (*it == "--config") {
      if (std::next(it) == args.end())
        throw std::invalid_argument("--config needs a file argument");
      config_path = *std::next(it);
      it = args.erase(it, it + 2);
    } else if (it->rfind("--config=", 0) == 0) {
      config_path = it->substr(9);
      it = args.erase(it);
    } else {
      ++it;
    }
  }

  if (!config_path.empty()) {
    const std::vector<std::string> tokens = read_config_tokens(config_path);
    auto sub = std::find_if(args.begin(), args.end(), [](const std::string& s) {
      return !s.empty() && s.front() != '-';
    });
    if (sub == args.end())
      throw std::invalid_argument("--config requires a subcommand");
    args.insert(std::next(sub), tokens.begin(), tokens.end());
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Numerical laboratory for a stochastic slow-fast oscillator: long-run "
      "laws, reduction defects, closeness bounds, and change-of-measure "
      "coupling checks.  '--config FILE' loads key = value defaults that "
      "explicit flags override."};
  app.name("slowfast-pm");
  app.set_version_flag("--version", k_version);
  app.require_subcommand(1);

  SimulateCmd simulate;
  MeasureCmd measure;
  DefectCmd defect;
  TauCmd tau;
  BoundsCmd bounds;
  BoundsCmd table;
  GirsanovCmd girsanov;
  simulate.attach(app);
  measure.attach(app);
  defect.attach(app);
  tau.attach(app);
  bounds.attach_bounds(app);
  table.attach_table(app);
  girsanov.attach(app);

  try {
    std::vector<std::string> args = assemble_args(argc, argv);
    std::reverse(args.begin(), args.end());  // CLI11 consumes back to front
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const slowfast::UnreliableWeights& e) {
    std::cerr << "slowfast-pm: " << e.what() << '\n'
              << "slowfast-pm: effective sample size "
              << slowfast::format_g(e.ess()) << " fell below the gate "
              << slowfast::format_g(e.gate())
              << "; shorten the horizon or tame the parameters\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "slowfast-pm: usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "slowfast-pm: error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
