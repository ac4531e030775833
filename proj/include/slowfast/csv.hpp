#pragma once

/// @file csv.hpp
/// @brief Plain-text writers for the library's report structs, plus a small
///        key=value configuration-file reader used by the command-line tool.
///
/// Every numeric field is rendered with printf's "%.12g" so that two runs
/// with identical inputs and seeds produce byte-identical table bodies.
/// Volatile metadata (timestamps, hostnames) never appears on data rows;
/// callers that want it must put it on '#' comment lines.

#include <cctype>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "slowfast/bounds.hpp"
#include "slowfast/defect.hpp"
#include "slowfast/girsanov.hpp"
#include "slowfast/systems.hpp"

namespace slowfast {

/// @brief Human-readable label for a coupling-gain variant.
inline const char* gain_variant_name(GainVariant v) {
  return v == GainVariant::slow_manifold ? "slow_manifold" : "stochastic_pm";
}

/// @brief Renders one double exactly the way every table in this file does.
inline std::string format_g(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

namespace detail {

/// Joins pre-rendered cells with commas and terminates the row.
inline void write_row(std::ostream& os, std::span<const std::string> cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os << ',';
    os << cells[i];
  }
  os << '\n';
}

}  // namespace detail

/// @brief One row per defect measurement; all numeric fields included.
inline void write_defect_csv(std::ostream& os,
                             std::span<const DefectReport> rows) {
  os << "case,manifold,tau,q,q_stderr,l2,l4,l4_stderr,q_centered,n\n";
  for (const auto& r : rows) {
    const std::string cells[] = {
        r.case_id,           r.manifold_id,        format_g(r.tau),
        format_g(r.q),       format_g(r.q_stderr), format_g(r.l2),
        format_g(r.l4),      format_g(r.l4_stderr),
        format_g(r.q_centered), std::to_string(r.n)};
    detail::write_row(os, cells);
  }
}

/// @brief One row per assembled closeness bound.  Booleans print as 0/1.
inline void write_bounds_csv(std::ostream& os,
                             std::span<const BoundReport> rows) {
  os << "bound,case,epsilon,tau,lhs_w1,lhs_stderr,additive_C,"
        "multiplicative_c,c_prefactor,defect_l4,defect_stderr,rhs,"
        "satisfied,satisfied_worst_case,corollary_condition_holds,"
        "corollary_c,n_mu,n_nu\n";
  for (const auto& r : rows) {
    const std::string cells[] = {
        bound_name(r.id),
        r.case_label,
        format_g(r.epsilon),
        r.tau ? format_g(*r.tau) : std::string("nan"),
        format_g(r.lhs_w1),
        format_g(r.lhs_stderr),
        format_g(r.additive_C),
        format_g(r.multiplicative_c),
        format_g(r.c_prefactor),
        format_g(r.defect_l4),
        format_g(r.defect_stderr),
        format_g(r.rhs),
        std::string(r.satisfied ? "1" : "0"),
        std::string(r.satisfied_worst_case ? "1" : "0"),
        std::string(r.corollary_condition_holds ? "1" : "0"),
        format_g(r.corollary_c),
        std::to_string(r.n_mu),
        std::to_string(r.n_nu)};
    detail::write_row(os, cells);
  }
}

/// @brief Summary scalars on '#' lines, then one row per battery observable.
inline void write_girsanov_csv(std::ostream& os, const GirsanovReport& rep) {
  os << "# transition-preservation check\n"
     << "# variant=" << gain_variant_name(rep.coupling_variant)
     << " horizon=" << format_g(rep.horizon_t)
     << " n_paths=" << rep.n_paths
     << " overflow=" << rep.overflow_count << '\n'
     << "# mean_D=" << format_g(rep.mean_d)
     << " mean_D_stderr=" << format_g(rep.mean_d_stderr)
     << " ess=" << format_g(rep.ess)
     << " weighted_marginal_w1=" << format_g(rep.weighted_marginal_w1)
     << " max_ratio=" << format_g(rep.max_ratio) << '\n'
     << "observable,plain_mean,plain_stderr,weighted_mean,weighted_stderr,"
        "discrepancy,ratio\n";
  for (const auto& b : rep.battery) {
    const std::string cells[] = {
        b.observable,
        format_g(b.plain_mean),    format_g(b.plain_stderr),
        format_g(b.weighted_mean), format_g(b.weighted_stderr),
        format_g(b.discrepancy),   format_g(b.ratio)};
    detail::write_row(os, cells);
  }
}

/// @brief Summary scalars on '#' lines, then one row per recorded node.
inline void write_envelope_csv(std::ostream& os, const EnvelopeReport& rep) {
  os << "# pathwise second-moment envelope\n"
     << "# variant=" << gain_variant_name(rep.variant)
     << " horizon=" << format_g(rep.horizon) << " dt=" << format_g(rep.dt)
     << " q=" << format_g(rep.q) << " m=" << format_g(rep.envelope_m) << '\n'
     << "# n_paths=" << rep.n_paths << " n_batches=" << rep.n_batches
     << " overflow=" << rep.overflow_count << " ess=" << format_g(rep.ess)
     << " violations=" << rep.violations << '\n'
     << "t,lhs,rhs,stderr_lhs,stderr_rhs\n";
  for (std::size_t j = 0; j < rep.t.size(); ++j) {
    const std::string cells[] = {
        format_g(rep.t[j]), format_g(rep.lhs[j]), format_g(rep.rhs[j]),
        format_g(rep.stderr_lhs[j]), format_g(rep.stderr_rhs[j])};
    detail::write_row(os, cells);
  }
}

/// @brief One value per line under a single-column header.
inline void write_samples_csv(std::ostream& os, const std::string& name,
                              std::span<const double> xs) {
  os << name << '\n';
  for (double x : xs) os << format_g(x) << '\n';
}

/// @brief Reads a key = value configuration file into command-line tokens.
///
/// Grammar, line by line:
///   - blank lines and lines whose first non-space character is '#' are
///     skipped;
///   - `key = value` becomes the two tokens "--key" and "value" (surrounding
///     whitespace and one pair of single or double quotes around the value
///     are stripped);
///   - a bare `key` becomes the single flag token "--key".
///
/// Keys may be written with or without the leading dashes.  The caller is
/// expected to splice the returned tokens *before* the user's explicit
/// arguments so that explicit flags win.  Throws std::invalid_argument with
/// the offending line number on a malformed line or an unreadable file.
inline std::vector<std::string> read_config_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);

  auto trim = [](std::string s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  };

  std::vector<std::string> tokens;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;

    const std::size_t eq = t.find('=');
    std::string key = trim(eq == std::string::npos ? t : t.substr(0, eq));
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    if (key.empty() || key.find_first_of(" \t") != std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": malformed key in '" + t + "'");
    tokens.push_back("--" + key);

    if (eq != std::string::npos) {
      std::string val = trim(t.substr(eq + 1));
      if (val.size() >= 2 &&
          ((val.front() == '"' && val.back() == '"') ||
           (val.front() == '\'' && val.back() == '\'')))
        val = val.substr(1, val.size() - 2);
      if (val.empty())
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": empty value for key '" + key + "'");
      tokens.push_back(val);
    }
  }
  return tokens;
}

}  // namespace slowfast
