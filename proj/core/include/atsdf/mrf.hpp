#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace atsdf {

/// Candidate labels of one node with their unary costs (parallel arrays).
struct MrfNode {
  std::vector<std::int32_t> labels;
  std::vector<double> costs;

  /// Cost of `label`, or +inf when it is not a candidate.
  double cost(std::int32_t label) const noexcept;
};

using Labeling = std::vector<std::int32_t>;

/// Pairwise MRF with Potts smoothness:
///   E(L) = sum_i unary_i(L_i) + lambda * sum_{(i,j) in edges} [L_i != L_j]
/// This is a minimizer; callers negate quality or probability terms.
struct MrfProblem {
  std::vector<MrfNode> nodes;
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;
  double lambda = 0.0;

  /// kNoCandidates for an empty candidate list, kInvalidArgument for
  /// non-finite costs, negative lambda or dangling edges.
  void validate() const;
  double energy(const Labeling& labels) const;
  /// Sorted union of all candidate labels.
  std::vector<std::int32_t> label_set() const;

  /// Text dump: a "nodes N edges E lambda L" header, then one "n k l1 c1 ..."
  /// line per node and one "e i j" line per edge.
  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static MrfProblem load(std::istream& in);
  static MrfProblem load(const std::string& path);
};

struct MrfSolveConfig {
  int max_sweeps = 20;
};

struct MrfResult {
  Labeling labels;
  double energy = 0.0;
  double initial_energy = 0.0;
  /// Energy after each full expansion sweep.
  std::vector<double> sweep_energies;
  int sweeps = 0;
};

/// Alpha-expansion (one s-t min cut per label, ascending label order)
/// starting from the per-node argmin; ties go to the lowest label.
MrfResult solve_mrf(const MrfProblem& problem, const MrfSolveConfig& cfg = {});

inline constexpr std::size_t kExhaustiveMaxNodes = 12;

/// Exact minimum by enumeration, for problems with at most 12 nodes. Among
/// equal energies the lexicographically first labeling (candidate order) wins.
MrfResult solve_mrf_exhaustive(const MrfProblem& problem);

}  // namespace atsdf
