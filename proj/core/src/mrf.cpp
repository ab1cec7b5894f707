#include "atsdf/mrf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <sstream>

#include "atsdf/error.hpp"

namespace atsdf {

double MrfNode::cost(std::int32_t label) const noexcept {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return costs[i];
  }
  return std::numeric_limits<double>::infinity();
}

void MrfProblem::validate() const {
  if (!std::isfinite(lambda) || lambda < 0) {
    throw Error(ErrorCode::kInvalidArgument, "mrf: lambda must be finite and non-negative");
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const MrfNode& n = nodes[i];
    if (n.labels.empty()) throw Error(ErrorCode::kNoCandidates, "mrf: node " + std::to_string(i) + " has no labels");
    if (n.labels.size() != n.costs.size()) {
      throw Error(ErrorCode::kInvalidArgument, "mrf: node " + std::to_string(i) + " label/cost size mismatch");
    }
    std::vector<std::int32_t> sorted = n.labels;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw Error(ErrorCode::kInvalidArgument, "mrf: node " + std::to_string(i) + " repeats a label");
    }
    for (double c : n.costs) {
      if (!std::isfinite(c)) throw Error(ErrorCode::kInvalidArgument, "mrf: non-finite unary cost");
    }
  }
  const auto count = static_cast<std::int64_t>(nodes.size());
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= count || b >= count || a == b) {
      throw Error(ErrorCode::kInvalidArgument, "mrf: invalid edge");
    }
  }
}

double MrfProblem::energy(const Labeling& labels) const {
  if (labels.size() != nodes.size()) throw Error(ErrorCode::kInvalidArgument, "mrf: labeling size mismatch");
  double e = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) e += nodes[i].cost(labels[i]);
  for (const auto& [a, b] : edges) {
    if (labels[static_cast<std::size_t>(a)] != labels[static_cast<std::size_t>(b)]) e += lambda;
  }
  return e;
}

std::vector<std::int32_t> MrfProblem::label_set() const {
  std::vector<std::int32_t> out;
  for (const auto& n : nodes) out.insert(out.end(), n.labels.begin(), n.labels.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void MrfProblem::save(std::ostream& out) const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", lambda);
  out << "nodes " << nodes.size() << " edges " << edges.size() << " lambda " << buf << '\n';
  for (const auto& n : nodes) {
    out << "n " << n.labels.size();
    for (std::size_t i = 0; i < n.labels.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", n.costs[i]);
      out << ' ' << n.labels[i] << ' ' << buf;
    }
    out << '\n';
  }
  for (const auto& [a, b] : edges) out << "e " << a << ' ' << b << '\n';
}

void MrfProblem::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path);
  save(out);
}

MrfProblem MrfProblem::load(std::istream& in) {
  auto fail = [](const std::string& what) { return Error(ErrorCode::kFormat, "mrf dump: " + what); };
  MrfProblem p;
  std::string tag_nodes, tag_edges, tag_lambda;
  std::size_t n_nodes = 0, n_edges = 0;
  if (!(in >> tag_nodes >> n_nodes >> tag_edges >> n_edges >> tag_lambda >> p.lambda) || tag_nodes != "nodes" ||
      tag_edges != "edges" || tag_lambda != "lambda") {
    throw fail("bad header");
  }
  p.nodes.resize(n_nodes);
  for (auto& n : p.nodes) {
    std::string tag;
    std::size_t k = 0;
    if (!(in >> tag >> k) || tag != "n") throw fail("bad node line");
    n.labels.resize(k);
    n.costs.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      if (!(in >> n.labels[i] >> n.costs[i])) throw fail("bad node entry");
    }
  }
  p.edges.resize(n_edges);
  for (auto& [a, b] : p.edges) {
    std::string tag;
    if (!(in >> tag >> a >> b) || tag != "e") throw fail("bad edge line");
  }
  p.validate();
  return p;
}

MrfProblem MrfProblem::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return load(in);
}

namespace {

/// Dinic max-flow on a graph with two terminals (source 0, sink 1).
class FlowGraph {
 public:
  explicit FlowGraph(std::size_t nodes) : head_(nodes, -1) {}

  void add_edge(int u, int v, double cap_uv, double cap_vu) {
    if (cap_uv <= 0 && cap_vu <= 0) return;
    edges_.push_back({v, head_[static_cast<std::size_t>(u)], cap_uv});
    head_[static_cast<std::size_t>(u)] = static_cast<int>(edges_.size()) - 1;
    edges_.push_back({u, head_[static_cast<std::size_t>(v)], cap_vu});
    head_[static_cast<std::size_t>(v)] = static_cast<int>(edges_.size()) - 1;
  }

  void max_flow(int s, int t) {
    double total_cap = 0;
    for (const auto& e : edges_) total_cap += e.cap;
    eps_ = 1e-12 * (1.0 + total_cap);
    while (bfs(s, t)) {
      iter_ = head_;
      while (dfs(s, t, std::numeric_limits<double>::infinity()) > eps_) {
      }
    }
  }

  /// Nodes reachable from `s` in the residual graph (after max_flow).
  std::vector<char> source_side(int s) const {
    std::vector<char> seen(head_.size(), 0);
    std::vector<int> stack{s};
    seen[static_cast<std::size_t>(s)] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int e = head_[static_cast<std::size_t>(u)]; e != -1; e = edges_[static_cast<std::size_t>(e)].next) {
        const Edge& ed = edges_[static_cast<std::size_t>(e)];
        if (ed.cap > eps_ && !seen[static_cast<std::size_t>(ed.to)]) {
          seen[static_cast<std::size_t>(ed.to)] = 1;
          stack.push_back(ed.to);
        }
      }
    }
    return seen;
  }

 private:
  struct Edge {
    int to;
    int next;
    double cap;
  };

  bool bfs(int s, int t) {
    level_.assign(head_.size(), -1);
    std::queue<int> q;
    level_[static_cast<std::size_t>(s)] = 0;
    q.push(s);
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int e = head_[static_cast<std::size_t>(u)]; e != -1; e = edges_[static_cast<std::size_t>(e)].next) {
        const Edge& ed = edges_[static_cast<std::size_t>(e)];
        if (ed.cap > eps_ && level_[static_cast<std::size_t>(ed.to)] < 0) {
          level_[static_cast<std::size_t>(ed.to)] = level_[static_cast<std::size_t>(u)] + 1;
          q.push(ed.to);
        }
      }
    }
    return level_[static_cast<std::size_t>(t)] >= 0;
  }

  double dfs(int u, int t, double pushed) {
    if (u == t) return pushed;
    for (int& e = iter_[static_cast<std::size_t>(u)]; e != -1; e = edges_[static_cast<std::size_t>(e)].next) {
      Edge& ed = edges_[static_cast<std::size_t>(e)];
      if (ed.cap <= eps_ || level_[static_cast<std::size_t>(ed.to)] != level_[static_cast<std::size_t>(u)] + 1) {
        continue;
      }
      const double got = dfs(ed.to, t, std::min(pushed, ed.cap));
      if (got > eps_) {
        ed.cap -= got;
        edges_[static_cast<std::size_t>(e ^ 1)].cap += got;
        return got;
      }
    }
    return 0.0;
  }

  std::vector<int> head_;
  std::vector<Edge> edges_;
  std::vector<int> level_;
  std::vector<int> iter_;
  double eps_ = 0.0;
};

Labeling argmin_labeling(const MrfProblem& p) {
  Labeling out(p.nodes.size());
  for (std::size_t i = 0; i < p.nodes.size(); ++i) {
    const MrfNode& n = p.nodes[i];
    std::size_t best = 0;
    for (std::size_t k = 1; k < n.labels.size(); ++k) {
      if (n.costs[k] < n.costs[best] || (n.costs[k] == n.costs[best] && n.labels[k] < n.labels[best])) best = k;
    }
    out[i] = n.labels[best];
  }
  return out;
}

/// One expansion move: every node that has `alpha` as a candidate may switch
/// to it. Binary variable x = 1 means "take alpha"; a node on the sink side
/// of the minimum cut takes alpha.
Labeling expand(const MrfProblem& p, const Labeling& cur, std::int32_t alpha,
                const std::vector<std::vector<std::int32_t>>& adjacency) {
  const std::size_t n = p.nodes.size();
  std::vector<int> var(n, -1);
  int count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (cur[i] != alpha && std::isfinite(p.nodes[i].cost(alpha))) var[i] = count++;
  }
  if (count == 0) return cur;

  std::vector<double> e0(static_cast<std::size_t>(count), 0.0);
  std::vector<double> e1(static_cast<std::size_t>(count), 0.0);
  FlowGraph graph(static_cast<std::size_t>(count) + 2);
  for (std::size_t i = 0; i < n; ++i) {
    const int vi = var[i];
    if (vi < 0) continue;
    e0[static_cast<std::size_t>(vi)] += p.nodes[i].cost(cur[i]);
    e1[static_cast<std::size_t>(vi)] += p.nodes[i].cost(alpha);
    for (std::int32_t j : adjacency[i]) {
      const auto ju = static_cast<std::size_t>(j);
      const int vj = var[ju];
      if (vj < 0) {
        // Neighbor is fixed at its current label.
        if (cur[i] != cur[ju]) e0[static_cast<std::size_t>(vi)] += p.lambda;
        if (alpha != cur[ju]) e1[static_cast<std::size_t>(vi)] += p.lambda;
        continue;
      }
      if (static_cast<std::size_t>(j) < i) continue;
      // E(0,0)=A, E(0,1)=B, E(1,0)=C, E(1,1)=0 for the pair (i, j).
      const double a = cur[i] != cur[ju] ? p.lambda : 0.0;
      const double b = p.lambda;
      const double c = p.lambda;
      // E = A + (C - A) x_i + (0 - C) x_j + (B + C - A)(1 - x_i) x_j
      e1[static_cast<std::size_t>(vi)] += c - a;
      e1[static_cast<std::size_t>(vj)] -= c;
      graph.add_edge(vi + 2, vj + 2, b + c - a, 0.0);
    }
  }
  for (int v = 0; v < count; ++v) {
    const double d = e1[static_cast<std::size_t>(v)] - e0[static_cast<std::size_t>(v)];
    if (d > 0) {
      graph.add_edge(0, v + 2, d, 0.0);  // cut when v takes alpha
    } else if (d < 0) {
      graph.add_edge(v + 2, 1, -d, 0.0);  // cut when v keeps its label
    }
  }
  graph.max_flow(0, 1);
  const std::vector<char> source = graph.source_side(0);
  Labeling next = cur;
  for (std::size_t i = 0; i < n; ++i) {
    if (var[i] >= 0 && !source[static_cast<std::size_t>(var[i]) + 2]) next[i] = alpha;
  }
  return next;
}

}  // namespace

MrfResult solve_mrf(const MrfProblem& problem, const MrfSolveConfig& cfg) {
  problem.validate();
  if (cfg.max_sweeps < 0) throw Error(ErrorCode::kInvalidArgument, "mrf: max_sweeps must be >= 0");
  std::vector<std::vector<std::int32_t>> adjacency(problem.nodes.size());
  for (const auto& [a, b] : problem.edges) {
    adjacency[static_cast<std::size_t>(a)].push_back(b);
    adjacency[static_cast<std::size_t>(b)].push_back(a);
  }

  MrfResult result;
  result.labels = argmin_labeling(problem);
  result.energy = problem.energy(result.labels);
  result.initial_energy = result.energy;
  if (problem.lambda == 0.0) return result;

  const std::vector<std::int32_t> labels = problem.label_set();
  for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    bool improved = false;
    for (std::int32_t alpha : labels) {
      Labeling candidate = expand(problem, result.labels, alpha, adjacency);
      const double e = problem.energy(candidate);
      if (e < result.energy - 1e-12 * std::max(1.0, std::abs(result.energy))) {
        result.labels = std::move(candidate);
        result.energy = e;
        improved = true;
      }
    }
    result.sweep_energies.push_back(result.energy);
    result.sweeps = sweep + 1;
    if (!improved) break;
  }
  return result;
}

MrfResult solve_mrf_exhaustive(const MrfProblem& problem) {
  problem.validate();
  const std::size_t n = problem.nodes.size();
  if (n > kExhaustiveMaxNodes) {
    throw Error(ErrorCode::kInvalidArgument, "mrf: exhaustive solver supports at most 12 nodes");
  }
  std::vector<std::size_t> idx(n, 0);
  Labeling cur(n);
  MrfResult result;
  result.energy = std::numeric_limits<double>::infinity();
  while (true) {
    for (std::size_t i = 0; i < n; ++i) cur[i] = problem.nodes[i].labels[idx[i]];
    const double e = problem.energy(cur);
    if (e < result.energy) {
      result.energy = e;
      result.labels = cur;
    }
    bool carry = true;
    for (std::size_t k = n; carry && k > 0;) {
      --k;
      if (++idx[k] < problem.nodes[k].labels.size()) {
        carry = false;
      } else {
        idx[k] = 0;
      }
    }
    if (carry) break;
  }
  result.initial_energy = result.energy;
  return result;
}

}  // namespace atsdf
