"""Correspondence refinement as discrete energy minimization.

Each detected node v is assigned a pattern node ID X_v from its candidate
list. The objective couples a data term (negative log candidate
probability, a large constant for off-list labels) with a pairwise term
that charges ``lam`` whenever an image edge connects two labels that are
not neighbors on the pattern in that direction.

Three solvers over the same search space (the candidate lists):

* ``vote_refine``  -- the fast heuristic: sweep nodes, rescoring each
  candidate by how many neighbor labels its pattern adjacency explains,
  until a sweep changes nothing;
* ``icm_refine``   -- coordinate descent on the energy itself, the
  canonical baseline the voting rule approximates;
* ``brute_force_map`` -- exact enumeration (branch and bound), usable as
  an oracle for small instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .graphext import DetectedGraph, graph_from_json, graph_to_json
from .pattern import DOWN, RIGHT, GridPattern, adjacency, pattern_from_json, pattern_to_json

G_MAX = 50.0  # data cost for labels absent from a node's candidate list


class MrfError(ValueError):
    pass


@dataclass
class Labeling:
    labels: np.ndarray  # (num_nodes,) int64, -1 = unassigned

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def is_complete(self) -> bool:
        return bool((self.labels >= 0).all())


@dataclass
class RefineResult:
    labeling: Labeling
    converged: bool
    sweeps: int
    scores: np.ndarray | None = None  # per-node consistency score (vote)
    energies: list | None = None  # per-sweep energy (icm)


def _check_candidates(graph: DetectedGraph):
    for i, node in enumerate(graph.nodes):
        if len(node.candidate_ids) == 0:
            raise MrfError(f"node {i} has an empty candidate list")


def _data_cost(node, label):
    hits = np.nonzero(node.candidate_ids == label)[0]
    if len(hits) == 0:
        return G_MAX
    return -float(np.log(node.candidate_probs[hits[0]]))


def default_lambda(graph: DetectedGraph) -> float:
    """Twice the median gap between the two best data costs per node."""
    gaps = []
    for node in graph.nodes:
        if len(node.candidate_probs) >= 2:
            g = -np.log(node.candidate_probs[:2])
            gaps.append(g[1] - g[0])
    if not gaps:
        return 1.0
    return float(2.0 * np.median(gaps))


def energy(graph: DetectedGraph, pattern: GridPattern, labeling: Labeling, lam: float) -> float:
    """Exact objective value of a complete labeling."""
    labels = labeling.labels
    if len(labels) != graph.num_nodes:
        raise MrfError("labeling length does not match the graph")
    if not labeling.is_complete():
        missing = int(np.nonzero(labels < 0)[0][0])
        raise MrfError(f"node {missing} is unassigned")
    if graph.num_nodes and labels.max() >= pattern.num_nodes:
        raise MrfError("label outside the pattern range")
    table = adjacency(pattern).table
    total = 0.0
    for i, node in enumerate(graph.nodes):
        total += _data_cost(node, int(labels[i]))
    for src, dst, d in graph.edges:
        if d in (DOWN, RIGHT):  # one representative per undirected pair
            if table[labels[src], d] != labels[dst]:
                total += lam
    return total


def _neighbor_arrays(graph: DetectedGraph):
    return [graph.neighbors(v) for v in range(graph.num_nodes)]


def vote_refine(graph: DetectedGraph, pattern: GridPattern, max_sweeps: int = 50) -> RefineResult:
    """Iterative neighbor-consistency voting.

    Starts from every node's top candidate. In node order, each node
    rescores its candidates by the number of image neighbors whose
    current label matches the candidate's pattern adjacency in that
    direction, and takes the best (ties: higher probability, then lower
    ID). Stops when a full sweep changes nothing.
    """
    _check_candidates(graph)
    table = adjacency(pattern).table
    nbrs = _neighbor_arrays(graph)
    labels = np.array([int(n.candidate_ids[0]) for n in graph.nodes], dtype=np.int64)
    if labels.size and labels.max() >= pattern.num_nodes:
        raise MrfError("candidate id outside the pattern range")

    def node_score(v, label):
        s = 0
        for u, d in nbrs[v]:
            if table[label, d] == labels[u]:
                s += 1
        return s

    converged = False
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        changed = False
        for v, node in enumerate(graph.nodes):
            best_key = None
            best_label = labels[v]
            for k, label in enumerate(node.candidate_ids):
                key = (node_score(v, int(label)), node.candidate_probs[k], -int(label))
                if best_key is None or key > best_key:
                    best_key = key
                    best_label = int(label)
            if best_label != labels[v]:
                labels[v] = best_label
                changed = True
        if not changed:
            converged = True
            break
    scores = np.array([node_score(v, int(labels[v])) for v in range(graph.num_nodes)])
    return RefineResult(Labeling(labels), converged, sweeps, scores=scores)


def icm_refine(graph: DetectedGraph, pattern: GridPattern, lam: float | None = None,
               max_sweeps: int = 50) -> RefineResult:
    """Sequential per-node energy descent over the candidate lists.

    A node only moves when the move strictly lowers its local cost, so
    the total energy is non-increasing and strictly decreases on any
    sweep that changes a label.
    """
    _check_candidates(graph)
    if lam is None:
        lam = default_lambda(graph)
    table = adjacency(pattern).table
    nbrs = _neighbor_arrays(graph)
    labels = np.array([int(n.candidate_ids[0]) for n in graph.nodes], dtype=np.int64)
    if labels.size and labels.max() >= pattern.num_nodes:
        raise MrfError("candidate id outside the pattern range")

    def local_cost(v, node, k):
        label = int(node.candidate_ids[k])
        c = -float(np.log(node.candidate_probs[k]))
        for u, d in nbrs[v]:
            if table[label, d] != labels[u]:
                c += lam
        return c

    converged = False
    sweeps = 0
    energies = [energy(graph, pattern, Labeling(labels.copy()), lam)]
    for _ in range(max_sweeps):
        sweeps += 1
        changed = False
        for v, node in enumerate(graph.nodes):
            cur_k = int(np.nonzero(node.candidate_ids == labels[v])[0][0])
            best_k, best_cost = cur_k, local_cost(v, node, cur_k)
            for k in range(len(node.candidate_ids)):
                if k == cur_k:
                    continue
                c = local_cost(v, node, k)
                if c < best_cost - 1e-12:  # strict moves only; ties keep the current label
                    best_k, best_cost = k, c
            if best_k != cur_k:
                labels[v] = int(node.candidate_ids[best_k])
                changed = True
        energies.append(energy(graph, pattern, Labeling(labels.copy()), lam))
        if not changed:
            converged = True
            break
    return RefineResult(Labeling(labels), converged, sweeps, energies=energies)


MAX_BRUTE_FORCE_STATES = 10**7


def brute_force_map(graph: DetectedGraph, pattern: GridPattern, lam: float) -> Labeling:
    """Global optimum by exhaustive search (guarded by instance size).

    Ties resolve to the labeling whose label-ID vector is lexicographically
    smallest in node order.
    """
    _check_candidates(graph)
    n = graph.num_nodes
    counts = np.array([len(node.candidate_ids) for node in graph.nodes], dtype=np.int64)
    states = 1
    for c in counts:
        states *= int(c)
        if states > MAX_BRUTE_FORCE_STATES:
            raise MrfError(
                f"instance too large for exhaustive search (> {MAX_BRUTE_FORCE_STATES} states)"
            )
    kmax = int(counts.max())
    ids = np.zeros((n, kmax), dtype=np.int64)
    g = np.full((n, kmax), np.inf)
    for i, node in enumerate(graph.nodes):
        order = np.argsort(node.candidate_ids, kind="stable")  # ID order for the tie-break
        ids[i, : counts[i]] = node.candidate_ids[order]
        g[i, : counts[i]] = -np.log(node.candidate_probs[order])

    table = adjacency(pattern).table
    per_node_edges = [[] for _ in range(n)]
    for src, dst, d in graph.edges:
        if d not in (DOWN, RIGHT):
            continue
        later, earlier = (int(src), int(dst)) if src > dst else (int(dst), int(src))
        ls, es = counts[later], counts[earlier]
        cost = np.full((kmax, kmax), lam)
        if src > dst:
            # consistency: table[label_src, d] == label_dst, src is 'later'
            cons = table[ids[later, :ls], d][:, None] == ids[earlier, :es][None, :]
        else:
            cons = table[ids[earlier, :es], d][None, :] == ids[later, :ls][:, None]
        cost[:ls, :es] = np.where(cons, 0.0, lam)
        per_node_edges[later].append((earlier, cost))

    edge_ptr = np.zeros(n + 1, dtype=np.int64)
    edge_other = []
    edge_cost = []
    for i in range(n):
        for other, cost in per_node_edges[i]:
            edge_other.append(other)
            edge_cost.append(cost)
        edge_ptr[i + 1] = len(edge_other)
    edge_other = np.asarray(edge_other, dtype=np.int64) if edge_other else np.zeros(0, np.int64)
    edge_cost = (
        np.stack(edge_cost) if edge_cost else np.zeros((0, kmax, kmax), dtype=np.float64)
    )
    idx, _ = kernels.bruteforce_assign(counts, g, edge_ptr, edge_other, edge_cost)
    labels = ids[np.arange(n), idx]
    return Labeling(labels)


def labeling_accuracy(labeling: Labeling, true_ids) -> float:
    true_ids = np.asarray(true_ids, dtype=np.int64)
    if len(true_ids) == 0:
        return 0.0
    return float(np.mean(labeling.labels == true_ids))


# ---------------------------------------------------------------------------
# instance exchange (regression corpora)


def instance_to_json(graph: DetectedGraph, pattern: GridPattern, lam=None) -> dict:
    return {
        "graph": graph_to_json(graph),
        "pattern": pattern_to_json(pattern),
        "lambda": lam,
    }


def instance_from_json(obj: dict):
    graph = graph_from_json(obj["graph"])
    pattern = pattern_from_json(obj["pattern"])
    graph.validate(pattern.num_nodes)
    return graph, pattern, obj.get("lambda")
