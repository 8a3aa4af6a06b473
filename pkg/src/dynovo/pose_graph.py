"""Pose graph: odometry chain, loop-closure candidates, Levenberg-Marquardt refinement.

Each edge (i, j) stores a relative-pose measurement Z and a scalar weight;
its residual is the 6-vector logarithm of Z^-1 (X_i^-1 X_j). Node 0 is the
gauge anchor and never moves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (Se3Pose, se3_adjoint, se3_exp, se3_log,
                       se3_right_jacobian_inv)


@dataclass(frozen=True)
class PoseGraphEdge:
    i: int
    j: int
    measurement: Se3Pose
    weight: float = 1.0


@dataclass
class PoseGraph:
    nodes: list[Se3Pose] = field(default_factory=lambda: [Se3Pose.identity()])
    edges: list[PoseGraphEdge] = field(default_factory=list)


def append_odometry(graph: PoseGraph, rel: Se3Pose, weight: float = 1.0) -> int:
    """Extend the chain: new node = last node * rel, plus an odometry edge."""
    if weight < 0:
        raise ValueError("weight must be non-negative")
    if not graph.nodes:
        raise ValueError("graph has no anchor node")
    n = len(graph.nodes)
    graph.nodes.append(graph.nodes[-1] @ rel)
    graph.edges.append(PoseGraphEdge(n - 1, n, rel, weight))
    return n


def add_loop_closure(graph: PoseGraph, i: int, j: int, rel: Se3Pose,
                     weight: float = 10.0) -> None:
    if not (0 <= i < len(graph.nodes) and 0 <= j < len(graph.nodes)):
        raise ValueError("edge endpoints out of range")
    graph.edges.append(PoseGraphEdge(i, j, rel, weight))


def detect_loop_closure(graph: PoseGraph, radius: float, min_gap: int
                        ) -> tuple[int, int, Se3Pose] | None:
    """Candidate revisit for the newest node: the earliest prior node within
    `radius` whose index is at least `min_gap` older.

    The returned relative measurement comes from the current node estimates
    and is only a seed; callers must validate it by registering the two
    frames before inserting a closure edge.
    """
    if radius <= 0 or min_gap < 1:
        raise ValueError("radius must be positive and min_gap >= 1")
    cur = len(graph.nodes) - 1
    pos = graph.nodes[cur].translation
    for i in range(0, cur - min_gap + 1):
        if np.linalg.norm(graph.nodes[i].translation - pos) <= radius:
            rel = graph.nodes[i].inverse() @ graph.nodes[cur]
            return i, cur, rel
    return None


def edge_residual(edge: PoseGraphEdge, xi: Se3Pose, xj: Se3Pose) -> np.ndarray:
    return se3_log(edge.measurement.inverse() @ xi.inverse() @ xj)


def edge_jacobians(edge: PoseGraphEdge, xi: Se3Pose, xj: Se3Pose
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual plus its 6x6 Jacobians w.r.t. right-multiplied increments
    of node i and node j (X <- X * exp(delta))."""
    r = edge_residual(edge, xi, xj)
    jr_inv = se3_right_jacobian_inv(r)
    jj = jr_inv
    ji = -jr_inv @ se3_adjoint(xj.inverse() @ xi)
    return r, ji, jj


def total_residual(graph: PoseGraph, nodes: list[Se3Pose] | None = None) -> float:
    nodes = graph.nodes if nodes is None else nodes
    return float(sum(e.weight * np.dot(r, r)
                     for e in graph.edges
                     for r in [edge_residual(e, nodes[e.i], nodes[e.j])]))


def _check_connected(graph: PoseGraph) -> None:
    n = len(graph.nodes)
    adj: list[list[int]] = [[] for _ in range(n)]
    for e in graph.edges:
        adj[e.i].append(e.j)
        adj[e.j].append(e.i)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != n:
        raise ValueError("pose graph is disconnected")


def optimize(graph: PoseGraph, max_iterations: int = 50,
             damping: float = 1e-4) -> list[Se3Pose]:
    """Levenberg-Marquardt over all nodes but the anchored node 0.

    Minimizes the weighted sum of squared edge residuals. Steps that do not
    decrease the cost are rejected (damping is raised and the step retried),
    so the returned configuration never has a higher residual than the
    input. Terminates on max_iterations or a relative cost change < 1e-9.
    """
    _check_connected(graph)
    nodes = list(graph.nodes)
    n = len(nodes)
    if n < 2 or not graph.edges:
        return nodes
    dim = 6 * (n - 1)   # node 0 fixed
    lam = damping
    cost = total_residual(graph, nodes)
    if not np.isfinite(cost):
        raise ValueError("non-finite residual")

    for _ in range(max_iterations):
        h = np.zeros((dim, dim))
        g = np.zeros(dim)
        for e in graph.edges:
            r, ji, jj = edge_jacobians(e, nodes[e.i], nodes[e.j])
            w = e.weight
            si = 6 * (e.i - 1)
            sj = 6 * (e.j - 1)
            if e.i > 0:
                h[si:si + 6, si:si + 6] += w * ji.T @ ji
                g[si:si + 6] += w * ji.T @ r
            if e.j > 0:
                h[sj:sj + 6, sj:sj + 6] += w * jj.T @ jj
                g[sj:sj + 6] += w * jj.T @ r
            if e.i > 0 and e.j > 0:
                block = w * ji.T @ jj
                h[si:si + 6, sj:sj + 6] += block
                h[sj:sj + 6, si:si + 6] += block.T

        improved = False
        for _ in range(12):
            try:
                delta = np.linalg.solve(h + lam * np.diag(np.diag(h)) + 1e-12 * np.eye(dim), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = list(nodes)
            for k in range(1, n):
                trial[k] = nodes[k] @ se3_exp(delta[6 * (k - 1):6 * k])
            new_cost = total_residual(graph, trial)
            if not np.isfinite(new_cost):
                raise ValueError("non-finite residual")
            if new_cost < cost:
                nodes = trial
                rel_change = (cost - new_cost) / max(cost, 1e-30)
                cost = new_cost
                lam = max(lam / 10, 1e-12)
                improved = rel_change >= 1e-9
                break
            lam *= 10
        if not improved:
            break
    return nodes


def save_graph(graph: PoseGraph, path) -> None:
    """Text dump: NODE and EDGE lines with translation + quaternion."""
    with open(path, "w") as f:
        for idx, node in enumerate(graph.nodes):
            t, q = node.as_quat()
            f.write(f"NODE {idx} " + " ".join(f"{x:.9f}" for x in (*t, *q)) + "\n")
        for e in graph.edges:
            t, q = e.measurement.as_quat()
            f.write(f"EDGE {e.i} {e.j} "
                    + " ".join(f"{x:.9f}" for x in (*t, *q)) + f" {e.weight:.6f}\n")
