"""DAG representation and the group systems that encode hierarchical sparsity.

A directed acyclic graph over ``N`` nodes, each carrying one or more
variables, induces two families of coordinate groups:

* ancestor groups ``g_i = ancestors(i) | {i}``, used by the latent
  overlapping group (LOG) penalty, whose support is a union of groups and
  therefore conforms to the strong-hierarchy reading of the graph;
* descendant groups ``g_i = descendants(i) | {i}``, the grouping under
  which a plain (overlapping) group lasso induces the same hierarchy.

Node indices are 0-based throughout.  Groups are ordered by node index so
that group construction is deterministic; a seed-controlled shuffle is
available for randomized block-coordinate experiments.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    CycleDetected,
    DimensionMismatch,
    DuplicateEdge,
    EmptyGroup,
    IndexOutOfRange,
)

__all__ = [
    "Dag",
    "GroupSet",
    "HierarchyReport",
    "HierarchyViolation",
    "validate_dag",
    "ancestor_groups",
    "descendant_groups",
    "build_index_map",
    "check_hierarchy_conformance",
    "read_edge_list",
    "write_edge_list",
    "read_group_file",
    "write_group_file",
]


@dataclass(frozen=True)
class Dag:
    """Validated directed acyclic graph with per-node variable counts.

    Instances are immutable; construct them through :func:`validate_dag`.

    Attributes
    ----------
    num_nodes : int
        Number of nodes ``N``.
    edges : tuple of (int, int)
        Ordered ``(parent, child)`` pairs.
    node_dims : tuple of int
        Variables per node; the ambient dimension is ``d = sum(node_dims)``.
    topo_order : tuple of int
        A cached topological order of the nodes.
    """

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    node_dims: tuple[int, ...]
    topo_order: tuple[int, ...]

    @property
    def d(self) -> int:
        """Total number of variables."""
        return sum(self.node_dims)

    @cached_property
    def node_offsets(self) -> tuple[int, ...]:
        """Start coordinate of each node's variable block."""
        offs = np.concatenate([[0], np.cumsum(self.node_dims)])
        return tuple(int(o) for o in offs[:-1])

    def node_coords(self, node: int) -> range:
        """Coordinate indices occupied by ``node``."""
        start = self.node_offsets[node]
        return range(start, start + self.node_dims[node])

    @cached_property
    def _parents(self) -> tuple[tuple[int, ...], ...]:
        ps: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            ps[v].append(u)
        return tuple(tuple(p) for p in ps)

    @cached_property
    def _children(self) -> tuple[tuple[int, ...], ...]:
        cs: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            cs[u].append(v)
        return tuple(tuple(c) for c in cs)

    def parents(self, node: int) -> tuple[int, ...]:
        return self._parents[node]

    def children(self, node: int) -> tuple[int, ...]:
        return self._children[node]

    def reversed(self) -> "Dag":
        """The DAG with every edge flipped (same nodes and dims)."""
        return Dag(
            num_nodes=self.num_nodes,
            edges=tuple((v, u) for u, v in self.edges),
            node_dims=self.node_dims,
            topo_order=tuple(reversed(self.topo_order)),
        )


def validate_dag(num_nodes, edges, node_dims=None) -> Dag:
    """Check an edge list and return a :class:`Dag` with a cached topological order.

    Parameters
    ----------
    num_nodes : int
        Number of nodes, at least 1.
    edges : iterable of (int, int)
        Ordered ``(parent, child)`` pairs.
    node_dims : sequence of int, optional
        Variables per node; defaults to one per node.

    Raises
    ------
    IndexOutOfRange
        An edge endpoint is outside ``[0, num_nodes)``.
    DuplicateEdge
        The same ordered pair appears twice.
    CycleDetected
        The graph admits no topological order.
    DimensionMismatch
        ``node_dims`` has the wrong length or a non-positive entry.
    """
    num_nodes = int(num_nodes)
    if num_nodes < 1:
        raise ValueError(f"num_nodes must be >= 1, got {num_nodes}")

    edge_list: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for e in edges:
        u, v = int(e[0]), int(e[1])
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise IndexOutOfRange(
                f"edge ({u}, {v}) has an endpoint outside [0, {num_nodes})"
            )
        if (u, v) in seen:
            raise DuplicateEdge(f"edge ({u}, {v}) appears more than once")
        seen.add((u, v))
        edge_list.append((u, v))

    if node_dims is None:
        dims = (1,) * num_nodes
    else:
        dims = tuple(int(k) for k in node_dims)
        if len(dims) != num_nodes:
            raise DimensionMismatch(
                f"node_dims has length {len(dims)}, expected {num_nodes}"
            )
        if any(k < 1 for k in dims):
            raise DimensionMismatch("node_dims entries must be positive")

    # Kahn's algorithm; a leftover node means a cycle (self-loops included).
    indeg = [0] * num_nodes
    succ: list[list[int]] = [[] for _ in range(num_nodes)]
    for u, v in edge_list:
        indeg[v] += 1
        succ[u].append(v)
    queue = deque(i for i in range(num_nodes) if indeg[i] == 0)
    order: list[int] = []
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    if len(order) != num_nodes:
        raise CycleDetected("edge set contains a directed cycle")

    return Dag(
        num_nodes=num_nodes,
        edges=tuple(edge_list),
        node_dims=dims,
        topo_order=tuple(order),
    )


@dataclass(frozen=True)
class GroupSet:
    """Ordered coordinate groups with weights and stacked index ranges.

    The ``g``-th group occupies the contiguous half-open range
    ``index_ranges[g]`` of the stacked latent vector of length
    ``n = sum(len(g) for g in groups)``.  Ranges are assigned in listing
    order, so they partition ``[0, n)`` exactly.

    Construct instances through :func:`build_index_map` (or the group
    builders in this module), which validate the invariants.
    """

    groups: tuple[np.ndarray, ...]
    weights: np.ndarray
    d: int
    index_ranges: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def n(self) -> int:
        """Stacked dimension, sum of group sizes."""
        return self.index_ranges[-1][1] if self.index_ranges else 0

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups], dtype=np.intp)

    @cached_property
    def starts(self) -> np.ndarray:
        """Range starts, suitable for segment reductions over the stacked vector."""
        return np.array([lo for lo, _ in self.index_ranges], dtype=np.intp)

    @cached_property
    def stacked_coords(self) -> np.ndarray:
        """Ambient coordinate of every stacked entry (length ``n``)."""
        return np.concatenate(self.groups).astype(np.intp)

    @cached_property
    def cover_counts(self) -> np.ndarray:
        """How many groups contain each coordinate (length ``d``)."""
        return np.bincount(self.stacked_coords, minlength=self.d)

    def uncovered(self) -> np.ndarray:
        """Coordinates in ``[0, d)`` not contained in any group (reported, never enforced)."""
        return np.flatnonzero(self.cover_counts == 0)

    def shuffled(self, seed: int) -> "GroupSet":
        """A copy with the group order permuted by a seeded RNG."""
        perm = np.random.default_rng(seed).permutation(self.num_groups)
        return build_index_map(
            [self.groups[j] for j in perm], weights=self.weights[perm], d=self.d
        )

    def canonical_text(self) -> str:
        """Serialized group-file form; stable input for content hashing."""
        lines = [
            f"{w:.17g}: " + " ".join(str(int(i)) for i in g)
            for g, w in zip(self.groups, self.weights)
        ]
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def build_index_map(groups, weights=None, d=None) -> GroupSet:
    """Assign contiguous stacked ranges to ``groups`` in listing order.

    Parameters
    ----------
    groups : sequence of int sequences
        Coordinate index sets; each is sorted and deduplicated internally.
        Repeated groups are legal.
    weights : sequence of float, optional
        Positive per-group weights; defaults to ``sqrt(len(group))``.
    d : int, optional
        Ambient dimension; defaults to ``max coordinate + 1``.

    Raises
    ------
    EmptyGroup
        Some group has no coordinates.
    IndexOutOfRange
        A coordinate falls outside ``[0, d)``.
    """
    arrs: list[np.ndarray] = []
    for g in groups:
        a = np.unique(np.asarray(g, dtype=np.intp))
        if a.size == 0:
            raise EmptyGroup("groups must be nonempty")
        if a[0] < 0:
            raise IndexOutOfRange(f"negative coordinate {a[0]} in group")
        arrs.append(a)
    if d is None:
        d = int(max(a[-1] for a in arrs)) + 1
    d = int(d)
    for a in arrs:
        if a[-1] >= d:
            raise IndexOutOfRange(f"coordinate {a[-1]} outside [0, {d})")

    if weights is None:
        w = np.sqrt(np.array([a.size for a in arrs], dtype=float))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(arrs),):
            raise DimensionMismatch(
                f"got {w.size} weights for {len(arrs)} groups"
            )
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("group weights must be positive and finite")

    ranges = []
    lo = 0
    for a in arrs:
        ranges.append((lo, lo + a.size))
        lo += a.size
    return GroupSet(
        groups=tuple(arrs), weights=w, d=d, index_ranges=tuple(ranges)
    )


def _closure_sets(dag: Dag, direction: str) -> list[set[int]]:
    """Reflexive ancestor or descendant sets, one per node."""
    sets: list[set[int]] = [set() for _ in range(dag.num_nodes)]
    order = dag.topo_order if direction == "ancestors" else reversed(dag.topo_order)
    neighbors = dag.parents if direction == "ancestors" else dag.children
    for i in order:
        s = {i}
        for j in neighbors(i):
            s |= sets[j]
        sets[i] = s
    return sets


def _expand_to_coords(dag: Dag, node_set: set[int]) -> np.ndarray:
    coords = [c for i in sorted(node_set) for c in dag.node_coords(i)]
    return np.array(coords, dtype=np.intp)


def ancestor_groups(dag: Dag, weights=None) -> GroupSet:
    """One group per node: the node plus all its ancestors, in node order.

    Node-index sets are expanded to coordinate indices through the node
    dimensions.  Default weights are ``sqrt(|g|)`` with ``|g|`` counted in
    coordinates; pass ``weights`` to override.
    """
    sets = _closure_sets(dag, "ancestors")
    groups = [_expand_to_coords(dag, s) for s in sets]
    return build_index_map(groups, weights=weights, d=dag.d)


def descendant_groups(dag: Dag, weights=None) -> GroupSet:
    """One group per node: the node plus all its descendants, in node order.

    Equals ``ancestor_groups(dag.reversed())`` group by group.  Used for
    evaluating the overlapping group-lasso penalty; no prox is offered
    under this grouping.
    """
    sets = _closure_sets(dag, "descendants")
    groups = [_expand_to_coords(dag, s) for s in sets]
    return build_index_map(groups, weights=weights, d=dag.d)


@dataclass(frozen=True)
class HierarchyViolation:
    """A node whose support contradicts the hierarchy.

    For strong mode, ``parents`` holds the single zero parent of the
    violated implication; for weak mode it holds all (zero) parents.
    """

    child: int
    parents: tuple[int, ...]


@dataclass(frozen=True)
class HierarchyReport:
    mode: str
    threshold: float
    nonzero_nodes: tuple[int, ...]
    violations: tuple[HierarchyViolation, ...]

    @property
    def num_violations(self) -> int:
        return len(self.violations)


def check_hierarchy_conformance(
    dag: Dag, beta, threshold: float = 1e-8, mode: str = "strong"
) -> HierarchyReport:
    """Report hierarchy violations of a coefficient vector's support.

    A node is nonzero when any of its coordinates exceeds ``threshold``
    in magnitude.  Under strong hierarchy a nonzero node with *some* zero
    immediate parent is a violation (one record per zero parent); under
    weak hierarchy a nonzero node violates only when *all* its immediate
    parents are zero.

    Parameters
    ----------
    dag : Dag
    beta : array of length ``dag.d``
    threshold : float, > 0
    mode : {"strong", "weak"}
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dag.d,):
        raise DimensionMismatch(f"beta has shape {beta.shape}, expected ({dag.d},)")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if mode not in ("strong", "weak"):
        raise ValueError(f"mode must be 'strong' or 'weak', got {mode!r}")

    nz = [
        i
        for i in range(dag.num_nodes)
        if np.max(np.abs(beta[list(dag.node_coords(i))])) > threshold
    ]
    nz_set = set(nz)
    violations: list[HierarchyViolation] = []
    for i in nz:
        ps = dag.parents(i)
        if not ps:
            continue
        zero_parents = tuple(p for p in ps if p not in nz_set)
        if mode == "strong":
            for p in zero_parents:
                violations.append(HierarchyViolation(child=i, parents=(p,)))
        else:
            if len(zero_parents) == len(ps):
                violations.append(HierarchyViolation(child=i, parents=zero_parents))
    return HierarchyReport(
        mode=mode,
        threshold=float(threshold),
        nonzero_nodes=tuple(nz),
        violations=tuple(violations),
    )


# ---------------------------------------------------------------------------
# file formats


def read_edge_list(path) -> Dag:
    """Parse the edge-list text format.

    First non-comment line is ``nodes N``; an optional ``dims d_1 ... d_N``
    line follows; every remaining line is a 0-based ``u v`` pair.  ``#``
    starts a comment.
    """
    num_nodes = None
    dims = None
    edges: list[tuple[int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "nodes":
                if num_nodes is not None:
                    raise ValueError(f"{path}: repeated 'nodes' line")
                num_nodes = int(parts[1])
            elif parts[0] == "dims":
                if num_nodes is None:
                    raise ValueError(f"{path}: 'dims' before 'nodes'")
                dims = [int(x) for x in parts[1:]]
            else:
                if num_nodes is None:
                    raise ValueError(f"{path}: missing 'nodes N' header line")
                if len(parts) != 2:
                    raise ValueError(f"{path}: malformed edge line {line!r}")
                edges.append((int(parts[0]), int(parts[1])))
    if num_nodes is None:
        raise ValueError(f"{path}: missing 'nodes N' header line")
    return validate_dag(num_nodes, edges, node_dims=dims)


def write_edge_list(dag: Dag, path) -> None:
    """Serialize a :class:`Dag` in the edge-list text format."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"nodes {dag.num_nodes}\n")
        if any(k != 1 for k in dag.node_dims):
            fh.write("dims " + " ".join(str(k) for k in dag.node_dims) + "\n")
        for u, v in dag.edges:
            fh.write(f"{u} {v}\n")


def read_group_file(path, d=None) -> GroupSet:
    """Parse the group text format: one ``w: i1 i2 ...`` line per group."""
    groups: list[list[int]] = []
    weights: list[float] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise ValueError(f"{path}: malformed group line {line!r}")
            wpart, ipart = line.split(":", 1)
            w = float(wpart)
            if not w > 0:
                raise ValueError(f"{path}: non-positive group weight {w}")
            groups.append([int(t) for t in ipart.split()])
            weights.append(w)
    if not groups:
        raise ValueError(f"{path}: no groups found")
    return build_index_map(groups, weights=weights, d=d)


def write_group_file(group_set: GroupSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(group_set.canonical_text())
