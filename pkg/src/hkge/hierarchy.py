"""Graph-shape diagnostics per relation: Krackhardt score and xi.

Both metrics ask how tree-like a relation's subgraph is.  The
Krackhardt hierarchy score is the fraction of directed edges without a
reciprocal edge (1.0 for a pure hierarchy).  xi estimates sectional
curvature of the shortest-path metric from sampled triangles: pick
(a, b, c), find the midpoint m of a shortest b-c path, and compare
d(a, m) against what a flat metric would predict; trees come out
negative.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

DEFAULT_XI_SAMPLES = 10_000


@dataclass
class RelationGraph:
    relation: str
    node_ids: np.ndarray        # sorted original entity ids
    directed_edges: set         # (i, j) in compact node indices, deduplicated
    adjacency: list             # undirected: compact index -> sorted neighbor array

    @property
    def n_nodes(self):
        return len(self.node_ids)

    @property
    def n_edges(self):
        return len(self.directed_edges)

    def csgraph(self):
        rows, cols = [], []
        for i, nbrs in enumerate(self.adjacency):
            rows.extend([i] * len(nbrs))
            cols.extend(nbrs.tolist())
        n = self.n_nodes
        return csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(n, n)
        )


def build_graph(relation, edge_list):
    """RelationGraph from directed (head_id, tail_id) pairs."""
    edges = {(int(h), int(t)) for h, t in edge_list}
    if not edges:
        raise ValueError(f"relation {relation!r} has no edges")
    node_ids = np.unique(np.asarray(sorted({n for e in edges for n in e})))
    index = {int(n): i for i, n in enumerate(node_ids)}
    compact = {(index[h], index[t]) for h, t in edges}
    nbrs = [set() for _ in node_ids]
    for i, j in compact:
        if i != j:
            nbrs[i].add(j)
            nbrs[j].add(i)
    adjacency = [np.fromiter(sorted(s), dtype=np.int64) for s in nbrs]
    return RelationGraph(
        relation=relation, node_ids=node_ids,
        directed_edges=compact, adjacency=adjacency,
    )


def relation_subgraph(store, relation_name):
    """Subgraph of the train split restricted to one base relation."""
    if relation_name not in store.rel_index:
        raise KeyError(f"unknown relation: {relation_name}")
    rel_id = store.rel_index[relation_name]
    if rel_id >= store.n_base_relations:
        raise KeyError(f"{relation_name!r} is a reciprocal relation, not a base one")
    train = np.asarray(store.train)
    mask = train[:, 1] == rel_id
    return build_graph(relation_name, train[mask][:, [0, 2]])


def khs(graph):
    """Fraction of directed edges lacking a reciprocal edge."""
    edges = graph.directed_edges
    if not edges:
        raise ValueError("hierarchy score undefined on a graph with no edges")
    one_way = sum(1 for (i, j) in edges if (j, i) not in edges)
    return one_way / len(edges)


def bfs_distances(csgraph, source):
    """Unweighted shortest-path distances from `source` (inf if unreachable)."""
    return dijkstra(csgraph, directed=False, unweighted=True, indices=source)


def _midpoint(graph, dist_b, b, c):
    """Walk half of a shortest c->b path along min-index BFS parents."""
    steps = int(dist_b[c]) // 2
    cur = c
    for _ in range(steps):
        target = dist_b[cur] - 1
        for nbr in graph.adjacency[cur]:  # sorted: first hit is smallest
            if dist_b[nbr] == target:
                cur = int(nbr)
                break
    return cur


def xi_triangle(graph, a, b, c, csgraph=None, dist_a=None, dist_b=None):
    """xi for one sampled triangle, or None if the sample is rejected.

    Rejections: b-c disconnected or at odd distance; any pair involving
    `a` disconnected; midpoint coincides with `a`.
    """
    if csgraph is None:
        csgraph = graph.csgraph()
    if dist_b is None:
        dist_b = bfs_distances(csgraph, b)
    d_bc = dist_b[c]
    if not np.isfinite(d_bc) or int(d_bc) % 2 == 1:
        return None
    m = _midpoint(graph, dist_b, b, c)
    if m == a:
        return None  # d(a, m) = 0 would divide by zero below
    if dist_a is None:
        dist_a = bfs_distances(csgraph, a)
    d_ab, d_ac, d_am = dist_a[b], dist_a[c], dist_a[m]
    if not (np.isfinite(d_ab) and np.isfinite(d_ac) and np.isfinite(d_am)):
        return None
    return float(
        (d_am ** 2 + d_bc ** 2 / 4.0 - (d_ab ** 2 + d_ac ** 2) / 2.0) / (2.0 * d_am)
    )


@dataclass
class XiResult:
    mean: float
    stderr: float
    accepted: int
    rejected: int


def xi_estimate(graph, n_samples=DEFAULT_XI_SAMPLES, seed=0, max_attempts=None):
    """Sampled mean and standard error of xi over valid triangles."""
    if graph.n_nodes < 3:
        raise ValueError("xi needs at least 3 nodes")
    if max_attempts is None:
        max_attempts = max(20 * n_samples, 1000)
    csgraph = graph.csgraph()
    rng = np.random.default_rng(seed)
    values = []
    rejected = 0
    attempts = 0
    n = graph.n_nodes
    while len(values) < n_samples and attempts < max_attempts:
        attempts += 1
        a, b, c = (int(x) for x in rng.choice(n, size=3, replace=False))
        xi = xi_triangle(graph, a, b, c, csgraph=csgraph)
        if xi is None:
            rejected += 1
        else:
            values.append(xi)
    if not values:
        raise ValueError(
            f"no valid xi sample in {attempts} attempts on relation {graph.relation!r}"
        )
    arr = np.asarray(values)
    stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return XiResult(mean=float(arr.mean()), stderr=stderr,
                    accepted=len(arr), rejected=rejected)


HIERARCHY_HEADER = "relation,nodes,edges,khs,xi_mean,xi_stderr,samples_accepted,samples_rejected"


def analyze_relation(store, relation_name, n_samples=DEFAULT_XI_SAMPLES, seed=0):
    graph = relation_subgraph(store, relation_name)
    score = khs(graph)
    if graph.n_nodes >= 3:
        xi = xi_estimate(graph, n_samples=n_samples, seed=seed)
    else:
        xi = XiResult(mean=float("nan"), stderr=float("nan"), accepted=0, rejected=0)
    return {
        "relation": relation_name, "nodes": graph.n_nodes, "edges": graph.n_edges,
        "khs": score, "xi_mean": xi.mean, "xi_stderr": xi.stderr,
        "samples_accepted": xi.accepted, "samples_rejected": xi.rejected,
    }


def write_hierarchy_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(HIERARCHY_HEADER + "\n")
        for row in rows:
            if row.get("error"):
                fh.write(f"{row['relation']},,,error:{row['error']},,,,\n")
                continue
            fh.write(
                f"{row['relation']},{row['nodes']},{row['edges']},"
                f"{row['khs']:.6f},{row['xi_mean']:.6f},{row['xi_stderr']:.6f},"
                f"{row['samples_accepted']},{row['samples_rejected']}\n"
            )
