"""Covariate clustering and top-down hierarchical group testing.

The tree is built by agglomerative clustering on the dissimilarity
``1 - corr^2``. Testing walks the tree breadth-first from the root; a group's
raw p-value is inflated to ``P * p / |G|`` and then made monotone along the
root-to-node path, and only children of significant groups are tested.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, GroupSpec
from .errors import SolverError, ValidationError
from .inference import CorrectionSample, test_group
from .lasso import InitialFit, fit_initial
from .projection import DEFAULT_C_LAMBDA

log = logging.getLogger(__name__)

LINKAGES = ("complete", "average")


@dataclass(frozen=True)
class TreeNode:
    id: int
    members: GroupSpec
    children: tuple[int, ...] = ()
    parent: int | None = None
    height: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class ClusterTree:
    """Binary hierarchy over covariates 1..p; node ids index ``nodes``."""

    nodes: tuple[TreeNode, ...]
    root: int
    linkage: str = "complete"

    @property
    def p(self) -> int:
        return self.nodes[self.root].members.size

    def __getitem__(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def to_json(self) -> list[dict]:
        return [
            {
                "id": nd.id,
                "members": list(nd.members.indices),
                "children": list(nd.children),
                "height": nd.height,
            }
            for nd in self.nodes
        ]

    @classmethod
    def from_json(cls, records: list[dict], linkage: str = "imported") -> "ClusterTree":
        by_id = {int(r["id"]): r for r in records}
        if sorted(by_id) != list(range(len(by_id))):
            raise ValidationError("tree node ids must be 0..N-1")
        parent: dict[int, int] = {}
        for r in records:
            for c in r.get("children", []):
                if int(c) in parent:
                    raise ValidationError(f"node {c} has two parents")
                parent[int(c)] = int(r["id"])
        roots = [i for i in by_id if i not in parent]
        if len(roots) != 1:
            raise ValidationError(f"tree must have exactly one root, found {len(roots)}")
        nodes = tuple(
            TreeNode(
                i,
                GroupSpec(tuple(by_id[i]["members"])),
                tuple(int(c) for c in by_id[i].get("children", [])),
                parent.get(i),
                float(by_id[i].get("height", 0.0)),
            )
            for i in range(len(by_id))
        )
        tree = cls(nodes, roots[0], linkage)
        check_tree(tree)
        return tree

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "ClusterTree":
        try:
            records = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read tree file {path}: {exc}") from None
        return cls.from_json(records)


def check_tree(tree: ClusterTree) -> None:
    """Children partition their parent; the root covers 1..p; leaves are singletons."""
    root = tree.nodes[tree.root]
    p = root.members.size
    if root.members.indices != tuple(range(1, p + 1)):
        raise ValidationError("root must cover every covariate 1..p")
    for nd in tree.nodes:
        if nd.is_leaf:
            if nd.members.size != 1:
                raise ValidationError(f"leaf {nd.id} is not a singleton")
            continue
        union: list[int] = []
        for c in nd.children:
            union.extend(tree.nodes[c].members.indices)
        if sorted(union) != list(nd.members.indices):
            raise ValidationError(f"children of node {nd.id} do not partition it")


def dissimilarity(x: np.ndarray) -> np.ndarray:
    """1 - squared empirical correlation between columns."""
    sd = x.std(axis=0)
    if np.any(sd <= 0):
        j = int(np.flatnonzero(sd <= 0)[0])
        raise ValidationError(f"column {j + 1} is constant")
    corr = np.corrcoef(x, rowvar=False)
    dis = 1.0 - corr * corr
    np.clip(dis, 0.0, None, out=dis)
    np.fill_diagonal(dis, 0.0)
    return dis


def build_tree(d: Dataset | np.ndarray, linkage: str = "complete") -> ClusterTree:
    """Agglomerative clustering with binary merges.

    Ties are broken by the smallest member index: among equally close
    pairs the one whose clusters have the lexicographically smallest
    (min member, min member) is merged first.
    """
    if linkage not in LINKAGES:
        raise ValidationError(f"unknown linkage {linkage!r}; expected one of {LINKAGES}")
    x = d.x if isinstance(d, Dataset) else np.asarray(d, dtype=float)
    p = x.shape[1]
    if p < 2:
        raise ValidationError("clustering needs at least 2 covariates")
    D = dissimilarity(x)
    np.fill_diagonal(D, np.inf)

    # slot k holds the cluster whose smallest member is k + 1
    node_of = list(range(p))
    size = np.ones(p)
    members: list[list[int]] = [[k + 1] for k in range(p)]
    children: list[tuple[int, ...]] = [() for _ in range(p)]
    heights: list[float] = [0.0] * p
    active = np.ones(p, dtype=bool)

    for _ in range(p - 1):
        flat = int(np.argmin(D))
        i, j = divmod(flat, p)
        if i > j:
            i, j = j, i
        h = float(D[i, j])
        if linkage == "complete":
            merged = np.maximum(D[i], D[j])
        else:
            merged = (size[i] * D[i] + size[j] * D[j]) / (size[i] + size[j])
        new_id = len(members)
        members.append(sorted(members[node_of[i]] + members[node_of[j]]))
        children.append((node_of[i], node_of[j]))
        heights.append(h)
        D[i, :] = merged
        D[:, i] = merged
        D[j, :] = np.inf
        D[:, j] = np.inf
        D[i, i] = np.inf
        active[j] = False
        size[i] += size[j]
        node_of[i] = new_id

    parent: dict[int, int] = {}
    for nid, ch in enumerate(children):
        for c in ch:
            parent[c] = nid
    nodes = tuple(
        TreeNode(k, GroupSpec(tuple(members[k])), children[k], parent.get(k), heights[k])
        for k in range(len(members))
    )
    return ClusterTree(nodes, len(nodes) - 1, linkage)


def adjust_pvalue(p_raw: float, group_size: int, p_total: int) -> float:
    """Size-weighted Bonferroni inflation ``min(P * p / |G|, 1)``."""
    if not 1 <= group_size <= p_total:
        raise ValidationError(f"group size {group_size} outside 1..{p_total}")
    return min(p_raw * p_total / group_size, 1.0)


@dataclass(frozen=True)
class Finding:
    group: GroupSpec
    p_raw: float
    p_tilde: float
    p_adjusted: float
    node: int = -1


@dataclass(frozen=True)
class NodeTest:
    node: int
    p_raw: float
    p_tilde: float
    p_adjusted: float
    significant: bool
    error: str | None = None


@dataclass
class HierResult:
    findings: list[Finding]
    alpha: float
    tested_count: int
    log: list[NodeTest] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "tested_count": self.tested_count,
            "metadata": self.metadata,
            "findings": [
                {
                    "members": list(f.group.indices),
                    "p_raw": f.p_raw,
                    "p_tilde": f.p_tilde,
                    "p_adjusted": f.p_adjusted,
                }
                for f in self.findings
            ],
        }

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["members", "p_raw", "p_tilde", "p_adjusted"])
            for f in self.findings:
                w.writerow([str(f.group), repr(f.p_raw), repr(f.p_tilde), repr(f.p_adjusted)])


@dataclass(frozen=True)
class EngineConfig:
    """Group p-value engine: one-sided test on the chosen functional."""

    mode: str = "sigma"
    tau: float = 1.0
    c_lambda: float = DEFAULT_C_LAMBDA

    def __post_init__(self):
        if self.mode not in ("sigma", "identity"):
            raise ValidationError(f"hierarchical engine mode must be sigma or identity, got {self.mode!r}")


def descend(tree: ClusterTree, pvalue, alpha: float = 0.05) -> tuple[list[Finding], dict[int, NodeTest]]:
    """Breadth-first top-down testing with monotone adjusted p-values.

    ``pvalue(node)`` returns the raw p-value of a node's group and may raise
    :class:`SolverError`, in which case the node is logged with a warning
    and treated as non-significant. Findings are the significant nodes with
    no significant child, ordered by member indices.
    """
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    p = tree.p
    tests: dict[int, NodeTest] = {}
    queue: deque[tuple[int, float]] = deque([(tree.root, 0.0)])
    while queue:
        nid, parent_adj = queue.popleft()
        node = tree[nid]
        err = None
        try:
            p_raw = float(pvalue(node))
        except SolverError as exc:
            err = str(exc)
            warnings.warn(f"node {nid} ({node.members.size} members) untestable: {exc}")
            p_raw = 1.0
        p_tilde = adjust_pvalue(p_raw, node.members.size, p)
        p_adj = max(parent_adj, p_tilde)
        sig = err is None and p_adj <= alpha
        tests[nid] = NodeTest(nid, p_raw, p_tilde, p_adj, sig, err)
        if sig:
            for c in node.children:
                queue.append((c, p_adj))

    findings = []
    for nid, t in tests.items():
        if not t.significant:
            continue
        node = tree[nid]
        if any(tests[c].significant for c in node.children):
            continue
        findings.append(Finding(node.members, t.p_raw, t.p_tilde, t.p_adjusted, nid))
    findings.sort(key=lambda f: f.group.indices)
    return findings, tests


def run_hierarchy(
    d: Dataset,
    tree: ClusterTree,
    alpha: float = 0.05,
    engine: EngineConfig | None = None,
    fit: InitialFit | None = None,
    sample: CorrectionSample | None = None,
) -> HierResult:
    """Hierarchical group testing of ``d`` over ``tree``.

    One initial fit is shared by every node; each tested node costs one
    projection solve.
    """
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    engine = engine or EngineConfig()
    if tree.p != d.p:
        raise ValidationError(f"tree covers {tree.p} covariates but data has p={d.p}")
    if sample is None:
        sample = CorrectionSample(d, fit if fit is not None else fit_initial(d))

    def pvalue(node: TreeNode) -> float:
        est = sample.estimate(node.members, engine.mode, engine.tau, engine.c_lambda)
        return test_group(est, alpha).p_value

    findings, tests = descend(tree, pvalue, alpha)
    meta = {
        "engine_mode": engine.mode,
        "tau": engine.tau,
        "c_lambda": engine.c_lambda,
        "linkage": tree.linkage,
        "untested": sum(t.error is not None for t in tests.values()),
    }
    return HierResult(findings, alpha, len(tests), list(tests.values()), meta)
