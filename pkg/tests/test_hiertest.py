import csv
import json
import warnings

import numpy as np
import pytest
from scipy.cluster.hierarchy import linkage as scipy_linkage
from scipy.spatial.distance import squareform

from quadgroup.data import Dataset, GroupSpec
from quadgroup.errors import SolverError, ValidationError
from quadgroup.hiertest import (
    ClusterTree,
    EngineConfig,
    TreeNode,
    adjust_pvalue,
    build_tree,
    check_tree,
    descend,
    dissimilarity,
    run_hierarchy,
)
from quadgroup.simharness import Scenario, generate


def _scipy_clusters(x, method):
    z = scipy_linkage(squareform(dissimilarity(x), checks=False), method=method)
    p = x.shape[1]
    members = [frozenset([k + 1]) for k in range(p)]
    out = {}
    for a, b, h, _ in z:
        merged = members[int(a)] | members[int(b)]
        members.append(merged)
        out[merged] = h
    return out


def _own_clusters(tree):
    return {frozenset(nd.members.indices): nd.height for nd in tree.nodes if not nd.is_leaf}


@pytest.mark.parametrize("method", ["complete", "average"])
def test_linkage_matches_scipy(method):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((40, 25))
        x[:, 5:10] += 1.5 * x[:, :1]
        tree = build_tree(x, method)
        check_tree(tree)
        ours, ref = _own_clusters(tree), _scipy_clusters(x, method)
        assert ours.keys() == ref.keys()
        for k in ours:
            assert ours[k] == pytest.approx(ref[k], abs=1e-12)


def test_perfectly_correlated_merge_first(rng):
    x = rng.standard_normal((50, 6))
    x[:, 4] = -2.0 * x[:, 1]
    tree = build_tree(x)
    first = tree[6]
    assert first.members.indices == (2, 5) and first.height == pytest.approx(0.0, abs=1e-12)


def test_two_columns(rng):
    tree = build_tree(rng.standard_normal((20, 2)))
    assert len(tree.nodes) == 3 and tree[tree.root].children == (0, 1)


def test_constant_column_rejected(rng):
    x = rng.standard_normal((20, 4))
    x[:, 2] = 3.0
    with pytest.raises(ValidationError, match="column 3"):
        build_tree(x)


def test_hier1_pairs_are_subtrees():
    for rep in range(20):
        d = generate(Scenario("hier1", 500, seed=3), rep)
        tree = build_tree(d)
        clusters = {nd.members.indices for nd in tree.nodes}
        for k in range(10):
            assert (2 * k + 1, 2 * k + 2) in clusters, (rep, k)


def _chain_tree():
    # root {1,2,3} -> {1,2} -> {1}; other leaves {3}, {2}
    nodes = (
        TreeNode(0, GroupSpec((1,)), (), 3),
        TreeNode(1, GroupSpec((2,)), (), 3),
        TreeNode(2, GroupSpec((3,)), (), 4),
        TreeNode(3, GroupSpec((1, 2)), (0, 1), 4, 0.5),
        TreeNode(4, GroupSpec((1, 2, 3)), (3, 2), None, 0.9),
    )
    return ClusterTree(nodes, 4)


def test_chain_example():
    tree = _chain_tree()
    check_tree(tree)
    # raw p-values chosen so the adjusted path is (0.001, 0.04, 0.2)
    raw = {4: 0.001, 3: 0.04 * 2 / 3, 2: 0.9, 0: 0.2 / 3, 1: 0.3}
    findings, tests = descend(tree, lambda nd: raw[nd.id], 0.05)
    assert tests[4].p_adjusted == pytest.approx(0.001)
    assert tests[3].p_adjusted == pytest.approx(0.04)
    assert tests[0].p_adjusted == pytest.approx(0.2)
    assert not tests[0].significant
    assert [f.group.indices for f in findings] == [(1, 2)]


def test_root_not_significant():
    findings, tests = descend(_chain_tree(), lambda nd: 0.5, 0.05)
    assert findings == [] and list(tests) == [4]


def test_untestable_node_warns():
    def pv(nd):
        if nd.id == 3:
            raise SolverError("boom")
        return 1e-6

    with pytest.warns(UserWarning, match="untestable"):
        findings, tests = descend(_chain_tree(), pv, 0.05)
    assert tests[3].error == "boom" and not tests[3].significant
    assert [f.group.indices for f in findings] == [(3,)]


def _random_tree(rng, p):
    x = rng.standard_normal((30, p))
    return build_tree(x, "complete" if rng.random() < 0.5 else "average")


def test_monotone_adjusted_pvalues_random_trees():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        p = int(rng.integers(3, 40))
        tree = _random_tree(rng, p)
        raw = rng.uniform(0, 0.02, len(tree.nodes)) ** rng.uniform(0.5, 2)
        alpha = float(rng.uniform(0.01, 0.2))
        findings, tests = descend(tree, lambda nd: raw[nd.id], alpha)
        for nid, t in tests.items():
            nd = tree[nid]
            assert t.p_tilde == adjust_pvalue(raw[nid], nd.members.size, p)
            assert t.p_adjusted >= t.p_tilde
            if nd.parent is not None:
                par = tests[nd.parent]
                # pruning: only children of significant parents are tested
                assert par.significant
                assert t.p_adjusted == max(par.p_adjusted, t.p_tilde)
        for nid, t in tests.items():
            if t.significant:
                assert all(c in tests for c in tree[nid].children)
            else:
                assert not any(c in tests for c in tree[nid].children)
        # findings form the significant frontier
        covered = [i for f in findings for i in f.group.indices]
        assert len(covered) == len(set(covered))
        for f in findings:
            assert f.p_adjusted <= alpha
            assert not any(tests.get(c) and tests[c].significant for c in tree[f.node].children)


def test_adjust_pvalue():
    assert adjust_pvalue(0.01, 5, 100) == pytest.approx(0.2)
    assert adjust_pvalue(0.5, 1, 100) == 1.0
    with pytest.raises(ValidationError):
        adjust_pvalue(0.1, 0, 10)


def test_tree_json_round_trip(tmp_path, rng):
    tree = build_tree(rng.standard_normal((30, 12)), "average")
    tree.save(tmp_path / "t.json")
    back = ClusterTree.load(tmp_path / "t.json")
    assert back.root == tree.root
    assert [(n.members, n.children, n.parent, n.height) for n in back.nodes] == [
        (n.members, n.children, n.parent, n.height) for n in tree.nodes
    ]


def test_tree_json_validation():
    recs = json.loads(json.dumps(_chain_tree().to_json()))
    bad = [dict(r) for r in recs]
    bad[3]["members"] = [1]
    with pytest.raises(ValidationError):
        ClusterTree.from_json(bad)
    two_parents = [dict(r) for r in recs]
    two_parents[4]["children"] = [3, 2, 0]
    with pytest.raises(ValidationError):
        ClusterTree.from_json(two_parents)


def _data(rng, n, p, active=(), amp=1.0):
    x = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[list(active)] = amp
    return Dataset(x, x @ beta + rng.standard_normal(n))


def test_run_hierarchy_finds_signal_and_writes_csv(tmp_path, rng):
    d = _data(rng, 200, 30, active=(0, 1))
    tree = build_tree(d)
    res = run_hierarchy(d, tree, 0.05, EngineConfig("sigma"))
    assert res.findings
    assert {1, 2} <= {i for f in res.findings for i in f.group.indices}
    assert res.metadata["linkage"] == "complete" and res.metadata["untested"] == 0
    res.write_csv(tmp_path / "f.csv")
    rows = list(csv.reader((tmp_path / "f.csv").open()))
    assert rows[0] == ["members", "p_raw", "p_tilde", "p_adjusted"]
    assert len(rows) == len(res.findings) + 1
    json.dumps(res.to_json())


def test_null_fwer_desk_scale():
    hits = 0
    reps = 40
    for seed in range(reps):
        rng = np.random.default_rng(seed)
        d = _data(rng, 150, 40)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = run_hierarchy(d, build_tree(d), 0.05)
        hits += bool(res.findings)
    # binomial upper band around alpha
    assert hits / reps <= 0.05 + 2 * np.sqrt(0.05 * 0.95 / reps)


def test_tree_data_mismatch(rng):
    d = _data(rng, 40, 6)
    with pytest.raises(ValidationError):
        run_hierarchy(d, build_tree(rng.standard_normal((40, 5))))
    with pytest.raises(ValidationError):
        EngineConfig("general")
