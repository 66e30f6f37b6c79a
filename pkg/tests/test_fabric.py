"""Tests for per-slice VLANs, connectivity and isolation."""
import random
from collections import deque
from types import SimpleNamespace

import pytest

from slicekit.errors import AlreadyRegistered, DisconnectedGraph, InvalidState, UnknownSlice, UnknownVm
from slicekit.fabric import Fabric, SliceTopology, TopologyEdge
from slicekit.lifecycle import LifecycleState


def make_slice(slice_id, nodes, edges, state=LifecycleState.DAY0_DONE, domain="core"):
    topology = SliceTopology(
        slice_id,
        tuple((n, domain) if isinstance(n, str) else n for n in nodes),
        tuple(TopologyEdge(a, b, "vl", f"{a}-{b}") for a, b in edges),
    )
    return SimpleNamespace(slice_id=slice_id, state=state, topology=topology)


def random_connected_slice(rng, slice_id, prefix):
    size = rng.randint(1, 6)
    nodes = [f"{prefix}-{i}" for i in range(size)]
    edges = [(nodes[i], nodes[rng.randrange(i)]) for i in range(1, size)]
    for _ in range(rng.randint(0, 3)):
        if size > 1:
            a, b = rng.sample(nodes, 2)
            edges.append((a, b))
    return make_slice(slice_id, nodes, edges)


def bfs_reachable(edges, start):
    adjacency = {}
    for a, b in edges:
        adjacency.setdefault(a, set()).add(b)
        adjacency.setdefault(b, set()).add(a)
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nxt in adjacency.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def test_reference_slice_is_wired(running_slice):
    """Test that the reference slice gets VLAN 100 and a connected graph."""
    engine, slice_id = running_slice
    slice_graph = engine.fabric.graphs[slice_id]
    assert slice_graph.vlan_tag == 100
    assert sorted(slice_graph.nodes) == [
        "vim-cn-0001", "vim-cn-0002", "vim-cn-0003", "vim-cn-0004", "vim-ran-0001",
    ]
    assert engine.fabric.reachable("vim-cn-0001", "vim-ran-0001")
    scopes = {d["name"]: d["scope"] for _, _, d in slice_graph.graph.edges(data=True)}
    assert scopes["s6a"] == "tn-cn"
    assert engine.fabric.isolation_report().lines() == [f"{slice_id} 100", "cross-slice-edges 0"]


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_all_pairs_reachability_matches_bfs(k):
    """Test that reachable agrees with a breadth-first search over k slices."""
    rng = random.Random(k)
    fabric = Fabric()
    slices = [random_connected_slice(rng, f"slice-{i}", f"s{i}") for i in range(k)]
    for item in slices:
        fabric.register_slice(item)
    owner = {}
    edges = {}
    for item in slices:
        for node, _ in item.topology.nodes:
            owner[node] = item.slice_id
        edges[item.slice_id] = [(e.vm_a, e.vm_b) for e in item.topology.edges]
    for a in owner:
        expected = bfs_reachable(edges[owner[a]], a)
        for b in owner:
            assert fabric.reachable(a, b) == (b in expected)
            if owner[a] != owner[b]:
                assert not fabric.reachable(a, b)
    tags = [fabric.graphs[s.slice_id].vlan_tag for s in slices]
    assert len(set(tags)) == k
    assert fabric.isolation_report().cross_slice_edges == 0


def test_retired_tags_are_never_reissued():
    """Test that retired VLAN tags are never handed out again."""
    fabric = Fabric()
    issued = set()
    for cycle in range(1000):
        item = make_slice(f"slice-{cycle}", ["a", "b"], [("a", "b")])
        tag = fabric.register_slice(item).vlan_tag
        assert tag not in issued
        issued.add(tag)
        fabric.retract_slice(item.slice_id)
    assert fabric.tags.retired == issued
    assert fabric.graphs == {}


def test_disconnected_graph_rejected():
    """Test that a slice graph with two components is rejected."""
    fabric = Fabric()
    with pytest.raises(DisconnectedGraph):
        fabric.register_slice(make_slice("x", ["a", "b"], []))
    with pytest.raises(DisconnectedGraph):
        fabric.register_slice(make_slice("y", ["a"], [("a", "ghost")]))
    assert fabric.graphs == {}


def test_single_vm_slice_is_connected():
    """Test that a one-VM slice registers without edges."""
    fabric = Fabric()
    graph = fabric.register_slice(make_slice("solo", ["a"], []))
    assert graph.nodes == ["a"]
    assert fabric.reachable("a", "a")


def test_register_twice():
    """Test that registering a slice or VM twice fails."""
    fabric = Fabric()
    fabric.register_slice(make_slice("x", ["a"], []))
    with pytest.raises(AlreadyRegistered):
        fabric.register_slice(make_slice("x", ["b"], []))
    with pytest.raises(AlreadyRegistered):
        fabric.register_slice(make_slice("y", ["a"], []))


def test_register_before_day0_rejected():
    """Test that only slices at Day0Done or later can register."""
    fabric = Fabric()
    with pytest.raises(InvalidState):
        fabric.register_slice(make_slice("x", ["a"], [], state=LifecycleState.INSTANTIATING))


def test_unknown_slice_and_vm():
    """Test that unknown slices and VMs are reported by name."""
    fabric = Fabric()
    with pytest.raises(UnknownSlice):
        fabric.retract_slice("nope")
    with pytest.raises(UnknownVm):
        fabric.reachable("a", "b")


def test_edge_scope_follows_vim_domains():
    """Test that edges carry the ran or tn-cn controller scope."""
    fabric = Fabric()
    item = make_slice(
        "mixed",
        [("enb-1", "ran"), ("enb-2", "ran"), ("mme", "core")],
        [("enb-1", "enb-2"), ("enb-2", "mme")],
    )
    graph = fabric.register_slice(item).graph
    scopes = {d["name"]: d["scope"] for _, _, d in graph.edges(data=True)}
    assert scopes == {"enb-1-enb-2": "ran", "enb-2-mme": "tn-cn"}


def test_terminate_retracts_and_frees_vms(running_slice):
    """Test that terminating a slice retracts its graph."""
    engine, slice_id = running_slice
    engine.orchestrator.terminate_slice(slice_id)
    assert slice_id not in engine.fabric.graphs
    assert 100 in engine.fabric.tags.retired
    with pytest.raises(UnknownVm):
        engine.fabric.slice_of("vim-cn-0001")


def test_state_round_trip():
    """Test that fabric state restores graphs and the next tag."""
    fabric = Fabric()
    fabric.register_slice(make_slice("x", ["a", "b"], [("a", "b")]))
    fabric.register_slice(make_slice("y", ["c"], []))
    fabric.retract_slice("y")
    restored = Fabric()
    restored.load_state(fabric.state_dict())
    assert restored.export_lines() == fabric.export_lines() == ["x 100 a b"]
    assert restored.register_slice(make_slice("z", ["d"], [])).vlan_tag == 102
    assert restored.reachable("a", "b")
