"""Tenant-controller fabric: per-slice VLANs and connectivity graphs.

Each registered slice gets a fresh VLAN tag and a graph over its VMs built
from the VNFDs' internal vls and the NSID chain edges. The mgmt network is
shared orchestration plumbing and never appears in a slice graph.

The RAN-side and TN/CN-side tenant controllers share one registry and one
tag space; every edge carries the scope of the controller that owns it.
"""
import logging
import threading
from dataclasses import dataclass
from typing import Any, NamedTuple

import networkx as nx

from slicekit import config
from slicekit.errors import AlreadyRegistered, DisconnectedGraph, InvalidState, UnknownSlice, UnknownVm
from slicekit.lifecycle import LifecycleState

logger = logging.getLogger(__name__)

REGISTRABLE_STATES = frozenset({
    LifecycleState.DAY0_DONE,
    LifecycleState.DAY1_CONFIGURED,
    LifecycleState.RUNNING,
})


class TopologyEdge(NamedTuple):
    vm_a: str
    vm_b: str
    kind: str  # "vl" or "chain"
    name: str


class SliceTopology(NamedTuple):
    """Nodes (vm_id, vim domain) and edges a slice asks the fabric to wire."""
    slice_id: str
    nodes: tuple[tuple[str, str], ...]
    edges: tuple[TopologyEdge, ...]


@dataclass
class SliceGraph:
    slice_id: str
    vlan_tag: int
    graph: nx.MultiGraph

    @property
    def nodes(self) -> list[str]:
        return list(self.graph.nodes)

    def edge_pairs(self) -> list[tuple[str, str]]:
        return sorted(tuple(sorted((a, b))) for a, b in self.graph.edges())

    def export_lines(self) -> list[str]:
        return [f"{self.slice_id} {self.vlan_tag} {a} {b}" for a, b in self.edge_pairs()]


class TagPool:
    def __init__(self, next_tag: int = config.FIRST_VLAN_TAG, retired: set[int] | None = None):
        self.next_tag = next_tag
        self.retired: set[int] = set(retired or ())

    def issue(self) -> int:
        tag = self.next_tag
        self.next_tag += 1
        return tag

    def retire(self, tag: int) -> None:
        self.retired.add(tag)


def _scope(domain_a: str, domain_b: str) -> str:
    return "ran" if domain_a == domain_b == "ran" else "tn-cn"


class IsolationReport(NamedTuple):
    slices: tuple[tuple[str, int], ...]
    cross_slice_edges: int

    def lines(self) -> list[str]:
        out = [f"{slice_id} {tag}" for slice_id, tag in self.slices]
        out.append(f"cross-slice-edges {self.cross_slice_edges}")
        return out


class Fabric:
    def __init__(self):
        self.tags = TagPool()
        self.graphs: dict[str, SliceGraph] = {}
        self._vm_slice: dict[str, str] = {}
        self._lock = threading.RLock()

    def build_graph(self, topology: SliceTopology) -> nx.MultiGraph:
        graph = nx.MultiGraph()
        domains = dict(topology.nodes)
        for vm_id, domain in topology.nodes:
            graph.add_node(vm_id, domain=domain)
        for edge in topology.edges:
            if edge.vm_a not in domains or edge.vm_b not in domains:
                raise DisconnectedGraph(f"edge {edge.name} leaves slice {topology.slice_id}")
            graph.add_edge(
                edge.vm_a, edge.vm_b,
                kind=edge.kind, name=edge.name,
                scope=_scope(domains[edge.vm_a], domains[edge.vm_b]),
            )
        return graph

    def register_slice(self, slice_instance: Any) -> SliceGraph:
        """Wire a slice instance that is in Day0Done or later.

        `slice_instance` must expose `slice_id`, `state` and `topology`.
        """
        topology: SliceTopology = slice_instance.topology
        with self._lock:
            if slice_instance.slice_id in self.graphs:
                raise AlreadyRegistered(slice_instance.slice_id)
            if slice_instance.state not in REGISTRABLE_STATES:
                raise InvalidState(f"slice {slice_instance.slice_id} is {slice_instance.state.value}")
            graph = self.build_graph(topology)
            if graph.number_of_nodes() == 0 or not nx.is_connected(graph):
                raise DisconnectedGraph(f"slice {slice_instance.slice_id} graph is not connected")
            for vm_id in graph.nodes:
                if vm_id in self._vm_slice:
                    raise AlreadyRegistered(f"{vm_id} already wired into {self._vm_slice[vm_id]}")
            tag = self.tags.issue()
            slice_graph = SliceGraph(slice_instance.slice_id, tag, graph)
            self.graphs[slice_instance.slice_id] = slice_graph
            for vm_id in graph.nodes:
                self._vm_slice[vm_id] = slice_instance.slice_id
            logger.info(
                f"Registered slice {slice_instance.slice_id} on VLAN {tag}: "
                f"{graph.number_of_nodes()} nodes, {graph.number_of_edges()} edges"
            )
            return slice_graph

    def retract_slice(self, slice_id: str) -> None:
        with self._lock:
            slice_graph = self.graphs.pop(slice_id, None)
            if slice_graph is None:
                raise UnknownSlice(slice_id)
            for vm_id in slice_graph.graph.nodes:
                self._vm_slice.pop(vm_id, None)
            self.tags.retire(slice_graph.vlan_tag)
            logger.info(f"Retracted slice {slice_id}, retired VLAN {slice_graph.vlan_tag}")

    def slice_of(self, vm_id: str) -> str:
        try:
            return self._vm_slice[vm_id]
        except KeyError:
            raise UnknownVm(f"{vm_id} is not wired into any slice") from None

    def reachable(self, vm_a: str, vm_b: str) -> bool:
        slice_a = self.slice_of(vm_a)
        slice_b = self.slice_of(vm_b)
        if slice_a != slice_b:
            return False
        return nx.has_path(self.graphs[slice_a].graph, vm_a, vm_b)

    def isolation_report(self) -> IsolationReport:
        with self._lock:
            cross = 0
            for slice_id, slice_graph in self.graphs.items():
                for a, b in slice_graph.graph.edges():
                    if self._vm_slice.get(a) != slice_id or self._vm_slice.get(b) != slice_id:
                        cross += 1
            slices = tuple(sorted((sid, g.vlan_tag) for sid, g in self.graphs.items()))
            return IsolationReport(slices, cross)

    def export_lines(self) -> list[str]:
        lines: list[str] = []
        for slice_id in sorted(self.graphs):
            lines.extend(self.graphs[slice_id].export_lines())
        return lines

    def state_dict(self) -> dict[str, Any]:
        with self._lock:
            return {
                "next_tag": self.tags.next_tag,
                "retired": sorted(self.tags.retired),
                "graphs": [
                    {
                        "slice_id": g.slice_id,
                        "vlan_tag": g.vlan_tag,
                        "nodes": [[n, d["domain"]] for n, d in g.graph.nodes(data=True)],
                        "edges": [[a, b, d["kind"], d["name"]] for a, b, d in g.graph.edges(data=True)],
                    }
                    for g in self.graphs.values()
                ],
            }

    def load_state(self, data: dict[str, Any]) -> None:
        self.tags = TagPool(data["next_tag"], set(data["retired"]))
        self.graphs = {}
        self._vm_slice = {}
        for entry in data["graphs"]:
            topology = SliceTopology(
                entry["slice_id"],
                tuple((n, d) for n, d in entry["nodes"]),
                tuple(TopologyEdge(*edge) for edge in entry["edges"]),
            )
            self.graphs[entry["slice_id"]] = SliceGraph(entry["slice_id"], entry["vlan_tag"], self.build_graph(topology))
            for vm_id, _ in entry["nodes"]:
                self._vm_slice[vm_id] = entry["slice_id"]
