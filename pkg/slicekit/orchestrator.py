"""NFVO and VNFM in one control loop.

Slice instantiation follows the three descriptor levels:

1. every VDU of every segment is allocated on its planned VIM,
2. one NS instance is registered per NSID segment,
3. chain edges are resolved and the slice is wired into the fabric.

A failure at any step restores every touched VIM to its pre-call
checkpoint and leaves the slice in Failed. Day-1 and day-2 hooks are
recorded parameter maps; nothing is executed.
"""
import copy
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, NamedTuple

from slicekit.descriptor import (
    DescriptorPackage,
    Nsd,
    Scalar,
    package_from_documents,
    segment_budget,
    validate,
)
from slicekit.errors import (
    ChainError,
    InvalidState,
    NoFeasiblePlacement,
    SliceKitError,
    TenantAttached,
    UnknownNsd,
    UnknownNsid,
    UnknownPackage,
    UnknownSlice,
    UnknownVim,
    UnknownVnfd,
    ValidationFailed,
)
from slicekit.fabric import Fabric, SliceTopology, TopologyEdge
from slicekit.lifecycle import LifecycleState, check_transition
from slicekit.nfvi import LogicalClock, VimCheckpoint, VimRegistry, VmRecord

logger = logging.getLogger(__name__)

TERMINABLE_STATES = frozenset({
    LifecycleState.DAY0_DONE,
    LifecycleState.DAY1_CONFIGURED,
    LifecycleState.RUNNING,
})


class OrchestratorEvent(NamedTuple):
    ts: int
    slice_id: str
    kind: str
    detail: str

    def line(self) -> str:
        return f"{self.ts} {self.slice_id} {self.kind} {self.detail}"


class CatalogEntry(NamedTuple):
    package_id: str
    package: DescriptorPackage
    state: LifecycleState


class PlacementPlan(NamedTuple):
    nsid_id: str
    assignments: tuple[tuple[str, str], ...]  # (nsd_id, vim_id) per segment

    def vim_for(self, index: int) -> str:
        return self.assignments[index][1]


class ChainEdge(NamedTuple):
    from_ns: str
    from_cp: str
    to_ns: str
    to_cp: str
    vm_a: str
    vm_b: str


@dataclass
class NsInstance:
    ns_id: str
    nsd_id: str
    vim_id: str
    slice_id: str | None
    vm_ids: list[str]
    cps: dict[str, str]  # cp name -> vm id
    state: LifecycleState

    def to_dict(self) -> dict[str, Any]:
        return {
            "ns_id": self.ns_id,
            "nsd_id": self.nsd_id,
            "vim_id": self.vim_id,
            "slice_id": self.slice_id,
            "vm_ids": list(self.vm_ids),
            "cps": dict(self.cps),
            "state": self.state.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NsInstance":
        return cls(
            data["ns_id"], data["nsd_id"], data["vim_id"], data["slice_id"],
            list(data["vm_ids"]), dict(data["cps"]), LifecycleState(data["state"]),
        )


@dataclass
class SliceInstance:
    slice_id: str
    nsid_id: str
    package_id: str
    ns_instances: list[str] = field(default_factory=list)
    chain_edges: list[ChainEdge] = field(default_factory=list)
    tenant_ref: str | None = None
    state: LifecycleState = LifecycleState.ONBOARDED
    topology: SliceTopology | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "slice_id": self.slice_id,
            "nsid_id": self.nsid_id,
            "package_id": self.package_id,
            "ns_instances": list(self.ns_instances),
            "chain_edges": [list(edge) for edge in self.chain_edges],
            "tenant_ref": self.tenant_ref,
            "state": self.state.value,
            "topology": None if self.topology is None else {
                "nodes": [list(node) for node in self.topology.nodes],
                "edges": [list(edge) for edge in self.topology.edges],
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SliceInstance":
        topology = None
        if data["topology"] is not None:
            topology = SliceTopology(
                data["slice_id"],
                tuple(tuple(node) for node in data["topology"]["nodes"]),
                tuple(TopologyEdge(*edge) for edge in data["topology"]["edges"]),
            )
        return cls(
            slice_id=data["slice_id"],
            nsid_id=data["nsid_id"],
            package_id=data["package_id"],
            ns_instances=list(data["ns_instances"]),
            chain_edges=[ChainEdge(*edge) for edge in data["chain_edges"]],
            tenant_ref=data["tenant_ref"],
            state=LifecycleState(data["state"]),
            topology=topology,
        )


def _format_params(params: Mapping[str, Scalar]) -> str:
    return ",".join(f"{key}={value}" for key, value in params.items()) or "-"


class Orchestrator:
    def __init__(self, vims: VimRegistry, fabric: Fabric, clock: LogicalClock):
        self.vims = vims
        self.fabric = fabric
        self.clock = clock
        self.catalog: dict[str, CatalogEntry] = {}
        self.ns_instances: dict[str, NsInstance] = {}
        self.slices: dict[str, SliceInstance] = {}
        self.events: list[OrchestratorEvent] = []
        # Returns the UE ids currently served through a slice instance.
        self.tenant_guard: Callable[[str], list[str]] | None = None
        self._next_ns = 1
        self._next_slice = 1
        self._lock = threading.RLock()

    # -- events ------------------------------------------------------------

    def _emit(self, slice_id: str | None, kind: str, detail: str) -> None:
        event = OrchestratorEvent(self.clock.now, slice_id or "-", kind, detail)
        self.events.append(event)
        logger.info(f"[{event.ts}] {event.slice_id} {kind} {detail}")

    def export_events(self, slice_id: str | None = None) -> list[str]:
        return [e.line() for e in self.events if slice_id is None or e.slice_id == slice_id]

    # -- catalog -----------------------------------------------------------

    def onboard_package(self, package: DescriptorPackage) -> str:
        """Store a validated package; identical content yields the same id."""
        with self._lock:
            report = validate(package)
            if not report.ok:
                logger.warning(f"Rejected package {package.nsid.id}: {len(report.findings)} finding(s)")
                raise ValidationFailed(report)
            package_id = f"pkg-{package.content_hash()[:12]}"
            if package_id in self.catalog:
                logger.info(f"Package {package_id} already onboarded")
                return package_id
            self.catalog[package_id] = CatalogEntry(package_id, package, LifecycleState.ONBOARDED)
            self.clock.tick()
            self._emit(
                None, "onboard",
                f"{package.nsid.id} {len(package.vnfds)} vnfd(s) {len(package.nsds)} nsd(s)",
            )
            return package_id

    def package(self, package_id: str) -> DescriptorPackage:
        try:
            return self.catalog[package_id].package
        except KeyError:
            raise UnknownPackage(package_id) from None

    def package_for_nsid(self, nsid_id: str) -> CatalogEntry:
        # most recent onboarding wins
        for entry in reversed(list(self.catalog.values())):
            if entry.package.nsid.id == nsid_id:
                return entry
        raise UnknownNsid(nsid_id)

    def _package_for_nsd(self, nsd_id: str) -> tuple[CatalogEntry, Nsd]:
        for entry in reversed(list(self.catalog.values())):
            for nsd in entry.package.nsds:
                if nsd.id == nsd_id:
                    return entry, nsd
        raise UnknownNsd(nsd_id)

    # -- placement ---------------------------------------------------------

    @staticmethod
    def _override(overrides: Mapping[str, str], index: int, nsd_id: str) -> str | None:
        for key in (str(index), nsd_id, nsd_id.removesuffix("-nsd")):
            if key in overrides:
                return overrides[key]
        return None

    def plan_placement(self, nsid_id: str, overrides: Mapping[str, str] | None = None) -> PlacementPlan:
        """Affinity first, then first-fit over VIMs in registration order."""
        overrides = overrides or {}
        package = self.package_for_nsid(nsid_id).package
        free = {vim.name: vim.ledger.free() for vim in self.vims.all()}
        assignments: list[tuple[str, str]] = []
        for index, segment in enumerate(package.nsid.segments):
            need = segment_budget(package, index)
            target = self._override(overrides, index, segment.nsd_id) or segment.vim_affinity
            if target is not None:
                if target not in free:
                    raise UnknownVim(target)
                shortfall = need.first_shortfall(free[target])
                if shortfall is not None:
                    raise NoFeasiblePlacement(segment.nsd_id, f"{shortfall} exhausted on {target}")
            else:
                target = next((name for name, avail in free.items() if need.first_shortfall(avail) is None), None)
                if target is None:
                    raise NoFeasiblePlacement(segment.nsd_id, "no registered VIM has room")
            free[target] = free[target] - need
            assignments.append((segment.nsd_id, target))
        plan = PlacementPlan(nsid_id, tuple(assignments))
        logger.info(f"Placement for {nsid_id}: {', '.join(f'{n}@{v}' for n, v in plan.assignments)}")
        return plan

    # -- NS instances --------------------------------------------------------

    def _allocate_segment(
        self, package: DescriptorPackage, nsd: Nsd, vim_id: str, slice_id: str | None
    ) -> list[VmRecord]:
        vim = self.vims.get(vim_id)
        records = []
        for vnfd_id in nsd.constituent_vnfds:
            vnfd = package.vnfd(vnfd_id)
            for vdu in vnfd.vdus:
                self.clock.tick()
                record = vim.allocate_vdu(vdu, vnfd_id, slice_id)
                self._emit(slice_id, "vm-created", f"{record.vm_id} {vim_id} {vnfd_id}/{vdu.id} {record.mgmt_ip}")
                records.append(record)
        return records

    def _register_ns(
        self, package: DescriptorPackage, nsd: Nsd, vim_id: str, slice_id: str | None, records: list[VmRecord]
    ) -> NsInstance:
        by_vdu = {(r.vnfd_id, r.vdu_id): r.vm_id for r in records}
        cps = {}
        for cp in nsd.external_cps:
            matches = package.vnfd(cp.vnfd_id).find_interface(cp.interface)
            if len(matches) != 1:
                raise ChainError(f"cp {cp.name} of {nsd.id} does not resolve to one interface")
            cps[cp.name] = by_vdu[(cp.vnfd_id, matches[0][0].id)]
        ns_id = f"ns-{self._next_ns:04d}"
        self._next_ns += 1
        instance = NsInstance(
            ns_id, nsd.id, vim_id, slice_id, [r.vm_id for r in records], cps, LifecycleState.INSTANTIATING,
        )
        self.ns_instances[ns_id] = instance
        self.clock.tick()
        self._emit(slice_id, "ns-registered", f"{ns_id} {nsd.id} {vim_id} {len(records)} vm(s)")
        return instance

    def _restore(self, checkpoints: dict[str, VimCheckpoint]) -> None:
        for vim_id, checkpoint in checkpoints.items():
            self.vims.get(vim_id).restore(checkpoint)

    def instantiate_ns(self, nsd_id: str, vim_id: str, slice_id: str | None = None) -> NsInstance:
        """One VM per VDU of every constituent VNFD, atomically."""
        with self._lock:
            entry, nsd = self._package_for_nsd(nsd_id)
            vim = self.vims.get(vim_id)
            checkpoint = vim.checkpoint()
            try:
                records = self._allocate_segment(entry.package, nsd, vim_id, slice_id)
                instance = self._register_ns(entry.package, nsd, vim_id, slice_id, records)
            except SliceKitError as e:
                vim.restore(checkpoint)
                self.clock.tick()
                self._emit(slice_id, "rollback", f"{nsd_id} on {vim_id}: {e.name}")
                raise
            check_transition(instance.state, LifecycleState.DAY0_DONE, instance.ns_id)
            instance.state = LifecycleState.DAY0_DONE
            return copy.deepcopy(instance)

    # -- slices --------------------------------------------------------------

    def _set_state(self, slice_instance: SliceInstance, target: LifecycleState) -> None:
        check_transition(slice_instance.state, target, slice_instance.slice_id)
        slice_instance.state = target
        for ns_id in slice_instance.ns_instances:
            instance = self.ns_instances[ns_id]
            if instance.state is not target:
                check_transition(instance.state, target, ns_id)
                instance.state = target
        self.clock.tick()
        self._emit(slice_instance.slice_id, "state", target.value)

    def _topology(self, package: DescriptorPackage, slice_instance: SliceInstance) -> SliceTopology:
        nodes: list[tuple[str, str]] = []
        edges: list[TopologyEdge] = []
        for ns_id in slice_instance.ns_instances:
            instance = self.ns_instances[ns_id]
            domain = self.vims.get(instance.vim_id).domain
            records = [self.vims.get(instance.vim_id).vms[vm_id] for vm_id in instance.vm_ids]
            nodes.extend((r.vm_id, domain) for r in records)
            by_vdu = {(r.vnfd_id, r.vdu_id): r.vm_id for r in records}
            for vnfd_id in package.nsd(instance.nsd_id).constituent_vnfds:
                vnfd = package.vnfd(vnfd_id)
                for vl in vnfd.internal_vls:
                    endpoints = [by_vdu[(vnfd_id, vdu_id)] for vdu_id, _ in vnfd.vl_endpoints(vl.name)]
                    edges.extend(TopologyEdge(endpoints[0], other, "vl", vl.name) for other in endpoints[1:])
        for edge in slice_instance.chain_edges:
            edges.append(TopologyEdge(edge.vm_a, edge.vm_b, "chain", f"{edge.from_cp}-{edge.to_cp}"))
        return SliceTopology(slice_instance.slice_id, tuple(nodes), tuple(edges))

    def instantiate_slice(self, nsid_id: str, plan: PlacementPlan) -> SliceInstance:
        with self._lock:
            entry = self.package_for_nsid(nsid_id)
            package = entry.package
            segments = package.nsid.segments
            if len(plan.assignments) != len(segments):
                raise NoFeasiblePlacement(nsid_id, "plan does not cover every segment")
            for vim_id in {vim for _, vim in plan.assignments}:
                self.vims.get(vim_id)

            slice_id = f"slice-{self._next_slice:04d}"
            self._next_slice += 1
            slice_instance = SliceInstance(slice_id, nsid_id, entry.package_id)
            self.slices[slice_id] = slice_instance
            self._set_state(slice_instance, LifecycleState.INSTANTIATING)

            checkpoints = {vim_id: self.vims.get(vim_id).checkpoint() for _, vim_id in plan.assignments}
            registered: list[str] = []
            try:
                # step 1: VDUs
                allocated = [
                    self._allocate_segment(package, package.nsd(segment.nsd_id), plan.vim_for(i), slice_id)
                    for i, segment in enumerate(segments)
                ]
                # step 2: NS instances
                for i, segment in enumerate(segments):
                    instance = self._register_ns(
                        package, package.nsd(segment.nsd_id), plan.vim_for(i), slice_id, allocated[i],
                    )
                    registered.append(instance.ns_id)
                    slice_instance.ns_instances.append(instance.ns_id)
                # step 3: chaining
                for link in package.nsid.chain_links:
                    ns_a = self.ns_instances[registered[link.from_segment]]
                    ns_b = self.ns_instances[registered[link.to_segment]]
                    vm_a = ns_a.cps.get(link.from_cp)
                    vm_b = ns_b.cps.get(link.to_cp)
                    if vm_a is None or vm_b is None:
                        raise ChainError(f"{link.from_segment}.{link.from_cp} -> {link.to_segment}.{link.to_cp}")
                    edge = ChainEdge(ns_a.ns_id, link.from_cp, ns_b.ns_id, link.to_cp, vm_a, vm_b)
                    slice_instance.chain_edges.append(edge)
                    self.clock.tick()
                    self._emit(slice_id, "chain-resolved", f"{ns_a.ns_id}.{link.from_cp} {ns_b.ns_id}.{link.to_cp} {vm_a} {vm_b}")
                slice_instance.topology = self._topology(package, slice_instance)
                self._set_state(slice_instance, LifecycleState.DAY0_DONE)
                slice_graph = self.fabric.register_slice(slice_instance)
                self.clock.tick()
                self._emit(slice_id, "fabric-registered", f"vlan {slice_graph.vlan_tag}")
            except SliceKitError as e:
                logger.warning(f"Slice {slice_id} failed ({e.name}: {e}); rolling back")
                self._restore(checkpoints)
                for ns_id in registered:
                    del self.ns_instances[ns_id]
                slice_instance.ns_instances = []
                slice_instance.chain_edges = []
                slice_instance.topology = None
                self._set_state(slice_instance, LifecycleState.FAILED)
                self._emit(slice_id, "rollback", e.name)
                raise
            return copy.deepcopy(slice_instance)

    def get_slice(self, slice_id: str) -> SliceInstance:
        try:
            return self.slices[slice_id]
        except KeyError:
            raise UnknownSlice(slice_id) from None

    def slice_state(self, slice_id: str) -> LifecycleState | None:
        slice_instance = self.slices.get(slice_id)
        return None if slice_instance is None else slice_instance.state

    def list_slices(self) -> list[SliceInstance]:
        return [copy.deepcopy(self.slices[sid]) for sid in sorted(self.slices)]

    def slice_vms(self, slice_id: str) -> list[VmRecord]:
        slice_instance = self.get_slice(slice_id)
        records = []
        for ns_id in slice_instance.ns_instances:
            instance = self.ns_instances[ns_id]
            vim = self.vims.get(instance.vim_id)
            records.extend(copy.copy(vim.vms[vm_id]) for vm_id in instance.vm_ids)
        return records

    def set_tenant_ref(self, slice_id: str, mvno_id: str | None) -> None:
        self.get_slice(slice_id).tenant_ref = mvno_id

    def day1_configure(self, slice_id: str) -> None:
        with self._lock:
            slice_instance = self.get_slice(slice_id)
            if slice_instance.state is not LifecycleState.DAY0_DONE:
                raise InvalidState(f"{slice_id} is {slice_instance.state.value}, day-1 needs Day0Done")
            package = self.package(slice_instance.package_id)
            for record in self.slice_vms(slice_id):
                params = package.vnfd(record.vnfd_id).hook("day1")
                if params:
                    self.clock.tick()
                    self._emit(slice_id, "config", f"day1 {record.vm_id} {_format_params(params)}")
            self._set_state(slice_instance, LifecycleState.DAY1_CONFIGURED)
            self._set_state(slice_instance, LifecycleState.RUNNING)

    def day2_reconfigure(self, slice_id: str, vnfd_id: str, params: Mapping[str, Scalar]) -> None:
        with self._lock:
            slice_instance = self.get_slice(slice_id)
            if slice_instance.state is not LifecycleState.RUNNING:
                raise InvalidState(f"{slice_id} is {slice_instance.state.value}, day-2 needs Running")
            package = self.package(slice_instance.package_id)
            constituents = {
                vnfd
                for ns_id in slice_instance.ns_instances
                for vnfd in package.nsd(self.ns_instances[ns_id].nsd_id).constituent_vnfds
            }
            if vnfd_id not in constituents:
                raise UnknownVnfd(f"{vnfd_id} is not part of {slice_id}")
            self.clock.tick()
            self._emit(slice_id, "config", f"day2 {vnfd_id} {_format_params(params)}")

    def terminate_slice(self, slice_id: str) -> None:
        with self._lock:
            slice_instance = self.get_slice(slice_id)
            if slice_instance.state not in TERMINABLE_STATES:
                raise InvalidState(f"{slice_id} is {slice_instance.state.value}")
            if self.tenant_guard is not None:
                ues = self.tenant_guard(slice_id)
                if ues:
                    raise TenantAttached(f"{slice_id} serves UE(s) {', '.join(ues)}; detach them first")
            self._set_state(slice_instance, LifecycleState.TERMINATING)
            for ns_id in slice_instance.ns_instances:
                instance = self.ns_instances[ns_id]
                for vm_id in instance.vm_ids:
                    self.clock.tick()
                    self.vims.release_vm(instance.vim_id, vm_id)
                    self._emit(slice_id, "vm-released", f"{vm_id} {instance.vim_id}")
            if slice_id in self.fabric.graphs:
                self.fabric.retract_slice(slice_id)
                self.clock.tick()
                self._emit(slice_id, "fabric-retracted", "-")
            self._set_state(slice_instance, LifecycleState.TERMINATED)

    # -- persistence -----------------------------------------------------------

    def state_dict(self) -> dict[str, Any]:
        return {
            "catalog": [
                {"package_id": e.package_id, "documents": e.package.documents(), "state": e.state.value}
                for e in self.catalog.values()
            ],
            "ns_instances": [ns.to_dict() for ns in self.ns_instances.values()],
            "slices": [s.to_dict() for s in self.slices.values()],
            "events": [list(e) for e in self.events],
            "next_ns": self._next_ns,
            "next_slice": self._next_slice,
        }

    def load_state(self, data: dict[str, Any]) -> None:
        self.catalog = {
            e["package_id"]: CatalogEntry(
                e["package_id"], package_from_documents(e["documents"]), LifecycleState(e["state"]),
            )
            for e in data["catalog"]
        }
        self.ns_instances = {ns["ns_id"]: NsInstance.from_dict(ns) for ns in data["ns_instances"]}
        self.slices = {s["slice_id"]: SliceInstance.from_dict(s) for s in data["slices"]}
        self.events = [OrchestratorEvent(*e) for e in data["events"]]
        self._next_ns = data["next_ns"]
        self._next_slice = data["next_slice"]
