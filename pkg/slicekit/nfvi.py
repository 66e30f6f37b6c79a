"""Simulated virtualized-infrastructure managers.

A SimVim owns a capacity ledger, the VM records it has created and a
management-network address pool. All mutations of one VIM go through its
lock; usage snapshots are copied under the same lock so readers never see
a half-applied allocation.

Time is logical: the shared LogicalClock only moves when a caller ticks it.
"""
import copy
import heapq
import ipaddress
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, NamedTuple

from slicekit.descriptor import RESOURCE_FIELDS, Flavor, Resources, Vdu
from slicekit.errors import AlreadyReleased, DuplicateVim, InvalidCapacity, QuotaExceeded, UnknownVim, UnknownVm

logger = logging.getLogger(__name__)

MIN_ASSIGNABLE_ADDRESSES = 8
VIM_DOMAINS = ("ran", "core")


class LogicalClock:
    def __init__(self, now: int = 0):
        self.now = now

    def tick(self, steps: int = 1) -> int:
        self.now += steps
        return self.now

    def advance_to(self, ts: int) -> int:
        if ts > self.now:
            self.now = ts
        return self.now


@dataclass(frozen=True)
class VimCapacity:
    vcpus: int
    memory_mb: int
    storage_gb: int
    mgmt_subnet: str

    def __post_init__(self):
        for attr in ("vcpus", "memory_mb", "storage_gb"):
            value = getattr(self, attr)
            if not isinstance(value, int) or value < 1:
                raise InvalidCapacity(f"{attr} must be a positive integer, got {value!r}")
        try:
            network = ipaddress.IPv4Network(self.mgmt_subnet, strict=True)
        except ValueError as e:
            raise InvalidCapacity(f"subnet {self.mgmt_subnet!r}: {e}") from None
        # network address, gateway and broadcast are never handed out
        assignable = network.num_addresses - 3
        if assignable < MIN_ASSIGNABLE_ADDRESSES:
            raise InvalidCapacity(
                f"subnet {self.mgmt_subnet} has {max(assignable, 0)} assignable addresses, "
                f"needs at least {MIN_ASSIGNABLE_ADDRESSES}"
            )

    def resources(self) -> Resources:
        return Resources(self.vcpus, self.memory_mb, self.storage_gb)


class VmState(str, Enum):
    BUILDING = "Building"
    ACTIVE = "Active"
    RELEASED = "Released"


@dataclass
class VmRecord:
    vm_id: str
    vim: str
    vdu_id: str
    vnfd_id: str
    slice_id: str | None
    flavor: Flavor
    mgmt_ip: str
    state: VmState = VmState.BUILDING

    def to_dict(self) -> dict[str, Any]:
        return {
            "vm_id": self.vm_id,
            "vim": self.vim,
            "vdu_id": self.vdu_id,
            "vnfd_id": self.vnfd_id,
            "slice_id": self.slice_id,
            "flavor": [self.flavor.vcpus, self.flavor.memory_mb, self.flavor.storage_gb],
            "mgmt_ip": self.mgmt_ip,
            "state": self.state.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "VmRecord":
        return cls(
            vm_id=data["vm_id"],
            vim=data["vim"],
            vdu_id=data["vdu_id"],
            vnfd_id=data["vnfd_id"],
            slice_id=data["slice_id"],
            flavor=Flavor(*data["flavor"]),
            mgmt_ip=data["mgmt_ip"],
            state=VmState(data["state"]),
        )


class LedgerEvent(NamedTuple):
    ts: int
    event: str
    vm_id: str
    flavor: Flavor

    def line(self) -> str:
        return f"{self.ts} {self.event} {self.vm_id} {self.flavor.vcpus} {self.flavor.memory_mb} {self.flavor.storage_gb}"


@dataclass
class Ledger:
    capacity: VimCapacity
    allocated: Resources = field(default_factory=Resources)
    history: list[LedgerEvent] = field(default_factory=list)

    def replay(self) -> Resources:
        """Recompute allocated totals from the history alone."""
        total = Resources()
        for entry in self.history:
            delta = entry.flavor.resources()
            total = total + delta if entry.event == "allocate" else total - delta
        return total

    def free(self) -> Resources:
        return self.capacity.resources() - self.allocated


class VimUsage(NamedTuple):
    name: str
    domain: str
    capacity: Resources
    allocated: Resources
    vms: tuple[VmRecord, ...]

    @property
    def free(self) -> Resources:
        return self.capacity - self.allocated


class VimCheckpoint(NamedTuple):
    allocated: Resources
    history_len: int
    vm_ids: frozenset[str]
    released: frozenset[str]
    ip_next: int
    ip_free: tuple[int, ...]


class SimVim:
    def __init__(self, name: str, capacity: VimCapacity, clock: LogicalClock, domain: str = "core"):
        if domain not in VIM_DOMAINS:
            raise ValueError(f"domain must be one of {VIM_DOMAINS}, got {domain!r}")
        self.name = name
        self.domain = domain
        self.clock = clock
        self.ledger = Ledger(capacity)
        self.vms: dict[str, VmRecord] = {}
        self._lock = threading.RLock()
        self._next_seq = 1
        network = ipaddress.IPv4Network(capacity.mgmt_subnet)
        # .0 network, .1 gateway, last broadcast
        self._first_host = int(network.network_address) + 2
        self._last_host = int(network.broadcast_address) - 1
        self._ip_next = self._first_host
        self._ip_free: list[int] = []

    @property
    def capacity(self) -> VimCapacity:
        return self.ledger.capacity

    def _take_ip(self) -> int | None:
        candidates = []
        if self._ip_free:
            candidates.append(self._ip_free[0])
        if self._ip_next <= self._last_host:
            candidates.append(self._ip_next)
        if not candidates:
            return None
        address = min(candidates)
        if self._ip_free and address == self._ip_free[0]:
            heapq.heappop(self._ip_free)
        else:
            self._ip_next += 1
        return address

    def _return_ip(self, mgmt_ip: str) -> None:
        heapq.heappush(self._ip_free, int(ipaddress.IPv4Address(mgmt_ip)))

    def allocate_vdu(self, vdu: Vdu, vnfd_id: str, slice_id: str | None) -> VmRecord:
        """Create one VM for `vdu`. All-or-nothing: a failure leaves no trace."""
        with self._lock:
            demand = vdu.flavor.resources()
            free = self.ledger.free()
            shortfall = demand.first_shortfall(free)
            if shortfall is not None:
                attr = dict(RESOURCE_FIELDS)[shortfall]
                logger.warning(f"VIM {self.name}: cannot place {vnfd_id}/{vdu.id}, {shortfall} exhausted")
                raise QuotaExceeded(shortfall, getattr(demand, attr), getattr(free, attr), vim=self.name)
            address = self._take_ip()
            if address is None:
                raise QuotaExceeded("mgmt-ip", 1, 0, vim=self.name)

            vm_id = f"{self.name}-{self._next_seq:04d}"
            self._next_seq += 1
            record = VmRecord(
                vm_id=vm_id,
                vim=self.name,
                vdu_id=vdu.id,
                vnfd_id=vnfd_id,
                slice_id=slice_id,
                flavor=vdu.flavor,
                mgmt_ip=str(ipaddress.IPv4Address(address)),
            )
            self.vms[vm_id] = record
            self.ledger.allocated = self.ledger.allocated + demand
            self.ledger.history.append(LedgerEvent(self.clock.now, "allocate", vm_id, vdu.flavor))
            record.state = VmState.ACTIVE
            logger.info(f"VIM {self.name}: {vm_id} ({vnfd_id}/{vdu.id}) active at {record.mgmt_ip}")
            return copy.copy(record)

    def release_vm(self, vm_id: str) -> None:
        with self._lock:
            record = self.vms.get(vm_id)
            if record is None:
                raise UnknownVm(f"{vm_id} not on {self.name}")
            if record.state is VmState.RELEASED:
                raise AlreadyReleased(vm_id)
            self.ledger.allocated = self.ledger.allocated - record.flavor.resources()
            self.ledger.history.append(LedgerEvent(self.clock.now, "release", vm_id, record.flavor))
            self._return_ip(record.mgmt_ip)
            record.state = VmState.RELEASED
            logger.info(f"VIM {self.name}: released {vm_id}")

    def checkpoint(self) -> "VimCheckpoint":
        with self._lock:
            return VimCheckpoint(
                allocated=self.ledger.allocated,
                history_len=len(self.ledger.history),
                vm_ids=frozenset(self.vms),
                released=frozenset(vm_id for vm_id, vm in self.vms.items() if vm.state is VmState.RELEASED),
                ip_next=self._ip_next,
                ip_free=tuple(self._ip_free),
            )

    def restore(self, checkpoint: "VimCheckpoint") -> None:
        """Undo every mutation since `checkpoint`.

        Aborted work never reaches the committed history. VM sequence numbers
        are not rewound, so ids of aborted VMs are never handed out again.
        """
        with self._lock:
            dropped = [vm_id for vm_id in self.vms if vm_id not in checkpoint.vm_ids]
            for vm_id in dropped:
                del self.vms[vm_id]
            for vm_id, vm in self.vms.items():
                if vm.state is VmState.RELEASED and vm_id not in checkpoint.released:
                    vm.state = VmState.ACTIVE
            del self.ledger.history[checkpoint.history_len:]
            self.ledger.allocated = checkpoint.allocated
            self._ip_next = checkpoint.ip_next
            self._ip_free = list(checkpoint.ip_free)
            if dropped:
                logger.warning(f"VIM {self.name}: rolled back {len(dropped)} VM(s): {', '.join(dropped)}")

    def usage(self) -> VimUsage:
        with self._lock:
            return VimUsage(
                name=self.name,
                domain=self.domain,
                capacity=self.capacity.resources(),
                allocated=self.ledger.allocated,
                vms=tuple(copy.copy(vm) for vm in self.vms.values()),
            )

    def live_total(self) -> Resources:
        total = Resources()
        for vm in self.vms.values():
            if vm.state is not VmState.RELEASED:
                total = total + vm.flavor.resources()
        return total

    def export_history(self) -> list[str]:
        with self._lock:
            return [entry.line() for entry in self.ledger.history]

    def state_dict(self) -> dict[str, Any]:
        with self._lock:
            capacity = self.capacity
            return {
                "name": self.name,
                "domain": self.domain,
                "capacity": [capacity.vcpus, capacity.memory_mb, capacity.storage_gb, capacity.mgmt_subnet],
                "allocated": list(self.ledger.allocated.as_tuple()),
                "history": [
                    [e.ts, e.event, e.vm_id, e.flavor.vcpus, e.flavor.memory_mb, e.flavor.storage_gb]
                    for e in self.ledger.history
                ],
                "vms": [vm.to_dict() for vm in self.vms.values()],
                "next_seq": self._next_seq,
                "ip_next": self._ip_next,
                "ip_free": sorted(self._ip_free),
            }

    @classmethod
    def from_state(cls, data: dict[str, Any], clock: LogicalClock) -> "SimVim":
        vcpus, memory_mb, storage_gb, subnet = data["capacity"]
        vim = cls(data["name"], VimCapacity(vcpus, memory_mb, storage_gb, subnet), clock, data["domain"])
        vim.ledger.allocated = Resources(*data["allocated"])
        vim.ledger.history = [
            LedgerEvent(ts, event, vm_id, Flavor(c, m, s)) for ts, event, vm_id, c, m, s in data["history"]
        ]
        vim.vms = {vm["vm_id"]: VmRecord.from_dict(vm) for vm in data["vms"]}
        vim._next_seq = data["next_seq"]
        vim._ip_next = data["ip_next"]
        vim._ip_free = list(data["ip_free"])
        heapq.heapify(vim._ip_free)
        return vim


class VimRegistry:
    """Registered VIMs in registration order."""

    def __init__(self, clock: LogicalClock):
        self.clock = clock
        self._vims: dict[str, SimVim] = {}

    def create_vim(self, name: str, capacity: VimCapacity, domain: str = "core") -> SimVim:
        if name in self._vims:
            raise DuplicateVim(name)
        vim = SimVim(name, capacity, self.clock, domain)
        self._vims[name] = vim
        logger.info(
            f"Created VIM {name} ({domain}): {capacity.vcpus} vcpus, {capacity.memory_mb} MB, "
            f"{capacity.storage_gb} GB, mgmt {capacity.mgmt_subnet}"
        )
        return vim

    def get(self, name: str) -> SimVim:
        try:
            return self._vims[name]
        except KeyError:
            raise UnknownVim(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._vims

    def names(self) -> list[str]:
        return list(self._vims)

    def all(self) -> list[SimVim]:
        return list(self._vims.values())

    def allocate_vdu(self, vim_name: str, vdu: Vdu, vnfd_id: str, slice_id: str | None) -> VmRecord:
        return self.get(vim_name).allocate_vdu(vdu, vnfd_id, slice_id)

    def release_vm(self, vim_name: str, vm_id: str) -> None:
        self.get(vim_name).release_vm(vm_id)

    def vim_usage(self, name: str) -> VimUsage:
        return self.get(name).usage()

    def find_vm(self, vm_id: str) -> VmRecord | None:
        for vim in self._vims.values():
            record = vim.vms.get(vm_id)
            if record is not None:
                return record
        return None

    def state_dict(self) -> list[dict[str, Any]]:
        return [vim.state_dict() for vim in self._vims.values()]

    def load_state(self, data: list[dict[str, Any]]) -> None:
        self._vims = {}
        for entry in data:
            vim = SimVim.from_state(entry, self.clock)
            self._vims[vim.name] = vim
