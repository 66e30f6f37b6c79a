"""The engine object and its snapshot file.

Snapshot layout (all integers big-endian)::

    magic      4 bytes   b"SLK1"
    version    u32       FORMAT_VERSION
    payload    records   repeated: u32 length, then `length` bytes of UTF-8 JSON
    checksum   u32       CRC-32 (zlib) of the payload bytes

The first record is the header ``{"logical_ts": N, "sections": [...]}``.
Each following record is ``{"section": name, "state": ...}`` holding one
module's state_dict(), in the order the header lists them.
"""
import json
import logging
import struct
import threading
import zlib
from pathlib import Path
from typing import Any, Iterator

from slicekit.descriptor import MetricSpec
from slicekit.errors import CorruptSnapshot, SliceKitError, UnsupportedVersion
from slicekit.fabric import Fabric
from slicekit.nfvi import LogicalClock, VimRegistry
from slicekit.orchestrator import Orchestrator
from slicekit.telemetry import MetricStore
from slicekit.tenancy import TenantTree

logger = logging.getLogger(__name__)

MAGIC = b"SLK1"
FORMAT_VERSION = 1
SECTIONS = ("vims", "orchestrator", "fabric", "tenants", "metrics")

_U32 = struct.Struct(">I")


class Engine:
    """All live registries of one session, wired to each other."""

    def __init__(self):
        self.clock = LogicalClock()
        self.vims = VimRegistry(self.clock)
        self.fabric = Fabric()
        self.orchestrator = Orchestrator(self.vims, self.fabric, self.clock)
        self.tenants = TenantTree(self.orchestrator.slice_state)
        self.orchestrator.tenant_guard = self.tenants.ues_bound_to
        self.metrics = MetricStore(self.vims.find_vm)
        # save/load exclude every other command
        self.lock = threading.RLock()

    def metric_specs(self, vm_id: str) -> list[MetricSpec]:
        """Metrics the VM's VNFD declares for its VDU; empty when none or unknown."""
        record = self.vims.find_vm(vm_id)
        if record is None:
            return []
        packages = []
        if record.slice_id is not None:
            try:
                slice_instance = self.orchestrator.get_slice(record.slice_id)
                packages.append(self.orchestrator.package(slice_instance.package_id))
            except SliceKitError:
                pass
        packages += [entry.package for entry in reversed(list(self.orchestrator.catalog.values()))]
        for package in packages:
            for vnfd in package.vnfds:
                if vnfd.id == record.vnfd_id:
                    return [s for s in vnfd.metric_specs if s.target_vdu == record.vdu_id]
        return []

    def state_dict(self) -> dict[str, Any]:
        with self.lock:
            return {
                "logical_ts": self.clock.now,
                "vims": self.vims.state_dict(),
                "orchestrator": self.orchestrator.state_dict(),
                "fabric": self.fabric.state_dict(),
                "tenants": self.tenants.state_dict(),
                "metrics": self.metrics.state_dict(),
            }

    def load_state(self, data: dict[str, Any]) -> None:
        with self.lock:
            self.clock.now = data["logical_ts"]
            self.vims.load_state(data["vims"])
            self.orchestrator.load_state(data["orchestrator"])
            self.fabric.load_state(data["fabric"])
            self.tenants.load_state(data["tenants"])
            self.metrics.load_state(data["metrics"])

    def save(self, path: str | Path) -> None:
        save(self, path)

    @classmethod
    def load(cls, path: str | Path) -> "Engine":
        return load(path)


def _record(obj: Any) -> bytes:
    body = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _U32.pack(len(body)) + body


def encode_snapshot(state: dict[str, Any]) -> bytes:
    payload = _record({"logical_ts": state["logical_ts"], "sections": list(SECTIONS)})
    payload += b"".join(_record({"section": name, "state": state[name]}) for name in SECTIONS)
    return MAGIC + _U32.pack(FORMAT_VERSION) + payload + _U32.pack(zlib.crc32(payload))


def _records(payload: bytes) -> Iterator[Any]:
    offset = 0
    while offset < len(payload):
        if offset + _U32.size > len(payload):
            raise CorruptSnapshot("truncated record length")
        (length,) = _U32.unpack_from(payload, offset)
        offset += _U32.size
        body = payload[offset:offset + length]
        if len(body) != length:
            raise CorruptSnapshot("truncated record body")
        offset += length
        try:
            yield json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptSnapshot(f"unreadable record at byte {offset - length}: {e}") from None


def decode_snapshot(blob: bytes) -> dict[str, Any]:
    if len(blob) < len(MAGIC) + 2 * _U32.size or not blob.startswith(MAGIC):
        raise CorruptSnapshot("missing SLK1 header")
    (version,) = _U32.unpack_from(blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"snapshot format {version}, expected {FORMAT_VERSION}")
    payload = blob[len(MAGIC) + _U32.size:-_U32.size]
    (checksum,) = _U32.unpack(blob[-_U32.size:])
    if zlib.crc32(payload) != checksum:
        raise CorruptSnapshot("checksum mismatch")
    records = list(_records(payload))
    if not records or not isinstance(records[0], dict) or not {"sections", "logical_ts"} <= records[0].keys():
        raise CorruptSnapshot("missing header record")
    state: dict[str, Any] = {"logical_ts": records[0]["logical_ts"]}
    for record in records[1:]:
        if not isinstance(record, dict) or not {"section", "state"} <= record.keys():
            raise CorruptSnapshot("malformed section record")
        state[record["section"]] = record["state"]
    missing = [name for name in SECTIONS if name not in state]
    if missing:
        raise CorruptSnapshot(f"missing section(s): {', '.join(missing)}")
    return state


def save(engine: Engine, path: str | Path) -> None:
    with engine.lock:
        blob = encode_snapshot(engine.state_dict())
    Path(path).write_bytes(blob)
    logger.info(f"Saved snapshot to {path} ({len(blob)} bytes, ts {engine.clock.now})")


def load(path: str | Path) -> Engine:
    state = decode_snapshot(Path(path).read_bytes())
    engine = Engine()
    try:
        engine.load_state(state)
    except (KeyError, TypeError, ValueError) as e:
        logger.error(f"Snapshot {path} failed to restore: {e!r}")
        raise CorruptSnapshot(f"inconsistent state: {e!r}") from e
    logger.info(f"Loaded snapshot from {path} (ts {engine.clock.now})")
    return engine
