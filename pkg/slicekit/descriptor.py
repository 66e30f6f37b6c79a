"""Descriptor documents: VNFD, NSD and NSID levels of slice creation.

Documents use a small indentation-based key/value grammar:

    kind: vnfd
    id: oai-epc
    vdus:
      - id: hss
        image: oai-hss
        ...

Indentation is exactly two spaces per level, list items start with "- ",
scalars are bare tokens (no whitespace) or double-quoted strings, and
unsigned decimal tokens are integers. A key followed by nothing is an
empty value. One document per `.nsdsl` file.

Parsing is strict about syntax and type invariants. Unknown keys are kept
on the parsed object and surface as validation findings instead.
"""
import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

import networkx as nx

from slicekit import config
from slicekit.errors import BudgetError, ParseError

logger = logging.getLogger(__name__)

DESCRIPTOR_SUFFIXES = (".nsdsl", ".nsid")
METRIC_NAMES = ("cpu_utilization_pct", "memory_utilization_mb", "throughput_mbps")
LIFECYCLE_DAYS = ("day0", "day1", "day2")

# Quota errors name resources in this order.
RESOURCE_FIELDS = (("vcpus", "vcpus"), ("memory", "memory_mb"), ("storage", "storage_gb"))

Scalar = str | int


# ---------------------------------------------------------------------------
# Grammar
# ---------------------------------------------------------------------------

_KEY_RE = re.compile(r"^([A-Za-z0-9_][A-Za-z0-9_.-]*):(?: (.*))?$")
_BARE_RE = re.compile(r'^[^\s"][^\s]*$')
_INT_RE = re.compile(r"^(0|[1-9][0-9]*)$")


class _Line(NamedTuple):
    number: int
    level: int
    content: str


def _is_item(content: str) -> bool:
    return content == "-" or content.startswith("- ")


def _tokenize(text: str) -> list[_Line]:
    lines = []
    for number, raw in enumerate(text.split("\n"), start=1):
        if raw.endswith("\r"):
            raise ParseError("syntax", "CR line endings are not allowed", number)
        if not raw.strip():
            continue
        stripped = raw.lstrip(" ")
        if stripped.startswith("\t"):
            raise ParseError("syntax", "tabs are not allowed in indentation", number)
        indent = len(raw) - len(stripped)
        if indent % 2:
            raise ParseError("syntax", "indentation must be a multiple of two spaces", number)
        lines.append(_Line(number, indent // 2, stripped.rstrip()))
    return lines


def _scalar(text: str, number: int) -> Scalar:
    if text.startswith('"'):
        chars = []
        i = 1
        while i < len(text):
            ch = text[i]
            if ch == "\\":
                if i + 1 >= len(text) or text[i + 1] not in '"\\':
                    raise ParseError("syntax", "bad escape in quoted string", number)
                chars.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                if i != len(text) - 1:
                    raise ParseError("syntax", "text after closing quote", number)
                return "".join(chars)
            chars.append(ch)
            i += 1
        raise ParseError("syntax", "unterminated quoted string", number)
    if not _BARE_RE.match(text):
        raise ParseError("syntax", f"bare scalar may not contain whitespace: {text!r}", number)
    if _INT_RE.match(text):
        return int(text)
    return text


class _Parser:
    def __init__(self, lines: list[_Line]):
        self.lines = lines
        self.pos = 0

    def peek(self) -> _Line | None:
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def _check_no_overindent(self, level: int) -> None:
        line = self.peek()
        if line is not None and line.level > level:
            raise ParseError("syntax", "unexpected indentation", line.number)

    def block(self, level: int) -> Any:
        line = self.peek()
        if line is None or line.level < level:
            return None
        if line.level > level:
            raise ParseError("syntax", "unexpected indentation", line.number)
        if _is_item(line.content):
            return self.sequence(level)
        return self.mapping(level)

    def mapping(self, level: int, first: tuple[int, str] | None = None) -> dict:
        result: dict[str, Any] = {}
        if first is not None:
            self._record(level, result, *first)
        while (line := self.peek()) is not None and line.level == level:
            if _is_item(line.content):
                raise ParseError("syntax", "list item where a key was expected", line.number)
            self.pos += 1
            self._record(level, result, line.number, line.content)
        self._check_no_overindent(level)
        return result

    def sequence(self, level: int) -> list:
        items: list[Any] = []
        while (line := self.peek()) is not None and line.level == level and _is_item(line.content):
            self.pos += 1
            if line.content == "-":
                raise ParseError("syntax", "empty list item", line.number)
            body = line.content[2:]
            if _KEY_RE.match(body):
                items.append(self.mapping(level + 1, first=(line.number, body)))
            else:
                items.append(_scalar(body, line.number))
                self._check_no_overindent(level)
        line = self.peek()
        if line is not None and line.level == level:
            raise ParseError("syntax", "key where a list item was expected", line.number)
        self._check_no_overindent(level)
        return items

    def _record(self, level: int, target: dict, number: int, content: str) -> None:
        match = _KEY_RE.match(content)
        if not match:
            raise ParseError("syntax", f"expected 'key: value', got {content!r}", number)
        key, rest = match.group(1), match.group(2)
        if key in target:
            raise ParseError("syntax", f"duplicate key {key!r}", number)
        if rest is None or rest == "":
            target[key] = self.block(level + 1)
        else:
            target[key] = _scalar(rest, number)


def parse_document(text: str) -> dict[str, Any]:
    """Parse a descriptor-grammar document into nested dicts/lists/scalars."""
    lines = _tokenize(text)
    if not lines:
        raise ParseError("syntax", "empty document")
    if lines[0].level != 0:
        raise ParseError("syntax", "document must start at column 0", lines[0].number)
    parser = _Parser(lines)
    if _is_item(lines[0].content):
        raise ParseError("syntax", "document must be a record, not a list", lines[0].number)
    return parser.mapping(0)


def _format_scalar(value: Scalar) -> str:
    if isinstance(value, int) and not isinstance(value, bool):
        if value < 0:
            raise ValueError("integers in descriptor documents are unsigned")
        return str(value)
    text = str(value)
    if _BARE_RE.match(text) and not _INT_RE.match(text):
        return text
    escaped = text.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def _emit(value: Any, level: int, out: list[str]) -> None:
    indent = "  " * level
    if isinstance(value, Mapping):
        for key, item in value.items():
            if isinstance(item, (Mapping, list, tuple)):
                out.append(f"{indent}{key}:")
                if item:
                    _emit(item, level + 1, out)
            elif item is None:
                out.append(f"{indent}{key}:")
            else:
                out.append(f"{indent}{key}: {_format_scalar(item)}")
        return
    for item in value:
        if isinstance(item, Mapping):
            nested: list[str] = []
            _emit(item, level + 1, nested)
            nested[0] = f"{indent}- " + nested[0][len(indent) + 2:]
            out.extend(nested)
        else:
            out.append(f"{indent}- {_format_scalar(item)}")


def dump_document(record: Mapping[str, Any]) -> str:
    """Render nested dicts/lists/scalars in the descriptor grammar."""
    out: list[str] = []
    _emit(record, 0, out)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Descriptor types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Resources:
    """Resource totals; unlike Flavor, zero is allowed."""
    vcpus: int = 0
    memory_mb: int = 0
    storage_gb: int = 0

    def __add__(self, other: "Resources") -> "Resources":
        return Resources(
            self.vcpus + other.vcpus,
            self.memory_mb + other.memory_mb,
            self.storage_gb + other.storage_gb,
        )

    def __sub__(self, other: "Resources") -> "Resources":
        return Resources(
            self.vcpus - other.vcpus,
            self.memory_mb - other.memory_mb,
            self.storage_gb - other.storage_gb,
        )

    def first_shortfall(self, free: "Resources") -> str | None:
        """Name of the first resource (vcpus, memory, storage) exceeding `free`."""
        for name, attr in RESOURCE_FIELDS:
            if getattr(self, attr) > getattr(free, attr):
                return name
        return None

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.vcpus, self.memory_mb, self.storage_gb)


@dataclass(frozen=True)
class Flavor:
    vcpus: int
    memory_mb: int
    storage_gb: int

    def __post_init__(self):
        for _, attr in RESOURCE_FIELDS:
            value = getattr(self, attr)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{attr} must be a positive integer, got {value!r}")

    def resources(self) -> Resources:
        return Resources(self.vcpus, self.memory_mb, self.storage_gb)


@dataclass(frozen=True)
class Interface:
    name: str
    # None marks an external interface, only reachable through a connection point.
    network: str | None = None


@dataclass(frozen=True)
class Vdu:
    id: str
    image: str
    flavor: Flavor
    interfaces: tuple[Interface, ...]


@dataclass(frozen=True)
class VirtualLink:
    name: str


@dataclass(frozen=True)
class MetricSpec:
    name: str
    target_vdu: str
    collection_period_s: int


@dataclass(frozen=True)
class Vnfd:
    id: str
    vdus: tuple[Vdu, ...]
    internal_vls: tuple[VirtualLink, ...]
    mgmt_network_name: str
    lifecycle_hooks: tuple[tuple[str, tuple[tuple[str, Scalar], ...]], ...] = ()
    metric_specs: tuple[MetricSpec, ...] = ()
    unknown_keys: tuple[str, ...] = field(default=(), compare=False)

    def vdu(self, vdu_id: str) -> Vdu:
        for vdu in self.vdus:
            if vdu.id == vdu_id:
                return vdu
        raise KeyError(vdu_id)

    def hook(self, day: str) -> dict[str, Scalar]:
        for name, params in self.lifecycle_hooks:
            if name == day:
                return dict(params)
        return {}

    def find_interface(self, name: str) -> list[tuple[Vdu, Interface]]:
        return [(vdu, iface) for vdu in self.vdus for iface in vdu.interfaces if iface.name == name]

    def vl_endpoints(self, vl_name: str) -> list[tuple[str, str]]:
        """(vdu_id, interface) pairs attached to an internal vl, in descriptor order."""
        return [
            (vdu.id, iface.name)
            for vdu in self.vdus
            for iface in vdu.interfaces
            if iface.network == vl_name
        ]

    def flavor_total(self) -> Resources:
        total = Resources()
        for vdu in self.vdus:
            total = total + vdu.flavor.resources()
        return total


@dataclass(frozen=True)
class ConnectionPoint:
    name: str
    vnfd_id: str
    interface: str


@dataclass(frozen=True)
class Nsd:
    id: str
    constituent_vnfds: tuple[str, ...]
    external_cps: tuple[ConnectionPoint, ...]
    unknown_keys: tuple[str, ...] = field(default=(), compare=False)

    def cp(self, name: str) -> ConnectionPoint | None:
        for cp in self.external_cps:
            if cp.name == name:
                return cp
        return None


@dataclass(frozen=True)
class Segment:
    nsd_id: str
    vim_affinity: str | None = None


@dataclass(frozen=True)
class ChainLink:
    from_segment: int
    from_cp: str
    to_segment: int
    to_cp: str


@dataclass(frozen=True)
class Nsid:
    id: str
    segments: tuple[Segment, ...]
    chain_links: tuple[ChainLink, ...]
    unknown_keys: tuple[str, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class DescriptorPackage:
    vnfds: tuple[Vnfd, ...]
    nsds: tuple[Nsd, ...]
    nsid: Nsid

    def vnfd(self, vnfd_id: str) -> Vnfd:
        for vnfd in self.vnfds:
            if vnfd.id == vnfd_id:
                return vnfd
        raise KeyError(vnfd_id)

    def nsd(self, nsd_id: str) -> Nsd:
        for nsd in self.nsds:
            if nsd.id == nsd_id:
                return nsd
        raise KeyError(nsd_id)

    def documents(self) -> list[str]:
        """Canonical document texts in (level, id) order."""
        docs = [serialize_vnfd(v) for v in sorted(self.vnfds, key=lambda v: v.id)]
        docs += [serialize_nsd(n) for n in sorted(self.nsds, key=lambda n: n.id)]
        docs.append(serialize_nsid(self.nsid))
        return docs

    def content_hash(self) -> str:
        sha256_hash = hashlib.sha256()
        for doc in self.documents():
            sha256_hash.update(doc.encode("utf-8"))
            sha256_hash.update(b"\x00")
        return sha256_hash.hexdigest()


# ---------------------------------------------------------------------------
# Schema helpers
# ---------------------------------------------------------------------------

def _invariant(message: str) -> ParseError:
    return ParseError("invariant", message)


def _check_keys(record: Mapping, allowed: Iterable[str], path: str, unknown: list[str]) -> None:
    allowed = set(allowed)
    for key in record:
        if key not in allowed:
            unknown.append(f"{path}{key}")


def _required(record: Mapping, key: str, path: str) -> Any:
    if key not in record or record[key] is None:
        raise _invariant(f"missing required key '{path}{key}'")
    return record[key]


def _ident(value: Any, path: str) -> str:
    if not isinstance(value, str) or not value:
        raise _invariant(f"'{path}' must be a non-empty identifier")
    return value


def _positive_int(value: Any, path: str) -> int:
    if not isinstance(value, int) or value < 1:
        raise _invariant(f"'{path}' must be a positive integer")
    return value


def _items(value: Any, path: str) -> list:
    if value is None:
        return []
    if not isinstance(value, list):
        raise _invariant(f"'{path}' must be a list")
    return value


def _record_item(value: Any, path: str) -> Mapping:
    if not isinstance(value, dict):
        raise _invariant(f"'{path}' must be a record")
    return value


def _expect_kind(record: Mapping, kind: str) -> None:
    found = record.get("kind")
    if found != kind:
        raise _invariant(f"expected 'kind: {kind}', got {found!r}")


def _parse_params(value: Any, path: str) -> tuple[tuple[str, Scalar], ...]:
    if value is None:
        return ()
    if not isinstance(value, dict):
        raise _invariant(f"'{path}' must be a parameter map")
    for key, param in value.items():
        if not isinstance(param, (str, int)):
            raise _invariant(f"'{path}.{key}' must be a scalar")
    return tuple(value.items())


# ---------------------------------------------------------------------------
# Level parsers
# ---------------------------------------------------------------------------

_VNFD_KEYS = ("kind", "id", "mgmt-network", "vdus", "internal-vls", "metrics") + LIFECYCLE_DAYS
_VDU_KEYS = ("id", "image", "vcpus", "memory-mb", "storage-gb", "interfaces")


def vnfd_from_record(record: Mapping) -> Vnfd:
    _expect_kind(record, "vnfd")
    unknown: list[str] = []
    _check_keys(record, _VNFD_KEYS, "", unknown)
    vnfd_id = _ident(_required(record, "id", ""), "id")
    mgmt = _ident(_required(record, "mgmt-network", ""), "mgmt-network")

    vl_names: list[str] = []
    for i, item in enumerate(_items(record.get("internal-vls"), "internal-vls")):
        path = f"internal-vls[{i}]."
        item = _record_item(item, path[:-1])
        _check_keys(item, ("name",), path, unknown)
        name = _ident(_required(item, "name", path), path + "name")
        if name in vl_names:
            raise _invariant(f"duplicate internal vl '{name}'")
        if name == mgmt:
            raise _invariant(f"internal vl '{name}' shadows the mgmt network")
        vl_names.append(name)

    vdus: list[Vdu] = []
    seen_vdus: set[str] = set()
    for i, item in enumerate(_items(record.get("vdus"), "vdus")):
        path = f"vdus[{i}]."
        item = _record_item(item, path[:-1])
        _check_keys(item, _VDU_KEYS, path, unknown)
        vdu_id = _ident(_required(item, "id", path), path + "id")
        if vdu_id in seen_vdus:
            raise _invariant(f"duplicate VDU id '{vdu_id}'")
        seen_vdus.add(vdu_id)
        flavor = Flavor(
            _positive_int(_required(item, "vcpus", path), path + "vcpus"),
            _positive_int(_required(item, "memory-mb", path), path + "memory-mb"),
            _positive_int(_required(item, "storage-gb", path), path + "storage-gb"),
        )
        interfaces: list[Interface] = []
        for j, raw_iface in enumerate(_items(item.get("interfaces"), path + "interfaces")):
            ipath = f"{path}interfaces[{j}]."
            raw_iface = _record_item(raw_iface, ipath[:-1])
            _check_keys(raw_iface, ("name", "network"), ipath, unknown)
            name = _ident(_required(raw_iface, "name", ipath), ipath + "name")
            network = raw_iface.get("network")
            if network is not None:
                network = _ident(network, ipath + "network")
                if network != mgmt and network not in vl_names:
                    raise _invariant(f"VDU '{vdu_id}' interface '{name}' names unknown network '{network}'")
            if any(existing.name == name for existing in interfaces):
                raise _invariant(f"duplicate interface '{name}' on VDU '{vdu_id}'")
            interfaces.append(Interface(name, network))
        mgmt_count = sum(1 for iface in interfaces if iface.network == mgmt)
        if mgmt_count != 1:
            raise _invariant(f"VDU '{vdu_id}' must have exactly one mgmt interface, found {mgmt_count}")
        vdus.append(Vdu(vdu_id, _ident(_required(item, "image", path), path + "image"), flavor, tuple(interfaces)))

    if not vdus:
        raise _invariant("≥1 VDU required")

    vls = tuple(VirtualLink(name) for name in vl_names)
    for vl in vls:
        attached = sum(1 for vdu in vdus for iface in vdu.interfaces if iface.network == vl.name)
        if attached < 2:
            raise _invariant(f"internal vl '{vl.name}' connects {attached} interface(s), needs ≥2")

    metrics: list[MetricSpec] = []
    for i, item in enumerate(_items(record.get("metrics"), "metrics")):
        path = f"metrics[{i}]."
        item = _record_item(item, path[:-1])
        _check_keys(item, ("name", "vdu", "period"), path, unknown)
        name = _ident(_required(item, "name", path), path + "name")
        if name not in METRIC_NAMES:
            raise _invariant(f"unknown metric '{name}'")
        target = _ident(_required(item, "vdu", path), path + "vdu")
        if target not in seen_vdus:
            raise _invariant(f"metric '{name}' targets unknown VDU '{target}'")
        period = _positive_int(item.get("period", config.COLLECTION_PERIOD), path + "period")
        metrics.append(MetricSpec(name, target, period))

    hooks = tuple(
        (day, _parse_params(record[day], day))
        for day in LIFECYCLE_DAYS
        if day in record and record[day] is not None
    )
    return Vnfd(vnfd_id, tuple(vdus), vls, mgmt, hooks, tuple(metrics), tuple(unknown))


def nsd_from_record(record: Mapping, vnfds: Mapping[str, Vnfd] | None = None) -> Nsd:
    _expect_kind(record, "nsd")
    unknown: list[str] = []
    _check_keys(record, ("kind", "id", "vnfds", "cps"), "", unknown)
    nsd_id = _ident(_required(record, "id", ""), "id")
    constituents: list[str] = []
    for i, item in enumerate(_items(record.get("vnfds"), "vnfds")):
        vnfd_id = _ident(item, f"vnfds[{i}]")
        if vnfd_id in constituents:
            raise _invariant(f"duplicate constituent '{vnfd_id}'")
        constituents.append(vnfd_id)
    if not constituents:
        raise _invariant("≥1 constituent VNFD required")
    cps: list[ConnectionPoint] = []
    for i, item in enumerate(_items(record.get("cps"), "cps")):
        path = f"cps[{i}]."
        item = _record_item(item, path[:-1])
        _check_keys(item, ("name", "vnfd", "interface"), path, unknown)
        cp = ConnectionPoint(
            _ident(_required(item, "name", path), path + "name"),
            _ident(_required(item, "vnfd", path), path + "vnfd"),
            _ident(_required(item, "interface", path), path + "interface"),
        )
        if any(existing.name == cp.name for existing in cps):
            raise _invariant(f"duplicate cp '{cp.name}'")
        if cp.vnfd_id not in constituents:
            raise _invariant(f"cp '{cp.name}' owner '{cp.vnfd_id}' is not a constituent")
        if vnfds is not None and cp.vnfd_id in vnfds:
            problem = _cp_interface_problem(vnfds[cp.vnfd_id], cp)
            if problem:
                raise _invariant(problem)
        cps.append(cp)
    return Nsd(nsd_id, tuple(constituents), tuple(cps), tuple(unknown))


def _cp_interface_problem(vnfd: Vnfd, cp: ConnectionPoint) -> str | None:
    matches = vnfd.find_interface(cp.interface)
    if not matches:
        return f"cp '{cp.name}' names nonexistent interface '{cp.interface}' on '{vnfd.id}'"
    if len(matches) > 1:
        return f"cp '{cp.name}' interface '{cp.interface}' is ambiguous on '{vnfd.id}'"
    return None


def _parse_endpoint(value: Any, path: str, segment_count: int) -> tuple[int, str]:
    text = str(value) if isinstance(value, (str, int)) else ""
    index, sep, cp_name = text.partition(".")
    if not sep or not _INT_RE.match(index) or not cp_name:
        raise _invariant(f"'{path}' must be 'segment-index.cp-name'")
    segment = int(index)
    if segment >= segment_count:
        raise _invariant(f"'{path}' names segment {segment}, only {segment_count} declared")
    return segment, cp_name


def nsid_from_record(record: Mapping, nsds: Mapping[str, Nsd] | None = None) -> Nsid:
    _expect_kind(record, "nsid")
    unknown: list[str] = []
    _check_keys(record, ("kind", "id", "segments", "chain"), "", unknown)
    nsid_id = _ident(_required(record, "id", ""), "id")
    segments: list[Segment] = []
    for i, item in enumerate(_items(record.get("segments"), "segments")):
        path = f"segments[{i}]."
        item = _record_item(item, path[:-1])
        _check_keys(item, ("nsd", "vim"), path, unknown)
        nsd_id = _ident(_required(item, "nsd", path), path + "nsd")
        vim = item.get("vim")
        segments.append(Segment(nsd_id, _ident(vim, path + "vim") if vim is not None else None))
    if not segments:
        raise _invariant("≥1 segment required")

    links: list[ChainLink] = []
    for i, item in enumerate(_items(record.get("chain"), "chain")):
        path = f"chain[{i}]."
        item = _record_item(item, path[:-1])
        _check_keys(item, ("from", "to"), path, unknown)
        src = _parse_endpoint(_required(item, "from", path), path + "from", len(segments))
        dst = _parse_endpoint(_required(item, "to", path), path + "to", len(segments))
        if src[0] == dst[0]:
            raise _invariant(f"chain link {i} joins segment {src[0]} to itself")
        links.append(ChainLink(src[0], src[1], dst[0], dst[1]))

    if nsds is not None:
        for i, segment in enumerate(segments):
            if segment.nsd_id not in nsds:
                raise _invariant(f"segment {i} names unknown NSD '{segment.nsd_id}'")
        for link in links:
            for index, cp_name in ((link.from_segment, link.from_cp), (link.to_segment, link.to_cp)):
                nsd = nsds[segments[index].nsd_id]
                if nsd.cp(cp_name) is None:
                    raise _invariant(f"chain endpoint '{index}.{cp_name}' is not a cp of '{nsd.id}'")

    if not segments_connected(len(segments), links):
        raise _invariant("chain graph disconnected")
    return Nsid(nsid_id, tuple(segments), tuple(links), tuple(unknown))


def segments_connected(count: int, links: Sequence[ChainLink]) -> bool:
    graph = nx.Graph()
    graph.add_nodes_from(range(count))
    graph.add_edges_from((link.from_segment, link.to_segment) for link in links)
    return nx.is_connected(graph)


def parse_vnfd(text: str) -> Vnfd:
    return vnfd_from_record(parse_document(text))


def parse_nsd(text: str, vnfds: Mapping[str, Vnfd] | None = None) -> Nsd:
    """Parse an NSD; with `vnfds` given, cp interfaces are checked against them."""
    return nsd_from_record(parse_document(text), vnfds)


def parse_nsid(text: str, nsds: Mapping[str, Nsd] | None = None) -> Nsid:
    """Parse an NSID; with `nsds` given, segment NSDs and chain cps must resolve."""
    return nsid_from_record(parse_document(text), nsds)


def parse_descriptor(text: str) -> Vnfd | Nsd | Nsid:
    record = parse_document(text)
    kind = record.get("kind")
    if kind == "vnfd":
        return vnfd_from_record(record)
    if kind == "nsd":
        return nsd_from_record(record)
    if kind == "nsid":
        return nsid_from_record(record)
    raise _invariant(f"unsupported descriptor kind {kind!r}")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def vnfd_to_record(vnfd: Vnfd) -> dict[str, Any]:
    record: dict[str, Any] = {"kind": "vnfd", "id": vnfd.id, "mgmt-network": vnfd.mgmt_network_name}
    record["vdus"] = [
        {
            "id": vdu.id,
            "image": vdu.image,
            "vcpus": vdu.flavor.vcpus,
            "memory-mb": vdu.flavor.memory_mb,
            "storage-gb": vdu.flavor.storage_gb,
            "interfaces": [
                {"name": iface.name, "network": iface.network} if iface.network else {"name": iface.name}
                for iface in vdu.interfaces
            ],
        }
        for vdu in vnfd.vdus
    ]
    if vnfd.internal_vls:
        record["internal-vls"] = [{"name": vl.name} for vl in vnfd.internal_vls]
    if vnfd.metric_specs:
        record["metrics"] = [
            {"name": m.name, "vdu": m.target_vdu, "period": m.collection_period_s}
            for m in vnfd.metric_specs
        ]
    for day, params in vnfd.lifecycle_hooks:
        record[day] = dict(params)
    return record


def serialize_vnfd(vnfd: Vnfd) -> str:
    return dump_document(vnfd_to_record(vnfd))


def serialize_nsd(nsd: Nsd) -> str:
    record: dict[str, Any] = {"kind": "nsd", "id": nsd.id, "vnfds": list(nsd.constituent_vnfds)}
    if nsd.external_cps:
        record["cps"] = [
            {"name": cp.name, "vnfd": cp.vnfd_id, "interface": cp.interface} for cp in nsd.external_cps
        ]
    return dump_document(record)


def serialize_nsid(nsid: Nsid) -> str:
    record: dict[str, Any] = {
        "kind": "nsid",
        "id": nsid.id,
        "segments": [
            {"nsd": s.nsd_id, "vim": s.vim_affinity} if s.vim_affinity else {"nsd": s.nsd_id}
            for s in nsid.segments
        ],
    }
    if nsid.chain_links:
        record["chain"] = [
            {"from": f"{link.from_segment}.{link.from_cp}", "to": f"{link.to_segment}.{link.to_cp}"}
            for link in nsid.chain_links
        ]
    return dump_document(record)


# ---------------------------------------------------------------------------
# Package validation and budgets
# ---------------------------------------------------------------------------

LEVEL_ORDER = {"vnfd": 0, "nsd": 1, "nsid": 2}


class Finding(NamedTuple):
    level: str
    id: str
    code: str
    detail: str

    def line(self) -> str:
        return f"{self.level} {self.id} {self.code} {self.detail}"


class ValidationReport(NamedTuple):
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings

    def lines(self) -> list[str]:
        return [finding.line() for finding in self.findings]


def _duplicates(ids: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    dupes: list[str] = []
    for item in ids:
        if item in seen and item not in dupes:
            dupes.append(item)
        seen.add(item)
    return dupes


def validate_package(vnfds: Sequence[Vnfd], nsds: Sequence[Nsd], nsid: Nsid | None) -> ValidationReport:
    """Cross-level referential integrity. Findings are data, never raised.

    With no NSID only the VNFD and NSD levels are checked.
    """
    findings: list[Finding] = []
    for level, ids in (("vnfd", [v.id for v in vnfds]), ("nsd", [n.id for n in nsds])):
        for dup in _duplicates(ids):
            findings.append(Finding(level, dup, "duplicate-id", f"id '{dup}' declared more than once"))

    vnfd_index = {v.id: v for v in vnfds}
    nsd_index = {n.id: n for n in nsds}

    for vnfd in vnfds:
        for key in vnfd.unknown_keys:
            findings.append(Finding("vnfd", vnfd.id, "unknown-key", key))

    for nsd in nsds:
        for key in nsd.unknown_keys:
            findings.append(Finding("nsd", nsd.id, "unknown-key", key))
        for vnfd_id in nsd.constituent_vnfds:
            if vnfd_id not in vnfd_index:
                findings.append(Finding("nsd", nsd.id, "unresolved-constituent", f"vnfd '{vnfd_id}'"))
        for cp in nsd.external_cps:
            vnfd = vnfd_index.get(cp.vnfd_id)
            if vnfd is None:
                continue
            problem = _cp_interface_problem(vnfd, cp)
            if problem:
                findings.append(Finding("nsd", nsd.id, "unresolved-cp-interface", problem))

    if nsid is not None:
        for key in nsid.unknown_keys:
            findings.append(Finding("nsid", nsid.id, "unknown-key", key))
        for i, segment in enumerate(nsid.segments):
            if segment.nsd_id not in nsd_index:
                findings.append(Finding("nsid", nsid.id, "unresolved-segment", f"segment {i} nsd '{segment.nsd_id}'"))
        for link in nsid.chain_links:
            for index, cp_name in ((link.from_segment, link.from_cp), (link.to_segment, link.to_cp)):
                nsd = nsd_index.get(nsid.segments[index].nsd_id)
                if nsd is not None and nsd.cp(cp_name) is None:
                    findings.append(
                        Finding("nsid", nsid.id, "unresolved-chain-cp", f"'{index}.{cp_name}' not a cp of '{nsd.id}'")
                    )

    findings.sort(key=lambda f: (LEVEL_ORDER[f.level], f.id, f.code, f.detail))
    return ValidationReport(tuple(findings))


def validate(package: DescriptorPackage) -> ValidationReport:
    return validate_package(package.vnfds, package.nsds, package.nsid)


def segment_budget(package: DescriptorPackage, index: int) -> Resources:
    """Flavor sum over every VDU the given NSID segment would instantiate."""
    nsd = package.nsd(package.nsid.segments[index].nsd_id)
    total = Resources()
    for vnfd_id in nsd.constituent_vnfds:
        total = total + package.vnfd(vnfd_id).flavor_total()
    return total


def resource_budget(package: DescriptorPackage, default_vim: str | None = None) -> dict[str, Resources]:
    """Per-VIM totals of VDU flavors, grouped by segment affinity."""
    default_vim = default_vim or config.DEFAULT_VIM
    budget: dict[str, Resources] = {}
    for i, segment in enumerate(package.nsid.segments):
        vim = segment.vim_affinity or default_vim
        if vim is None:
            raise BudgetError(f"segment {i} ({segment.nsd_id}) has no VIM affinity and no default VIM is configured")
        budget[vim] = budget.get(vim, Resources()) + segment_budget(package, i)
    return budget


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def _expand(paths: Iterable[str | Path]) -> list[Path]:
    files: list[Path] = []
    seen: set[Path] = set()
    for raw in paths:
        path = Path(raw)
        found = sorted(p for p in path.iterdir() if p.suffix in DESCRIPTOR_SUFFIXES) if path.is_dir() else [path]
        for file in found:
            if file.resolve() not in seen:
                seen.add(file.resolve())
                files.append(file)
    return files


def split_levels(descriptors: Iterable[Vnfd | Nsd | Nsid]) -> tuple[list[Vnfd], list[Nsd], list[Nsid]]:
    vnfds: list[Vnfd] = []
    nsds: list[Nsd] = []
    nsids: list[Nsid] = []
    for descriptor in descriptors:
        if isinstance(descriptor, Vnfd):
            vnfds.append(descriptor)
        elif isinstance(descriptor, Nsd):
            nsds.append(descriptor)
        else:
            nsids.append(descriptor)
    return vnfds, nsds, nsids


def assemble_package(descriptors: Iterable[Vnfd | Nsd | Nsid]) -> DescriptorPackage:
    vnfds, nsds, nsids = split_levels(descriptors)
    if len(nsids) != 1:
        raise ParseError("invariant", f"a package needs exactly one nsid, found {len(nsids)}")
    return DescriptorPackage(tuple(vnfds), tuple(nsds), nsids[0])


def package_from_documents(texts: Iterable[str]) -> DescriptorPackage:
    return assemble_package(parse_descriptor(text) for text in texts)


def load_descriptors(paths: Iterable[str | Path]) -> list[Vnfd | Nsd | Nsid]:
    descriptors: list[Vnfd | Nsd | Nsid] = []
    for path in _expand(paths):
        text = path.read_text(encoding="utf-8")
        try:
            descriptors.append(parse_descriptor(text))
        except ParseError as e:
            logger.error(f"Failed to parse {path.name}: {e}")
            raise
    return descriptors


def load_package(paths: Iterable[str | Path]) -> DescriptorPackage:
    """Read descriptor files (or directories of them) into a package.

    Cross-level references are not checked here; run validate_package.
    """
    package = assemble_package(load_descriptors(paths))
    logger.info(f"Loaded package {package.nsid.id}: {len(package.vnfds)} vnfd(s), {len(package.nsds)} nsd(s)")
    return package


def validate_files(paths: Iterable[str | Path]) -> ValidationReport:
    """Validate whatever levels the files supply; a package without an NSID is checked below it."""
    vnfds, nsds, nsids = split_levels(load_descriptors(paths))
    if len(nsids) > 1:
        raise ParseError("invariant", f"a package needs at most one nsid, found {len(nsids)}")
    return validate_package(vnfds, nsds, nsids[0] if nsids else None)


def load_nsid_package(nsid_path: str | Path) -> DescriptorPackage:
    """Package an NSID file with the VNFDs and NSDs found next to it.

    Other NSIDs in the same directory are ignored.
    """
    nsid_path = Path(nsid_path)
    nsid = parse_nsid(nsid_path.read_text(encoding="utf-8"))
    descriptors: list[Vnfd | Nsd | Nsid] = [nsid]
    for path in _expand([nsid_path.parent]):
        if path.resolve() == nsid_path.resolve():
            continue
        descriptor = parse_descriptor(path.read_text(encoding="utf-8"))
        if not isinstance(descriptor, Nsid):
            descriptors.append(descriptor)
    return assemble_package(descriptors)
