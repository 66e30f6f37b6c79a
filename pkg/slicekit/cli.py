"""Operator command line.

Every subcommand is a thin adapter over one engine operation. Output goes
to stdout as an aligned table (default) or as space-separated line records
(``--format=lines``); errors go to stderr as ``<ErrorName>: <detail>``.

Exit codes: 0 success, 1 domain error, 2 usage error.

When SLICEKIT_STATE names a file, the engine is loaded from it before the
command (if it exists) and saved back after every command that can change
it, failed ones included.
"""
import argparse
import contextlib
import io
import logging
import sys
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

from slicekit import config, registry
from slicekit.descriptor import (
    Scalar,
    load_nsid_package,
    load_package,
    resource_budget,
    validate_files,
)
from slicekit.errors import SliceKitError, ValidationFailed
from slicekit.nfvi import VimCapacity, VmRecord
from slicekit.registry import Engine
from slicekit.telemetry import MetricSample, format_number, parse_scenario, run_scenario
from slicekit.tenancy import CellConfig

logger = logging.getLogger(__name__)


class CommandResult(NamedTuple):
    exit_code: int
    stdout: str
    stderr: str


class Section(NamedTuple):
    headers: tuple[str, ...] | None
    rows: list[tuple]


class UsageError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(2, f"{self.format_usage()}{self.prog}: error: {message}\n")

    def exit(self, status: int = 0, message: str | None = None):
        raise UsageError(status, message or "")


def _cell(value: object) -> str:
    return "-" if value is None else str(value)


def render(sections: Sequence[Section], fmt: str) -> str:
    blocks = []
    for section in sections:
        rows = [tuple(_cell(v) for v in row) for row in section.rows]
        if fmt == "lines" or section.headers is None:
            blocks.append("\n".join(" ".join(row) for row in rows))
            continue
        table = [section.headers] + rows
        widths = [max(len(row[i]) for row in table) for i in range(len(section.headers))]
        blocks.append("\n".join(
            "  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in table
        ))
    separator = "\n" if fmt == "lines" else "\n\n"
    text = separator.join(b for b in blocks if b)
    return text + "\n" if text else ""


def _pairs(values: Sequence[str] | None, what: str) -> dict[str, str]:
    out = {}
    for value in values or []:
        key, sep, rest = value.partition("=")
        if not sep or not key or not rest:
            raise ValueError(f"{what} must look like key=value, got {value!r}")
        out[key] = rest
    return out


def _scalar(value: str) -> Scalar:
    return int(value) if value.isdigit() else value


VM_HEADERS = ("vm", "vim", "vnfd", "vdu", "mgmt_ip", "state")


def _vm_row(vm: VmRecord) -> tuple:
    return (vm.vm_id, vm.vim, vm.vnfd_id, vm.vdu_id, vm.mgmt_ip, vm.state.value)


# -- vim -----------------------------------------------------------------------

VIM_HEADERS = ("vim", "domain", "vcpus", "memory_mb", "storage_gb", "mgmt_subnet")


def _vim_row(vim) -> tuple:
    c = vim.capacity
    return (vim.name, vim.domain, c.vcpus, c.memory_mb, c.storage_gb, c.mgmt_subnet)


def cmd_vim_create(engine: Engine, args) -> list[Section]:
    capacity = VimCapacity(args.vcpus, args.memory_mb, args.storage_gb, args.subnet)
    vim = engine.vims.create_vim(args.name, capacity, args.domain)
    return [Section(VIM_HEADERS, [_vim_row(vim)])]


def cmd_vim_list(engine: Engine, args) -> list[Section]:
    return [Section(VIM_HEADERS, [_vim_row(vim) for vim in engine.vims.all()])]


def cmd_vim_usage(engine: Engine, args) -> list[Section]:
    if args.history:
        return [Section(None, [(line,) for line in engine.vims.get(args.name).export_history()])]
    usage = engine.vims.vim_usage(args.name)
    rows = [
        (resource, getattr(usage.allocated, attr), getattr(usage.capacity, attr), getattr(usage.free, attr))
        for resource, attr in (("vcpus", "vcpus"), ("memory_mb", "memory_mb"), ("storage_gb", "storage_gb"))
    ]
    return [
        Section(("resource", "allocated", "capacity", "free"), rows),
        Section(VM_HEADERS, [_vm_row(vm) for vm in usage.vms]),
    ]


# -- pkg -----------------------------------------------------------------------

def cmd_pkg_onboard(engine: Engine, args) -> list[Section]:
    package = load_package(args.paths)
    package_id = engine.orchestrator.onboard_package(package)
    return [Section(("package", "nsid"), [(package_id, package.nsid.id)])]


def cmd_pkg_validate(engine: Engine, args) -> list[Section]:
    report = validate_files(args.paths)
    if not report.ok:
        raise ValidationFailed(report)
    return [Section(None, [("ok",)])]


def cmd_pkg_budget(engine: Engine, args) -> list[Section]:
    budget = resource_budget(load_package(args.paths), args.default_vim)
    rows = [(vim, r.vcpus, r.memory_mb, r.storage_gb) for vim, r in budget.items()]
    return [Section(("vim", "vcpus", "memory_mb", "storage_gb"), rows)]


# -- ns / slice ------------------------------------------------------------------

def cmd_ns_create(engine: Engine, args) -> list[Section]:
    instance = engine.orchestrator.instantiate_ns(args.nsd, args.vim)
    vms = [engine.vims.find_vm(vm_id) for vm_id in instance.vm_ids]
    return [
        Section(("ns", "nsd", "vim", "state"), [(instance.ns_id, instance.nsd_id, instance.vim_id, instance.state.value)]),
        Section(VM_HEADERS, [_vm_row(vm) for vm in vms]),
    ]


def _slice_row(engine: Engine, slice_id: str) -> tuple:
    s = engine.orchestrator.get_slice(slice_id)
    return (s.slice_id, s.nsid_id, s.state.value, len(s.ns_instances), s.tenant_ref)


SLICE_HEADERS = ("slice", "nsid", "state", "ns", "tenant")


def cmd_slice_create(engine: Engine, args) -> list[Section]:
    package = load_nsid_package(args.nsid)
    engine.orchestrator.onboard_package(package)
    plan = engine.orchestrator.plan_placement(package.nsid.id, _pairs(args.vim, "--vim"))
    slice_instance = engine.orchestrator.instantiate_slice(package.nsid.id, plan)
    return [
        Section(SLICE_HEADERS, [_slice_row(engine, slice_instance.slice_id)]),
        Section(VM_HEADERS, [_vm_row(vm) for vm in engine.orchestrator.slice_vms(slice_instance.slice_id)]),
    ]


def cmd_slice_day1(engine: Engine, args) -> list[Section]:
    engine.orchestrator.day1_configure(args.slice)
    return [Section(SLICE_HEADERS, [_slice_row(engine, args.slice)])]


def cmd_slice_day2(engine: Engine, args) -> list[Section]:
    params = {k: _scalar(v) for k, v in _pairs(args.params, "parameter").items()}
    engine.orchestrator.day2_reconfigure(args.slice, args.vnfd, params)
    return [Section(SLICE_HEADERS, [_slice_row(engine, args.slice)])]


def cmd_slice_terminate(engine: Engine, args) -> list[Section]:
    engine.orchestrator.terminate_slice(args.slice)
    return [Section(SLICE_HEADERS, [_slice_row(engine, args.slice)])]


def cmd_slice_list(engine: Engine, args) -> list[Section]:
    if args.events:
        if args.slice:
            engine.orchestrator.get_slice(args.slice)
        return [Section(None, [(line,) for line in engine.orchestrator.export_events(args.slice)])]
    if args.slice:
        return [Section(VM_HEADERS, [_vm_row(vm) for vm in engine.orchestrator.slice_vms(args.slice)])]
    return [Section(SLICE_HEADERS, [_slice_row(engine, s.slice_id) for s in engine.orchestrator.list_slices()])]


# -- tenant / prb ----------------------------------------------------------------

def _parse_cell(value: str) -> CellConfig:
    parts = value.split(":")
    if not 1 <= len(parts) <= 3 or not parts[0]:
        raise ValueError(f"cell must look like id[:prbs[:rat]], got {value!r}")
    prbs = int(parts[1]) if len(parts) > 1 else config.TOTAL_PRBS
    rat = parts[2] if len(parts) > 2 else "lte"
    return CellConfig(parts[0], prbs, rat)


def cmd_tenant_mno(engine: Engine, args) -> list[Section]:
    if not (args.cell and args.plmn in engine.tenants.mnos):
        engine.tenants.create_mno(args.plmn)
    for value in args.cell or []:
        engine.tenants.add_cell(args.plmn, _parse_cell(value))
    mno = engine.tenants.mno(args.plmn)
    rows = [(mno.plmn_id, c.cell_id, c.total_prbs, c.rat) for c in mno.cells.values()]
    return [Section(("plmn", "cell", "prbs", "rat"), rows)]


def cmd_tenant_mvno(engine: Engine, args) -> list[Section]:
    mvno = engine.tenants.create_mvno(args.plmn, args.mvno, args.quota)
    return [Section(("plmn", "mvno", "quota"), [(args.plmn, mvno.mvno_id, mvno.quota)])]


def cmd_tenant_slice(engine: Engine, args) -> list[Section]:
    if args.instance is not None:
        engine.orchestrator.get_slice(args.instance)
    ran_slice = engine.tenants.create_ran_slice(args.plmn, args.mvno, args.slice, args.share, args.instance)
    if args.instance is not None:
        engine.orchestrator.set_tenant_ref(args.instance, f"{args.plmn}/{args.mvno}")
    row = (args.plmn, args.mvno, ran_slice.slice_id, ran_slice.guaranteed_share, ran_slice.attached_slice_instance)
    return [Section(("plmn", "mvno", "slice", "share", "instance"), [row])]


def cmd_tenant_attach(engine: Engine, args) -> list[Section]:
    engine.tenants.attach_ue(args.ue, args.plmn, args.mvno, args.slice)
    return [Section(("ue", "plmn", "mvno", "slice"), [(args.ue, args.plmn, args.mvno, args.slice)])]


def cmd_tenant_detach(engine: Engine, args) -> list[Section]:
    engine.tenants.detach_ue(args.ue)
    return [Section(("ue", "state"), [(args.ue, "detached")])]


def cmd_prb_allocate(engine: Engine, args) -> list[Section]:
    demands = {key: int(value) for key, value in _pairs(args.demands, "demand").items()}
    cell = None
    if args.cell is not None:
        mno = engine.tenants.mno(args.plmn)
        if args.cell not in mno.cells:
            raise ValueError(f"unknown cell {args.cell!r} on {args.plmn}")
        cell = mno.cells[args.cell]
    grants = engine.tenants.allocate_prbs(args.plmn, demands, cell)
    return [Section(("slice", "demand", "grant"), [(key, demands[key], grants[key]) for key in demands])]


# -- fabric / metric / scenario ----------------------------------------------------

def cmd_fabric_report(engine: Engine, args) -> list[Section]:
    if args.edges:
        return [Section(None, [(line,) for line in engine.fabric.export_lines()])]
    return [Section(None, [(line,) for line in engine.fabric.isolation_report().lines()])]


def cmd_metric_record(engine: Engine, args) -> list[Section]:
    sample = MetricSample(args.vm, args.metric, args.ts, args.value)
    engine.metrics.record(sample)
    return [Section(None, [(sample.csv().replace(",", " "),)])]


def cmd_metric_query(engine: Engine, args) -> list[Section]:
    samples = engine.metrics.query_range(args.vm, args.metric, args.t0, args.t1)
    if args.csv:
        return [Section(None, [(s.csv(),) for s in samples])]
    return [Section(("ts", "value"), [(format_number(s.logical_ts), format_number(s.value)) for s in samples])]


def cmd_metric_summarize(engine: Engine, args) -> list[Section]:
    summary = engine.metrics.summarize(args.vm, args.metric)
    return [Section(("vm", "metric", "max", "mean", "count"), [(args.vm, args.metric, *summary)])]


def cmd_scenario_run(engine: Engine, args) -> list[Section]:
    scenario = parse_scenario(Path(args.path).read_text(encoding="utf-8"))
    series = run_scenario(
        engine.metrics, scenario, engine.clock, _pairs(args.bind, "--bind"), engine.metric_specs,
    )
    rows = [
        (vm_id, metric, len(samples), max(s.value for s in samples))
        for vm_id, metrics in series.items()
        for metric, samples in metrics.items()
    ]
    return [Section(("vm", "metric", "samples", "max"), rows)]


# -- state -----------------------------------------------------------------------

def cmd_state_save(engine: Engine, args) -> list[Section]:
    registry.save(engine, args.path)
    return [Section(None, [(f"saved {args.path}",)])]


def cmd_state_load(engine: Engine, args) -> list[Section]:
    engine.load_state(registry.load(args.path).state_dict())
    return [Section(None, [(f"loaded {args.path}",)])]


READ_ONLY = {
    cmd_vim_list, cmd_vim_usage, cmd_pkg_validate, cmd_pkg_budget, cmd_slice_list,
    cmd_fabric_report, cmd_metric_query, cmd_metric_summarize, cmd_state_save,
}


FORMATS = ("table", "lines")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slicekit", description="Desk-scale network slice orchestration")
    parser.add_argument("--format", choices=FORMATS, default="table")
    # accepted after the subcommand too; only overrides when given there
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=FORMATS, default=argparse.SUPPRESS, help="table (default) or lines")
    groups = parser.add_subparsers(dest="group", required=True)

    def command(group, name: str, handler: Callable, help_text: str) -> argparse.ArgumentParser:
        sub = group.add_parser(name, help=help_text, parents=[common])
        sub.set_defaults(handler=handler)
        return sub

    vim = groups.add_parser("vim", help="simulated VIMs").add_subparsers(dest="command", required=True)
    p = command(vim, "create", cmd_vim_create, "register a VIM")
    p.add_argument("name")
    p.add_argument("--vcpus", type=int, required=True)
    p.add_argument("--memory-mb", type=int, required=True)
    p.add_argument("--storage-gb", type=int, required=True)
    p.add_argument("--subnet", required=True)
    p.add_argument("--domain", choices=("core", "ran"), default="core")
    command(vim, "list", cmd_vim_list, "list VIMs")
    p = command(vim, "usage", cmd_vim_usage, "allocated/capacity and VMs of a VIM")
    p.add_argument("name")
    p.add_argument("--history", action="store_true", help="print the ledger history instead")

    pkg = groups.add_parser("pkg", help="descriptor packages").add_subparsers(dest="command", required=True)
    for name, handler, help_text in (
        ("onboard", cmd_pkg_onboard, "validate and store a package"),
        ("validate", cmd_pkg_validate, "check cross-level references"),
        ("budget", cmd_pkg_budget, "per-VIM resource totals"),
    ):
        p = command(pkg, name, handler, help_text)
        p.add_argument("paths", nargs="+", help="descriptor files or directories")
    p.add_argument("--default-vim", default=None)

    ns = groups.add_parser("ns", help="network services").add_subparsers(dest="command", required=True)
    p = command(ns, "create", cmd_ns_create, "instantiate one NSD on a VIM")
    p.add_argument("nsd")
    p.add_argument("vim")

    sl = groups.add_parser("slice", help="slice lifecycle").add_subparsers(dest="command", required=True)
    p = command(sl, "create", cmd_slice_create, "instantiate an NSID file")
    p.add_argument("nsid", help="NSID descriptor file")
    p.add_argument("--vim", action="append", metavar="SEGMENT=VIM")
    for name, handler in (("day1", cmd_slice_day1), ("terminate", cmd_slice_terminate)):
        command(sl, name, handler, f"{name} a slice").add_argument("slice")
    p = command(sl, "day2", cmd_slice_day2, "record a day-2 reconfiguration")
    p.add_argument("slice")
    p.add_argument("vnfd")
    p.add_argument("params", nargs="*", metavar="KEY=VALUE")
    p = command(sl, "list", cmd_slice_list, "list slices, one slice's VMs or the event log")
    p.add_argument("slice", nargs="?")
    p.add_argument("--events", action="store_true")

    tenant = groups.add_parser("tenant", help="MNO/MVNO tenant tree").add_subparsers(dest="command", required=True)
    p = command(tenant, "mno", cmd_tenant_mno, "create an MNO or add cells to it")
    p.add_argument("plmn")
    p.add_argument("--cell", action="append", metavar="ID[:PRBS[:RAT]]")
    p = command(tenant, "mvno", cmd_tenant_mvno, "create an MVNO under an MNO")
    p.add_argument("plmn")
    p.add_argument("mvno")
    p.add_argument("--quota", default="1")
    p = command(tenant, "slice", cmd_tenant_slice, "create a RAN slice")
    for name in ("plmn", "mvno", "slice", "share"):
        p.add_argument(name)
    p.add_argument("--instance", default=None, help="Running slice instance served by this RAN slice")
    p = command(tenant, "attach", cmd_tenant_attach, "attach a UE")
    for name in ("ue", "plmn", "mvno", "slice"):
        p.add_argument(name)
    command(tenant, "detach", cmd_tenant_detach, "detach a UE").add_argument("ue")

    prb = groups.add_parser("prb", help="radio resources").add_subparsers(dest="command", required=True)
    p = command(prb, "allocate", cmd_prb_allocate, "share a cell's PRBs among RAN slices")
    p.add_argument("plmn")
    p.add_argument("demands", nargs="+", metavar="SLICE=PRBS")
    p.add_argument("--cell", default=None)

    fabric = groups.add_parser("fabric", help="SDN fabric").add_subparsers(dest="command", required=True)
    p = command(fabric, "report", cmd_fabric_report, "slice VLANs and isolation check")
    p.add_argument("--edges", action="store_true", help="print graph edges instead")

    metric = groups.add_parser("metric", help="metric store").add_subparsers(dest="command", required=True)
    p = command(metric, "record", cmd_metric_record, "append one sample")
    p.add_argument("vm")
    p.add_argument("metric")
    p.add_argument("ts", type=float)
    p.add_argument("value", type=float)
    p = command(metric, "query", cmd_metric_query, "samples in [t0, t1]")
    p.add_argument("vm")
    p.add_argument("metric")
    p.add_argument("t0", type=float)
    p.add_argument("t1", type=float)
    p.add_argument("--csv", action="store_true")
    p = command(metric, "summarize", cmd_metric_summarize, "max, mean and count of a series")
    p.add_argument("vm")
    p.add_argument("metric")

    scenario = groups.add_parser("scenario", help="workload replay").add_subparsers(dest="command", required=True)
    p = command(scenario, "run", cmd_scenario_run, "replay a scenario file")
    p.add_argument("path")
    p.add_argument("--bind", action="append", metavar="ALIAS=VM")

    state = groups.add_parser("state", help="snapshots").add_subparsers(dest="command", required=True)
    command(state, "save", cmd_state_save, "write a snapshot").add_argument("path")
    command(state, "load", cmd_state_load, "replace the session with a snapshot").add_argument("path")
    return parser


def _session(state_path: str | None) -> Engine:
    if state_path and Path(state_path).exists():
        return registry.load(state_path)
    return Engine()


def dispatch(argv: Sequence[str], engine: Engine | None = None, state_path: str | None = None) -> CommandResult:
    """Run one command and capture its result.

    With no engine given, the session comes from `state_path` (default
    SLICEKIT_STATE) and is written back after any mutating command.
    """
    out, err = io.StringIO(), io.StringIO()
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            args = build_parser().parse_args(list(argv))
    except UsageError as e:
        return CommandResult(e.status, out.getvalue(), err.getvalue() + e.message)

    persist = engine is None
    state_path = state_path if state_path is not None else config.STATE_PATH
    try:
        if engine is None:
            engine = _session(state_path)
        with engine.lock:
            try:
                sections = args.handler(engine, args)
            finally:
                # failed mutations can still change state (a Failed slice)
                if persist and state_path and args.handler not in READ_ONLY:
                    registry.save(engine, state_path)
    except ValidationFailed as e:
        findings = render([Section(None, [(line,) for line in e.report.lines()])], "lines")
        return CommandResult(1, findings, f"{e.name}: {e}\n")
    except SliceKitError as e:
        logger.info(f"{' '.join(argv)} failed: {e.name}: {e}")
        return CommandResult(1, "", f"{e.name}: {e}\n")
    except (ValueError, OSError) as e:
        return CommandResult(1, "", f"{type(e).__name__}: {e}\n")
    return CommandResult(0, render(sections, args.format), "")


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=config.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    result = dispatch(sys.argv[1:] if argv is None else argv)
    sys.stdout.write(result.stdout)
    sys.stderr.write(result.stderr)
    return result.exit_code
