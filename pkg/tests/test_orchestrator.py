"""Tests for onboarding, placement, slice instantiation and lifecycle."""
import random

import pytest

from conftest import EPC_ENB, GOLDEN, add_reference_vims
from slicekit.descriptor import DescriptorPackage, Resources, load_package, parse_nsid
from slicekit.errors import (
    InvalidState,
    NoFeasiblePlacement,
    QuotaExceeded,
    SliceKitError,
    TenantAttached,
    UnknownSlice,
    UnknownVnfd,
    ValidationFailed,
)
from slicekit.lifecycle import LifecycleState
from slicekit.nfvi import SimVim, VimCapacity, VmState
from slicekit.orchestrator import PlacementPlan
from slicekit.registry import Engine

NSID = "epc-enb-slice"


def ledgers(engine: Engine) -> dict:
    """Everything a VIM owns except its id counter."""
    out = {}
    for vim in engine.vims.all():
        state = vim.state_dict()
        state.pop("next_seq")
        out[vim.name] = state
    return out


def test_reference_slice_matches_golden_event_log(running_slice):
    """Test that the reference slice emits the golden event log."""
    engine, slice_id = running_slice
    expected = (GOLDEN / "epc-enb-slice.events").read_text().splitlines()
    assert engine.orchestrator.export_events() == expected


def test_reference_slice_shape(running_slice):
    """Test that the reference slice has two NS instances and five VMs."""
    engine, slice_id = running_slice
    slice_instance = engine.orchestrator.get_slice(slice_id)
    assert slice_instance.state is LifecycleState.RUNNING
    assert len(slice_instance.ns_instances) == 2
    assert len(slice_instance.chain_edges) == 1
    vms = engine.orchestrator.slice_vms(slice_id)
    assert len(vms) == 5
    assert [vm.vdu_id for vm in vms if vm.vim == "vim-cn"] == ["hss", "mme", "spgw-c", "spgw-u"]
    assert [vm.vdu_id for vm in vms if vm.vim == "vim-ran"] == ["enb"]
    assert engine.vims.vim_usage("vim-cn").allocated == Resources(4, 65536, 80)
    for ns_id in slice_instance.ns_instances:
        assert engine.orchestrator.ns_instances[ns_id].state is LifecycleState.RUNNING


def test_onboarding_is_idempotent(epc_engine):
    """Test that onboarding the same package twice returns the same id."""
    package = load_package([EPC_ENB])
    first = epc_engine.orchestrator.onboard_package(package)
    assert epc_engine.orchestrator.onboard_package(load_package([EPC_ENB])) == first
    assert len(epc_engine.orchestrator.catalog) == 1
    assert epc_engine.orchestrator.catalog[first].state is LifecycleState.ONBOARDED


def test_dangling_reference_fails_onboarding(engine):
    """Test that a package with findings is refused at onboarding."""
    package = load_package([EPC_ENB])
    broken = DescriptorPackage(package.vnfds[:1], package.nsds, package.nsid)
    with pytest.raises(ValidationFailed) as exc:
        engine.orchestrator.onboard_package(broken)
    assert not exc.value.report.ok
    assert engine.orchestrator.catalog == {}


def test_plan_honors_affinity(epc_engine):
    """Test that placement follows segment affinity."""
    plan = epc_engine.orchestrator.plan_placement(NSID)
    assert plan.assignments == (("epc-nsd", "vim-cn"), ("enb-nsd", "vim-ran"))


def test_plan_without_affinity_uses_first_fit(engine):
    """Test that placement without affinity picks the first VIM with room."""
    engine.vims.create_vim("small", VimCapacity(1, 1024, 10, "10.5.0.0/24"))
    engine.vims.create_vim("big", VimCapacity(16, 262144, 1000, "10.6.0.0/24"))
    package = load_package([EPC_ENB])
    free = parse_nsid(
        "kind: nsid\nid: free\nsegments:\n  - nsd: epc-nsd\n  - nsd: enb-nsd\nchain:\n  - from: 0.s1\n    to: 1.s1\n"
    )
    engine.orchestrator.onboard_package(DescriptorPackage(package.vnfds, package.nsds, free))
    plan = engine.orchestrator.plan_placement("free")
    assert plan.assignments == (("epc-nsd", "big"), ("enb-nsd", "big"))


def test_plan_rejects_undersized_vim(engine):
    """Test that an affinity VIM without room gives NoFeasiblePlacement."""
    engine.vims.create_vim("vim-cn", VimCapacity(8, 32768, 500, "10.0.0.0/24"))
    engine.vims.create_vim("vim-ran", VimCapacity(4, 16384, 100, "10.1.0.0/24"))
    engine.orchestrator.onboard_package(load_package([EPC_ENB]))
    with pytest.raises(NoFeasiblePlacement) as exc:
        engine.orchestrator.plan_placement(NSID)
    assert exc.value.segment == "epc-nsd"


def test_plan_overrides(epc_engine):
    """Test that explicit overrides replace affinity."""
    epc_engine.vims.create_vim("vim-cn2", VimCapacity(8, 131072, 200, "10.2.0.0/24"))
    plan = epc_engine.orchestrator.plan_placement(NSID, {"epc": "vim-cn2"})
    assert plan.vim_for(0) == "vim-cn2"
    assert plan.vim_for(1) == "vim-ran"


def test_instantiate_ns_standalone(epc_engine):
    """Test that an NSD instantiates outside any slice."""
    epc = epc_engine.orchestrator.instantiate_ns("epc-nsd", "vim-cn")
    enb = epc_engine.orchestrator.instantiate_ns("enb-nsd", "vim-ran")
    assert len(epc.vm_ids) == 4
    assert len(enb.vm_ids) == 1
    assert epc.cps == {"s1": "vim-cn-0002"}


def test_instantiate_ns_is_atomic(engine):
    """Test that a failed NS instantiation leaves the VIM untouched."""
    # room for three of the four EPC VDUs
    engine.vims.create_vim("vim-cn", VimCapacity(3, 131072, 200, "10.0.0.0/24"))
    engine.vims.create_vim("vim-ran", VimCapacity(4, 16384, 100, "10.1.0.0/24"))
    engine.orchestrator.onboard_package(load_package([EPC_ENB]))
    before = ledgers(engine)
    with pytest.raises(QuotaExceeded) as exc:
        engine.orchestrator.instantiate_ns("epc-nsd", "vim-cn")
    assert exc.value.resource == "vcpus"
    assert ledgers(engine) == before


def test_second_vim_full_rolls_back_both(epc_engine):
    """Test that a failure on the second VIM rolls back the first."""
    epc_engine.vims.get("vim-ran").allocate_vdu(
        load_package([EPC_ENB]).vnfd("srslte-enb").vdus[0], "srslte-enb", None,
    )
    before = ledgers(epc_engine)
    plan = PlacementPlan(NSID, (("epc-nsd", "vim-cn"), ("enb-nsd", "vim-ran")))
    with pytest.raises(QuotaExceeded):
        epc_engine.orchestrator.instantiate_slice(NSID, plan)
    assert ledgers(epc_engine) == before
    failed = epc_engine.orchestrator.list_slices()[0]
    assert failed.state is LifecycleState.FAILED
    assert failed.ns_instances == []
    assert epc_engine.orchestrator.ns_instances == {}
    assert epc_engine.fabric.graphs == {}
    assert epc_engine.orchestrator.export_events()[-1].endswith("rollback QuotaExceeded")


@pytest.mark.parametrize("failing_call", range(5))
def test_rollback_at_every_vdu(epc_engine, monkeypatch, failing_call):
    """Test that a failure at any VDU leaves every ledger as it was."""
    before = ledgers(epc_engine)
    original = SimVim.allocate_vdu
    calls = {"n": 0}

    def flaky(self, vdu, vnfd_id, slice_id):
        calls["n"] += 1
        if calls["n"] == failing_call + 1:
            raise QuotaExceeded("memory", vdu.flavor.memory_mb, 0, vim=self.name)
        return original(self, vdu, vnfd_id, slice_id)

    monkeypatch.setattr(SimVim, "allocate_vdu", flaky)
    plan = epc_engine.orchestrator.plan_placement(NSID)
    with pytest.raises(QuotaExceeded):
        epc_engine.orchestrator.instantiate_slice(NSID, plan)
    assert ledgers(epc_engine) == before
    assert epc_engine.orchestrator.list_slices()[0].state is LifecycleState.FAILED


def test_step_ordering_in_event_log(running_slice):
    """Test that VMs, NS instances and chains appear in that order."""
    engine, slice_id = running_slice
    kinds = [line.split(" ")[2] for line in engine.orchestrator.export_events(slice_id)]
    last_vm = max(i for i, k in enumerate(kinds) if k == "vm-created")
    first_ns = kinds.index("ns-registered")
    last_ns = max(i for i, k in enumerate(kinds) if k == "ns-registered")
    assert last_vm < first_ns
    assert last_ns < kinds.index("chain-resolved")


def test_single_segment_slice(engine):
    """Test that a one-segment slice instantiates."""
    add_reference_vims(engine)
    package = load_package([EPC_ENB])
    single = parse_nsid("kind: nsid\nid: enb-only\nsegments:\n  - nsd: enb-nsd\n    vim: vim-ran\n")
    engine.orchestrator.onboard_package(DescriptorPackage(package.vnfds, package.nsds, single))
    slice_instance = engine.orchestrator.instantiate_slice("enb-only", engine.orchestrator.plan_placement("enb-only"))
    assert len(slice_instance.ns_instances) == 1
    assert slice_instance.chain_edges == []
    assert slice_instance.state is LifecycleState.DAY0_DONE


def test_day1_twice_is_invalid(running_slice):
    """Test that day-1 on a Running slice raises InvalidState."""
    engine, slice_id = running_slice
    config_events = [e for e in engine.orchestrator.export_events(slice_id) if " config day1 " in e]
    assert len(config_events) == 5
    with pytest.raises(InvalidState):
        engine.orchestrator.day1_configure(slice_id)


def test_day2_reconfigure(running_slice):
    """Test that day-2 logs parameters and checks the VNFD."""
    engine, slice_id = running_slice
    before = len(engine.orchestrator.events)
    for level in ("debug", "info", "warn"):
        engine.orchestrator.day2_reconfigure(slice_id, "oai-epc", {"log-level": level})
    tail = engine.orchestrator.export_events(slice_id)[-3:]
    assert [line.split(" ", 3)[3] for line in tail] == [
        "day2 oai-epc log-level=debug", "day2 oai-epc log-level=info", "day2 oai-epc log-level=warn",
    ]
    assert len(engine.orchestrator.events) == before + 3
    assert engine.orchestrator.slice_state(slice_id) is LifecycleState.RUNNING
    with pytest.raises(UnknownVnfd):
        engine.orchestrator.day2_reconfigure(slice_id, "ghost", {})


def test_terminate_restores_ledgers(epc_engine):
    """Test that termination returns every VIM to its prior usage."""
    pristine = {vim.name: vim.usage().allocated for vim in epc_engine.vims.all()}
    orchestrator = epc_engine.orchestrator
    slice_instance = orchestrator.instantiate_slice(NSID, orchestrator.plan_placement(NSID))
    orchestrator.day1_configure(slice_instance.slice_id)
    orchestrator.terminate_slice(slice_instance.slice_id)
    assert {vim.name: vim.usage().allocated for vim in epc_engine.vims.all()} == pristine
    assert orchestrator.slice_state(slice_instance.slice_id) is LifecycleState.TERMINATED
    assert all(vm.state is VmState.RELEASED for vm in orchestrator.slice_vms(slice_instance.slice_id))
    assert slice_instance.slice_id not in epc_engine.fabric.graphs
    with pytest.raises(InvalidState):
        orchestrator.terminate_slice(slice_instance.slice_id)
    with pytest.raises(InvalidState):
        orchestrator.day2_reconfigure(slice_instance.slice_id, "oai-epc", {})


def test_terminate_from_day0(epc_engine):
    """Test that a slice can be terminated before day-1."""
    orchestrator = epc_engine.orchestrator
    slice_instance = orchestrator.instantiate_slice(NSID, orchestrator.plan_placement(NSID))
    orchestrator.terminate_slice(slice_instance.slice_id)
    assert orchestrator.slice_state(slice_instance.slice_id) is LifecycleState.TERMINATED


def test_terminate_leaves_other_slice_untouched(engine):
    """Test that terminating one slice keeps the other running."""
    engine.vims.create_vim("vim-cn", VimCapacity(16, 262144, 400, "10.0.0.0/24"))
    engine.vims.create_vim("vim-ran", VimCapacity(4, 32768, 100, "10.1.0.0/24"), "ran")
    engine.orchestrator.onboard_package(load_package([EPC_ENB]))
    orchestrator = engine.orchestrator
    first = orchestrator.instantiate_slice(NSID, orchestrator.plan_placement(NSID))
    second = orchestrator.instantiate_slice(NSID, orchestrator.plan_placement(NSID))
    orchestrator.terminate_slice(first.slice_id)
    assert all(vm.state is VmState.ACTIVE for vm in orchestrator.slice_vms(second.slice_id))
    assert engine.vims.vim_usage("vim-cn").allocated == Resources(4, 65536, 80)


def test_terminate_unknown_slice(engine):
    """Test that terminating an unknown slice raises UnknownSlice."""
    with pytest.raises(UnknownSlice):
        engine.orchestrator.terminate_slice("slice-9999")


def test_terminate_blocked_while_ues_attached(running_slice):
    """Test that termination waits until attached UEs are gone."""
    engine, slice_id = running_slice
    engine.tenants.create_mno("00101")
    engine.tenants.create_mvno("00101", "mvno-a")
    engine.tenants.create_ran_slice("00101", "mvno-a", "embb", "1/2", slice_id)
    engine.tenants.attach_ue("ue-1", "00101", "mvno-a", "embb")
    with pytest.raises(TenantAttached):
        engine.orchestrator.terminate_slice(slice_id)
    assert engine.orchestrator.slice_state(slice_id) is LifecycleState.RUNNING
    engine.tenants.detach_ue("ue-1")
    engine.orchestrator.terminate_slice(slice_id)


def test_catalog_is_not_mutated_by_instantiation(running_slice):
    """Test that instantiation leaves catalog packages unchanged."""
    engine, slice_id = running_slice
    entry = engine.orchestrator.package_for_nsid(NSID)
    assert entry.package.documents() == load_package([EPC_ENB]).documents()
    assert entry.state is LifecycleState.ONBOARDED


# Independent statement of the lifecycle relation.
ALLOWED = {
    ("Onboarded", "Instantiating"),
    ("Instantiating", "Day0Done"),
    ("Day0Done", "Day1Configured"),
    ("Day1Configured", "Running"),
    ("Running", "Terminating"),
    ("Terminating", "Terminated"),
    ("Day0Done", "Terminating"),
    ("Day1Configured", "Terminating"),
    ("Instantiating", "Failed"),
    ("Day0Done", "Failed"),
    ("Day1Configured", "Failed"),
    ("Running", "Failed"),
    ("Terminating", "Failed"),
}


def test_lifecycle_legality_under_random_commands():
    """Test that random commands only ever make legal transitions."""
    engine = Engine()
    engine.vims.create_vim("vim-cn", VimCapacity(12, 196608, 400, "10.0.0.0/22"))
    engine.vims.create_vim("vim-ran", VimCapacity(3, 49152, 100, "10.1.0.0/22"), "ran")
    engine.orchestrator.onboard_package(load_package([EPC_ENB]))
    orchestrator = engine.orchestrator
    rng = random.Random(99)
    commands = ("create", "day1", "day2", "terminate")
    created: list[str] = []
    for _ in range(100_000):
        command = rng.choice(commands)
        if created and rng.random() < 0.9:
            slice_id = rng.choice(created[-8:])
        else:
            slice_id = f"slice-{rng.randint(1, 9999):04d}"
        try:
            if command == "create":
                created.append(orchestrator.instantiate_slice(NSID, orchestrator.plan_placement(NSID)).slice_id)
            elif command == "day1":
                orchestrator.day1_configure(slice_id)
            elif command == "day2":
                orchestrator.day2_reconfigure(slice_id, "oai-epc", {"k": 1})
            else:
                orchestrator.terminate_slice(slice_id)
        except SliceKitError:
            pass

    previous: dict[str, str] = {}
    for event in orchestrator.events:
        if event.kind != "state":
            continue
        before = previous.get(event.slice_id, "Onboarded")
        assert (before, event.detail) in ALLOWED, f"{event.slice_id}: {before} -> {event.detail}"
        previous[event.slice_id] = event.detail
    for slice_instance in orchestrator.slices.values():
        assert slice_instance.state.value == previous[slice_instance.slice_id]
