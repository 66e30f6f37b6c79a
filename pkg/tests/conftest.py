import sys
import importlib
from pathlib import Path

import pytest

# Ensure repository root is on sys.path so `import slicekit` works in tests
REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from slicekit.descriptor import load_package  # noqa: E402
from slicekit.nfvi import VimCapacity  # noqa: E402
from slicekit.registry import Engine  # noqa: E402

CORPUS = REPO_ROOT / "slicekit" / "corpus"
EPC_ENB = CORPUS / "epc-enb"
FILE_TRANSFER = CORPUS / "file-transfer"
GOLDEN = Path(__file__).parent / "golden"


def add_reference_vims(engine: Engine) -> None:
    engine.vims.create_vim("vim-cn", VimCapacity(8, 131072, 200, "10.0.0.0/24"), "core")
    engine.vims.create_vim("vim-ran", VimCapacity(4, 16384, 100, "10.1.0.0/24"), "ran")


@pytest.fixture
def engine():
    return Engine()


@pytest.fixture
def epc_engine(engine):
    """Engine with the two reference VIMs and the EPC+eNB package onboarded."""
    add_reference_vims(engine)
    engine.orchestrator.onboard_package(load_package([EPC_ENB]))
    return engine


@pytest.fixture
def running_slice(epc_engine):
    """(engine, slice id) for the reference slice after day-1."""
    orchestrator = epc_engine.orchestrator
    plan = orchestrator.plan_placement("epc-enb-slice")
    slice_instance = orchestrator.instantiate_slice("epc-enb-slice", plan)
    orchestrator.day1_configure(slice_instance.slice_id)
    return epc_engine, slice_instance.slice_id


@pytest.fixture
def cli(tmp_path, monkeypatch):
    """The cli module with SLICEKIT_STATE pointed to a temp file.

    Package modules are re-imported after setting the environment so
    config picks up the test state path.
    """
    state_file = tmp_path / "session.slk"
    monkeypatch.setenv("SLICEKIT_STATE", str(state_file))

    # Remove slicekit modules so they re-read env vars on import
    for mod in list(sys.modules.keys()):
        if mod.startswith("slicekit"):
            del sys.modules[mod]

    cli_module = importlib.import_module("slicekit.cli")
    yield cli_module
