"""Runtime configuration read from the environment.

Values are resolved at import time, so tests that change the environment
must re-import the package (see tests/conftest.py).
"""
import os
from pathlib import Path

PACKAGE_DIR = Path(__file__).parent
CORPUS_DIR = PACKAGE_DIR / "corpus"
SQL_DIR = PACKAGE_DIR / "sql"

# Snapshot file used by the CLI between invocations; unset means an
# in-memory session that is discarded on exit.
STATE_PATH = os.environ.get("SLICEKIT_STATE") or None

# VIM assumed for NSID segments without affinity when computing budgets.
DEFAULT_VIM = os.environ.get("SLICEKIT_DEFAULT_VIM") or None

TOTAL_PRBS = int(os.environ.get("SLICEKIT_TOTAL_PRBS", "100"))
COLLECTION_PERIOD = int(os.environ.get("SLICEKIT_COLLECTION_PERIOD", "1"))
LOG_LEVEL = os.environ.get("SLICEKIT_LOG_LEVEL", "WARNING").upper()

# VLAN tags below this value are kept for management networks.
FIRST_VLAN_TAG = 100
