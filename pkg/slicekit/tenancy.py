"""Multi-tenant RAN: MNO (PLMN id) -> MVNOs -> RAN slices.

Radio resources are PRBs of a cell. allocate_prbs gives every slice its
guaranteed share first, then hands unused capacity to slices that still
want more by weighted water-filling, and finally spreads single leftover
PRBs over unsatisfied slices in ascending slice-id order.

Shares are exact fractions. A slice's effective weight is its MVNO quota
times its share; weights are normalized over the slices in a request.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Mapping

from slicekit import config
from slicekit.descriptor import dump_document, parse_document
from slicekit.errors import (
    AlreadyAttached,
    Duplicate,
    ShareExhausted,
    SliceNotServing,
    UnknownParent,
    UnknownPath,
    UnknownSlice,
    UnknownUe,
)
from slicekit.lifecycle import LifecycleState

logger = logging.getLogger(__name__)

RATS = ("lte", "wifi")


def parse_share(value: Any) -> Fraction:
    """Exact share in (0, 1] from "0.6", "3/5", 1, Fraction..."""
    try:
        share = Fraction(str(value)) if not isinstance(value, Fraction) else value
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"share must be a rational number, got {value!r}") from None
    if not 0 < share <= 1:
        raise ValueError(f"share must be in (0, 1], got {value!r}")
    return share


@dataclass(frozen=True)
class CellConfig:
    cell_id: str = "cell-0"
    total_prbs: int = config.TOTAL_PRBS
    rat: str = "lte"

    def __post_init__(self):
        if not isinstance(self.total_prbs, int) or self.total_prbs < 1:
            raise ValueError(f"total_prbs must be ≥ 1, got {self.total_prbs!r}")
        if self.rat not in RATS:
            raise ValueError(f"rat must be one of {RATS}, got {self.rat!r}")


@dataclass
class RanSlice:
    slice_id: str
    guaranteed_share: Fraction
    attached_slice_instance: str | None = None
    ues: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.guaranteed_share = parse_share(self.guaranteed_share)


@dataclass
class Mvno:
    mvno_id: str
    quota: Fraction = Fraction(1)
    ran_slices: dict[str, RanSlice] = field(default_factory=dict)

    def share_used(self) -> Fraction:
        return sum((s.guaranteed_share for s in self.ran_slices.values()), Fraction(0))


@dataclass
class Mno:
    plmn_id: str
    mvnos: dict[str, Mvno] = field(default_factory=dict)
    cells: dict[str, CellConfig] = field(default_factory=dict)


def _water_fill(amount: int, caps: Mapping[str, int], weights: Mapping[str, Fraction]) -> dict[str, Fraction]:
    """Continuous weighted split of `amount` where no key goes above its cap."""
    fill: dict[str, Fraction] = {}
    left = Fraction(amount)
    active = dict(caps)
    while active and left > 0:
        pool = sum((weights[k] for k in active), Fraction(0))
        capped = [k for k in active if active[k] <= left * weights[k] / pool]
        if not capped:
            fill.update({k: left * weights[k] / pool for k in active})
            break
        for k in capped:
            fill[k] = Fraction(active.pop(k))
            left -= fill[k]
    return fill


def allocate_prbs(cell: CellConfig, demands: Mapping[str, int], weights: Mapping[str, Fraction]) -> dict[str, int]:
    """Integer PRB grants for `demands` keyed like `weights`.

    Pure function: guarantee, weighted water-filling, lexicographic leftovers.
    """
    keys = sorted(demands)
    for key in keys:
        if not isinstance(demands[key], int) or demands[key] < 0:
            raise ValueError(f"demand for {key} must be a non-negative integer")
        if weights[key] <= 0:
            raise ValueError(f"weight for {key} must be positive")
    if not keys:
        return {}
    total = cell.total_prbs
    weight_sum = sum((weights[k] for k in keys), Fraction(0))
    norm = {k: Fraction(weights[k]) / weight_sum for k in keys}

    grants = {k: min(demands[k], math.floor(norm[k] * total)) for k in keys}
    caps = {k: demands[k] - grants[k] for k in keys if grants[k] < demands[k]}
    for k, extra in _water_fill(total - sum(grants.values()), caps, norm).items():
        grants[k] += math.floor(extra)

    # fewer leftovers than unsatisfied slices whenever any slice is below its demand
    remaining = total - sum(grants.values())
    for k in keys:
        if remaining == 0:
            break
        if grants[k] < demands[k]:
            grants[k] += 1
            remaining -= 1
    return grants


class TenantTree:
    def __init__(self, slice_state: Callable[[str], LifecycleState | None] | None = None):
        self.mnos: dict[str, Mno] = {}
        self._ue_index: dict[str, tuple[str, str, str]] = {}
        self.slice_state = slice_state
        self._lock = threading.RLock()

    # -- tree ----------------------------------------------------------------

    def create_mno(self, plmn_id: str) -> Mno:
        with self._lock:
            if plmn_id in self.mnos:
                raise Duplicate(f"MNO {plmn_id}")
            mno = Mno(plmn_id)
            mno.cells["cell-0"] = CellConfig()
            self.mnos[plmn_id] = mno
            logger.info(f"Created MNO {plmn_id}")
            return mno

    def mno(self, plmn_id: str) -> Mno:
        try:
            return self.mnos[plmn_id]
        except KeyError:
            raise UnknownParent(f"MNO {plmn_id}") from None

    def create_mvno(self, plmn_id: str, mvno_id: str, quota: Any = 1) -> Mvno:
        with self._lock:
            mno = self.mno(plmn_id)
            if mvno_id in mno.mvnos:
                raise Duplicate(f"MVNO {mvno_id} under {plmn_id}")
            mvno = Mvno(mvno_id, parse_share(quota))
            mno.mvnos[mvno_id] = mvno
            logger.info(f"Created MVNO {plmn_id}/{mvno_id} (quota {mvno.quota})")
            return mvno

    def mvno(self, plmn_id: str, mvno_id: str) -> Mvno:
        mno = self.mno(plmn_id)
        try:
            return mno.mvnos[mvno_id]
        except KeyError:
            raise UnknownParent(f"MVNO {plmn_id}/{mvno_id}") from None

    def add_cell(self, plmn_id: str, cell: CellConfig) -> None:
        with self._lock:
            mno = self.mno(plmn_id)
            mno.cells[cell.cell_id] = cell

    def create_ran_slice(
        self, plmn_id: str, mvno_id: str, slice_id: str, guaranteed_share: Any, instance: str | None = None
    ) -> RanSlice:
        share = parse_share(guaranteed_share)
        with self._lock:
            mvno = self.mvno(plmn_id, mvno_id)
            if slice_id in mvno.ran_slices:
                raise Duplicate(f"slice {slice_id} under {plmn_id}/{mvno_id}")
            available = 1 - mvno.share_used()
            if share > available:
                raise ShareExhausted(available)
            ran_slice = RanSlice(slice_id, share)
            if instance is not None:
                self._check_serving(instance)
                ran_slice.attached_slice_instance = instance
            mvno.ran_slices[slice_id] = ran_slice
            logger.info(f"Created RAN slice {plmn_id}/{mvno_id}/{slice_id} share {share}")
            return ran_slice

    def _check_serving(self, instance: str) -> None:
        state = self.slice_state(instance) if self.slice_state else None
        if state is not LifecycleState.RUNNING:
            raise SliceNotServing(f"slice instance {instance} is {state.value if state else 'unknown'}")

    def ran_slice(self, plmn_id: str, mvno_id: str, slice_id: str) -> RanSlice:
        mno = self.mnos.get(plmn_id)
        mvno = mno.mvnos.get(mvno_id) if mno else None
        ran_slice = mvno.ran_slices.get(slice_id) if mvno else None
        if ran_slice is None:
            raise UnknownPath(f"{plmn_id}/{mvno_id}/{slice_id}")
        return ran_slice

    # -- radio resources -------------------------------------------------------

    def _resolve(self, mno: Mno, key: str) -> tuple[Mvno, RanSlice]:
        if "/" in key:
            mvno_id, _, slice_id = key.partition("/")
            mvno = mno.mvnos.get(mvno_id)
            if mvno is None or slice_id not in mvno.ran_slices:
                raise UnknownSlice(key)
            return mvno, mvno.ran_slices[slice_id]
        matches = [(m, m.ran_slices[key]) for m in mno.mvnos.values() if key in m.ran_slices]
        if len(matches) != 1:
            raise UnknownSlice(key if not matches else f"{key} is ambiguous, use mvno/slice")
        return matches[0]

    def allocate_prbs(self, plmn_id: str, demands: Mapping[str, int], cell: CellConfig | None = None) -> dict[str, int]:
        with self._lock:
            mno = self.mno(plmn_id)
            weights = {}
            for key in demands:
                mvno, ran_slice = self._resolve(mno, key)
                weights[key] = mvno.quota * ran_slice.guaranteed_share
        cell = cell or mno.cells.get("cell-0") or CellConfig()
        grants = allocate_prbs(cell, demands, weights)
        logger.info(f"PRB grants on {plmn_id}/{cell.cell_id}: {grants}")
        return grants

    # -- UEs -------------------------------------------------------------------

    def attach_ue(self, ue_id: str, plmn_id: str, mvno_id: str, slice_id: str) -> None:
        with self._lock:
            ran_slice = self.ran_slice(plmn_id, mvno_id, slice_id)
            if ran_slice.attached_slice_instance is None:
                raise SliceNotServing(f"{plmn_id}/{mvno_id}/{slice_id} has no slice instance")
            self._check_serving(ran_slice.attached_slice_instance)
            if ue_id in self._ue_index:
                raise AlreadyAttached(f"{ue_id} on {'/'.join(self._ue_index[ue_id])}")
            ran_slice.ues.append(ue_id)
            self._ue_index[ue_id] = (plmn_id, mvno_id, slice_id)
            logger.info(f"Attached {ue_id} to {plmn_id}/{mvno_id}/{slice_id}")

    def detach_ue(self, ue_id: str) -> None:
        with self._lock:
            path = self._ue_index.pop(ue_id, None)
            if path is None:
                raise UnknownUe(ue_id)
            self.ran_slice(*path).ues.remove(ue_id)
            logger.info(f"Detached {ue_id}")

    def ues_bound_to(self, instance: str) -> list[str]:
        return sorted(
            ue
            for mno in self.mnos.values()
            for mvno in mno.mvnos.values()
            for ran_slice in mvno.ran_slices.values()
            if ran_slice.attached_slice_instance == instance
            for ue in ran_slice.ues
        )

    # -- export ----------------------------------------------------------------

    def state_dict(self) -> dict[str, Any]:
        with self._lock:
            return {
                "mnos": [
                    {
                        "plmn": mno.plmn_id,
                        "cells": [
                            {"id": c.cell_id, "prbs": c.total_prbs, "rat": c.rat} for c in mno.cells.values()
                        ],
                        "mvnos": [
                            {
                                "id": mvno.mvno_id,
                                "quota": str(mvno.quota),
                                "slices": [
                                    {
                                        "id": s.slice_id,
                                        "share": str(s.guaranteed_share),
                                        "instance": s.attached_slice_instance,
                                        "ues": list(s.ues),
                                    }
                                    for s in mvno.ran_slices.values()
                                ],
                            }
                            for mvno in mno.mvnos.values()
                        ],
                    }
                    for mno in self.mnos.values()
                ]
            }

    def load_state(self, data: Mapping[str, Any]) -> None:
        """Rebuild the tree from state_dict() output; bindings are taken as-is."""
        mnos: dict[str, Mno] = {}
        ue_index: dict[str, tuple[str, str, str]] = {}
        for raw_mno in data.get("mnos") or []:
            mno = Mno(str(raw_mno["plmn"]))
            for raw_cell in raw_mno.get("cells") or []:
                cell = CellConfig(str(raw_cell["id"]), int(raw_cell["prbs"]), str(raw_cell["rat"]))
                mno.cells[cell.cell_id] = cell
            for raw_mvno in raw_mno.get("mvnos") or []:
                mvno = Mvno(str(raw_mvno["id"]), parse_share(raw_mvno["quota"]))
                for raw_slice in raw_mvno.get("slices") or []:
                    ran_slice = RanSlice(
                        str(raw_slice["id"]),
                        parse_share(raw_slice["share"]),
                        raw_slice.get("instance"),
                        [str(ue) for ue in raw_slice.get("ues") or []],
                    )
                    mvno.ran_slices[ran_slice.slice_id] = ran_slice
                    for ue in ran_slice.ues:
                        ue_index[ue] = (mno.plmn_id, mvno.mvno_id, ran_slice.slice_id)
                mno.mvnos[mvno.mvno_id] = mvno
            mnos[mno.plmn_id] = mno
        self.mnos = mnos
        self._ue_index = ue_index

    def export_document(self) -> str:
        """The tree as a `kind: tenants` descriptor-grammar document."""
        state = self.state_dict()
        for mno in state["mnos"]:
            for mvno in mno["mvnos"]:
                for ran_slice in mvno["slices"]:
                    if ran_slice["instance"] is None:
                        del ran_slice["instance"]
        return dump_document({"kind": "tenants", **state})


def tree_from_document(text: str, slice_state: Callable[[str], LifecycleState | None] | None = None) -> TenantTree:
    record = parse_document(text)
    if record.get("kind") != "tenants":
        raise ValueError(f"expected 'kind: tenants', got {record.get('kind')!r}")
    tree = TenantTree(slice_state)
    tree.load_state(record)
    return tree
