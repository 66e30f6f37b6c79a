"""Tests for engine snapshots."""
import struct
import zlib

import pytest
from hypothesis import given, settings, strategies as st

from slicekit.errors import CorruptSnapshot, UnsupportedVersion
from slicekit.registry import MAGIC, Engine, decode_snapshot, encode_snapshot, load, save
from slicekit.telemetry import CPU, MEMORY, MetricSample


def observable(engine: Engine) -> dict:
    """Everything a user can read back from a session."""
    return {
        "ts": engine.clock.now,
        "usage": [engine.vims.vim_usage(name) for name in engine.vims.names()],
        "slices": engine.orchestrator.list_slices(),
        "events": engine.orchestrator.export_events(),
        "fabric": engine.fabric.export_lines(),
        "tenants": engine.tenants.export_document(),
        "summaries": {key: engine.metrics.summarize(*key) for key in engine.metrics.series_keys()},
        "csv": engine.metrics.export_csv(),
    }


@pytest.fixture
def populated(running_slice):
    engine, slice_id = running_slice
    engine.tenants.create_mno("A")
    engine.tenants.create_mvno("A", "foo")
    engine.tenants.create_ran_slice("A", "foo", "s1", "0.6", instance=slice_id)
    engine.tenants.attach_ue("ue-1", "A", "foo", "s1")
    engine.metrics.record_many(MetricSample("vim-cn-0002", CPU, ts, 10.0 + ts) for ts in range(20, 30))
    engine.metrics.record(MetricSample("vim-ran-0001", MEMORY, 21, 3000.5))
    return engine


def test_fresh_engine_round_trip(tmp_path):
    """Test that an empty engine survives save and load."""
    engine = Engine()
    save(engine, tmp_path / "fresh.slk")
    restored = load(tmp_path / "fresh.slk")
    assert observable(restored) == observable(engine)


def test_reference_session_round_trip(populated, tmp_path):
    """Test that a populated session reads back identically."""
    path = tmp_path / "ref.slk"
    populated.save(path)
    restored = Engine.load(path)
    assert observable(restored) == observable(populated)


def test_restored_engine_keeps_working(populated, tmp_path):
    """Test that a restored engine continues ids, tags and the clock."""
    path = tmp_path / "ref.slk"
    save(populated, path)
    restored = load(path)
    slice_id = restored.orchestrator.list_slices()[0].slice_id
    restored.tenants.detach_ue("ue-1")
    restored.orchestrator.terminate_slice(slice_id)
    assert restored.vims.vim_usage("vim-cn").allocated.as_tuple() == (0, 0, 0)
    # fresh ids and tags continue past the restored ones
    assert restored.fabric.tags.next_tag == 101
    assert restored.clock.now > populated.clock.now


def test_file_layout(populated):
    """Test that the file has magic, version, payload and CRC-32."""
    blob = encode_snapshot(populated.state_dict())
    assert blob[:4] == MAGIC
    assert struct.unpack(">I", blob[4:8]) == (1,)
    payload = blob[8:-4]
    assert struct.unpack(">I", blob[-4:]) == (zlib.crc32(payload),)


def test_truncated_file(populated, tmp_path):
    """Test that truncated files raise CorruptSnapshot."""
    path = tmp_path / "ref.slk"
    save(populated, path)
    blob = path.read_bytes()
    for cut in (0, 3, 8, len(blob) // 2, len(blob) - 1):
        path.write_bytes(blob[:cut])
        with pytest.raises(CorruptSnapshot):
            load(path)


def test_flipped_byte_fails_checksum(populated):
    """Test that a single flipped byte fails the checksum."""
    blob = bytearray(encode_snapshot(populated.state_dict()))
    blob[20] ^= 0x01
    with pytest.raises(CorruptSnapshot, match="checksum"):
        decode_snapshot(bytes(blob))


def test_unsupported_version(populated):
    """Test that another format version raises UnsupportedVersion."""
    blob = encode_snapshot(populated.state_dict())
    with pytest.raises(UnsupportedVersion):
        decode_snapshot(blob[:4] + struct.pack(">I", 2) + blob[8:])


def test_wrong_magic():
    """Test that a wrong magic is reported as corrupt."""
    with pytest.raises(CorruptSnapshot):
        decode_snapshot(b"NOPE" + bytes(12))


def test_missing_section_is_corrupt():
    """Test that a snapshot without its sections is corrupt."""
    body = b'{"logical_ts":0,"sections":[]}'
    payload = struct.pack(">I", len(body)) + body
    blob = MAGIC + struct.pack(">I", 1) + payload + struct.pack(">I", zlib.crc32(payload))
    with pytest.raises(CorruptSnapshot, match="missing section"):
        decode_snapshot(blob)


def test_inconsistent_state_is_corrupt(tmp_path):
    """Test that state that fails to restore raises CorruptSnapshot."""
    state = Engine().state_dict()
    state["fabric"] = {"graphs": []}
    path = tmp_path / "bad.slk"
    path.write_bytes(encode_snapshot(state))
    with pytest.raises(CorruptSnapshot, match="inconsistent"):
        load(path)


@settings(max_examples=30, deadline=None)
@given(
    series=st.dictionaries(
        st.sampled_from(["vm-a", "vm-b", "vm-c"]),
        st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=20),
    ),
    tick=st.integers(0, 1000),
)
def test_metric_sessions_round_trip(series, tick):
    """Test that arbitrary metric series and clocks round-trip."""
    engine = Engine()
    engine.metrics.vm_lookup = None
    engine.clock.advance_to(tick)
    for vm_id, values in series.items():
        engine.metrics.record_many(MetricSample(vm_id, CPU, ts, value) for ts, value in enumerate(values))
    restored = Engine()
    restored.load_state(decode_snapshot(encode_snapshot(engine.state_dict())))
    assert restored.clock.now == tick
    assert restored.metrics.samples() == engine.metrics.samples()
