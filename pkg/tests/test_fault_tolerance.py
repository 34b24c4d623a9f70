import struct

import numpy as np
import pytest

from fedsel import rng as streams
from fedsel.errors import IntegrityError, ParameterError
from fedsel.fault_tolerance import (CheckpointRecord, DirectoryCheckpointStore, FaultToleranceConfig,
                                    MemoryCheckpointStore, decode, encode, recover, sample_failures,
                                    should_checkpoint)


def test_should_checkpoint():
    assert should_checkpoint(5, 5)
    assert not should_checkpoint(7, 5)
    assert all(should_checkpoint(s, 1) for s in range(1, 20))
    with pytest.raises(ParameterError):
        should_checkpoint(0, 5)


def _record(step=5):
    return CheckpointRecord(3, 7, step, np.array([1.5, -0.0, 1e-300, np.pi]), 2)


@pytest.fixture(params=["memory", "directory"])
def store(request, tmp_path):
    return MemoryCheckpointStore() if request.param == "memory" else DirectoryCheckpointStore(tmp_path / "ckpt")


def test_round_trip(store):
    rec = _record()
    store.save(rec)
    back = store.load(3, 7)
    assert back == rec
    assert back.model_params.tobytes() == rec.model_params.tobytes()


def test_latest_wins(store):
    store.save(_record(5))
    store.save(_record(10))
    assert store.load(3, 7).step == 10


def test_absent_key(store):
    assert store.load(1, 1) is None


def test_directory_layout(tmp_path):
    s = DirectoryCheckpointStore(tmp_path / "ckpt")
    s.save(_record())
    assert (tmp_path / "ckpt" / "client_3" / "round_7.ckpt").read_bytes() == encode(_record())


def test_binary_layout():
    blob = encode(_record())
    assert blob[:4] == b"FSCP"
    version, cid, rnd, step, n = struct.unpack_from("<IQQQQ", blob, 4)
    assert (version, cid, rnd, step, n) == (1, 3, 7, 5, 4)
    assert len(blob) == 4 + 4 + 4 * 8 + 4 * 8 + 8 + 4


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b[:-1] + bytes([b[-1] ^ 1]), "CRC"),
    (lambda b: b[:40] + bytes([b[40] ^ 0xFF]) + b[41:], "CRC"),
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version"),
    (lambda b: b[:-9], "length"),
    (lambda b: b[:10], "truncated"),
])
def test_corruption_detected(mutate, match):
    with pytest.raises(IntegrityError, match=match):
        decode(mutate(encode(_record())))


def test_corrupt_file_on_disk(tmp_path):
    s = DirectoryCheckpointStore(tmp_path)
    s.save(_record())
    p = s.path(3, 7)
    raw = bytearray(p.read_bytes())
    raw[-1] ^= 0x55
    p.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        s.load(3, 7)
    with pytest.raises(IntegrityError):
        recover(3, 7, s)


def test_recover():
    s = MemoryCheckpointStore()
    assert recover(1, 0, s) == (0, None, 0)
    s.save(CheckpointRecord(1, 0, 5, np.ones(3), 0))
    step, params, cursor = recover(1, 0, s)
    assert step == 5 and cursor == 0 and np.array_equal(params, np.ones(3))


def test_sample_failures_zero_prob():
    cfg = FaultToleranceConfig(failure_prob_per_round=0.0)
    assert sample_failures(range(10), cfg, np.random.default_rng(0), {i: 10 for i in range(10)}) == []


def test_sample_failures_deterministic_and_in_range():
    cfg = FaultToleranceConfig(failure_prob_per_round=0.5)
    steps = {i: i + 1 for i in range(20)}
    a = sample_failures(range(20), cfg, streams.stream(4, streams.FAILURE, 0), steps)
    b = sample_failures(range(20), cfg, streams.stream(4, streams.FAILURE, 0), steps)
    assert a == b and a
    assert all(0 <= e.fail_at_step < steps[e.client_id] for e in a)


def test_failure_rate():
    cfg = FaultToleranceConfig(failure_prob_per_round=0.5)
    r = np.random.default_rng(99)
    fails = sum(len(sample_failures([0], cfg, r, {0: 10})) for _ in range(10_000))
    assert abs(fails / 10_000 - 0.5) <= 0.015


def test_higher_probability_only_adds_failures():
    steps = {i: 12 for i in range(8)}
    lo = sample_failures(range(8), FaultToleranceConfig(failure_prob_per_round=0.2),
                         streams.stream(1, streams.FAILURE, 3), steps)
    hi = sample_failures(range(8), FaultToleranceConfig(failure_prob_per_round=0.6),
                         streams.stream(1, streams.FAILURE, 3), steps)
    assert set(lo) <= set(hi)


def test_failure_prob_range():
    assert len(sample_failures(range(4), FaultToleranceConfig(failure_prob_per_round=1.0),
                               np.random.default_rng(0), {i: 3 for i in range(4)})) == 4
    with pytest.raises(ParameterError):
        sample_failures([0], FaultToleranceConfig(failure_prob_per_round=1.5), np.random.default_rng(0), {0: 3})
