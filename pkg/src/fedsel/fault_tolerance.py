"""Checkpointing, failure injection and recovery for local training.

Checkpoint file layout (little-endian)::

    b"FSCP" | u32 format_version | u64 client_id | u64 round | u64 step
    | u64 n_params | f64 * n_params | u64 rng_cursor | u32 crc32(all preceding bytes)
"""
from __future__ import annotations

import os
import struct
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IntegrityError, ParameterError, StorageError

MAGIC = b"FSCP"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sIQQQQ")
_TAIL = struct.Struct("<QI")


@dataclass
class FaultToleranceConfig:
    enabled: bool = True
    checkpoint_interval_steps: int = 5
    failure_prob_per_round: float = 0.0

    def problems(self) -> list[tuple[str, str]]:
        out = []
        if self.checkpoint_interval_steps < 1:
            out.append(("checkpoint_interval_steps", "must be >= 1"))
        if not 0 <= self.failure_prob_per_round <= 1:
            out.append(("failure_prob_per_round", "must lie in [0, 1]"))
        return out


@dataclass(eq=False)
class CheckpointRecord:
    client_id: int
    round: int
    step: int
    model_params: np.ndarray
    rng_cursor: int
    format_version: int = FORMAT_VERSION

    def __eq__(self, other):
        if not isinstance(other, CheckpointRecord):
            return NotImplemented
        return (self.client_id, self.round, self.step, self.rng_cursor, self.format_version) == (
            other.client_id, other.round, other.step, other.rng_cursor, other.format_version
        ) and self.model_params.tobytes() == other.model_params.tobytes()


@dataclass(frozen=True)
class FailureEvent:
    client_id: int
    round: int
    fail_at_step: int


def should_checkpoint(step: int, interval: int) -> bool:
    """True when ``step`` completed local steps land on the checkpoint interval."""
    if interval < 1 or step < 1:
        raise ParameterError("need interval >= 1 and step >= 1")
    return step % interval == 0


def encode(record: CheckpointRecord) -> bytes:
    params = np.ascontiguousarray(record.model_params, dtype="<f8")
    if not np.all(np.isfinite(params)):
        raise StorageError("refusing to checkpoint non-finite parameters")
    body = (_HEAD.pack(MAGIC, record.format_version, record.client_id, record.round, record.step, params.size)
            + params.tobytes() + struct.pack("<Q", record.rng_cursor))
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> CheckpointRecord:
    if len(blob) < _HEAD.size + _TAIL.size:
        raise IntegrityError("checkpoint truncated")
    magic, version, client_id, rnd, step, n = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise IntegrityError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise IntegrityError(f"unsupported format version {version}")
    if len(blob) != _HEAD.size + 8 * n + _TAIL.size:
        raise IntegrityError("checkpoint length does not match parameter count")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise IntegrityError("checkpoint CRC mismatch")
    params = np.frombuffer(blob, dtype="<f8", count=n, offset=_HEAD.size).astype(np.float64)
    (cursor,) = struct.unpack_from("<Q", blob, _HEAD.size + 8 * n)
    return CheckpointRecord(client_id, rnd, step, params, cursor, version)


class MemoryCheckpointStore:
    """Keeps encoded checkpoints in a dict; the latest save per key wins."""

    def __init__(self):
        self._blobs: dict[tuple[int, int], bytes] = {}
        self._lock = threading.Lock()

    def save(self, record: CheckpointRecord) -> None:
        blob = encode(record)
        with self._lock:
            self._blobs[(record.client_id, record.round)] = blob

    def load(self, client_id: int, round: int) -> CheckpointRecord | None:
        with self._lock:
            blob = self._blobs.get((client_id, round))
        return None if blob is None else decode(blob)

    def raw(self, client_id: int, round: int) -> bytes | None:
        return self._blobs.get((client_id, round))

    def put_raw(self, client_id: int, round: int, blob: bytes) -> None:
        with self._lock:
            self._blobs[(client_id, round)] = blob


class DirectoryCheckpointStore:
    """``<root>/client_<id>/round_<t>.ckpt``, written via temp file + rename."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, client_id: int, round: int) -> Path:
        return self.root / f"client_{client_id}" / f"round_{round}.ckpt"

    def save(self, record: CheckpointRecord) -> None:
        target = self.path(record.client_id, record.round)
        tmp = target.with_suffix(".tmp")
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp.write_bytes(encode(record))
            os.replace(tmp, target)
        except OSError as exc:
            raise StorageError(f"cannot write checkpoint {target}: {exc}") from exc

    def load(self, client_id: int, round: int) -> CheckpointRecord | None:
        target = self.path(client_id, round)
        try:
            blob = target.read_bytes()
        except FileNotFoundError:
            return None
        except OSError as exc:
            raise StorageError(f"cannot read checkpoint {target}: {exc}") from exc
        return decode(blob)


def sample_failures(selected, cfg: FaultToleranceConfig, rng: np.random.Generator,
                    steps_per_client: dict[int, int], round: int = 0) -> list[FailureEvent]:
    """Bernoulli failure per selected client, failing step uniform over ``[0, steps)``.

    Two uniforms are drawn per client whatever the probability, so raising the
    probability only adds failures to a schedule, it never moves existing ones.
    """
    if not 0 <= cfg.failure_prob_per_round <= 1:
        raise ParameterError("failure probability must lie in [0, 1]")
    events = []
    for cid in sorted(selected):
        u_fail, u_step = rng.random(2)
        steps = steps_per_client[cid]
        if steps > 0 and u_fail < cfg.failure_prob_per_round:
            events.append(FailureEvent(cid, round, min(steps - 1, int(u_step * steps))))
    return events


def recover(client_id: int, round: int, store) -> tuple[int, np.ndarray | None, int]:
    """Where to resume after a crash: ``(step, params, rng_cursor)``.

    With no checkpoint the client restarts at step 0 and ``params`` is None,
    meaning the round's starting model. A corrupt checkpoint raises
    IntegrityError.
    """
    record = store.load(client_id, round)
    if record is None:
        return 0, None, 0
    return record.step, record.model_params.copy(), record.rng_cursor
