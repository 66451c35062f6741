"""Message vocabulary and wire format for scheduler, server, and workers.

Every message encodes to one self-delimiting frame:

    [u32 body length][u8 tag][payload ...]

with little-endian fixed-width integers and IEEE-754 binary64 floats
throughout.  Vectors are encoded as ``u64 count`` followed by the raw float64
values, so real payloads survive the wire bit-exactly.  Tags:

    1 TaskAssign          task
    2 PullRequest         worker, task
    3 PullResponse        task, w
    4 UpdatePush          worker, task, w_bar, delta
    5 EvalPush            worker, local_grad, local_obj_sum, comp_time, comm_time
    6 Stop                (empty)
    7 SnapshotBroadcast   grad

A task id is ``u64 timestamp`` + ``u8 kind`` (0 update, 1 evaluation).
Messages are immutable values; handlers never mutate a received payload.
"""

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "TaskKind", "TaskId", "TaskAssign", "PullRequest", "PullResponse",
    "UpdatePush", "EvalPush", "Stop", "SnapshotBroadcast",
    "Message", "DecodeError", "encode", "decode",
]


class DecodeError(Exception):
    """Raised for truncated frames, bad tags, or trailing bytes."""


class TaskKind(IntEnum):
    UPDATE = 0
    EVALUATION = 1


@dataclass(frozen=True)
class TaskId:
    timestamp: int
    kind: TaskKind

    def __post_init__(self):
        if self.timestamp < 1:
            raise ValueError("task timestamps start at 1")


@dataclass(frozen=True)
class TaskAssign:
    task: TaskId


@dataclass(frozen=True)
class PullRequest:
    worker: int
    task: TaskId


class PullResponse:
    __slots__ = ("task", "w")

    def __init__(self, task: TaskId, w: np.ndarray):
        self.task = task
        self.w = w

    def __eq__(self, other):
        return (isinstance(other, PullResponse) and self.task == other.task
                and np.array_equal(self.w, other.w))

    def __repr__(self):
        return f"PullResponse(task={self.task}, dim={self.w.shape[0]})"


class UpdatePush:
    __slots__ = ("worker", "task", "w_bar", "delta")

    def __init__(self, worker: int, task: TaskId, w_bar: np.ndarray, delta: np.ndarray):
        self.worker = worker
        self.task = task
        self.w_bar = w_bar
        self.delta = delta

    def __eq__(self, other):
        return (isinstance(other, UpdatePush) and self.worker == other.worker
                and self.task == other.task
                and np.array_equal(self.w_bar, other.w_bar)
                and np.array_equal(self.delta, other.delta))

    def __repr__(self):
        return f"UpdatePush(worker={self.worker}, task={self.task})"


class EvalPush:
    __slots__ = ("worker", "local_grad", "local_obj_sum", "comp_time", "comm_time")

    def __init__(self, worker: int, local_grad: np.ndarray, local_obj_sum: float,
                 comp_time: float = 0.0, comm_time: float = 0.0):
        self.worker = worker
        self.local_grad = local_grad
        self.local_obj_sum = local_obj_sum
        self.comp_time = comp_time
        self.comm_time = comm_time

    def __eq__(self, other):
        return (isinstance(other, EvalPush) and self.worker == other.worker
                and np.array_equal(self.local_grad, other.local_grad)
                and self.local_obj_sum == other.local_obj_sum
                and self.comp_time == other.comp_time
                and self.comm_time == other.comm_time)

    def __repr__(self):
        return f"EvalPush(worker={self.worker}, obj_sum={self.local_obj_sum!r})"


@dataclass(frozen=True)
class Stop:
    pass


class SnapshotBroadcast:
    __slots__ = ("grad",)

    def __init__(self, grad: np.ndarray):
        self.grad = grad

    def __eq__(self, other):
        return isinstance(other, SnapshotBroadcast) and np.array_equal(self.grad, other.grad)

    def __repr__(self):
        return f"SnapshotBroadcast(dim={self.grad.shape[0]})"


Message = (TaskAssign, PullRequest, PullResponse, UpdatePush, EvalPush, Stop, SnapshotBroadcast)

_TAGS = {TaskAssign: 1, PullRequest: 2, PullResponse: 3, UpdatePush: 4,
         EvalPush: 5, Stop: 6, SnapshotBroadcast: 7}

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")


def _pack_task(out: bytearray, task: TaskId):
    out += _U64.pack(task.timestamp)
    out.append(int(task.kind))


def _pack_vec(out: bytearray, v: np.ndarray):
    v = np.ascontiguousarray(v, dtype=np.float64)
    out += _U64.pack(v.shape[0])
    out += v.tobytes()


def encode(msg) -> bytes:
    """Serialize a message into one length-prefixed frame."""
    try:
        tag = _TAGS[type(msg)]
    except KeyError:
        raise TypeError(f"not a protocol message: {type(msg).__name__}")
    body = bytearray([tag])
    if tag == 1:
        _pack_task(body, msg.task)
    elif tag == 2:
        body += _U32.pack(msg.worker)
        _pack_task(body, msg.task)
    elif tag == 3:
        _pack_task(body, msg.task)
        _pack_vec(body, msg.w)
    elif tag == 4:
        body += _U32.pack(msg.worker)
        _pack_task(body, msg.task)
        _pack_vec(body, msg.w_bar)
        _pack_vec(body, msg.delta)
    elif tag == 5:
        body += _U32.pack(msg.worker)
        _pack_vec(body, msg.local_grad)
        body += _F64.pack(msg.local_obj_sum)
        body += _F64.pack(msg.comp_time)
        body += _F64.pack(msg.comm_time)
    elif tag == 7:
        _pack_vec(body, msg.grad)
    return _U32.pack(len(body)) + bytes(body)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DecodeError("truncated frame")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def f64(self) -> float:
        return _F64.unpack(self.take(8))[0]

    def task(self) -> TaskId:
        ts = self.u64()
        kind = self.u8()
        if kind not in (0, 1):
            raise DecodeError(f"invalid task kind {kind}")
        if ts < 1:
            raise DecodeError("task timestamp must be >= 1")
        return TaskId(ts, TaskKind(kind))

    def vec(self) -> np.ndarray:
        n = self.u64()
        if n > (len(self.buf) - self.pos) // 8:
            raise DecodeError("vector length exceeds frame")
        return np.frombuffer(self.take(8 * n), dtype="<f8").copy()


def decode(buf: bytes):
    """Parse one complete frame back into a message.

    Raises DecodeError on truncation, trailing bytes, or an unknown tag.
    """
    if len(buf) < 5:
        raise DecodeError("frame too short")
    (body_len,) = _U32.unpack(buf[:4])
    if body_len != len(buf) - 4:
        raise DecodeError(f"frame length mismatch: header says {body_len}, got {len(buf) - 4}")
    r = _Reader(buf)
    r.pos = 4
    tag = r.u8()
    if tag == 1:
        msg = TaskAssign(r.task())
    elif tag == 2:
        msg = PullRequest(r.u32(), r.task())
    elif tag == 3:
        msg = PullResponse(r.task(), r.vec())
    elif tag == 4:
        worker = r.u32()
        task = r.task()
        msg = UpdatePush(worker, task, r.vec(), r.vec())
    elif tag == 5:
        msg = EvalPush(r.u32(), r.vec(), r.f64(), r.f64(), r.f64())
    elif tag == 6:
        msg = Stop()
    elif tag == 7:
        msg = SnapshotBroadcast(r.vec())
    else:
        raise DecodeError(f"unknown message tag {tag}")
    if r.pos != len(buf):
        raise DecodeError("trailing bytes after message payload")
    return msg
