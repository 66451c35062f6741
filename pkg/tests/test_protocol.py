import numpy as np
import pytest

from dvrsgd.protocol import (DecodeError, EvalPush, PullRequest, PullResponse,
                             SnapshotBroadcast, Stop, TaskAssign, TaskId, TaskKind,
                             UpdatePush, decode, encode)


def rand_vec(rng, n=None):
    n = int(rng.integers(0, 9)) if n is None else n
    v = rng.normal(size=n)
    # sprinkle in awkward but finite values
    if n >= 3:
        v[0] = 0.0
        v[1] = -0.0
        v[2] = 5e-324  # smallest subnormal
    return v


def rand_task(rng):
    return TaskId(int(rng.integers(1, 2**40)), TaskKind(int(rng.integers(0, 2))))


def rand_message(rng):
    which = int(rng.integers(0, 7))
    if which == 0:
        return TaskAssign(rand_task(rng))
    if which == 1:
        return PullRequest(int(rng.integers(0, 1000)), rand_task(rng))
    if which == 2:
        return PullResponse(rand_task(rng), rand_vec(rng))
    if which == 3:
        return UpdatePush(int(rng.integers(0, 1000)), TaskId(int(rng.integers(1, 2**40)), TaskKind.UPDATE),
                          rand_vec(rng), rand_vec(rng))
    if which == 4:
        return EvalPush(int(rng.integers(0, 1000)), rand_vec(rng),
                        float(rng.normal()), float(abs(rng.normal())), float(abs(rng.normal())))
    if which == 5:
        return Stop()
    return SnapshotBroadcast(rand_vec(rng))


def test_update_push_round_trip_d3():
    msg = UpdatePush(2, TaskId(17, TaskKind.UPDATE),
                     np.array([1.0, -2.5, 3.25]), np.array([0.125, 0.0, -1e-300]))
    out = decode(encode(msg))
    assert out == msg
    assert out.w_bar.dtype == np.float64


def test_empty_bytes_rejected():
    with pytest.raises(DecodeError):
        decode(b"")


def test_round_trip_random_messages():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        msg = rand_message(rng)
        assert decode(encode(msg)) == msg


def test_floats_preserved_bit_exactly():
    v = np.array([0.1, -0.0, 1e308, 5e-324, 2.0**-1074, np.pi])
    msg = SnapshotBroadcast(v)
    out = decode(encode(msg))
    assert out.grad.tobytes() == v.tobytes()
    assert out.grad.shape == v.shape


def test_truncation_rejected():
    rng = np.random.default_rng(1)
    for _ in range(50):
        frame = encode(rand_message(rng))
        for cut in (4, len(frame) // 2, len(frame) - 1):
            if cut < len(frame):
                with pytest.raises(DecodeError):
                    decode(frame[:cut])
        with pytest.raises(DecodeError):
            decode(frame + b"\x00")


def test_bad_tag_rejected():
    frame = bytearray(encode(Stop()))
    frame[4] = 99
    with pytest.raises(DecodeError):
        decode(bytes(frame))


def test_vector_length_lie_rejected():
    frame = bytearray(encode(SnapshotBroadcast(np.zeros(4))))
    frame[5:13] = (2**50).to_bytes(8, "little")  # claim a giant vector
    with pytest.raises(DecodeError):
        decode(bytes(frame))


def test_task_id_requires_positive_timestamp():
    with pytest.raises(ValueError):
        TaskId(0, TaskKind.UPDATE)
