import statistics
import threading
import time

import numpy as np
import pytest

from vsr_fdx.diagnosis import DiagnosisSession
from vsr_fdx.errors import FrameError
from vsr_fdx.features import fit_normalization, synthesize_array
from vsr_fdx.mlp import init_model
from vsr_fdx.sim import FaultScenario, Trace, simulate
from vsr_fdx.stream import (FRAME_BYTES, MAGIC, Frame, decode_frame, encode_frame,
                            frames_from_trace, prefetch, read_frames, receive_frames, resample,
                            serve_frames, write_frames)


def test_frame_size():
    assert FRAME_BYTES == 4 + 8 + 2 + 200 * 3 * 4 == 2414


def test_codec_round_trip_bit_exact(rng):
    fr = Frame(2**40 + 3, rng.normal(scale=20, size=(200, 3)))
    buf = encode_frame(fr)
    assert len(buf) == 2414 and buf[:4] == MAGIC
    back = decode_frame(buf)
    assert back == fr and back.seq == fr.seq
    assert back.samples.tobytes() == fr.samples.tobytes()


def test_codec_rejects_corruption(rng):
    buf = bytearray(encode_frame(Frame(1, rng.normal(size=(200, 3)))))
    bad = bytes(b"VSRX" + buf[4:])
    with pytest.raises(FrameError):
        decode_frame(bad)
    with pytest.raises(FrameError):
        decode_frame(bytes(buf[:-1]))
    with pytest.raises(FrameError):
        decode_frame(bytes(buf[:10]))
    with pytest.raises(FrameError):
        decode_frame(encode_frame(Frame(1, np.zeros((10, 3)))))


def test_resample_linear_exact():
    t = np.arange(0, 0.01, 1 / 25_600)
    values = np.column_stack([3 * t + 1, -t, t * 0])
    grid, out = resample(t, values, 10_000)
    np.testing.assert_allclose(np.diff(grid), 1e-4)
    np.testing.assert_allclose(out[:, 0], 3 * grid + 1, atol=1e-12)
    assert grid[-1] <= t[-1]


def test_frames_from_trace_counts(healthy_trace):
    one_second = simulate(FaultScenario(), 1.0)
    assert len(frames_from_trace(one_second)) == 50
    frames = frames_from_trace(healthy_trace.window(0.0, 0.05))
    assert len(frames) == 2  # short final frame dropped
    assert [f.seq for f in frames] == [0, 1]
    assert frames[0].samples[0].tolist() == pytest.approx(healthy_trace.i_abc[0].tolist())


def test_frames_need_fast_enough_trace(healthy_trace):
    slow = Trace(5000.0, healthy_trace.t[::8], healthy_trace.i_abc[::8], healthy_trace.u_dc[::8],
                 healthy_trace.ref_angle[::8], healthy_trace.gates[::8])
    with pytest.raises(FrameError):
        frames_from_trace(slow)


def test_frame_file_round_trip(tmp_path, sap_trace):
    frames = frames_from_trace(sap_trace)
    path = tmp_path / "f.bin"
    assert write_frames(frames, path) == 25
    assert path.stat().st_size == 25 * 2414
    assert read_frames(path) == frames
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FrameError):
        read_frames(path)


def _serve_in_thread(frames, pacing, send_times=None):
    port = []
    ready = threading.Event()

    def on_ready(p):
        port.append(p)
        ready.set()

    th = threading.Thread(target=serve_frames, args=(frames,),
                          kwargs=dict(port=0, pacing=pacing, ready=on_ready,
                                      send_times=send_times), daemon=True)
    th.start()
    assert ready.wait(10)
    return th, port[0]


def test_socket_replay_matches_file(tmp_path, sap_trace):
    frames = frames_from_trace(sap_trace)
    th, port = _serve_in_thread(frames, "max")
    received = list(prefetch(receive_frames("127.0.0.1", port)))
    th.join(10)
    assert received == frames


def _random_model(seed=0):
    x = synthesize_array(np.random.default_rng(seed).uniform(-30, 30, (500, 3)))
    return init_model(7, seed=seed, regime="synthetic", norm=fit_normalization(x))


def test_socket_diagnosis_log_identical_to_file(sap_trace):
    model = _random_model()
    frames = frames_from_trace(sap_trace)
    by_file = DiagnosisSession(model)
    for fr in frames:
        by_file.process(fr.seq, fr.samples)
    th, port = _serve_in_thread(frames, "max")
    by_socket = DiagnosisSession(model)
    for fr in prefetch(receive_frames("127.0.0.1", port)):
        by_socket.process(fr.seq, fr.samples)
    th.join(10)
    assert by_socket.log_text() == by_file.log_text()


def test_realtime_pacing(healthy_trace):
    frames = frames_from_trace(healthy_trace)
    send_times = []
    th, port = _serve_in_thread(frames, "realtime", send_times)
    n = sum(1 for _ in receive_frames("127.0.0.1", port))
    th.join(10)
    assert n == len(frames) == 25
    gaps = np.diff(send_times)[2:]
    assert abs(statistics.median(gaps) - 0.020) <= 0.002
    assert abs(float(np.mean(gaps)) - 0.020) <= 0.002


def test_diagnosis_throughput(healthy_trace):
    session = DiagnosisSession(_random_model())
    frames = frames_from_trace(healthy_trace)
    t0 = time.perf_counter()
    for fr in frames:
        session.process(fr.seq, fr.samples)
    rate = 200 * len(frames) / (time.perf_counter() - t0)
    assert rate >= 10_000


def test_prefetch_propagates_errors():
    def source():
        yield 1
        raise FrameError("boom")

    got = []
    with pytest.raises(FrameError):
        for item in prefetch(source()):
            got.append(item)
    assert got == [1]
