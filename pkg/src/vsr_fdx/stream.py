"""Fixed-size binary telemetry frames: codec, resampling, file and socket transport.

Wire format of one frame (little endian)::

    magic  4s   b"VSRF"
    seq    u64  frame sequence number
    count  u16  samples per frame (200)
    data   count x 3 float32, interleaved (i_a, i_b, i_c)
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import FrameError
from .sim import Trace

MAGIC = b"VSRF"
HEADER = struct.Struct("<4sQH")
FRAME_SAMPLES = 200
STREAM_RATE = 10_000.0
FRAME_BYTES = HEADER.size + FRAME_SAMPLES * 3 * 4  # 2414
FRAME_PERIOD = FRAME_SAMPLES / STREAM_RATE  # 20 ms
_SAMPLE_DTYPE = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class Frame:
    seq: int
    samples: np.ndarray  # (count, 3) float32

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=_SAMPLE_DTYPE).reshape(-1, 3)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if not 0 <= self.seq < 2**64:
            raise FrameError("sequence number out of range")
        if len(s) >= 2**16:
            raise FrameError("too many samples for one frame")

    @property
    def count(self) -> int:
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.seq == other.seq and encode_frame(self) == encode_frame(other)


def frame_size(count: int = FRAME_SAMPLES) -> int:
    return HEADER.size + count * 12


def encode_frame(frame: Frame) -> bytes:
    return HEADER.pack(MAGIC, frame.seq, frame.count) + frame.samples.tobytes()


def decode_frame(buf: bytes, count: int = FRAME_SAMPLES) -> Frame:
    """Decode one frame; rejects bad magic, wrong count and wrong length."""
    if len(buf) < HEADER.size:
        raise FrameError(f"frame truncated: {len(buf)} bytes")
    magic, seq, n = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FrameError(f"bad frame magic {magic!r}")
    if n != count:
        raise FrameError(f"frame carries {n} samples, expected {count}")
    if len(buf) != frame_size(n):
        raise FrameError(f"frame length {len(buf)} != {frame_size(n)}")
    data = np.frombuffer(buf, dtype=_SAMPLE_DTYPE, offset=HEADER.size).reshape(n, 3)
    return Frame(seq, data)


# --- resampling -----------------------------------------------------------------

def resample(t, values, rate: float = STREAM_RATE) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of (N, k) ``values`` onto a uniform grid starting at t[0]."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) == 0:
        return t.copy(), v.reshape(0, *v.shape[1:])
    n = int(np.floor((t[-1] - t[0]) * rate + 1e-9)) + 1
    grid = t[0] + np.arange(n) / rate
    cols = v.reshape(len(t), -1)
    out = np.column_stack([np.interp(grid, t, cols[:, k]) for k in range(cols.shape[1])])
    return grid, out.reshape((n,) + v.shape[1:])


def frames_from_trace(trace: Trace, rate: float = STREAM_RATE,
                      count: int = FRAME_SAMPLES) -> list[Frame]:
    """Resample the trace currents to ``rate`` and cut them into whole frames.

    A short trailing remainder is dropped.
    """
    if trace.sample_rate < rate:
        raise FrameError(f"trace rate {trace.sample_rate} Hz below stream rate {rate} Hz")
    _, i_abc = resample(trace.t, trace.i_abc, rate)
    n_frames = len(i_abc) // count
    return [Frame(k, i_abc[k * count:(k + 1) * count]) for k in range(n_frames)]


# --- files --------------------------------------------------------------------------

def write_frames(frames, path) -> int:
    n = 0
    with open(path, "wb") as fh:
        for fr in frames:
            fh.write(encode_frame(fr))
            n += 1
    return n


def _read_exact(read, size: int) -> bytes:
    chunks = []
    got = 0
    while got < size:
        chunk = read(size - got)
        if not chunk:
            break
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def iter_frames(read, count: int = FRAME_SAMPLES):
    """Yield frames from a byte source ``read(n)`` until a clean end of stream."""
    size = frame_size(count)
    while True:
        buf = _read_exact(read, size)
        if not buf:
            return
        if len(buf) < size:
            raise FrameError(f"stream ended inside a frame ({len(buf)} of {size} bytes)")
        yield decode_frame(buf, count)


def read_frames(path, count: int = FRAME_SAMPLES) -> list[Frame]:
    with open(path, "rb") as fh:
        return list(iter_frames(fh.read, count))


# --- sockets ------------------------------------------------------------------------

def serve_frames(frames, host: str = "127.0.0.1", port: int = 0, *, pacing: str = "max",
                 period: float = FRAME_PERIOD, ready=None, accept_timeout: float | None = 30.0,
                 send_times: list | None = None) -> int:
    """Serve ``frames`` to a single TCP client, then close.

    ``pacing="realtime"`` sleeps so frame k leaves at ``start + k * period``;
    ``"max"`` sends as fast as the socket allows. ``ready(port)`` is called
    once the server listens, which is how callers learn an ephemeral port.
    Returns the number of frames sent.
    """
    if pacing not in ("realtime", "max"):
        raise ValueError(f"unknown pacing {pacing!r}")
    with socket.create_server((host, port)) as srv:
        srv.settimeout(accept_timeout)
        if ready is not None:
            ready(srv.getsockname()[1])
        conn, _ = srv.accept()
        with conn:
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            start = time.perf_counter()
            sent = 0
            for k, fr in enumerate(frames):
                if pacing == "realtime":
                    delay = start + k * period - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                conn.sendall(encode_frame(fr))
                if send_times is not None:
                    send_times.append(time.perf_counter())
                sent += 1
            conn.shutdown(socket.SHUT_WR)
    return sent


def connect(host: str, port: int, timeout: float = 10.0) -> socket.socket:
    """Connect, retrying until ``timeout`` so a client may start before its server."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection((host, port), timeout=timeout)
        except (ConnectionRefusedError, socket.timeout):
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)


def receive_frames(host: str, port: int, count: int = FRAME_SAMPLES, timeout: float = 10.0):
    """Yield frames from a TCP server until it closes the connection."""
    sock = connect(host, port, timeout)
    with sock:
        sock.settimeout(None)
        with sock.makefile("rb") as fh:
            yield from iter_frames(fh.read, count)


_END = object()


def prefetch(frames, maxsize: int = 8):
    """Receive frames on a helper thread through a bounded in-order queue.

    Errors raised by the source are re-raised in the consumer.
    """
    q: queue.Queue = queue.Queue(maxsize)

    def pump():
        try:
            for fr in frames:
                q.put(fr)
        except BaseException as exc:  # forwarded to the consumer
            q.put(exc)
        else:
            q.put(_END)

    th = threading.Thread(target=pump, daemon=True)
    th.start()
    while True:
        item = q.get()
        if item is _END:
            break
        if isinstance(item, BaseException):
            raise item
        yield item
    th.join()
