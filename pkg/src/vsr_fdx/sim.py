"""Fixed-step switched-circuit simulator of the three-phase PWM boost rectifier.

Ideal IGBTs with antiparallel diodes, triangular-carrier PWM, a DC-voltage PI
loop feeding per-phase proportional-resonant current loops, and open-circuit
fault injection that blocks an IGBT channel while leaving its diode working.
The inner loop lives in ``_kernel_py`` / ``_kernel`` (see ``kernel.py``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import _kernel_py
from .errors import ConfigError, MalformedFileError, NonFiniteError
from .kernel import get_backend

TRACE_MAGIC = "vsr-trace v1"
TRACE_COLUMNS = "t,ia,ib,ic,udc,ref_angle,gates"
_ZERO_REF = 1e-12


class SwitchId(str, enum.Enum):
    SaP = "SaP"
    SaN = "SaN"
    SbP = "SbP"
    SbN = "SbN"
    ScP = "ScP"
    ScN = "ScN"

    @property
    def index(self) -> int:
        """Position in the SaP, SaN, SbP, SbN, ScP, ScN ordering."""
        return _SWITCH_ORDER.index(self)

    @property
    def phase(self) -> int:
        return self.index // 2

    @property
    def is_upper(self) -> bool:
        return self.index % 2 == 0

    @classmethod
    def parse(cls, name: str) -> "SwitchId":
        try:
            return cls(name.strip())
        except ValueError:
            raise ConfigError(f"unknown switch {name!r}; expected one of "
                              f"{', '.join(s.value for s in cls)}") from None

    def __str__(self) -> str:
        return self.value


_SWITCH_ORDER = list(SwitchId)
SWITCHES = tuple(_SWITCH_ORDER)


@dataclass(frozen=True)
class SimParams:
    """Rectifier, modulator and controller parameters.

    ``grid_voltage`` is line-to-line RMS. The controller gains are tuned for
    the default plant; they are not taken from any reference design.
    """

    grid_voltage: float = 40.0
    grid_freq: float = 50.0
    filter_inductance: float = 500e-6
    dc_capacitance: float = 7000e-6
    load_resistance: float = 16.0
    vdc_ref: float = 100.0
    switching_freq: float = 12.8e3
    control_freq: float = 25.6e3
    sim_step: float = 1.0 / (25.6e3 * 40)
    voltage_kp: float = 0.5
    voltage_ki: float = 10.0
    current_limit: float = 40.0
    current_kp: float = 2.0
    current_kr: float = 40.0
    resonant_damping: float = 5.0
    modulation_floor: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{f.name} must be a positive finite number, got {value!r}")
        if not math.isclose(self.control_freq, 2.0 * self.switching_freq, rel_tol=1e-12):
            raise ConfigError("control_freq must equal 2 x switching_freq")
        ratio = 1.0 / (self.control_freq * self.sim_step)
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ConfigError(
                f"sim_step {self.sim_step!r} does not divide the control period evenly")

    @property
    def phase_peak(self) -> float:
        """Grid phase-to-neutral peak voltage."""
        return self.grid_voltage * math.sqrt(2.0 / 3.0)

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.grid_freq

    @property
    def steps_per_control(self) -> int:
        return int(round(1.0 / (self.control_freq * self.sim_step)))

    def kernel_params(self) -> np.ndarray:
        spc = self.steps_per_control
        return np.array([
            self.filter_inductance, self.dc_capacitance, self.load_resistance,
            self.phase_peak, self.omega, self.vdc_ref, self.sim_step,
            float(spc), float(2 * spc), self.voltage_kp, self.voltage_ki,
            self.current_limit, self.current_kp, self.current_kr,
            self.resonant_damping, 1.0 / self.control_freq, self.modulation_floor,
        ], dtype=np.float64)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class ControllerState:
    voltage_integral: float = 0.0
    resonant_x1: tuple[float, float, float] = (0.0, 0.0, 0.0)
    resonant_x2: tuple[float, float, float] = (0.0, 0.0, 0.0)
    modulation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def to_array(self) -> np.ndarray:
        return np.array([self.voltage_integral, *self.resonant_x1,
                         *self.resonant_x2, *self.modulation], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "ControllerState":
        a = [float(x) for x in a]
        return cls(a[0], tuple(a[1:4]), tuple(a[4:7]), tuple(a[7:10]))


@dataclass(frozen=True)
class SimState:
    """Instantaneous rectifier state. Currents are positive grid-to-converter."""

    step_index: int = 0
    t: float = 0.0
    i_abc: tuple[float, float, float] = (0.0, 0.0, 0.0)
    u_dc: float = 0.0
    controller: ControllerState = field(default_factory=ControllerState)
    carrier_offset: float = 0.0
    steps_per_carrier: int = 80

    @property
    def carrier_phase(self) -> float:
        ph = self.carrier_offset + (self.step_index + 0.5) / self.steps_per_carrier
        return ph - math.floor(ph)

    @classmethod
    def initial(cls, params: SimParams, u_dc: float = 0.0,
                carrier_offset: float = 0.0) -> "SimState":
        return cls(u_dc=u_dc, carrier_offset=carrier_offset,
                   steps_per_carrier=2 * params.steps_per_control)


@dataclass(frozen=True)
class GateCommand:
    """Commanded upper-switch state per leg; lower gates are the complement."""

    upper_on: tuple[bool, bool, bool]

    def as_switches(self) -> tuple[bool, ...]:
        out = []
        for up in self.upper_on:
            out.extend((bool(up), not up))
        return tuple(out)


@dataclass(frozen=True)
class FaultEntry:
    switch: SwitchId
    onset: float
    clear: float | None = None

    def active(self, t: float) -> bool:
        return self.onset <= t and (self.clear is None or t < self.clear)


@dataclass(frozen=True)
class FaultScenario:
    """Open-circuit faults: which IGBTs are blocked and over which interval."""

    faults: tuple[FaultEntry, ...] = ()

    def __post_init__(self):
        seen = set()
        for f in self.faults:
            if f.switch in seen:
                raise ConfigError(f"duplicate fault entry for {f.switch}")
            seen.add(f.switch)
            if f.clear is not None and not f.onset < f.clear:
                raise ConfigError(f"fault on {f.switch}: onset must precede clear time")

    @classmethod
    def single(cls, switches, onset: float = 0.0) -> "FaultScenario":
        """All ``switches`` faulted from ``onset`` onwards."""
        return cls(tuple(FaultEntry(SwitchId(s), onset) for s in switches))

    @property
    def switches(self) -> frozenset[SwitchId]:
        return frozenset(f.switch for f in self.faults)

    @property
    def first_onset(self) -> float:
        return min((f.onset for f in self.faults), default=math.inf)

    def active_at(self, t: float) -> frozenset[SwitchId]:
        return frozenset(f.switch for f in self.faults if f.active(t))

    def kernel_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        onset = np.full(6, np.inf)
        clear = np.full(6, np.inf)
        for f in self.faults:
            onset[f.switch.index] = f.onset
            if f.clear is not None:
                clear[f.switch.index] = f.clear
        return onset, clear

    def shifted(self, delta: float) -> "FaultScenario":
        return FaultScenario(tuple(
            replace(f, onset=f.onset + delta,
                    clear=None if f.clear is None else f.clear + delta)
            for f in self.faults))


@dataclass(frozen=True, eq=False)
class Trace:
    """Uniformly sampled simulation output (one record per control instant).

    ``gates`` holds the effective permission bitmask per record (bit 0 = SaP,
    ordering SaP, SaN, SbP, SbN, ScP, ScN).
    """

    sample_rate: float
    t: np.ndarray
    i_abc: np.ndarray
    u_dc: np.ndarray
    ref_angle: np.ndarray
    gates: np.ndarray
    seed: int = 0
    config_hash: str = ""

    def __post_init__(self):
        for name in ("t", "i_abc", "u_dc", "ref_angle", "gates"):
            getattr(self, name).flags.writeable = False

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (self.sample_rate == other.sample_rate
                and all(np.array_equal(getattr(self, n), getattr(other, n))
                        for n in ("t", "i_abc", "u_dc", "ref_angle", "gates")))

    def gate_bits(self) -> np.ndarray:
        """(N, 6) bool array of effective permissions."""
        return ((self.gates[:, None] >> np.arange(6)) & 1).astype(bool)

    def window(self, t0: float, t1: float = math.inf) -> "Trace":
        sel = (self.t >= t0 - 1e-12) & (self.t < t1 - 1e-12)
        return Trace(self.sample_rate, self.t[sel], self.i_abc[sel], self.u_dc[sel],
                     self.ref_angle[sel], self.gates[sel], self.seed, self.config_hash)


def leg_pole_voltage(upper_cmd: bool, fault_upper: bool, fault_lower: bool,
                     phase_current: float, u_dc: float) -> float:
    """Leg midpoint voltage relative to the negative rail.

    Enumerates conduction paths: positive current leaves through the lower
    IGBT if it is permitted, otherwise through the upper diode; negative
    current returns through the upper IGBT if permitted, otherwise through
    the lower diode.
    """
    upper_ok = upper_cmd and not fault_upper
    lower_ok = (not upper_cmd) and not fault_lower
    if phase_current >= 0.0:
        return 0.0 if lower_ok else u_dc
    return u_dc if upper_ok else 0.0


def pr_controller(state: SimState, params: SimParams):
    """One control-instant update.

    Returns ``(modulation, controller_state)`` where modulation is the
    clamped per-phase duty reference in [-1, 1].
    """
    ctrl = list(state.controller.to_array())
    par = list(params.kernel_params())
    theta = params.omega * state.t
    _kernel_py.control_update(theta, *state.i_abc, state.u_dc, ctrl, par)
    new = ControllerState.from_array(ctrl)
    return new.modulation, new


def triangle(carrier_phase: float) -> float:
    return _kernel_py.triangle(carrier_phase)


def pwm_compare(modulation, carrier_phase: float) -> GateCommand:
    """Carrier comparison; the carrier sweeps -1 -> +1 -> -1 over one period."""
    tri = triangle(carrier_phase)
    return GateCommand(tuple(bool(m >= tri and m > -1.0) for m in modulation))


def apply_faults(cmd: GateCommand, scenario: FaultScenario, t: float) -> tuple[bool, ...]:
    """Per-switch conduction permissions after blocking the faulted IGBTs."""
    perms = list(cmd.as_switches())
    for sw in scenario.active_at(t):
        perms[sw.index] = False
    return tuple(perms)


def step(state: SimState, params: SimParams, scenario: FaultScenario) -> SimState:
    """Advance one integration step (pure-Python path)."""
    ctrl = list(state.controller.to_array())
    par = [float(x) for x in params.kernel_params()]
    onset, clear = scenario.kernel_arrays()
    ia, ib, ic, u, _ = _kernel_py.substep(
        state.step_index, *state.i_abc, state.u_dc, ctrl, par,
        onset.tolist(), clear.tolist(), state.carrier_offset)
    if not all(math.isfinite(x) for x in (ia, ib, ic, u)):
        raise NonFiniteError(f"state became non-finite at t={state.t:.6g} s")
    n = state.step_index + 1
    return replace(state, step_index=n, t=n * params.sim_step, i_abc=(ia, ib, ic),
                   u_dc=u, controller=ControllerState.from_array(ctrl))


def simulate(scenario: FaultScenario, duration: float, params: SimParams | None = None,
             seed: int = 0, *, onset_jitter: float = 0.0, random_carrier: bool = False,
             u_dc0: float = 0.0, backend: str | None = None,
             config_hash: str = "") -> Trace:
    """Run the closed-loop rectifier from a cold start for ``duration`` seconds.

    Records are taken at every control instant. ``seed`` only matters when
    ``onset_jitter`` > 0 (each onset shifted by U[0, jitter)) or
    ``random_carrier`` is set.
    """
    if not duration > 0:
        raise ConfigError("duration must be positive")
    params = params or SimParams()
    rng = np.random.default_rng(seed)
    carrier_offset = float(rng.uniform()) if random_carrier else 0.0
    if onset_jitter > 0:
        scenario = FaultScenario(tuple(
            replace(f, onset=f.onset + float(rng.uniform(0.0, onset_jitter)))
            for f in scenario.faults))
    onset, clear = scenario.kernel_arrays()
    n_records = int(round(duration * params.control_freq))
    out_t = np.zeros(n_records)
    out_i = np.zeros((n_records, 3))
    out_u = np.zeros(n_records)
    out_theta = np.zeros(n_records)
    out_mask = np.zeros(n_records, dtype=np.uint8)
    state = np.array([0.0, 0.0, 0.0, u_dc0])
    ctrl = np.zeros(10)
    status = get_backend(backend).run(0, n_records, state, ctrl, params.kernel_params(),
                                      onset, clear, carrier_offset, out_t, out_i,
                                      out_u, out_theta, out_mask)
    if status < 0:
        raise NonFiniteError("simulation state became non-finite; "
                             "sim_step too large or unstable gains")
    return Trace(params.control_freq, out_t, out_i, out_u, out_theta, out_mask,
                 seed=seed, config_hash=config_hash)


def reference_currents(angle) -> np.ndarray:
    """Unit-amplitude healthy reference currents for ``angle`` (radians)."""
    angle = np.asarray(angle, dtype=float)
    return np.stack([np.sin(angle - k * 2.0 * np.pi / 3.0) for k in range(3)], axis=-1)


def observability_mask(angles) -> np.ndarray:
    """(N, 6) bool: switch faults visible at each reference angle.

    The upper switch of a phase is observable while that phase's reference
    current is negative, the lower switch while it is positive.
    """
    ref = reference_currents(np.atleast_1d(angles))
    mask = np.zeros(ref.shape[:-1] + (6,), dtype=bool)
    mask[..., 0::2] = ref < -_ZERO_REF
    mask[..., 1::2] = ref > _ZERO_REF
    return mask


def observable_switches(reference_angle: float) -> frozenset[SwitchId]:
    row = observability_mask([reference_angle])[0]
    return frozenset(s for s, on in zip(SWITCHES, row) if on)


# --- trace files -----------------------------------------------------------

def _gate_string(mask: int) -> str:
    return "".join("1" if (mask >> j) & 1 else "0" for j in range(6))


def write_trace(trace: Trace, path) -> None:
    header = f"{TRACE_MAGIC}, rate={trace.sample_rate:.17g}, seed={trace.seed}"
    if trace.config_hash:
        header += f", config={trace.config_hash}"
    with open(path, "w") as fh:
        fh.write(header + "\n" + TRACE_COLUMNS + "\n")
        for k in range(len(trace)):
            ia, ib, ic = trace.i_abc[k]
            fh.write(f"{float(trace.t[k])!r},{float(ia)!r},{float(ib)!r},{float(ic)!r},"
                     f"{float(trace.u_dc[k])!r},{float(trace.ref_angle[k])!r},"
                     f"{_gate_string(int(trace.gates[k]))}\n")


def parse_header(line: str, magic: str) -> dict[str, str]:
    parts = [p.strip() for p in line.strip().split(",")]
    if not parts or parts[0] != magic:
        if parts and parts[0].split(" ")[0] == magic.split(" ")[0]:
            from .errors import VersionMismatchError
            raise VersionMismatchError(f"unsupported version {parts[0]!r}, expected {magic!r}")
        raise MalformedFileError(f"bad header {line.strip()!r}, expected {magic!r}")
    out = {}
    for p in parts[1:]:
        key, sep, value = p.partition("=")
        if not sep:
            raise MalformedFileError(f"bad header field {p!r}")
        out[key.strip()] = value.strip()
    return out


def read_trace(path) -> Trace:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedFileError("empty trace file")
    meta = parse_header(lines[0], TRACE_MAGIC)
    try:
        rate = float(meta["rate"])
    except (KeyError, ValueError):
        raise MalformedFileError("trace header lacks a valid rate") from None
    body = lines[1:]
    if body and body[0].strip() == TRACE_COLUMNS:
        body = body[1:]
    n = len(body)
    num = np.zeros((n, 6))
    gates = np.zeros(n, dtype=np.uint8)
    for k, line in enumerate(body):
        cols = line.split(",")
        if len(cols) != 7 or len(cols[6]) != 6 or set(cols[6]) - {"0", "1"}:
            raise MalformedFileError(f"bad trace row {k + 1}: {line!r}")
        try:
            num[k] = [float(c) for c in cols[:6]]
        except ValueError:
            raise MalformedFileError(f"bad number in trace row {k + 1}") from None
        gates[k] = sum(1 << j for j, c in enumerate(cols[6]) if c == "1")
    if n > 1 and not np.all(np.diff(num[:, 0]) > 0):
        raise MalformedFileError("trace times are not strictly increasing")
    return Trace(rate, num[:, 0].copy(), num[:, 1:4].copy(), num[:, 4].copy(),
                 num[:, 5].copy(), gates, seed=int(meta.get("seed", 0)),
                 config_hash=meta.get("config", ""))


# --- waveform measurements used by checks and reports ----------------------

def fundamental_amplitude(signal, angle) -> float:
    """Amplitude of the grid-frequency component, by projection.

    ``angle`` is the reference angle of each sample; the window should span
    whole fundamental periods.
    """
    signal = np.asarray(signal, float)
    angle = np.asarray(angle, float)
    a = 2.0 * np.mean(signal * np.sin(angle))
    b = 2.0 * np.mean(signal * np.cos(angle))
    return float(math.hypot(a, b))


def half_cycle_rms(trace: Trace, phase: int, negative: bool) -> float:
    """RMS of ``phase`` current over records where its reference has the given sign."""
    ref = reference_currents(trace.ref_angle)[:, phase]
    sel = ref < 0 if negative else ref > 0
    return float(np.sqrt(np.mean(trace.i_abc[sel, phase] ** 2)))
