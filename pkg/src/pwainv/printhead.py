"""Inkjet printhead positioning benchmark.

A belt-driven printhead under switching-gain PD feedback.  Feedforward
controllers are synthesised from a *control model* (2 ms sample period) and
evaluated on a *truth model* (1 ms) with process and measurement noise.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.signal

from .errors import PwaError
from .ilc import (
    IlcSession,
    LiftedInverse,
    LiftedModel,
    Scheme,
    build_filters,
    lowpass_impulse_response,
    nrmse,
    peak_error,
    run_trials,
)
from .inversion import invert_rd1
from .pwa import ExogenousSchedule, LocationMatrices, Partition, PwaModel, Trajectory, as_series, simulate
from .stable import StableInversionConfig, stable_inverse

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Plants


@dataclass(frozen=True)
class ZpkModel:
    zeros: tuple
    poles: tuple
    gain: float
    Ts: float

    def __post_init__(self):
        for name in ("zeros", "poles"):
            vals = np.asarray(getattr(self, name), dtype=complex)
            cplx = vals[np.abs(vals.imag) > 0]
            if not np.allclose(np.sort_complex(cplx), np.sort_complex(cplx.conj())):
                raise ValueError(f"complex {name} must come in conjugate pairs")
            object.__setattr__(self, name, tuple(complex(v) if v.imag else float(v.real) for v in vals))
        if self.Ts <= 0:
            raise ValueError("sample period must be positive")

    @property
    def nmp_zeros(self):
        """Zeros outside the unit circle."""
        return [z for z in self.zeros if abs(z) > 1.0]

    def frequency_response(self, w):
        """Transfer function at ``z = exp(j w)`` for normalised frequencies ``w`` (rad/sample)."""
        z = np.exp(1j * np.asarray(w, dtype=float))
        num = np.prod([z - c for c in self.zeros], axis=0) if self.zeros else np.ones_like(z)
        den = np.prod([z - p for p in self.poles], axis=0)
        return self.gain * num / den


class StateSpace(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float


def zpk_to_state_space(model: ZpkModel) -> StateSpace:
    """Controllable-canonical realisation of a proper zero-pole-gain model."""
    if len(model.zeros) > len(model.poles):
        raise ValueError("transfer function is improper (more zeros than poles)")
    A, B, C, D = scipy.signal.zpk2ss(list(model.zeros), list(model.poles), model.gain)
    return StateSpace(np.real(A), np.real(B).reshape(-1), np.real(C).reshape(-1), float(np.real(D).squeeze()))


TRUTH_PLANT = ZpkModel((-5.10, -0.44, 0.16), (0.88 + 0.37j, 0.88 - 0.37j, 1.00, 1.00, 0.0), 2.42e-7, 0.001)
CONTROL_PLANT = ZpkModel((33.10, -2.21, 0.16), (0.67 + 0.61j, 0.67 - 0.61j, 0.99, 1.00), -2.38e-7, 0.002)


# ---------------------------------------------------------------------------
# Feedback controller


@dataclass(frozen=True)
class FeedbackParams:
    """Second-order lowpass in series with a PD whose proportional gain switches on |e|."""

    a1: float
    a2: float
    b: float
    Kd: float
    Kp1: float
    Kp2: float
    e_switch: float
    Ts: float

    def __post_init__(self):
        if self.e_switch <= 0:
            raise ValueError("e_switch must be positive")

    def kp(self, e_prev):
        return self.Kp1 if abs(e_prev) <= self.e_switch else self.Kp2


TRUTH_FEEDBACK = FeedbackParams(-1.65, 0.70, 0.027, 3.0, 40.0, 160.0, 2e-3, 0.001)
CONTROL_FEEDBACK = FeedbackParams(-1.31, 0.50, 0.093, 3.0, 40.0, 160.0, 2e-3, 0.002)


@dataclass(frozen=True)
class SwitchingController:
    """Controller locations (one per proportional gain) and the error-based partition."""

    params: FeedbackParams
    locations: tuple
    partition: Partition

    def location_for_error(self, e_prev):
        x = np.zeros(3)
        x[2] = e_prev
        return self.partition.locate(x)


def _controller_matrices(p: FeedbackParams, Kp):
    A = np.array([[0.0, 1.0, 0.0], [-p.a2, -p.a1, 0.0], [0.0, 0.0, 0.0]])
    B = np.array([0.0, 1.0, 1.0])
    C = -p.b * np.array([p.Kd * (1 + p.a2) / p.Ts + Kp * p.a2, p.Kd * p.a1 / p.Ts + Kp * (p.a1 - 1), 0.0])
    D = p.b * (Kp + p.Kd / p.Ts)
    return StateSpace(A, B, C, D)


def _error_partition(n_x, e_switch):
    P = np.zeros((2, n_x))
    P[0, -1] = -1.0
    P[1, -1] = 1.0
    return Partition(P, [-e_switch, -e_switch], [[(1, 1)], [(1, 0), (0, 1)]])


def build_feedback_controller(p: FeedbackParams) -> SwitchingController:
    """Three-state realisation whose last state stores the previous error."""
    locs = tuple(_controller_matrices(p, kp) for kp in (p.Kp1, p.Kp2))
    return SwitchingController(p, locs, _error_partition(3, p.e_switch))


def build_monolithic(plant: StateSpace, controller: SwitchingController, r) -> PwaModel:
    """Closed loop from feedforward input to plant output with the reference bound in ``F``."""
    if plant.D != 0.0:
        raise ValueError("plant must be strictly proper")
    Ap, Bp, Cp = np.atleast_2d(plant.A), plant.B, plant.C
    npl = Ap.shape[0]
    locations, F_exo = [], []
    for c in controller.locations:
        A = np.block([[Ap - c.D * np.outer(Bp, Cp), np.outer(Bp, c.C)], [-np.outer(c.B, Cp), c.A]])
        B = np.concatenate([Bp, np.zeros(3)])
        C = np.concatenate([Cp, np.zeros(3)])
        locations.append(LocationMatrices.make(A, B, None, C, 0.0, 0.0))
        F_exo.append(np.concatenate([Bp * c.D, c.B]))
    values, start = as_series(r)
    schedule = ExogenousSchedule(locations, F_exo, signal=values, start_k=start or 0, name="r")
    return PwaModel(_error_partition(npl + 3, controller.params.e_switch), schedule, declared_mu_c=1,
                    name="printhead closed loop")


# ---------------------------------------------------------------------------
# Signals


@dataclass(frozen=True)
class ReferenceConfig:
    """Rest-to-rest move: rise, plateau and return inside ``[start_frac, stop_frac]`` of the horizon."""

    amplitude: float = 0.15
    n_samples: int = 1999
    start_frac: float = 0.2
    stop_frac: float = 0.8
    rail_length: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.start_frac < self.stop_frac <= 1.0:
            raise ValueError("need 0 <= start_frac < stop_frac <= 1")
        if abs(self.amplitude) > self.rail_length:
            raise ValueError(f"amplitude {self.amplitude} m exceeds the {self.rail_length} m rail")


def _min_jerk(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s**2)


def make_reference(cfg: ReferenceConfig = ReferenceConfig()) -> Trajectory:
    """Smooth rest-plateau-rest position profile (metres)."""
    n = cfg.n_samples
    k = np.arange(n)
    a, b = cfg.start_frac * (n - 1), cfg.stop_frac * (n - 1)
    third = (b - a) / 3.0
    up = _min_jerk((k - a) / third)
    down = _min_jerk((k - (b - third)) / third)
    return Trajectory(cfg.amplitude * (up - down), 0, "r")


def downsample2(t) -> Trajectory:
    """Keep even-indexed samples."""
    values, start = as_series(t)
    return Trajectory(values[::2], (start or 0) // 2, getattr(t, "label", "y"))


def control_reference(r_truth) -> Trajectory:
    """Control-rate reference ``r[0..N]``: one rest sample, then the decimated truth reference.

    The decimated samples are the lifted reference ``r[1..N]``, so control
    step ``k`` corresponds to truth step ``2 (k - 1)`` of ``r_truth``.
    """
    values, _ = as_series(r_truth)
    return Trajectory(np.concatenate([values[:1], values[::2]]), 0, "r")


def truth_simulation_reference(r_truth) -> Trajectory:
    """Truth-rate reference with one control step of rest prepended (matches :func:`control_reference`)."""
    values, _ = as_series(r_truth)
    return Trajectory(np.concatenate([values[:1], values[:1], values]), 0, "r")


def upsample2_zoh(t, length: int | None = None) -> Trajectory:
    """Repeat every sample twice, optionally truncating to ``length`` samples."""
    values, start = as_series(t)
    out = np.repeat(values, 2)
    if length is not None:
        if length > out.size:
            raise ValueError(f"cannot stretch {values.size} samples to {length}")
        if length < out.size:
            log.debug("upsample2_zoh: truncating %d trailing samples to reach %d", out.size - length, length)
        out = out[:length]
    return Trajectory(out, 2 * (start or 0), getattr(t, "label", "u"))


def add_noise(t, sigma: float, seed) -> Trajectory:
    """Add i.i.d. zero-mean Gaussian noise (deterministic for a given seed)."""
    values, start = as_series(t)
    if sigma == 0.0:
        return Trajectory(values, start or 0, getattr(t, "label", "x"))
    rng = np.random.default_rng(seed)
    return Trajectory(values + rng.normal(0.0, sigma, values.size), start or 0, getattr(t, "label", "x"))


# ---------------------------------------------------------------------------
# Benchmark


@dataclass(frozen=True)
class BenchConfig:
    truth_plant: ZpkModel = TRUTH_PLANT
    truth_feedback: FeedbackParams = TRUTH_FEEDBACK
    control_plant: ZpkModel = CONTROL_PLANT
    control_feedback: FeedbackParams = CONTROL_FEEDBACK
    sigma_process: float = 0.03
    sigma_measure: float = 50e-6
    seed: int = 0
    reference: ReferenceConfig = ReferenceConfig()
    n_trials: int = 9
    n_edge: int = 35
    ililc_gain: float | None = None
    gradient_gain: float | None = None
    ptype_gain: float | None = None
    ililc_candidates: tuple = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5)
    gradient_candidates: tuple = tuple(range(8000, 0, -250))
    ptype_candidates: tuple = tuple(range(60, 0, -1))

    def __post_init__(self):
        if not np.isclose(self.truth_plant.Ts * 2, self.control_plant.Ts):
            raise ValueError("truth sample period must be half the control sample period")


class Benchmark:
    """Truth/control models, filters and executors for one benchmark configuration."""

    def __init__(self, cfg: BenchConfig = BenchConfig()):
        self.cfg = cfg
        self.r_truth = make_reference(cfg.reference)
        self.r_control = control_reference(self.r_truth)
        self.truth_plant_ss = zpk_to_state_space(cfg.truth_plant)
        self.control_plant_ss = zpk_to_state_space(cfg.control_plant)
        self.truth = build_monolithic(
            self.truth_plant_ss, build_feedback_controller(cfg.truth_feedback), truth_simulation_reference(self.r_truth)
        )
        self.control = build_monolithic(
            self.control_plant_ss, build_feedback_controller(cfg.control_feedback), self.r_control
        )
        self.mu = 1
        self.inverse = invert_rd1(self.control)
        self.N = len(self.r_control) - 1
        self.size = self.N - self.mu + 1
        self.r = self.r_control.values[self.mu:]
        self.inverter = LiftedInverse(self.inverse, StableInversionConfig())
        self.lifted_model = LiftedModel(self.control, self.mu)
        fb = cfg.control_feedback
        h = lowpass_impulse_response(fb.a1, fb.a2, fb.b, self.size)
        self.filters = build_filters(h, cfg.n_edge, self.N, self.mu)

    # executors -------------------------------------------------------------

    def control_executor(self, u, trial=0):
        return self.lifted_model(u)

    def truth_executor(self, u, trial=0):
        """Upsample ``u``, run the noisy truth loop and return decimated lifted measurements."""
        cfg = self.cfg
        r_sim = self.truth.schedule.signal
        n_truth = r_sim.size
        u_truth = np.concatenate([upsample2_zoh(np.asarray(u, dtype=float)).values,
                                  np.zeros(n_truth - 2 * self.size)])
        seq = np.random.SeedSequence([cfg.seed, trial])
        proc_seed, meas_seed = seq.spawn(2)
        u_truth = add_noise(u_truth, cfg.sigma_process, proc_seed).values
        w_meas = add_noise(np.zeros(n_truth), cfg.sigma_measure, meas_seed).values
        # the controller acts on the measured error r - (y + w), i.e. on the shifted reference r - w
        model = PwaModel(self.truth.partition, self.truth.schedule.rebind(r_sim - w_meas), name=self.truth.name)
        sim = simulate(model, np.zeros(model.n_x), u_truth)
        y_meas = sim.y.values + w_meas
        return y_meas[2 * self.mu::2][: self.size]

    # scenarios -------------------------------------------------------------

    def stable_inverse_input(self):
        return self.inverter(self.r)

    def session(self, scheme, gain):
        scheme = Scheme(scheme)
        return IlcSession(scheme, gain, self.filters, self.truth_executor, inverter=self.inverter,
                          model=self.lifted_model)

    def run_scheme(self, scheme, gain, n_trials=None, stop_on_increase=False):
        return run_trials(self.session(scheme, gain), self.r, n_trials or self.cfg.n_trials,
                          stop_on_increase=stop_on_increase)


@dataclass
class SelfInversion:
    """Stable inverse of a padded control reference replayed on the noise-free control loop."""

    result: object
    r: np.ndarray
    y: np.ndarray
    u: np.ndarray
    lead: int
    trail: int
    model: PwaModel

    @property
    def nrmse(self):
        return nrmse(self.r, self.y)

    @property
    def peak(self):
        return peak_error(self.r, self.y)


def padded_self_inversion(bench: Benchmark, lead: int, trail: int, r_control=None,
                          cfg: StableInversionConfig | None = None) -> SelfInversion:
    """Hold the reference endpoints for ``lead``/``trail`` extra control steps, invert and replay.

    At rest the closed-loop forcing vanishes when the previewed output equals the
    held reference, so holding the endpoints is the force-zeroing pad.  The
    returned ``r``/``y``/``u`` cover the unpadded lifted samples only.
    """
    if lead < 0 or trail < 0:
        raise ValueError("pad lengths must be non-negative")
    values = bench.r_control.values if r_control is None else np.asarray(r_control, dtype=float)
    padded = np.concatenate([np.full(lead, values[0]), values, np.full(trail, values[-1])])
    model = build_monolithic(bench.control_plant_ss, build_feedback_controller(bench.cfg.control_feedback),
                             Trajectory(padded, 0, "r"))
    inv = invert_rd1(model)
    preview = padded[1:]
    res = stable_inverse(inv, preview, cfg)
    y = LiftedModel(model, 1)(res.u.values)
    window = slice(lead, lead + values.size - 1)
    return SelfInversion(res, preview[window], y[window], res.u.values[window], lead, trail, model)


def is_monotone(values, rtol=0.0):
    return all(b <= a * (1.0 + rtol) for a, b in zip(values, values[1:]))


def tune_gain_line_search(bench: Benchmark, scheme, candidates, n_trials=None, integer: bool | None = None
                          ) -> tuple[float, dict]:
    """Largest gain whose NRMSE decreases monotonically over all trials.

    Candidates are screened from largest to smallest; unstable or
    non-monotone gains are rejected.  For integer gains the interval between
    the accepted candidate and the next larger (rejected) one is then bisected
    so the result is the largest acceptable whole number on that bracket.
    Returns the gain and the NRMSE curve of every gain evaluated (``None`` when
    the plant failed).
    """
    n_trials = n_trials or bench.cfg.n_trials
    tried = {}

    def accept(gain):
        try:
            curve = [h.nrmse for h in bench.run_scheme(scheme, gain, n_trials, stop_on_increase=True)]
        except PwaError as exc:
            log.info("gain %s rejected for %s: %s", gain, scheme, exc)
            tried[gain] = None
            return False
        tried[gain] = curve
        return len(curve) == n_trials and all(np.isfinite(curve)) and is_monotone(curve)

    ordered = sorted(candidates, reverse=True)
    if integer is None:
        integer = all(float(g).is_integer() for g in ordered)
    rejected = None
    for gain in ordered:
        if accept(gain):
            break
        rejected = gain
    else:
        raise ValueError(f"no candidate gain gives monotone learning for {Scheme(scheme).value}")
    if integer and rejected is not None:
        lo, hi = int(gain), int(rejected)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if accept(mid):
                lo = mid
            else:
                hi = mid
        gain = lo
    return gain, tried


@dataclass
class BenchResults:
    table: list
    trials: dict
    gains: dict
    trajectories: dict
    timings: dict = field(default_factory=dict)
    self_inversion: dict = field(default_factory=dict)

    def row(self, scenario):
        return next(r for r in self.table if r["scenario"] == scenario)


SCENARIOS = ("ililc", "stable-inversion", "feedback-only", "gradient", "ptype")


def run_benchmark(cfg: BenchConfig = BenchConfig(), bench: Benchmark | None = None) -> BenchResults:
    """Run the five scenarios on the truth model and collect NRMSE and peak error."""
    bench = bench or Benchmark(cfg)
    timings = {}
    t0 = time.perf_counter()
    u_si = bench.stable_inverse_input()
    y_ctrl = bench.control_executor(u_si)
    self_inv = {"nrmse": nrmse(bench.r, y_ctrl), "peak": peak_error(bench.r, y_ctrl)}
    timings["self-inversion"] = time.perf_counter() - t0

    gains = {}
    trials = {}
    trajectories = {}
    table = []
    for scheme, fixed, cands in (
        ("ililc", cfg.ililc_gain, cfg.ililc_candidates),
        ("gradient", cfg.gradient_gain, cfg.gradient_candidates),
        ("ptype", cfg.ptype_gain, cfg.ptype_candidates),
    ):
        t0 = time.perf_counter()
        try:
            if fixed is None:
                gain, tried = tune_gain_line_search(bench, scheme, cands)
                hist = bench.run_scheme(scheme, gain)
            else:
                gain = fixed
                hist = bench.run_scheme(scheme, gain)
        except PwaError as exc:
            raise type(exc)(f"scenario {scheme}: {exc}", **exc.details) from exc
        gains[scheme] = gain
        trials[scheme] = [(h.nrmse, h.peak) for h in hist]
        trajectories[scheme] = {"u": hist[-1].u, "y": hist[-1].y}
        timings[scheme] = time.perf_counter() - t0
        if scheme == "ililc":
            table.append({"scenario": "feedback-only", "nrmse": hist[0].nrmse, "peak": hist[0].peak})
            trajectories["feedback-only"] = {"u": hist[0].u, "y": hist[0].y}
        table.append({"scenario": scheme, "nrmse": hist[-1].nrmse, "peak": hist[-1].peak})

    t0 = time.perf_counter()
    y_si = bench.truth_executor(u_si, 0)
    table.append({"scenario": "stable-inversion", "nrmse": nrmse(bench.r, y_si), "peak": peak_error(bench.r, y_si)})
    trajectories["stable-inversion"] = {"u": u_si, "y": y_si}
    timings["stable-inversion"] = time.perf_counter() - t0
    order = {s: i for i, s in enumerate(SCENARIOS)}
    table.sort(key=lambda row: order[row["scenario"]])
    return BenchResults(table, trials, gains, trajectories, timings, self_inv)
