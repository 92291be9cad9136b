"""Relative degrees, output preview and conventional inverses of PWA models.

Inverses take the previewed output ``y[k + mu]`` as input and return ``u[k]``
as output.  They are themselves :class:`~pwainv.pwa.PwaModel` instances
(wrapped in :class:`InversePwaModel`) so they can be simulated, serialised and
stably inverted with the same machinery as forward models.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    A5Violated,
    A6Violated,
    AssumptionViolated,
    DegreeExceedsCap,
    EmptySolutionSet,
    HorizonError,
    WrongDegree,
)
from .pwa import FunctionSchedule, LocationMatrices, Partition, PwaModel, simulate

NONZERO_RTOL = 1e-12
DEFAULT_CAP = 6


def _nonzero(value, scale):
    return abs(value) > NONZERO_RTOL * scale


def _anchor(model, k):
    return model.start_k if k is None else k


def _lookahead_times(model, k, lookahead):
    if model.horizon is None:
        return [k]
    return [t for t in model.schedule.sample_times(lookahead) if t >= k] or [k]


# ---------------------------------------------------------------------------
# Relative degree


def component_relative_degree(model: PwaModel, q: int, k: int | None = None, cap: int = DEFAULT_CAP) -> int:
    """Relative degree of location ``q`` evaluated at time ``k``.

    Zero when ``D != 0``, otherwise the smallest ``m`` for which the Markov
    coefficient ``C[k+m] A[k+m-1] ... A[k+1] B[k]`` (all in location ``q``) is
    nonzero.
    """
    k = _anchor(model, k)
    m0 = model.matrices(q, k)
    if _nonzero(m0.D, max(abs(m0.D), np.linalg.norm(m0.C) * np.linalg.norm(m0.B), 1.0)):
        return 0
    v = m0.B.copy()
    scale = np.linalg.norm(m0.B)
    for m in range(1, cap + 1):
        try:
            mk = model.matrices(q, k + m)
        except HorizonError:
            break
        coeff = mk.C @ v
        if _nonzero(coeff, np.linalg.norm(mk.C) * scale):
            return m
        scale *= np.linalg.norm(mk.A)
        v = mk.A @ v
    raise DegreeExceedsCap(f"location {q} has relative degree above {cap} at k={k}", location=q, cap=cap)


def markov_coefficient(model: PwaModel, k: int, sequence) -> tuple[float, float]:
    """Coefficient of ``u[k]`` in ``y[k + len(sequence) - 1]`` and its norm scale.

    ``sequence`` lists the active locations at ``k, k+1, ..., k+mu``.
    """
    mu = len(sequence) - 1
    first = model.matrices(sequence[0], k)
    if mu == 0:
        return first.D, max(abs(first.D), 1.0)
    v = first.B
    scale = np.linalg.norm(first.B)
    for i in range(1, mu):
        a = model.matrices(sequence[i], k + i).A
        v = a @ v
        scale *= np.linalg.norm(a)
    c = model.matrices(sequence[mu], k + mu).C
    return float(c @ v), scale * np.linalg.norm(c)


@dataclass
class RelativeDegreeReport:
    mu_q: dict
    mu_c: int | None
    mu_tilde: int
    coefficients: dict = field(default_factory=dict)
    zero_witnesses: dict = field(default_factory=dict)
    anchor_k: int = 0

    def to_dict(self):
        return {
            "mu_q": {str(q): v for q, v in self.mu_q.items()},
            "mu_c": self.mu_c,
            "mu_tilde": self.mu_tilde,
            "anchor_k": self.anchor_k,
            "zero_witnesses": {str(m): list(s) for m, s in self.zero_witnesses.items()},
        }


def _global_degree_at(model, k, cap):
    nq = model.n_locations
    zero_witnesses = {}
    for mu in range(cap + 1):
        coefficients = {}
        failing = None
        try:
            for seq in itertools.product(range(nq), repeat=mu + 1):
                coeff, scale = markov_coefficient(model, k, seq)
                coefficients[seq] = coeff
                if not _nonzero(coeff, scale):
                    failing = seq
                    break
        except HorizonError:
            break
        if failing is None:
            return mu, coefficients, zero_witnesses
        zero_witnesses[mu] = failing
    raise DegreeExceedsCap(f"global dynamical relative degree exceeds {cap} at k={k}", cap=cap)


def global_relative_degree(model: PwaModel, k: int | None = None, cap: int = DEFAULT_CAP) -> RelativeDegreeReport:
    """Global dynamical relative degree by exhaustive switching-sequence enumeration.

    For each candidate ``mu`` every sequence of ``mu + 1`` locations is tried;
    the smallest ``mu`` for which ``u[k]`` reaches ``y[k + mu]`` with a nonzero
    coefficient under *every* sequence is returned.  Time-varying schedules are
    re-evaluated at the horizon midpoint and end to confirm the zero pattern.
    """
    k = _anchor(model, k)
    mu_q = {q: component_relative_degree(model, q, k, cap) for q in range(model.n_locations)}
    if len(set(mu_q.values())) != 1:
        raise AssumptionViolated(
            f"component relative degrees differ across locations: {mu_q}",
            assumption="A4 (equal component relative degree)", mu_q=mu_q,
        )
    mu_c = next(iter(mu_q.values()))
    mu, coefficients, zero_witnesses = _global_degree_at(model, k, cap)
    if not model.schedule.time_invariant and model.horizon is not None:
        for t in _lookahead_times(model, k, cap + 1):
            if t == k:
                continue
            other, _, _ = _global_degree_at(model, t, cap)
            if other != mu:
                raise AssumptionViolated(
                    f"relative degree changes over the horizon ({mu} at k={k}, {other} at k={t})",
                    assumption="A4 (equal component relative degree for all time)",
                )
    return RelativeDegreeReport(mu_q, mu_c, mu, coefficients, zero_witnesses, k)


# ---------------------------------------------------------------------------
# Output preview


@dataclass(frozen=True)
class PreviewCoefficients:
    """``y[k+mu] = Ccal x[k] + Dcal u[k] + Gcal + sum_s psi_coeffs[s-1] u[k+s]``."""

    Ccal: np.ndarray
    Dcal: float
    Gcal: float
    psi_coeffs: tuple

    def predict(self, x, u, future_u=()):
        psi = sum(c * v for c, v in zip(self.psi_coeffs, future_u))
        return float(self.Ccal @ np.asarray(x, dtype=float) + self.Dcal * u + self.Gcal + psi)


def preview_coefficients(model: PwaModel, k: int, location_sequence) -> PreviewCoefficients:
    """Coefficients of the minimum-preview output for a given switching sequence.

    Products run with the latest time step on the left; empty products are the
    identity and empty sums are zero.
    """
    seq = tuple(location_sequence)
    mu = len(seq) - 1
    if mu < 0:
        raise ValueError("location sequence must not be empty")
    mats = [model.matrices(q, k + i) for i, q in enumerate(seq)]
    n = model.n_x
    if mu == 0:
        return PreviewCoefficients(np.array(mats[0].C), mats[0].D, mats[0].G, ())

    def prod(lo, hi):
        out = np.eye(n)
        for m in range(lo, hi + 1):
            out = mats[m].A @ out
        return out

    c_last = mats[mu].C
    Ccal = c_last @ prod(0, mu - 1)
    Dcal = float(c_last @ prod(1, mu - 1) @ mats[0].B)
    Gcal = float(c_last @ sum((prod(s + 1, mu - 1) @ mats[s].F for s in range(mu)), np.zeros(n)) + mats[mu].G)
    psi = tuple(float(c_last @ prod(s + 1, mu - 1) @ mats[s].B) for s in range(1, mu))
    return PreviewCoefficients(Ccal, Dcal, Gcal, psi)


# ---------------------------------------------------------------------------
# Inverse models


@dataclass(frozen=True)
class InversePwaModel:
    """Explicit inverse: input ``y[k + mu_tilde]``, output ``u[k]``.

    ``system`` holds the overline matrices as an ordinary PWA model.
    ``location_map[i]`` is the forward location active when inverse location
    ``i`` is active.
    """

    system: PwaModel
    mu_tilde: int
    source: PwaModel | None
    location_map: tuple
    kind: str

    @property
    def n_x(self):
        return self.system.n_x

    @property
    def partition(self):
        return self.system.partition

    def matrices(self, i, k):
        return self.system.matrices(i, k)

    def simulate(self, y_preview, x0=None):
        """Conventional (forward-in-time) propagation of the inverse.

        ``y_preview[j]`` is ``y[k0 + j + mu_tilde]``; the output trajectory holds
        ``u[k0 + j]``.
        """
        x0 = np.zeros(self.n_x) if x0 is None else x0
        return simulate(self.system, x0, y_preview)

    def structural_residual(self, times=None):
        """Largest violation of the Abar/Bbar/Fbar identities over sampled times."""
        if self.source is None:
            raise ValueError("structural identities need the forward model")
        times = self.system.schedule.sample_times() if times is None else times
        worst = 0.0
        for k in times:
            for i, q in enumerate(self.location_map):
                inv = self.system.matrices(i, k)
                fwd = self.source.matrices(q, k)
                worst = max(
                    worst,
                    np.max(np.abs(inv.A - (fwd.A + np.outer(fwd.B, inv.C)))),
                    np.max(np.abs(inv.B - fwd.B * inv.D)),
                    np.max(np.abs(inv.F - (fwd.F + fwd.B * inv.G))),
                )
        return worst


def _inverse_horizon(model, mu):
    h = model.horizon
    return None if h is None else range(h.start, h.stop - mu)


def _overline(fwd: LocationMatrices, Ccal, Dcal, Gcal):
    Dbar = 1.0 / Dcal
    Cbar = -Dbar * Ccal
    Gbar = -Dbar * Gcal
    return LocationMatrices(fwd.A + np.outer(fwd.B, Cbar), fwd.B * Dbar, fwd.F + fwd.B * Gbar, Cbar, Dbar, Gbar)


def _wrap(model, evaluator, mu, partition=None, location_map=None, kind=""):
    nq = model.n_locations if partition is None else partition.n_locations
    schedule = FunctionSchedule(
        evaluator, nq, model.n_x, _inverse_horizon(model, mu), time_invariant=model.schedule.time_invariant
    )
    system = PwaModel(partition or model.partition, schedule, name=f"inverse of {model.name}".strip())
    return InversePwaModel(system, mu, model, tuple(location_map or range(nq)), kind)


def invert_rd0(model: PwaModel) -> InversePwaModel:
    """Inverse of a model with direct feedthrough in every location."""
    report = global_relative_degree(model)
    if report.mu_tilde != 0:
        raise WrongDegree(f"model has global relative degree {report.mu_tilde}, expected 0")

    def evaluator(q, k):
        m = model.matrices(q, k)
        return _overline(m, m.C, m.D, m.G)

    return _wrap(model, evaluator, 0, kind="rd0")


def invert_rd1(model: PwaModel) -> InversePwaModel:
    """Explicit one-step-anticausal inverse (location-invariant output required)."""
    a5 = _a5_deviation(model, 1)
    if not a5["passed"]:
        raise A5Violated(f"output matrices differ across locations (max deviation {a5['max_deviation']:.3g})", **a5)
    mu_q = {q: component_relative_degree(model, q) for q in range(model.n_locations)}
    if set(mu_q.values()) != {1}:
        raise WrongDegree(f"component relative degrees are {mu_q}, expected all 1", mu_q=mu_q)

    def evaluator(q, k):
        m = model.matrices(q, k)
        nxt = model.matrices(0, k + 1)
        return _overline(m, nxt.C @ m.A, float(nxt.C @ m.B), float(nxt.C @ m.F + nxt.G))

    return _wrap(model, evaluator, 1, kind="rd1")


def invert_rd2(model: PwaModel, a6_tol: float = 1e-10) -> InversePwaModel:
    """Explicit two-step-anticausal inverse for output-switched models.

    The location at ``k+1`` is a function of ``x[k]`` alone, so the inverse is
    a PWA model on the pair ``(q[k], q[k+1])`` with the partition refined by the
    hyperplanes ``P A_q`` (offsets ``w - P F_q``).
    """
    a5 = _a5_deviation(model, 2)
    if not a5["passed"]:
        raise A5Violated(f"output matrices differ across locations (max deviation {a5['max_deviation']:.3g})", **a5)
    a6 = _a6_check(model, a6_tol)
    if not a6["passed"]:
        raise A6Violated(
            f"switching is not output-based (factorisation residual {a6['residual']:.3g})", **a6
        )
    report = global_relative_degree(model)
    if report.mu_tilde != 2:
        raise WrongDegree(f"model has global relative degree {report.mu_tilde}, expected 2")
    nq = model.n_locations
    k0 = model.start_k
    for t in model.schedule.sample_times(2):
        for q in range(nq):
            a, b = model.matrices(q, t), model.matrices(q, k0)
            if not (np.array_equal(a.A, b.A) and np.array_equal(a.F, b.F)):
                raise AssumptionViolated(
                    "explicit relative-degree-2 inverse needs time-invariant A and F to refine the partition",
                    assumption="A6 (time invariance)",
                )
    part = model.partition
    mats = [model.matrices(q, k0) for q in range(nq)]
    planes = np.vstack([part.P] + [part.P @ m.A for m in mats])
    offsets = np.concatenate([part.w] + [part.w - part.P @ m.F for m in mats])
    free = list(itertools.product((0, 1), repeat=part.n_planes))
    signatures = []
    for q in range(nq):
        for q2 in range(nq):
            sigs = []
            for blocks in itertools.product(*[
                part.signatures[q] if b == 0 else part.signatures[q2] if b == q + 1 else free
                for b in range(nq + 1)
            ]):
                sigs.append(tuple(itertools.chain.from_iterable(blocks)))
            signatures.append(sigs)
    refined = Partition(planes, offsets, signatures)

    def evaluator(i, k):
        q, q2 = divmod(i, nq)
        m0 = model.matrices(q, k)
        m1 = model.matrices(q2, k + 1)
        m2 = model.matrices(0, k + 2)
        ca = m2.C @ m1.A
        return _overline(m0, ca @ m0.A, float(ca @ m0.B), float(ca @ m0.F + m2.C @ m1.F + m2.G))

    return _wrap(model, evaluator, 2, refined, [i // nq for i in range(nq * nq)], kind="rd2")


def invert(model: PwaModel, degree="auto") -> InversePwaModel:
    """Dispatch to the explicit inverse matching ``degree`` (0, 1, 2 or ``"auto"``)."""
    if degree == "auto":
        degree = global_relative_degree(model).mu_tilde
    degree = int(degree)
    if degree == 0:
        return invert_rd0(model)
    if degree == 1:
        return invert_rd1(model)
    if degree == 2:
        return invert_rd2(model)
    raise WrongDegree(f"no explicit inverse for global relative degree {degree}")


# ---------------------------------------------------------------------------
# Implicit inverse


def enumerate_implicit_solutions(model: PwaModel, k: int, x, y_target: float, future_u=(),
                                 mu_tilde: int | None = None, tol: float = 1e-9) -> list[float]:
    """All ``u[k]`` reproducing ``y_target`` at ``k + mu_tilde`` from state ``x``.

    Every switching sequence starting in the location of ``x`` is assumed in
    turn; the preview equation is solved for ``u[k]`` and the candidate is kept
    only if re-simulation induces that same sequence.
    """
    x = np.asarray(x, dtype=float)
    mu = global_relative_degree(model, k).mu_tilde if mu_tilde is None else mu_tilde
    if mu < 1:
        raise WrongDegree("implicit inversion applies to global relative degree >= 1")
    future_u = list(future_u)
    if len(future_u) < mu - 1:
        raise ValueError(f"{mu - 1} future inputs are needed, got {len(future_u)}")
    q0 = model.locate(x)
    found = []
    for tail in itertools.product(range(model.n_locations), repeat=mu):
        seq = (q0,) + tail
        pc = preview_coefficients(model, k, seq)
        _, scale = markov_coefficient(model, k, seq)
        if not _nonzero(pc.Dcal, scale):
            continue
        psi = sum(c * v for c, v in zip(pc.psi_coeffs, future_u))
        u = (y_target - pc.Ccal @ x - pc.Gcal - psi) / pc.Dcal
        inputs = [u] + future_u[: mu - 1]
        xs = x
        induced = []
        for i in range(mu + 1):
            q = model.locate(xs)
            induced.append(q)
            if i < mu:
                m = model.matrices(q, k + i)
                xs = m.A @ xs + m.B * inputs[i] + m.F
        if tuple(induced) != seq:
            continue
        last = model.matrices(induced[-1], k + mu)
        if abs(last.C @ xs + last.G - y_target) > tol * (1.0 + abs(y_target)):
            continue
        found.append(float(u))
    found.sort()
    unique = []
    for u in found:
        if not unique or abs(u - unique[-1]) > tol * (1.0 + abs(u)):
            unique.append(u)
    if not unique:
        raise EmptySolutionSet(f"no input reaches y={y_target} at k={k + mu}", k=k)
    return unique


# ---------------------------------------------------------------------------
# Assumption checks


def _a5_deviation(model, lookahead):
    worst = 0.0
    scale = 0.0
    for k in model.schedule.sample_times(lookahead):
        ref = model.matrices(0, k)
        scale = max(scale, np.linalg.norm(ref.C), abs(ref.D), abs(ref.G))
        for q in range(1, model.n_locations):
            m = model.matrices(q, k)
            worst = max(worst, np.max(np.abs(m.C - ref.C)), abs(m.D - ref.D), abs(m.G - ref.G))
    return {"passed": bool(worst <= NONZERO_RTOL * max(scale, 1.0)), "max_deviation": float(worst)}


def _a6_check(model, tol):
    k0 = model.start_k
    ref = model.matrices(0, k0)
    C = ref.C
    P = model.partition.P
    cc = float(C @ C)
    if cc == 0.0:
        return {"passed": False, "residual": float(np.linalg.norm(P)), "time_deviation": 0.0}
    P_o = P @ C / cc
    residual = float(np.linalg.norm(P - np.outer(P_o, C)))
    w_o = model.partition.w + P_o * ref.G
    drift = 0.0
    for k in model.schedule.sample_times(0):
        m = model.matrices(0, k)
        drift = max(drift, np.max(np.abs(m.C - C)), abs(m.G - ref.G))
    return {
        "passed": bool(residual <= tol * max(1.0, float(np.linalg.norm(P))) and drift == 0.0),
        "residual": residual,
        "time_deviation": drift,
        "P_o": P_o.tolist(),
        "w_o": w_o.tolist(),
    }


@dataclass
class AssumptionReport:
    checks: dict

    def passed(self, name):
        return self.checks[name]["passed"]

    def to_dict(self):
        return self.checks


def check_assumptions(model: PwaModel, a6_tol: float = 1e-10, cap: int = DEFAULT_CAP) -> AssumptionReport:
    """Verdicts with numeric evidence for the SISO/structural/degree/output assumptions."""
    checks = {
        "A2": {"passed": model.n_u == 1 and model.n_y == 1, "n_u": model.n_u, "n_y": model.n_y},
        "A3": {"passed": True, "switching": "state-based signature H(P x - w)"},
    }
    try:
        mu_q = {str(q): component_relative_degree(model, q, cap=cap) for q in range(model.n_locations)}
        checks["A4"] = {"passed": len(set(mu_q.values())) == 1, "mu_q": mu_q}
    except DegreeExceedsCap as exc:
        checks["A4"] = {"passed": False, "error": str(exc)}
    checks["A5"] = _a5_deviation(model, 0)
    a6 = _a6_check(model, a6_tol)
    a6["passed"] = a6["passed"] and checks["A5"]["passed"]
    checks["A6"] = a6
    if checks["A4"]["passed"]:
        try:
            checks["mu_tilde"] = global_relative_degree(model, cap=cap).mu_tilde
        except (DegreeExceedsCap, AssumptionViolated) as exc:
            checks["mu_tilde"] = None
            checks["mu_tilde_error"] = str(exc)
    return AssumptionReport(checks)
