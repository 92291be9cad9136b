"""Time-varying SISO piecewise affine systems in closed selector form.

A model is

    x[k+1] = A(q,k) x[k] + B(q,k) u[k] + F(q,k)
    y[k]   = C(q,k) x[k] + D(q,k) u[k] + G(q,k)

where the active location ``q`` is selected by the binary signature
``delta = H(P x[k] - w)`` (element-wise Heaviside, ``H(0) = 1``).

Locations are indexed from 0.  Because the models are SISO, ``B``, ``F`` and
``C`` are stored as 1-D arrays of length ``n_x`` and ``D``, ``G`` as floats.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import HorizonError, NoLocation


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


class LocationMatrices(NamedTuple):
    """Affine dynamics of one location at one time step."""

    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    C: np.ndarray
    D: float
    G: float

    @classmethod
    def make(cls, A, B, F=None, C=None, D=0.0, G=0.0):
        A = _frozen(np.atleast_2d(A))
        n = A.shape[0]
        B = _frozen(np.reshape(B, -1))
        F = _frozen(np.zeros(n) if F is None else np.reshape(F, -1))
        C = _frozen(np.zeros(n) if C is None else np.reshape(C, -1))
        return cls(A, B, F, C, float(np.squeeze(D)), float(np.squeeze(G)))


# ---------------------------------------------------------------------------
# Partition


@dataclass(frozen=True)
class Partition:
    """Hyperplane arrangement plus per-location signature sets.

    Parameters
    ----------
    P : array_like, shape (n_P, n_x)
        Hyperplane orientation rows.
    w : array_like, shape (n_P,)
        Hyperplane offsets.
    signatures : sequence of sequences of 0/1 vectors
        ``signatures[q]`` lists the binary vectors belonging to location ``q``.
    """

    P: np.ndarray
    w: np.ndarray
    signatures: tuple
    _lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = _frozen(np.atleast_2d(np.asarray(self.P, dtype=float)))
        w = _frozen(np.reshape(np.asarray(self.w, dtype=float), -1))
        if P.shape[0] != w.shape[0]:
            raise ValueError(f"P has {P.shape[0]} rows but w has {w.shape[0]} entries")
        sigs = tuple(tuple(tuple(int(v) for v in s) for s in loc) for loc in self.signatures)
        lookup = {}
        for q, loc in enumerate(sigs):
            for s in loc:
                if len(s) != P.shape[0]:
                    raise ValueError(f"signature {s} of location {q} has length {len(s)}, expected {P.shape[0]}")
                if any(v not in (0, 1) for v in s):
                    raise ValueError(f"signature {s} of location {q} is not binary")
                if s in lookup:
                    raise ValueError(f"signature {s} belongs to locations {lookup[s]} and {q}")
                lookup[s] = q
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "signatures", sigs)
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def trivial(cls, n_x):
        """Single location covering the whole state space."""
        return cls(np.zeros((1, n_x)), [0.0], [[(1,)]])

    @property
    def n_planes(self):
        return self.P.shape[0]

    @property
    def n_x(self):
        return self.P.shape[1]

    @property
    def n_locations(self):
        return len(self.signatures)

    def localize(self, x):
        return localize(x, self)

    def select(self, delta):
        return select_location(delta, self)

    def locate(self, x):
        """Location index of state ``x``."""
        return select_location(localize(x, self), self)


def heaviside(v):
    """Element-wise step with ``H(0) = 1``."""
    return (np.asarray(v) >= 0.0).astype(int)


def localize(x, partition: Partition):
    """Binary signature ``H(P x - w)`` of state ``x``."""
    x = np.reshape(np.asarray(x, dtype=float), -1)
    if x.shape[0] != partition.n_x:
        raise ValueError(f"state has dimension {x.shape[0]}, partition expects {partition.n_x}")
    return heaviside(partition.P @ x - partition.w)


def select_location(delta, partition: Partition) -> int:
    """Index of the unique location whose signature set contains ``delta``."""
    key = tuple(int(v) for v in np.reshape(delta, -1))
    if len(key) != partition.n_planes:
        raise ValueError(f"signature has length {len(key)}, expected {partition.n_planes}")
    try:
        return partition._lookup[key]
    except KeyError:
        raise NoLocation(f"signature {list(key)} belongs to no location", delta=list(key)) from None


# ---------------------------------------------------------------------------
# Matrix schedules


class MatrixSchedule:
    """Map ``(q, k) -> LocationMatrices`` over a declared horizon.

    ``horizon`` is a ``range`` of valid time indices, or ``None`` for schedules
    that are valid for every ``k``.  ``time_invariant`` flags schedules whose
    ``A, B, C, D`` do not depend on ``k`` (``F`` and ``G`` may still vary).
    """

    n_locations: int
    n_x: int
    horizon: range | None = None
    time_invariant: bool = False

    def matrices(self, q: int, k: int) -> LocationMatrices:
        self._check(q, k)
        return self._evaluate(q, k)

    def _evaluate(self, q, k):
        raise NotImplementedError

    def _check(self, q, k):
        if not 0 <= q < self.n_locations:
            raise IndexError(f"location {q} out of range for {self.n_locations} locations")
        if self.horizon is not None and k not in self.horizon:
            raise HorizonError(
                f"time step {k} outside schedule horizon [{self.horizon.start}, {self.horizon.stop - 1}]", k=k
            )

    def sample_times(self, lookahead=0):
        """A few representative time indices (start, middle, end) for spot checks."""
        if self.horizon is None:
            return [0]
        start, stop = self.horizon.start, self.horizon.stop - lookahead
        if stop <= start:
            raise HorizonError(f"horizon too short for a lookahead of {lookahead} steps")
        return sorted({start, (start + stop - 1) // 2, stop - 1})

    def times(self, lookahead=0):
        """Every valid time index leaving ``lookahead`` steps of headroom."""
        if self.horizon is None:
            return [0]
        return list(range(self.horizon.start, self.horizon.stop - lookahead))

    def dynamics_times(self, lookahead=0):
        """Times at which ``A, B, C, D`` must be inspected (one if time-invariant)."""
        return self.times(lookahead)[:1] if self.time_invariant else self.times(lookahead)


class ConstantSchedule(MatrixSchedule):
    """Time-invariant matrices, one set per location."""

    time_invariant = True

    def __init__(self, locations: Sequence[LocationMatrices], horizon: range | None = None):
        self.locations = tuple(LocationMatrices.make(*m) for m in locations)
        self.n_locations = len(self.locations)
        self.n_x = self.locations[0].A.shape[0]
        self.horizon = horizon
        _check_dims(self.locations, self.n_x)

    def _evaluate(self, q, k):
        return self.locations[q]


class TabulatedSchedule(MatrixSchedule):
    """Matrices tabulated per location and time step.

    ``tables[q]`` is a dict with keys ``A`` (K, n, n), ``B``, ``F``, ``C`` (K, n)
    and ``D``, ``G`` (K,).
    """

    def __init__(self, tables, start_k=0):
        self.tables = []
        for t in tables:
            A = _frozen(t["A"])
            K, n = A.shape[0], A.shape[1]
            tab = {
                "A": A,
                "B": _frozen(np.reshape(t["B"], (K, n))),
                "F": _frozen(np.reshape(t.get("F", np.zeros((K, n))), (K, n))),
                "C": _frozen(np.reshape(t["C"], (K, n))),
                "D": _frozen(np.reshape(t.get("D", np.zeros(K)), K)),
                "G": _frozen(np.reshape(t.get("G", np.zeros(K)), K)),
            }
            self.tables.append(tab)
        self.n_locations = len(self.tables)
        self.n_x = self.tables[0]["A"].shape[1]
        K = self.tables[0]["A"].shape[0]
        if any(t["A"].shape[0] != K for t in self.tables):
            raise ValueError("all locations must be tabulated over the same horizon")
        self.horizon = range(start_k, start_k + K)
        self.time_invariant = all(
            np.ptp(t[name], axis=0).max(initial=0.0) == 0.0 for t in self.tables for name in "ABCD"
        )

    def _evaluate(self, q, k):
        t = self.tables[q]
        i = k - self.horizon.start
        return LocationMatrices(t["A"][i], t["B"][i], t["F"][i], t["C"][i], float(t["D"][i]), float(t["G"][i]))


class ExogenousSchedule(MatrixSchedule):
    """Constant dynamics whose affine terms are driven by a bound scalar signal.

    ``F(q,k) = F(q) + F_exo(q) * s[k]`` and ``G(q,k) = G(q) + G_exo(q) * s[k]``.
    Used for closed-loop models in which a reference enters through the
    feedback controller.
    """

    time_invariant = True

    def __init__(self, locations, F_exo, G_exo=None, signal=(), start_k=0, name="r"):
        self.locations = tuple(LocationMatrices.make(*m) for m in locations)
        self.n_locations = len(self.locations)
        self.n_x = self.locations[0].A.shape[0]
        _check_dims(self.locations, self.n_x)
        self.F_exo = tuple(_frozen(np.reshape(f, -1)) for f in F_exo)
        self.G_exo = tuple(float(g) for g in (G_exo if G_exo is not None else [0.0] * self.n_locations))
        if len(self.F_exo) != self.n_locations or len(self.G_exo) != self.n_locations:
            raise ValueError("one exogenous coefficient per location is required")
        self.signal = _frozen(np.reshape(signal, -1))
        self.name = name
        self.horizon = range(start_k, start_k + len(self.signal))

    def rebind(self, signal, start_k=None):
        """Copy of this schedule bound to another exogenous signal."""
        return ExogenousSchedule(
            self.locations, self.F_exo, self.G_exo, signal,
            self.horizon.start if start_k is None else start_k, self.name,
        )

    def held(self, lead: int, trail: int):
        """Copy with the signal held at its first/last value for ``lead``/``trail`` extra steps."""
        if lead < 0 or trail < 0:
            raise ValueError("hold lengths must be non-negative")
        sig = self.signal
        extended = np.concatenate([np.full(lead, sig[0]), sig, np.full(trail, sig[-1])])
        return self.rebind(extended, self.horizon.start - lead)

    def _evaluate(self, q, k):
        m = self.locations[q]
        s = self.signal[k - self.horizon.start]
        return LocationMatrices(m.A, m.B, m.F + self.F_exo[q] * s, m.C, m.D, m.G + self.G_exo[q] * s)


class FunctionSchedule(MatrixSchedule):
    """Schedule backed by an arbitrary deterministic evaluator (memoised)."""

    def __init__(self, evaluator: Callable[[int, int], LocationMatrices], n_locations, n_x,
                 horizon=None, time_invariant=False):
        self.n_locations = n_locations
        self.n_x = n_x
        self.horizon = horizon
        self.time_invariant = time_invariant
        self._evaluator = lru_cache(maxsize=None)(evaluator)

    def _evaluate(self, q, k):
        return self._evaluator(q, k)


def _check_dims(locations, n):
    for q, m in enumerate(locations):
        if m.A.shape != (n, n) or m.B.shape != (n,) or m.F.shape != (n,) or m.C.shape != (n,):
            raise ValueError(f"location {q} matrices are not consistent with n_x={n}")
        for name, v in zip("ABFCDG", m):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"location {q} matrix {name} is not finite")


# ---------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class PwaModel:
    """SISO piecewise affine model: a partition plus a matrix schedule."""

    partition: Partition
    schedule: MatrixSchedule
    declared_mu_c: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.schedule.n_locations != self.partition.n_locations:
            raise ValueError(
                f"schedule has {self.schedule.n_locations} locations, partition has {self.partition.n_locations}"
            )
        if self.schedule.n_x != self.partition.n_x:
            raise ValueError(f"schedule has n_x={self.schedule.n_x}, partition has n_x={self.partition.n_x}")

    n_u = 1
    n_y = 1

    @property
    def n_x(self):
        return self.schedule.n_x

    @property
    def n_locations(self):
        return self.partition.n_locations

    @property
    def horizon(self):
        return self.schedule.horizon

    @property
    def start_k(self):
        return 0 if self.schedule.horizon is None else self.schedule.horizon.start

    def matrices(self, q, k):
        return self.schedule.matrices(q, k)

    def locate(self, x):
        return self.partition.locate(x)

    @classmethod
    def lti(cls, A, B, C, D=0.0, F=None, G=0.0, **kw):
        """Single-location (affine time-invariant) model."""
        m = LocationMatrices.make(A, B, F, C, D, G)
        return cls(Partition.trivial(m.A.shape[0]), ConstantSchedule([m]), **kw)

    @classmethod
    def from_locations(cls, locations, P, w, signatures, **kw):
        return cls(Partition(P, w, signatures), ConstantSchedule(locations), **kw)


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True)
class Trajectory:
    """Finite time series of equally sized vectors starting at ``start_k``."""

    samples: np.ndarray
    start_k: int = 0
    label: str = "x"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("a trajectory needs at least one sample of uniform dimension")
        object.__setattr__(self, "samples", _frozen(s))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def times(self):
        return np.arange(self.start_k, self.start_k + len(self))

    @property
    def values(self):
        """Samples as a 1-D array for scalar series, 2-D otherwise."""
        return self.samples[:, 0] if self.dim == 1 else self.samples

    def __getitem__(self, k):
        return self.values[k - self.start_k]


def as_series(u):
    if isinstance(u, Trajectory):
        return np.asarray(u.values, dtype=float), u.start_k
    return np.reshape(np.asarray(u, dtype=float), -1), None


# ---------------------------------------------------------------------------
# Propagation


def step(model: PwaModel, k, x, u):
    """Successor state ``A x + B u + F`` in the location of ``x``."""
    x = np.asarray(x, dtype=float)
    m = model.matrices(model.locate(x), k)
    return m.A @ x + m.B * u + m.F


def output(model: PwaModel, k, x, u):
    """Output ``C x + D u + G`` in the location of ``x``."""
    x = np.asarray(x, dtype=float)
    m = model.matrices(model.locate(x), k)
    return float(m.C @ x + m.D * u + m.G)


class SimulationResult(NamedTuple):
    y: Trajectory
    x: Trajectory
    delta: Trajectory
    locations: np.ndarray


def simulate(model: PwaModel, x0, u, start_k=None) -> SimulationResult:
    """Propagate ``model`` from ``x0`` under the input series ``u``.

    Returns outputs ``y[k]`` and signatures for every input sample, and the
    states ``x[k]`` including the final successor state.
    """
    useries, ustart = as_series(u)
    k0 = start_k if start_k is not None else (ustart if ustart is not None else model.start_k)
    T = useries.shape[0]
    n = model.n_x
    x = np.empty((T + 1, n))
    x[0] = np.reshape(np.asarray(x0, dtype=float), -1)
    if x[0].shape[0] != n:
        raise ValueError(f"x0 has dimension {x[0].shape[0]}, model has n_x={n}")
    y = np.empty(T)
    delta = np.empty((T, model.partition.n_planes), dtype=int)
    locs = np.empty(T, dtype=int)
    part = model.partition
    for i in range(T):
        k = k0 + i
        d = heaviside(part.P @ x[i] - part.w)
        try:
            q = select_location(d, part)
        except NoLocation as exc:
            raise NoLocation(f"{exc} at time step {k}", k=k, delta=d.tolist()) from None
        try:
            m = model.schedule.matrices(q, k)
        except HorizonError as exc:
            raise HorizonError(f"{exc} while simulating", k=k) from None
        y[i] = m.C @ x[i] + m.D * useries[i] + m.G
        x[i + 1] = m.A @ x[i] + m.B * useries[i] + m.F
        delta[i] = d
        locs[i] = q
    return SimulationResult(
        Trajectory(y, k0, "y"), Trajectory(x, k0, "x"), Trajectory(delta, k0, "delta"), locs
    )


def all_signatures(n_planes):
    """Every binary vector of the given length."""
    return [tuple(s) for s in itertools.product((0, 1), repeat=n_planes)]
