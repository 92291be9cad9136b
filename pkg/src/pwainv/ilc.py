"""Lifted-domain iterative learning control.

Lifted vectors over a trial of ``N + 1`` samples with relative degree ``mu``:

* inputs ``u = [u_0, ..., u_{N-mu}]``
* outputs and references ``y = [y_mu, ..., y_N]``

All have length ``N - mu + 1``.  The learning law is

    u_{l+1} = E Q (u_l + L_l (r - Q y_l))

with a zero-phase lowpass ``Q`` and an edge mask ``E``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.signal

from .errors import PlantError, PwaError
from .inversion import InversePwaModel
from .pwa import PwaModel, simulate
from .stable import (
    Decoupling,
    StableInversionConfig,
    compute_decoupling,
    stable_inverse,
    stable_inverse_jacobian,
)


# ---------------------------------------------------------------------------
# Signals and metrics


@dataclass(frozen=True)
class LiftedSignal:
    """A lifted trial vector tagged with its alignment (``"input"`` or ``"output"``)."""

    values: np.ndarray
    alignment: str
    mu_tilde: int

    def __post_init__(self):
        if self.alignment not in ("input", "output"):
            raise ValueError("alignment must be 'input' or 'output'")
        object.__setattr__(self, "values", np.reshape(np.asarray(self.values, dtype=float), -1))

    @property
    def N(self):
        return len(self.values) + self.mu_tilde - 1

    @property
    def times(self):
        first = self.mu_tilde if self.alignment == "output" else 0
        return np.arange(first, first + len(self.values))


def nrmse(r, y) -> float:
    """Normalised RMS tracking error ``|r - y|_2 / (sqrt(n) |r|_inf)`` over lifted vectors."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    if r.shape != y.shape:
        raise ValueError(f"reference has shape {r.shape}, output has {y.shape}")
    return float(np.linalg.norm(r - y) / (np.sqrt(r.size) * np.max(np.abs(r))))


def peak_error(r, y) -> float:
    return float(np.max(np.abs(np.asarray(r, dtype=float) - np.asarray(y, dtype=float))))


# ---------------------------------------------------------------------------
# Filters


def lowpass_impulse_response(a1, a2, b, n, normalize=True):
    """First ``n`` samples of the impulse response of ``b z (z + 1) / (z^2 + a1 z + a2)``.

    With ``normalize`` the response is scaled to unit DC gain.
    """
    impulse = np.zeros(n)
    impulse[0] = 1.0
    h = scipy.signal.lfilter([b, b], [1.0, a1, a2], impulse)
    if normalize:
        h = h * (1.0 + a1 + a2) / (2.0 * b)
    # subnormal tails make dense products orders of magnitude slower
    h[np.abs(h) < 1e-150] = 0.0
    return h


@dataclass(frozen=True)
class FilterPair:
    Q: np.ndarray
    E: np.ndarray
    F_toeplitz: np.ndarray
    exchange: np.ndarray
    n_edge: int

    @property
    def mask(self):
        return np.diag(self.E).copy()


def exchange_matrix(n):
    return np.eye(n)[::-1]


def build_filters(impulse_response, n_edge: int, N: int, mu_tilde: int) -> FilterPair:
    """Zero-phase lowpass ``Q = J F J F`` and edge mask ``E`` for lifted size ``N - mu + 1``."""
    n = N - mu_tilde + 1
    h = np.reshape(np.asarray(impulse_response, dtype=float), -1)
    if h.size != n:
        raise ValueError(f"impulse response has {h.size} samples, lifted size is {n}")
    if not 0 <= 2 * n_edge <= n:
        raise ValueError(f"cannot zero {n_edge} samples at both ends of {n}")
    F = scipy.linalg.toeplitz(h, np.zeros(n))
    J = exchange_matrix(n)
    Q = np.ascontiguousarray(F[::-1, ::-1]) @ F  # J F J F without permutation products
    mask = np.ones(n)
    mask[:n_edge] = 0.0
    mask[n - n_edge:] = 0.0
    return FilterPair(Q, np.diag(mask), F, J, n_edge)


# ---------------------------------------------------------------------------
# Lifted model and lifted inverse


class LiftedModel:
    """``y = g(u)``: the lifted input-output map of a PWA model from a fixed initial state."""

    def __init__(self, model: PwaModel, mu_tilde: int, x0=None, start_k: int | None = None):
        self.model = model
        self.mu = mu_tilde
        self.x0 = np.zeros(model.n_x) if x0 is None else np.asarray(x0, dtype=float)
        self.start_k = model.start_k if start_k is None else start_k

    def simulate(self, u):
        u = np.asarray(u, dtype=float)
        return simulate(self.model, self.x0, np.concatenate([u, np.zeros(self.mu)]), self.start_k)

    def __call__(self, u):
        return self.simulate(u).y.values[self.mu:]

    def jacobian(self, u):
        """Exact ``d g / d u`` with the switching sequence of ``u`` frozen (lower triangular)."""
        u = np.asarray(u, dtype=float)
        sim = self.simulate(u)
        return lifted_jacobian(self.model, sim.locations, self.start_k, self.mu, len(u))


def lifted_jacobian(model: PwaModel, locations, start_k: int, mu: int, size: int) -> np.ndarray:
    """Markov-parameter matrix ``d y[mu + i] / d u[j]`` for a fixed location sequence."""
    n = model.n_x
    X = np.zeros((n, size))
    J = np.zeros((size, size))
    for k in range(size + mu):
        m = model.matrices(int(locations[k]), start_k + k)
        i = k - mu
        if i >= 0:
            J[i] = m.C @ X
            if i < size:
                J[i, i] += m.D
        if k < size:
            X = m.A @ X
            X[:, k] += m.B
        else:
            X = m.A @ X
    return J


class LiftedInverse:
    """``u = g^-1(y)`` via stable inversion, with its exact frozen-switching Jacobian."""

    def __init__(self, inverse: InversePwaModel, cfg: StableInversionConfig | None = None,
                 dec: Decoupling | None = None):
        self.inverse = inverse
        self.cfg = cfg or StableInversionConfig()
        self.dec = dec or compute_decoupling(
            inverse, self.cfg.anchor_q, self.cfg.anchor_k, self.cfg.decoupling_tol, self.cfg.hyperbolicity_margin
        )
        self.start_k = inverse.system.start_k

    def run(self, y):
        return stable_inverse(self.inverse, np.asarray(y, dtype=float), self.cfg, self.dec)

    def __call__(self, y):
        return self.run(y).u.values

    def jacobian(self, y):
        res = self.run(y)
        return stable_inverse_jacobian(self.inverse, self.dec, res.locations, self.start_k)


# ---------------------------------------------------------------------------
# Learning matrices


def ililc_learning_matrix(inverter: LiftedInverse, y_measured, gain: float = 1.0) -> np.ndarray:
    """Jacobian of the lifted stable inverse evaluated at the measured output."""
    values = y_measured.values if isinstance(y_measured, LiftedSignal) else y_measured
    return gain * inverter.jacobian(values)


def gradient_learning_matrix(model: LiftedModel, u_current, gamma: float) -> np.ndarray:
    return gamma * model.jacobian(u_current).T


def ptype_learning_matrix(gamma: float, size: int) -> np.ndarray:
    return gamma * np.eye(size)


def ilc_iterate(u, y, r, L, filters: FilterPair) -> np.ndarray:
    """One application of the filtered learning law."""
    u, y, r = (np.asarray(v, dtype=float) for v in (u, y, r))
    n = filters.Q.shape[0]
    if not (u.shape == y.shape == r.shape == (n,)) or L.shape != (n, n):
        raise ValueError("lifted signals, learning matrix and filters must share one size")
    Q = filters.Q
    return filters.mask * (Q @ (u + L @ (r - Q @ y)))


# ---------------------------------------------------------------------------
# Sessions


class Scheme(enum.Enum):
    ILILC = "ililc"
    GRADIENT = "gradient"
    PTYPE = "ptype"


@dataclass
class TrialRecord:
    trial: int
    u: np.ndarray
    y: np.ndarray
    nrmse: float
    peak: float


@dataclass
class IlcSession:
    """State of one learning experiment.

    ``plant(u, trial)`` returns the measured lifted output for lifted input
    ``u``; it may be a model, a noisy truth simulation or hardware.
    """

    scheme: Scheme
    gain: float
    filters: FilterPair
    plant: Callable[[np.ndarray, int], np.ndarray]
    inverter: LiftedInverse | None = None
    model: LiftedModel | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        if self.scheme is Scheme.ILILC and self.inverter is None:
            raise ValueError("ILILC needs a lifted stable inverse")
        if self.scheme is Scheme.GRADIENT and self.model is None:
            raise ValueError("gradient ILC needs a lifted model")

    @property
    def size(self):
        return self.filters.Q.shape[0]

    def learning_matrix(self, u, y):
        if self.scheme is Scheme.ILILC:
            return ililc_learning_matrix(self.inverter, y, self.gain)
        if self.scheme is Scheme.GRADIENT:
            return gradient_learning_matrix(self.model, u, self.gain)
        return ptype_learning_matrix(self.gain, self.size)


def run_trials(session: IlcSession, r, n_trials: int, u0=None, stop_on_increase: bool = False
               ) -> list[TrialRecord]:
    """Run ``n_trials`` plant evaluations with a learning update between consecutive trials.

    With ``stop_on_increase`` the loop ends early at the first trial whose
    NRMSE exceeds its predecessor's (useful when screening gains).
    """
    r = np.asarray(r, dtype=float)
    u = np.zeros(session.size) if u0 is None else np.asarray(u0, dtype=float)
    session.history = []
    for trial in range(n_trials):
        try:
            y = np.asarray(session.plant(u, trial), dtype=float)
        except PwaError as exc:
            raise PlantError(f"plant failed on trial {trial}: {exc}", trial=trial) from exc
        if not np.all(np.isfinite(y)):
            raise PlantError(f"plant returned non-finite output on trial {trial}", trial=trial)
        session.history.append(TrialRecord(trial, u, y, nrmse(r, y), peak_error(r, y)))
        if stop_on_increase and trial and session.history[-1].nrmse > session.history[-2].nrmse:
            break
        if trial + 1 < n_trials:
            u = ilc_iterate(u, y, r, session.learning_matrix(u, y), session.filters)
    return session.history
