"""Finite-horizon stable inversion of inverse PWA models.

The inverse state is split by a constant similarity transform ``V`` into
stable modes ``chi_s`` (propagated forward from zero) and unstable modes
``chi_u`` (propagated backward from zero).  Whichever group drives the
switching is computed first and its location sequence is handed to the other
pass as an exogenous signal.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import EmptySolutionSet, NoForceZeroValue, NoLocation, NonHyperbolic, NotDecouplable
from .inversion import InversePwaModel
from .pwa import Trajectory, as_series, heaviside


# ---------------------------------------------------------------------------
# Decoupling


@dataclass(frozen=True)
class Decoupling:
    """Similarity transform separating stable and unstable modes.

    ``V @ Abar @ V_inv`` is block diagonal with the ``n_s`` stable modes first.
    """

    V: np.ndarray
    V_inv: np.ndarray
    n_s: int
    n_u: int
    stable_eigs: dict
    unstable_eigs: dict
    block_residual: float
    hyperbolicity_margin: float
    anchor_q: int = 0
    anchor_k: int = 0

    def split(self, x):
        chi = self.V @ np.asarray(x, dtype=float)
        return chi[: self.n_s], chi[self.n_s:]

    def join(self, chi_s, chi_u):
        return self.V_inv @ np.concatenate([chi_s, chi_u])

    def report(self):
        return {
            "n_s": self.n_s,
            "n_u": self.n_u,
            "block_residual": self.block_residual,
            "hyperbolicity_margin": self.hyperbolicity_margin,
            "anchor_q": self.anchor_q,
            "anchor_k": self.anchor_k,
        }


def _block_diagonalizer(A):
    """``(V, V_inv, n_s)`` with ``V A V_inv`` block diagonal, stable block first."""
    T, Z, n_s = scipy.linalg.schur(A, output="real", sort="iuc")
    n = A.shape[0]
    if n_s in (0, n):
        # nothing to separate; keep the original coordinates
        return np.eye(n), np.eye(n), n_s
    S = np.eye(n)
    if 0 < n_s < n:
        X = scipy.linalg.solve_sylvester(T[:n_s, :n_s], -T[n_s:, n_s:], -T[:n_s, n_s:])
        S[:n_s, n_s:] = X
    S_inv = np.eye(n)
    S_inv[:n_s, n_s:] = -S[:n_s, n_s:]
    return S_inv @ Z.T, Z @ S, n_s


def compute_decoupling(inv: InversePwaModel, anchor_q: int = 0, anchor_k: int | None = None,
                       decoupling_tol: float = 1e-8, margin: float = 1e-6) -> Decoupling:
    """Decouple the inverse using the modal transform of one location.

    The transform is taken from ``Abar`` of ``anchor_q`` at ``anchor_k`` and
    then checked against every location and (for time-varying schedules) every
    time step of the horizon.
    """
    sched = inv.system.schedule
    k0 = inv.system.start_k if anchor_k is None else anchor_k
    A0 = inv.matrices(anchor_q, k0).A
    V, V_inv, n_s = _block_diagonalizer(A0)
    n = A0.shape[0]
    worst_block = 0.0
    worst_margin = math.inf
    stable_eigs, unstable_eigs = {}, {}
    for k in sched.dynamics_times():
        for q in range(inv.system.n_locations):
            A = inv.matrices(q, k).A
            mags = np.abs(np.linalg.eigvals(A))
            worst_margin = min(worst_margin, float(np.min(np.abs(mags - 1.0))) if n else math.inf)
            M = V @ A @ V_inv
            scale = max(np.linalg.norm(A), 1.0)
            off = max(np.linalg.norm(M[:n_s, n_s:]), np.linalg.norm(M[n_s:, :n_s])) / scale
            worst_block = max(worst_block, float(off))
            es = np.abs(np.linalg.eigvals(M[:n_s, :n_s])) if n_s else np.array([])
            eu = np.abs(np.linalg.eigvals(M[n_s:, n_s:])) if n_s < n else np.array([])
            stable_eigs[(q, k)] = np.sort(es).tolist()
            unstable_eigs[(q, k)] = np.sort(eu).tolist()
            if worst_margin < margin:
                raise NonHyperbolic(
                    f"location {q} at k={k} has an eigenvalue within {worst_margin:.3g} of the unit circle",
                    hyperbolicity_margin=worst_margin, location=q, k=k,
                )
            if off > decoupling_tol:
                raise NotDecouplable(
                    f"transform from location {anchor_q} leaves off-diagonal blocks of size {off:.3g} "
                    f"in location {q} at k={k}",
                    block_residual=float(off), location=q, k=k,
                )
            if (es.size and es.max() >= 1.0) or (eu.size and eu.min() <= 1.0):
                raise NotDecouplable(
                    f"location {q} at k={k} mixes stable and unstable modes within one block",
                    block_residual=float(off), location=q, k=k,
                )
    return Decoupling(V, V_inv, n_s, n - n_s, stable_eigs, unstable_eigs, worst_block,
                      worst_margin, anchor_q, k0)


class SwitchKind(enum.Enum):
    STABLE_MODES = "stable-modes"
    UNSTABLE_MODES = "unstable-modes"
    UNSUPPORTED = "unsupported"


@dataclass(frozen=True)
class SwitchDependency:
    kind: SwitchKind
    P_tilde: np.ndarray
    zero_block_residual: float

    def report(self):
        return {"kind": self.kind.value, "zero_block_residual": self.zero_block_residual}


def classify_switching(dec: Decoupling, partition, tol: float = 1e-9) -> SwitchDependency:
    """Decide whether the hyperplanes see only stable or only unstable modes."""
    Pt = partition.P @ dec.V_inv
    scale = max(np.linalg.norm(partition.P), 1e-300)
    on_unstable = float(np.linalg.norm(Pt[:, dec.n_s:])) / scale if dec.n_u else 0.0
    on_stable = float(np.linalg.norm(Pt[:, : dec.n_s])) / scale if dec.n_s else 0.0
    if on_unstable <= tol:
        return SwitchDependency(SwitchKind.STABLE_MODES, Pt, on_unstable)
    if on_stable <= tol:
        return SwitchDependency(SwitchKind.UNSTABLE_MODES, Pt, on_stable)
    return SwitchDependency(SwitchKind.UNSUPPORTED, Pt, min(on_stable, on_unstable))


# ---------------------------------------------------------------------------
# Configuration and padding


class SelectionCost(enum.Enum):
    STATE_JUMP = "state-jump"
    INPUT_NORM = "input-norm"
    INPUT_JUMP = "input-jump"


@dataclass(frozen=True)
class StableInversionConfig:
    lead_pad: int = 0
    trail_pad: int = 0
    solve_tolerance: float = 1e-9
    selection_cost: SelectionCost = SelectionCost.STATE_JUMP
    decoupling_tol: float = 1e-8
    hyperbolicity_margin: float = 1e-6
    switching_tol: float = 1e-9
    a8_tol: float = 1e-8
    anchor_q: int = 0
    anchor_k: int | None = None

    def __post_init__(self):
        if self.lead_pad < 0 or self.trail_pad < 0:
            raise ValueError("pad lengths must be non-negative")
        if self.solve_tolerance <= 0:
            raise ValueError("solve_tolerance must be positive")
        object.__setattr__(self, "selection_cost", SelectionCost(self.selection_cost))


def force_zero_value(inv: InversePwaModel, k: int, q: int | None = None, tol: float = 1e-9) -> float:
    """Preview value ``y`` making ``Bbar y + Fbar`` vanish at step ``k``."""
    q = inv.partition.locate(np.zeros(inv.n_x)) if q is None else q
    m = inv.matrices(q, k)
    bb = float(m.B @ m.B)
    if bb == 0.0:
        raise NoForceZeroValue(f"Bbar is zero at k={k}, so no preview value controls the forcing", k=k)
    y = -float(m.B @ m.F) / bb
    resid = np.linalg.norm(m.B * y + m.F)
    if resid > tol * max(1.0, np.linalg.norm(m.F)):
        raise NoForceZeroValue(f"no scalar preview value cancels the forcing at k={k} (residual {resid:.3g})", k=k)
    return y


def pad_reference(r, lead: int, trail: int, inv: InversePwaModel | None = None, tol: float = 1e-9) -> Trajectory:
    """Prepend ``lead`` and append ``trail`` force-zeroing samples.

    With ``inv`` the padded values are solved from the inverse's matrices at
    the padded time steps (at the location of the origin), so ``inv`` must be
    defined over the padded horizon.  Without ``inv`` the forcing is taken to
    be homogeneous and the pads are zeros.
    """
    if lead < 0 or trail < 0:
        raise ValueError("pad lengths must be non-negative")
    values, start = as_series(r)
    start = 0 if start is None else start
    new_start = start - lead
    if inv is None:
        head, tail = np.zeros(lead), np.zeros(trail)
    else:
        head = np.array([force_zero_value(inv, new_start + i, tol=tol) for i in range(lead)])
        end = start + len(values)
        tail = np.array([force_zero_value(inv, end + i, tol=tol) for i in range(trail)])
    return Trajectory(np.concatenate([head, values, tail]), new_start, "r")


def settling_samples(dec: Decoupling, tol: float = 0.02) -> int:
    """Steps for the slowest decoupled mode (either direction) to decay to ``tol``."""
    rates = [m for v in dec.stable_eigs.values() for m in v]
    rates += [1.0 / m for v in dec.unstable_eigs.values() for m in v]
    rho = max(rates, default=0.0)
    if rho <= 0.0:
        return 1
    return max(1, math.ceil(math.log(tol) / math.log(rho)))


# ---------------------------------------------------------------------------
# Stable inversion


@dataclass
class StableInversionResult:
    u: Trajectory
    x: Trajectory
    delta: Trajectory
    locations: np.ndarray
    chi_s: np.ndarray
    chi_u: np.ndarray
    report: dict = field(default_factory=dict)


class _Decoupled:
    """Per-(q, k) cache of decoupled matrices."""

    def __init__(self, inv, dec):
        self.inv, self.dec = inv, dec
        self.invariant = inv.system.schedule.time_invariant
        self._cache = {}

    def __call__(self, q, k):
        key = (q, k)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        m = self.inv.matrices(q, k)
        V, Vi, ns = self.dec.V, self.dec.V_inv, self.dec.n_s
        if self.invariant and (q, None) in self._cache:
            A_s, A_u_inv, cx = self._cache[(q, None)]
        else:
            M = V @ m.A @ Vi
            A_s = M[:ns, :ns]
            A_u_inv = np.linalg.inv(M[ns:, ns:]) if ns < M.shape[0] else np.zeros((0, 0))
            cx = m.C @ Vi
            if self.invariant:
                self._cache[(q, None)] = (A_s, A_u_inv, cx)
        B = V @ m.B
        F = V @ m.F
        out = (A_s, A_u_inv, B[:ns], B[ns:], F[:ns], F[ns:], cx, m.D, m.G)
        self._cache[key] = out
        return out


def _prepare(inv, dec, r):
    values, start = as_series(r)
    start = inv.system.start_k if start is None else start
    if values.size == 0:
        raise ValueError("reference must contain at least one sample")
    return values, start


def _assemble(inv, dec, dm, values, start, locs, chi_s, chi_u, extra):
    M = len(values)
    u = np.empty(M)
    x = np.empty((M, inv.n_x))
    for j in range(M):
        A_s, A_u_inv, Bs, Bu, Fs, Fu, cx, D, G = dm(locs[j], start + j)
        chi = np.concatenate([chi_s[j], chi_u[j]])
        x[j] = dec.V_inv @ chi
        u[j] = cx @ chi + D * values[j] + G
    P, w = inv.partition.P, inv.partition.w
    delta = heaviside(x @ P.T - w)
    first = dm(locs[0], start)
    last = dm(locs[-1], start + M - 1)
    report = {
        "chi_u_initial_norm": float(np.linalg.norm(chi_u[0])),
        "chi_s_terminal_norm": float(np.linalg.norm(chi_s[-1])),
        "forcing_initial_norm": float(np.linalg.norm(np.concatenate([first[2], first[3]]) * values[0]
                                                     + np.concatenate([first[4], first[5]]))),
        "forcing_terminal_norm": float(np.linalg.norm(np.concatenate([last[2], last[3]]) * values[-1]
                                                      + np.concatenate([last[4], last[5]]))),
        "max_state_norm": float(np.max(np.linalg.norm(x, axis=1))),
        **dec.report(),
        **extra,
    }
    return StableInversionResult(
        Trajectory(u, start, "u"), Trajectory(x, start, "x"), Trajectory(delta, start, "delta"),
        np.asarray(locs, dtype=int), chi_s, chi_u, report,
    )


def stable_invert(inv: InversePwaModel, dec: Decoupling, r, cfg: StableInversionConfig | None = None
                  ) -> StableInversionResult:
    """Stable inversion when switching depends only on stable modes.

    ``r[j]`` is the previewed output ``y[k + mu_tilde]`` for ``k = start + j``;
    the result holds ``u[k]`` on the same index set.
    """
    cfg = cfg or StableInversionConfig()
    dep = classify_switching(dec, inv.partition, cfg.switching_tol)
    if dep.kind is not SwitchKind.STABLE_MODES:
        raise NotDecouplable(
            f"switching depends on {dep.kind.value}; use the unstable-switching solver or remodel",
            assumption="A9a (switching depends only on stable modes)", block_residual=dep.zero_block_residual,
        )
    values, start = _prepare(inv, dec, r)
    M = len(values)
    ns, nu = dec.n_s, dec.n_u
    Ps = dep.P_tilde[:, :ns]
    w = inv.partition.w
    part = inv.partition
    dm = _Decoupled(inv, dec)
    chi_s = np.zeros((M, ns))
    chi_u = np.zeros((M, nu))
    locs = np.empty(M, dtype=int)
    for j in range(M):
        k = start + j
        d = heaviside(Ps @ chi_s[j] - w)
        try:
            locs[j] = part.select(d)
        except NoLocation as exc:
            raise NoLocation(f"{exc} at time step {k}", k=k, delta=d.tolist()) from None
        if j + 1 < M:
            A_s, _, Bs, _, Fs, _, _, _, _ = dm(locs[j], k)
            chi_s[j + 1] = A_s @ chi_s[j] + Bs * values[j] + Fs
    for j in range(M - 2, -1, -1):
        _, A_u_inv, _, Bu, _, Fu, _, _, _ = dm(locs[j], start + j)
        chi_u[j] = A_u_inv @ (chi_u[j + 1] - Bu * values[j] - Fu)
    return _assemble(inv, dec, dm, values, start, locs, chi_s, chi_u, {"switching": dep.kind.value})


def backward_step_solve(inv: InversePwaModel, dec: Decoupling, k: int, chi_next, y_preview: float,
                        P_u=None, _dm=None) -> list[tuple[int, np.ndarray]]:
    """Every location's solution of the backward unstable-mode step that lies in that location."""
    dm = _dm or _Decoupled(inv, dec)
    if P_u is None:
        P_u = (inv.partition.P @ dec.V_inv)[:, dec.n_s:]
    part = inv.partition
    chi_next = np.asarray(chi_next, dtype=float)
    found = []
    for q in range(part.n_locations):
        _, A_u_inv, _, Bu, _, Fu, _, _, _ = dm(q, k)
        chi = A_u_inv @ (chi_next - Bu * y_preview - Fu)
        sig = tuple(int(v) for v in heaviside(P_u @ chi - part.w))
        if part._lookup.get(sig) == q:
            found.append((q, chi))
    return found


def stable_invert_unstable_switching(inv: InversePwaModel, dec: Decoupling, r,
                                     cfg: StableInversionConfig | None = None) -> StableInversionResult:
    """Stable inversion when switching depends only on unstable modes.

    The backward pass is implicit: at each step every location's candidate is
    tested for membership and one is chosen by ``cfg.selection_cost``.
    """
    cfg = cfg or StableInversionConfig()
    dep = classify_switching(dec, inv.partition, cfg.switching_tol)
    if dep.kind is not SwitchKind.UNSTABLE_MODES:
        raise NotDecouplable(
            f"switching depends on {dep.kind.value}, not exclusively on unstable modes",
            assumption="A9b (switching depends only on unstable modes)", block_residual=dep.zero_block_residual,
        )
    cost = cfg.selection_cost
    if cost is not SelectionCost.STATE_JUMP and dec.n_s:
        raise ValueError(f"{cost.value} selection needs an inverse without stable modes")
    values, start = _prepare(inv, dec, r)
    M = len(values)
    ns, nu = dec.n_s, dec.n_u
    Pu = dep.P_tilde[:, ns:]
    part = inv.partition
    dm = _Decoupled(inv, dec)
    chi_s = np.zeros((M, ns))
    chi_u = np.zeros((M, nu))
    locs = np.empty(M, dtype=int)
    last_k = start + M - 1
    d = heaviside(Pu @ chi_u[-1] - part.w)
    try:
        locs[-1] = part.select(d)
    except NoLocation as exc:
        raise NoLocation(f"{exc} at time step {last_k}", k=last_k, delta=d.tolist()) from None
    u_next = None
    for j in range(M - 2, -1, -1):
        k = start + j
        cands = backward_step_solve(inv, dec, k, chi_u[j + 1], values[j], Pu, dm)
        if not cands:
            raise EmptySolutionSet(f"no location admits a backward unstable-mode step at k={k}", k=k)

        def score(c):
            q, chi = c
            if cost is SelectionCost.STATE_JUMP:
                return float(np.linalg.norm(chi_u[j + 1] - chi))
            *_, cx, D, G = dm(q, k)
            u = float(cx @ np.concatenate([np.zeros(ns), chi]) + D * values[j] + G)
            return abs(u) if cost is SelectionCost.INPUT_NORM else abs(u - u_next)

        if cost is SelectionCost.INPUT_JUMP and u_next is None:
            *_, cx, D, G = dm(locs[j + 1], k + 1)
            u_next = float(cx @ np.concatenate([np.zeros(ns), chi_u[j + 1]]) + D * values[j + 1] + G)
        q, chi = min(cands, key=score)
        locs[j] = q
        chi_u[j] = chi
        if cost is SelectionCost.INPUT_JUMP:
            *_, cx, D, G = dm(q, k)
            u_next = float(cx @ np.concatenate([np.zeros(ns), chi]) + D * values[j] + G)
    for j in range(M - 1):
        A_s, _, Bs, _, Fs, _, _, _, _ = dm(locs[j], start + j)
        chi_s[j + 1] = A_s @ chi_s[j] + Bs * values[j] + Fs
    return _assemble(inv, dec, dm, values, start, locs, chi_s, chi_u, {"switching": dep.kind.value})


def stable_inverse(inv: InversePwaModel, r, cfg: StableInversionConfig | None = None,
                   dec: Decoupling | None = None) -> StableInversionResult:
    """Decouple, classify and dispatch to the matching stable-inversion procedure."""
    cfg = cfg or StableInversionConfig()
    dec = dec or compute_decoupling(inv, cfg.anchor_q, cfg.anchor_k, cfg.decoupling_tol, cfg.hyperbolicity_margin)
    dep = classify_switching(dec, inv.partition, cfg.switching_tol)
    if dep.kind is SwitchKind.UNSTABLE_MODES:
        return stable_invert_unstable_switching(inv, dec, r, cfg)
    return stable_invert(inv, dec, r, cfg)


# ---------------------------------------------------------------------------
# Frozen-switching Jacobian and naive propagation


def stable_inverse_jacobian(inv: InversePwaModel, dec: Decoupling, locations, start: int) -> np.ndarray:
    """Exact ``d u / d r`` of the stable-inverse map with the location sequence held fixed.

    Row ``j`` is the sensitivity of ``u[start + j]`` to every previewed output.
    """
    locs = np.asarray(locations, dtype=int)
    M = len(locs)
    ns, nu = dec.n_s, dec.n_u
    dm = _Decoupled(inv, dec)
    Js = np.zeros((M, ns, M))
    Ju = np.zeros((M, nu, M))
    for j in range(M - 1):
        A_s, _, Bs, _, _, _, _, _, _ = dm(locs[j], start + j)
        Js[j + 1] = A_s @ Js[j]
        Js[j + 1][:, j] += Bs
    for j in range(M - 2, -1, -1):
        _, A_u_inv, _, Bu, _, _, _, _, _ = dm(locs[j], start + j)
        nxt = Ju[j + 1].copy()
        nxt[:, j] -= Bu
        Ju[j] = A_u_inv @ nxt
    L = np.empty((M, M))
    for j in range(M):
        *_, cx, D, _ = dm(locs[j], start + j)
        L[j] = cx[:ns] @ Js[j] + cx[ns:] @ Ju[j]
        L[j, j] += D
    return L


@dataclass
class NaivePropagation:
    x: np.ndarray
    u: np.ndarray
    max_state_norm: float
    diverged_at: int | None


def naive_forward_propagation(inv: InversePwaModel, r, x0=None, blowup: float = 1e12) -> NaivePropagation:
    """Conventional forward propagation of the inverse, stopped once ``|x|`` exceeds ``blowup``."""
    values, start = as_series(r)
    start = inv.system.start_k if start is None else start
    x = np.zeros(inv.n_x) if x0 is None else np.asarray(x0, dtype=float)
    xs, us = [x], []
    diverged = None
    for j, y in enumerate(values):
        m = inv.matrices(inv.partition.locate(x), start + j)
        us.append(float(m.C @ x + m.D * y + m.G))
        x = m.A @ x + m.B * y + m.F
        xs.append(x)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > blowup:
            diverged = start + j + 1
            break
    X = np.array(xs)
    norms = np.linalg.norm(X, axis=1)
    return NaivePropagation(X, np.array(us), float(np.nanmax(np.where(np.isfinite(norms), norms, np.inf))), diverged)
