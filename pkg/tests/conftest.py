"""Shared fixtures and random model generators."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import ortho_group

from pwainv.pwa import LocationMatrices, PwaModel


def two_location_counterexample() -> PwaModel:
    """Two locations sharing C and B, switching on the second state at 1.5."""
    A1 = [[0.0, 1.0], [0.0, 0.0]]
    A2 = [[0.0, 2.0], [0.0, 0.0]]
    B = [0.0, 1.0]
    C = [1.0, 0.0]
    return PwaModel.from_locations(
        [LocationMatrices.make(A1, B, C=C), LocationMatrices.make(A2, B, C=C)],
        P=[[0.0, 1.0]], w=[1.5], signatures=[[(1,)], [(0,)]],
    )


@pytest.fixture
def counterexample():
    return two_location_counterexample()


def _scaled(M, norm):
    return M * (norm / max(np.linalg.norm(M, 2), 1e-12))


def _hyperplane(rng, n):
    P = rng.standard_normal((1, n))
    return P / np.linalg.norm(P)


def random_rd0_model(rng, n=3, n_loc=2) -> PwaModel:
    """Feedthrough in every location; forward and inverse state matrices are contractions."""
    locs = []
    for _ in range(n_loc):
        A = _scaled(rng.standard_normal((n, n)), 0.5)
        B = rng.standard_normal(n)
        C = rng.standard_normal(n)
        D = rng.choice([-1, 1]) * rng.uniform(1.0, 2.0)
        C = C * 0.35 * abs(D) / (np.linalg.norm(B) * np.linalg.norm(C))
        locs.append(LocationMatrices.make(A, B, 0.1 * rng.standard_normal(n), C, D, 0.1 * rng.standard_normal()))
    return PwaModel.from_locations(locs, _hyperplane(rng, n), [0.0], [[(1,)], [(0,)]])


def random_rd1_model(rng, n=3, n_loc=2) -> PwaModel:
    """Shared output map, ``C B_q != 0``; rotated so no structure is visible."""
    T = ortho_group.rvs(n, random_state=rng)
    C = T[:, 0] * rng.uniform(0.5, 2.0)
    G = 0.1 * rng.standard_normal()
    locs = []
    for _ in range(n_loc):
        A = _scaled(rng.standard_normal((n, n)), 0.9)
        b = rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
        locs.append(LocationMatrices.make(T @ A @ T.T, b * T[:, 0], 0.1 * rng.standard_normal(n), C, 0.0, G))
    return PwaModel.from_locations(locs, _hyperplane(rng, n), [0.0], [[(1,)], [(0,)]])


def random_rd2_model(rng, n=3, n_loc=2) -> PwaModel:
    """Output-threshold switching with ``C B_q = 0`` and ``C A_q' B_q != 0``."""
    T = ortho_group.rvs(n, random_state=rng)
    while True:
        mats = []
        for _ in range(n_loc):
            A = _scaled(rng.standard_normal((n, n)), 0.8)
            A[0] = 0.0
            A[0, 1] = rng.choice([-1, 1]) * rng.uniform(0.4, 0.8)
            A[0, 2:] = 0.05 * rng.standard_normal(n - 2)
            A[0, 0] = 0.05 * rng.standard_normal()
            mats.append(A)
        # the inverse state matrices are A_q with the e1-direction removed via A_q'
        ok = all(np.linalg.norm(mats[q] - np.outer(np.eye(n)[1], mats[q2][0] @ mats[q]) / mats[q2][0, 1], 2) < 0.98
                 for q in range(n_loc) for q2 in range(n_loc))
        if ok and max(np.linalg.norm(A, 2) for A in mats) < 0.98:
            break
    c = rng.uniform(0.5, 2.0)
    G = 0.1 * rng.standard_normal()
    locs = [
        LocationMatrices.make(T @ A @ T.T, rng.choice([-1, 1]) * rng.uniform(0.5, 2.0) * T[:, 1],
                              0.1 * rng.standard_normal(n), c * T[:, 0], 0.0, G)
        for A in mats
    ]
    p0 = rng.choice([-1.0, 1.0])
    P = (p0 * c * T[:, 0])[None, :]
    return PwaModel.from_locations(locs, P, [p0 * G], [[(1,)], [(0,)]])


GENERATORS = {0: random_rd0_model, 1: random_rd1_model, 2: random_rd2_model}


def lti_stable_nmp(rng=None):
    """Single-location relative-degree-1 model whose inverse has one unstable mode (zero at 2)."""
    # y = (z - 2)(z - 0.3) / ((z - 0.5)(z - 0.2)(z + 0.4)) u, controllable canonical
    from scipy.signal import tf2ss

    A, B, C, _ = tf2ss(np.poly([2.0, 0.3]), np.poly([0.5, 0.2, -0.4]))
    return PwaModel.lti(A, B[:, 0], C[0])


def designed_inverse(Abars, Bs, C, P, w, signatures, Fs=None):
    """Relative-degree-0 model whose inverse has the given state matrices (``D = 1``)."""
    from pwainv.inversion import invert_rd0

    C = np.asarray(C, dtype=float)
    locs = []
    for i, (Ab, B) in enumerate(zip(Abars, Bs)):
        B = np.asarray(B, dtype=float)
        F = None if Fs is None else Fs[i]
        locs.append(LocationMatrices.make(np.asarray(Ab, dtype=float) + np.outer(B, C), B, F, C, 1.0, 0.0))
    return invert_rd0(PwaModel.from_locations(locs, P, w, signatures))


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record a criterion outcome and fail the test when it does not hold."""

    def record(number, title, ok, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        assert ok, ACCEPTANCE_LINES[number]

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
