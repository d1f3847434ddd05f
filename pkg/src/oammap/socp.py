"""Solver for the max-min affine subproblem over an energy ball.

Each design iteration needs the solution of

    maximize  s
    subject to  coeffs[k] . x + offsets[k] >= s        (one row per symbol pair)
                sum(x**2) <= ball_bound                 (optional)
                sum(x[idx]**2) <= cap   per group       (optional)

This is solved with a log-barrier interior-point method on the epigraph
form: Newton centering steps on

    psi_t(x, s) = -t*s - sum log(slack_k) - log(ball slack) - sum log(cap slacks)

with t increased geometrically until the certified duality gap m/t is below
1e-9 relative to |s|.  The problem is internally rescaled (coordinates by the
energy budget, objective by the constraint magnitudes) so tolerances behave
the same at any channel scale.  Everything is deterministic: no randomness,
no iteration-order ambiguity.

Degenerate rows (zero coefficient vector, arising from coincident warm-start
symbols) are dropped with a warning.  Zero-cap groups pin their coordinates
to zero and the problem is solved in the remaining coordinates; if every
coordinate is pinned (or the ball bound is zero) the spec is infeasible.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

NEWTON_BUDGET = 5000  # hard cap on Newton iterations per solve
_GAP_REL = 1e-9  # target duality gap, relative to max(1, |s|)
_MU = 30.0  # barrier parameter growth per stage
_NTOL = 1e-11  # Newton decrement^2 / 2 threshold for centering


@dataclass(frozen=True)
class SubproblemSpec:
    """One linearized max-min instance.

    coeffs: (K, N) rows of affine lower-bound gradients.
    offsets: (K,) constants; row k states coeffs[k] . x + offsets[k] >= s.
    ball_bound: optional bound on sum(x**2).
    group_caps: optional ((indices, cap), ...) bounds on sum(x[indices]**2).
    """

    coeffs: np.ndarray
    offsets: np.ndarray
    ball_bound: float | None = None
    group_caps: tuple[tuple[np.ndarray, float], ...] | None = None

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        offsets = np.asarray(self.offsets, dtype=float)
        if coeffs.ndim != 2 or offsets.ndim != 1 or coeffs.shape[0] != offsets.shape[0]:
            raise ValueError("coeffs must be (K, N) with offsets of length K")
        if coeffs.shape[0] == 0:
            raise ValueError("at least one affine constraint is required")
        if not (np.isfinite(coeffs).all() and np.isfinite(offsets).all()):
            raise ValueError("constraint data must be finite")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "offsets", offsets)
        if self.ball_bound is None and not self.group_caps:
            raise ValueError("an energy bound is required (ball_bound or group_caps)")
        if self.ball_bound is not None and self.ball_bound < 0:
            raise ValueError("ball_bound must be nonnegative")
        if self.group_caps is not None:
            n = coeffs.shape[1]
            caps = []
            for idx, cap in self.group_caps:
                idx = np.asarray(idx, dtype=int)
                if idx.size and (idx.min() < 0 or idx.max() >= n):
                    raise ValueError("group cap indices out of range")
                if cap < 0:
                    raise ValueError("group caps must be nonnegative")
                caps.append((idx, float(cap)))
            object.__setattr__(self, "group_caps", tuple(caps))


@dataclass
class SubproblemSolution:
    x: np.ndarray
    s: float
    status: str  # optimal | max_iter | infeasible
    kkt_residual: float
    newton_iterations: int = 0
    dropped_rows: int = 0


def _psi(t, s, slack, ball_slack, cap_slacks):
    val = -t * s - np.log(slack).sum()
    if ball_slack is not None:
        val -= np.log(ball_slack)
    for bg in cap_slacks:
        val -= np.log(bg)
    return val


def solve_subproblem(
    spec: SubproblemSpec,
    warm_start: np.ndarray | None = None,
    gap_hint: float | None = None,
) -> SubproblemSolution:
    """Solve one subproblem; the result's s is min_k(coeffs[k].x + offsets[k]) at the returned x.

    warm_start is projected into the feasible energy region if necessary.
    gap_hint (same units as offsets) seeds the barrier parameter when the
    warm start is known to be nearly optimal.
    """
    G0 = spec.coeffs
    c0 = spec.offsets
    K0, N = G0.shape
    caps = spec.group_caps or ()

    # pin coordinates of zero-cap groups; detect an all-zero energy budget
    pinned = np.zeros(N, dtype=bool)
    for idx, cap in caps:
        if cap == 0.0:
            pinned[idx] = True
    if spec.ball_bound == 0.0:
        pinned[:] = True
    keep = ~pinned
    budget = spec.ball_bound
    if budget is None:
        budget = sum(cap for _, cap in caps)
    if budget <= 0 or not keep.any():
        return SubproblemSolution(
            x=np.zeros(N), s=float("nan"), status="infeasible", kkt_residual=float("inf")
        )

    G = G0[:, keep]
    norms = np.sqrt((G * G).sum(axis=1))
    live = norms > 0.0
    dropped = int(K0 - live.sum())
    if dropped:
        warnings.warn(f"dropped {dropped} degenerate zero-gradient constraint rows", RuntimeWarning)
        G = G[live]
        c = c0[live]
    else:
        c = c0
    if G.shape[0] == 0:
        raise ValueError("all constraint rows are degenerate")
    K, n = G.shape

    # rescale coordinates by the energy budget and the objective by row magnitude
    rho = float(np.sqrt(budget))
    Gs = G * rho
    sigma = max(float(np.abs(c).max()), float(np.sqrt((Gs * Gs).sum(axis=1)).max()))
    A = Gs / sigma
    cb = c / sigma

    groups = []
    pos = np.full(N, -1)
    pos[keep] = np.arange(n)
    for idx, cap in caps:
        if cap > 0.0:
            ridx = pos[idx]
            ridx = ridx[ridx >= 0]
            if ridx.size:
                groups.append((ridx, cap / (rho * rho)))
    has_ball = spec.ball_bound is not None

    # strictly feasible start
    if warm_start is not None:
        u = np.asarray(warm_start, dtype=float)[keep] / rho
        shrink = 1.0
        if has_ball:
            e = float(u @ u)
            if e > 0.98:
                shrink = min(shrink, np.sqrt(0.98 / e))
        for ridx, cap in groups:
            e = float(u[ridx] @ u[ridx])
            if e > 0.98 * cap:
                shrink = min(shrink, np.sqrt(0.98 * cap / e))
        u = u * shrink
    else:
        u = np.zeros(n)
    vals = A @ u + cb
    s = float(vals.min()) - 0.1 * max(1.0, abs(float(vals.min())))

    m = K + (1 if has_ball else 0) + len(groups)
    if gap_hint is not None and gap_hint > 0:
        t = float(np.clip(m / max(gap_hint / sigma, 1e-12), 1.0, 1e8))
    else:
        t = 1.0

    total_newton = 0
    status = "optimal"
    eye = np.eye(n)
    while True:
        for _ in range(80):
            slack = A @ u + cb - s
            w1 = 1.0 / slack
            w2 = w1 * w1
            grad_u = -(A.T @ w1)
            grad_s = float(w1.sum()) - t
            Huu = A.T @ (A * w2[:, None])
            Hus = -(A.T @ w2)
            Hss = float(w2.sum())
            ball_slack = None
            if has_ball:
                ball_slack = 1.0 - float(u @ u)
                grad_u += (2.0 / ball_slack) * u
                Huu += (2.0 / ball_slack) * eye + np.outer(u, u) * (4.0 / ball_slack**2)
            cap_slacks = []
            for ridx, cap in groups:
                ug = u[ridx]
                bg = cap - float(ug @ ug)
                cap_slacks.append(bg)
                grad_u[ridx] += (2.0 / bg) * ug
                block = np.outer(ug, ug) * (4.0 / bg**2)
                block[np.diag_indices_from(block)] += 2.0 / bg
                Huu[np.ix_(ridx, ridx)] += block

            H = np.empty((n + 1, n + 1))
            H[:n, :n] = Huu
            H[:n, n] = Hus
            H[n, :n] = Hus
            H[n, n] = Hss
            g = np.append(grad_u, grad_s)
            reg = 0.0
            while True:
                try:
                    if reg:
                        H[np.diag_indices_from(H)] += reg
                    step = np.linalg.solve(H, -g)
                    if np.isfinite(step).all():
                        break
                except np.linalg.LinAlgError:
                    pass
                reg = max(reg * 10.0, 1e-12 * max(float(np.abs(H).max()), 1.0))
                if reg > 1e-2 * float(np.abs(H).max()):
                    step = -g  # fall back to a gradient step
                    break

            lam2 = max(float(-g @ step), 0.0)
            if lam2 / 2.0 <= _NTOL:
                break
            du, ds = step[:n], float(step[n])

            alpha = 1.0
            psi0 = _psi(t, s, slack, ball_slack, cap_slacks)
            gdelta = float(g @ step)
            for _ in range(80):
                u_n = u + alpha * du
                s_n = s + alpha * ds
                slack_n = A @ u_n + cb - s_n
                ok = slack_n.min() > 0
                ball_n = None
                if ok and has_ball:
                    ball_n = 1.0 - float(u_n @ u_n)
                    ok = ball_n > 0
                caps_n = []
                if ok:
                    for ridx, cap in groups:
                        ug = u_n[ridx]
                        bg = cap - float(ug @ ug)
                        caps_n.append(bg)
                        if bg <= 0:
                            ok = False
                            break
                if ok and _psi(t, s_n, slack_n, ball_n, caps_n) <= psi0 + 0.25 * alpha * gdelta:
                    break
                alpha *= 0.5
            u = u + alpha * du
            s = s + alpha * ds
            total_newton += 1
            if total_newton >= NEWTON_BUDGET:
                status = "max_iter"
                break
        if status == "max_iter":
            break
        if m / t <= _GAP_REL * max(1.0, abs(s)):
            break
        t = min(t * _MU, 1e13)

    x = np.zeros(N)
    x[keep] = u * rho
    live_vals = (G @ x[keep]) + c
    s_out = float(live_vals.min())
    return SubproblemSolution(
        x=x,
        s=s_out,
        status=status,
        kkt_residual=sigma * m / t,
        newton_iterations=total_newton,
        dropped_rows=dropped,
    )
