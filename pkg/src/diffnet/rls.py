"""Diffusion recursive least-squares in both published forms, plus the
consensus-based baseline.

The rank-one form cycles through neighborhood data and then combines
intermediate estimates; the inverse form carries (P^-1, q) explicitly.  Both
compute the same iterates.  Neighbor visits run in ascending node index: the
end-of-loop result is order-independent in exact arithmetic, but a fixed
order makes runs reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datamodel import Snapshot
from .errors import NumericalError, ValidationError
from .graph import Topology

DELTA_DEFAULT = 1e4
LAMBDA_DEFAULT = 0.995

# symmetry drift beyond this is reported by symmetrize()
SYM_TOL = 1e-9


@dataclass
class RlsNodeState:
    """Per-node estimate and inverse-information matrix.

    ``w`` is the post-combination estimate, ``psi`` the intermediate one.
    ``P`` stays symmetric positive-definite; every update re-symmetrizes it
    against floating-point drift.
    """

    w: np.ndarray  # (M,)
    p: np.ndarray  # (M, M)
    lam: float
    psi: np.ndarray | None = None


def init_states(n: int, m: int, lam: float = LAMBDA_DEFAULT, delta: float = DELTA_DEFAULT):
    """Standard initialization: w = 0, P = delta * I."""
    if not (0.0 < lam <= 1.0):
        raise ValidationError("forgetting factor must lie in (0, 1]")
    if delta <= 0:
        raise ValidationError("delta must be positive")
    return [
        RlsNodeState(w=np.zeros(m), p=delta * np.eye(m), lam=lam, psi=np.zeros(m))
        for _ in range(n)
    ]


def _symmetrize(p: np.ndarray) -> tuple[np.ndarray, float]:
    drift = float(np.abs(p - p.T).max(initial=0.0))
    return 0.5 * (p + p.T), drift


def _check_spd(p: np.ndarray):
    try:
        np.linalg.cholesky(p)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"P lost positive definiteness: {exc}") from exc


def drls_step(states, t: Topology, a, c, snapshot: Snapshot):
    """Rank-one diffusion RLS step.

    Per node: scale P by 1/lambda, then for each neighbor l (ascending) apply
    the scalar-gain update with weight c_lk, then combine the neighborhood's
    intermediate estimates through the columns of A.
    """
    a_e = a.entries if hasattr(a, "entries") else np.asarray(a, dtype=float)
    c_e = c.entries if hasattr(c, "entries") else np.asarray(c, dtype=float)
    n = t.n
    u, d = snapshot.u, snapshot.d
    psis = []
    new_ps = []
    for k in range(n):
        st = states[k]
        psi = st.w.copy()
        p = st.p / st.lam
        for l in t.neighborhoods[k]:
            clk = c_e[l, k]
            if clk == 0.0:
                continue
            ul = u[l]
            pu = p @ ul
            denom = 1.0 + clk * (ul @ pu)
            if denom <= 0.0:
                raise NumericalError(f"nonpositive gain denominator at node {k}")
            gain = (clk / denom) * pu
            psi = psi + gain * (d[l] - ul @ psi)
            p = p - np.outer(gain, pu)
        p, _ = _symmetrize(p)
        _check_spd(p)
        psis.append(psi)
        new_ps.append(p)
    out = []
    for k in range(n):
        w = sum(a_e[l, k] * psis[l] for l in t.neighborhoods[k] if a_e[l, k] != 0.0)
        out.append(RlsNodeState(w=np.asarray(w), p=new_ps[k], lam=states[k].lam, psi=psis[k]))
    return out


def drls_alt_step(states, t: Topology, a, c, snapshot: Snapshot):
    """Inverse-form diffusion RLS step; algebraically equal to drls_step.

    Combines the previous intermediate estimates first, then updates
    (P^-1, q) with the neighborhood data and recovers psi = P q.
    """
    a_e = a.entries if hasattr(a, "entries") else np.asarray(a, dtype=float)
    c_e = c.entries if hasattr(c, "entries") else np.asarray(c, dtype=float)
    n = t.n
    u, d = snapshot.u, snapshot.d
    out = []
    for k in range(n):
        st = states[k]
        w = sum(a_e[l, k] * states[l].psi for l in t.neighborhoods[k] if a_e[l, k] != 0.0)
        try:
            pinv_prev = np.linalg.inv(st.p)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular P at node {k}: {exc}") from exc
        pinv = st.lam * pinv_prev
        q = st.lam * (pinv_prev @ w)
        for l in t.neighborhoods[k]:
            clk = c_e[l, k]
            if clk == 0.0:
                continue
            pinv = pinv + clk * np.outer(u[l], u[l])
            q = q + clk * d[l] * u[l]
        try:
            p = np.linalg.inv(pinv)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular P^-1 at node {k}: {exc}") from exc
        p, _ = _symmetrize(p)
        psi = p @ q
        out.append(RlsNodeState(w=w, p=p, lam=st.lam, psi=psi))
    # report the post-combination estimate of this step alongside psi
    for k in range(n):
        out[k] = replace(
            out[k],
            w=sum(a_e[l, k] * out[l].psi for l in t.neighborhoods[k] if a_e[l, k] != 0.0),
        )
    return out


@dataclass
class CrlsNodeState:
    """Consensus-RLS carries the information pair (P^-1, q) across links."""

    pinv: np.ndarray
    q: np.ndarray
    psi: np.ndarray


def init_crls_states(n: int, m: int, delta: float = DELTA_DEFAULT):
    return [
        CrlsNodeState(pinv=np.eye(m) / delta, q=np.zeros(m), psi=np.zeros(m))
        for _ in range(n)
    ]


def crls_step(states, t: Topology, c, snapshot: Snapshot):
    """Consensus-based RLS step (unit forgetting regime).

    Each node averages its neighbors' information pairs together with their
    fresh data outer products.  Sharing (P^-1, q) costs substantially more
    communication than diffusion RLS; see :func:`crls_comm_scalars`.
    """
    c_e = c.entries if hasattr(c, "entries") else np.asarray(c, dtype=float)
    n = t.n
    u, d = snapshot.u, snapshot.d
    m = u.shape[1]
    out = []
    for k in range(n):
        pinv = np.zeros((m, m))
        q = np.zeros(m)
        for l in t.neighborhoods[k]:
            clk = c_e[l, k]
            if clk == 0.0:
                continue
            pinv = pinv + clk * (states[l].pinv + np.outer(u[l], u[l]))
            q = q + clk * (states[l].q + d[l] * u[l])
        pinv, _ = _symmetrize(pinv)
        try:
            psi = np.linalg.solve(pinv, q)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular information matrix at node {k}: {exc}") from exc
        out.append(CrlsNodeState(pinv=pinv, q=q, psi=psi))
    return out


def drls_comm_scalars(t: Topology, m: int) -> np.ndarray:
    """Scalars received per node per diffusion-RLS step: |N_k| * (1 + M + M)
    for (d_l, u_l, psi_l)."""
    return t.degrees * (1 + 2 * m)


def crls_comm_scalars(t: Topology, m: int) -> np.ndarray:
    """Scalars received per node per consensus-RLS step:
    |N_k| * (M^2 + M + M + 1) for (P_l^-1, q_l, u_l, d_l)."""
    return t.degrees * (m * m + 2 * m + 1)


def batch_weighted_ls(u_hist, d_hist, lam: float, delta: float) -> np.ndarray:
    """Exponentially weighted regularized least squares on the full history.

    Solves ``min_w lam^(i+1)/delta ||w||^2 + sum_j lam^(i-j) |d_j - u_j w|^2``
    for a single node; the growing-window oracle for N = 1 RLS.
    """
    u_hist = np.asarray(u_hist, dtype=float)
    d_hist = np.asarray(d_hist, dtype=float)
    i = u_hist.shape[0] - 1
    m = u_hist.shape[1]
    weights = lam ** (i - np.arange(i + 1))
    gram = (u_hist * weights[:, None]).T @ u_hist + (lam ** (i + 1) / delta) * np.eye(m)
    rhs = (u_hist * weights[:, None]).T @ d_hist
    return np.linalg.solve(gram, rhs)
