"""Diffusion Kalman filtering: time/measurement and information forms, the
consensus combination baseline, and a centralized oracle.

Every node runs a local filter over its neighborhood's measurements and then
combines intermediate state estimates.  The carried P matrices follow the
classical update algebra but are not error covariances once combination
weights enter; they are kept symmetric explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, PreconditionError, ValidationError
from .graph import Topology


@dataclass(frozen=True)
class StateSpaceModel:
    """Linear state-space model observed by N nodes.

    ``x_{i+1} = F x_i + G n_i`` with per-node measurements
    ``y_k = H_k x + v_k``; measurement covariances must be positive-definite.
    Time-varying systems supply ``providers`` callbacks keyed by the step
    index; constant matrices are the default.
    """

    f: np.ndarray  # (n, n)
    g: np.ndarray  # (n, q)
    h: np.ndarray  # (N, p, n)
    q: np.ndarray  # (q, q) process noise covariance
    r: np.ndarray  # (N, p, p) measurement noise covariances
    pi0: np.ndarray  # (n, n) initial state covariance
    providers: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        g = np.asarray(self.g, dtype=float)
        h = np.asarray(self.h, dtype=float)
        qm = np.asarray(self.q, dtype=float)
        r = np.asarray(self.r, dtype=float)
        pi0 = np.asarray(self.pi0, dtype=float)
        n = f.shape[0]
        if f.shape != (n, n) or g.shape[0] != n or pi0.shape != (n, n):
            raise ValidationError("inconsistent state dimensions")
        if h.ndim != 3 or h.shape[2] != n or r.shape != (h.shape[0], h.shape[1], h.shape[1]):
            raise ValidationError("inconsistent measurement dimensions")
        for k in range(r.shape[0]):
            try:
                np.linalg.cholesky(r[k])
            except np.linalg.LinAlgError as exc:
                raise ValidationError(f"R[{k}] must be positive-definite") from exc
        try:
            np.linalg.cholesky(pi0)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("pi0 must be positive-definite") from exc
        if np.linalg.eigvalsh(0.5 * (qm + qm.T))[0] < -1e-12:
            raise ValidationError("process covariance must be nonnegative-definite")
        for name, val in (("f", f), ("g", g), ("h", h), ("q", qm), ("r", r), ("pi0", pi0)):
            object.__setattr__(self, name, val)

    @property
    def n_nodes(self) -> int:
        return self.h.shape[0]

    @property
    def state_dim(self) -> int:
        return self.f.shape[0]

    @property
    def meas_dim(self) -> int:
        return self.h.shape[1]

    def f_at(self, i: int) -> np.ndarray:
        return self.providers["f"](i) if "f" in self.providers else self.f

    def g_at(self, i: int) -> np.ndarray:
        return self.providers["g"](i) if "g" in self.providers else self.g

    def q_at(self, i: int) -> np.ndarray:
        return self.providers["q"](i) if "q" in self.providers else self.q

    def h_at(self, k: int, i: int) -> np.ndarray:
        return self.providers["h"](k, i) if "h" in self.providers else self.h[k]

    def r_at(self, k: int, i: int) -> np.ndarray:
        return self.providers["r"](k, i) if "r" in self.providers else self.r[k]


@dataclass
class KfNodeState:
    """Predicted and filtered estimates carried by one node."""

    x_pred: np.ndarray
    p_pred: np.ndarray
    x_filt: np.ndarray | None = None
    p_filt: np.ndarray | None = None
    psi: np.ndarray | None = None


def init_kf_states(model: StateSpaceModel):
    """Zero initial prediction with covariance pi0 at every node."""
    return [
        KfNodeState(x_pred=np.zeros(model.state_dim), p_pred=model.pi0.copy())
        for _ in range(model.n_nodes)
    ]


def _sym(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def _time_update(model, i, x_filt, p_filt):
    fi = model.f_at(i)
    gi = model.g_at(i)
    qi = model.q_at(i)
    return fi @ x_filt, _sym(fi @ p_filt @ fi.T + gi @ qi @ gi.T)


def dkf_tm_step(states, t: Topology, a, model: StateSpaceModel, y, i: int = 0):
    """Time/measurement-form diffusion Kalman step.

    Per node: sequential neighbor measurement updates (ascending index) with
    innovation covariance ``Re = R_l + H_l P H_l'``, then diffusion of the
    intermediate estimates through A, then the time update.
    """
    a_e = a.entries if hasattr(a, "entries") else np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    psis = []
    ps = []
    for k in range(t.n):
        st = states[k]
        psi = st.x_pred.copy()
        p = st.p_pred.copy()
        for l in t.neighborhoods[k]:
            hl = model.h_at(l, i)
            re = model.r_at(l, i) + hl @ p @ hl.T
            try:
                re_chol = np.linalg.cholesky(_sym(re))
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"innovation covariance not PD at node {k}") from exc
            gain = np.linalg.solve(re_chol.T, np.linalg.solve(re_chol, hl @ p)).T
            psi = psi + gain @ (y[l] - hl @ psi)
            p = _sym(p - gain @ hl @ p)
        psis.append(psi)
        ps.append(p)
    out = []
    for k in range(t.n):
        x_filt = sum(a_e[l, k] * psis[l] for l in t.neighborhoods[k] if a_e[l, k] != 0.0)
        x_pred, p_pred = _time_update(model, i, x_filt, ps[k])
        out.append(
            KfNodeState(x_pred=x_pred, p_pred=p_pred, x_filt=np.asarray(x_filt),
                        p_filt=ps[k], psi=psis[k])
        )
    return out


def dkf_info_step(states, t: Topology, a, model: StateSpaceModel, y, i: int = 0):
    """Information-form diffusion Kalman step.

    Aggregates neighborhood information ``S_k = sum H'R^-1 H`` and
    ``q_k = sum H'R^-1 y``; needs an invertible predicted covariance, which
    invertible F guarantees.
    """
    a_e = a.entries if hasattr(a, "entries") else np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    psis = []
    ps = []
    for k in range(t.n):
        st = states[k]
        sk = np.zeros((model.state_dim, model.state_dim))
        qk = np.zeros(model.state_dim)
        for l in t.neighborhoods[k]:
            hl = model.h_at(l, i)
            rl_inv_h = np.linalg.solve(model.r_at(l, i), hl)
            sk += hl.T @ rl_inv_h
            qk += rl_inv_h.T @ y[l]
        try:
            p_pred_inv = np.linalg.inv(st.p_pred)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular predicted covariance at node {k}") from exc
        p_filt = _sym(np.linalg.inv(_sym(p_pred_inv + sk)))
        psi = st.x_pred + p_filt @ (qk - sk @ st.x_pred)
        psis.append(psi)
        ps.append(p_filt)
    out = []
    for k in range(t.n):
        x_filt = sum(a_e[l, k] * psis[l] for l in t.neighborhoods[k] if a_e[l, k] != 0.0)
        x_pred, p_pred = _time_update(model, i, x_filt, ps[k])
        out.append(
            KfNodeState(x_pred=x_pred, p_pred=p_pred, x_filt=np.asarray(x_filt),
                        p_filt=ps[k], psi=psis[k])
        )
    return out


def ckf_combine(psis, t: Topology, epsilon: float):
    """Consensus combination: weight (1 + eps - n_k eps) on the node's own
    intermediate estimate and eps on each neighbor's.

    The weights sum to one by construction; eps must be small enough that no
    self-weight goes negative.
    """
    psis = np.asarray(psis, dtype=float)
    self_w = 1.0 + epsilon - t.degrees * epsilon
    if np.any(self_w < 0):
        raise PreconditionError(
            f"epsilon={epsilon} gives a negative self-weight (max degree {t.max_degree})"
        )
    out = np.empty_like(psis)
    for k in range(t.n):
        x = self_w[k] * psis[k]
        for l in t.neighborhoods[k]:
            if l != k:
                x = x + epsilon * psis[l]
        out[k] = x
    return out


def ckf_step(states, t: Topology, model: StateSpaceModel, y, epsilon: float, i: int = 0):
    """Consensus-Kalman baseline: information-form incremental update
    followed by the epsilon combination instead of the diffusion weights."""
    y = np.asarray(y, dtype=float)
    psis = []
    ps = []
    for k in range(t.n):
        st = states[k]
        sk = np.zeros((model.state_dim, model.state_dim))
        qk = np.zeros(model.state_dim)
        for l in t.neighborhoods[k]:
            hl = model.h_at(l, i)
            rl_inv_h = np.linalg.solve(model.r_at(l, i), hl)
            sk += hl.T @ rl_inv_h
            qk += rl_inv_h.T @ y[l]
        p_pred_inv = np.linalg.inv(st.p_pred)
        p_filt = _sym(np.linalg.inv(_sym(p_pred_inv + sk)))
        psi = st.x_pred + p_filt @ (qk - sk @ st.x_pred)
        psis.append(psi)
        ps.append(p_filt)
    combined = ckf_combine(psis, t, epsilon)
    out = []
    for k in range(t.n):
        x_pred, p_pred = _time_update(model, i, combined[k], ps[k])
        out.append(
            KfNodeState(x_pred=x_pred, p_pred=p_pred, x_filt=combined[k],
                        p_filt=ps[k], psi=psis[k])
        )
    return out


def centralized_kf_step(state: KfNodeState, model: StateSpaceModel, y, i: int = 0) -> KfNodeState:
    """Classical covariance-form filter over all nodes' stacked measurements.

    Performance oracle: its tracking error lower-bounds every distributed
    variant, and for N = 1 it coincides with the diffusion filters.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    h = np.concatenate([model.h_at(k, i) for k in range(model.n_nodes)], axis=0)
    p_dim = model.meas_dim
    r = np.zeros((h.shape[0], h.shape[0]))
    for k in range(model.n_nodes):
        r[k * p_dim : (k + 1) * p_dim, k * p_dim : (k + 1) * p_dim] = model.r_at(k, i)
    re = _sym(r + h @ state.p_pred @ h.T)
    try:
        re_chol = np.linalg.cholesky(re)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("stacked innovation covariance not PD") from exc
    gain = np.linalg.solve(re_chol.T, np.linalg.solve(re_chol, h @ state.p_pred)).T
    x_filt = state.x_pred + gain @ (y - h @ state.x_pred)
    p_filt = _sym(state.p_pred - gain @ h @ state.p_pred)
    x_pred, p_pred = _time_update(model, i, x_filt, p_filt)
    return KfNodeState(x_pred=x_pred, p_pred=p_pred, x_filt=x_filt, p_filt=p_filt, psi=x_filt)


def simulate_state_trajectory(model: StateSpaceModel, steps: int, rng):
    """Sample a state trajectory and per-node measurements.

    Returns ``(xs, ys)`` with shapes (steps, n) and (steps, N, p); the state
    sequence starts from a draw with covariance pi0.
    """
    n = model.state_dim
    x = np.linalg.cholesky(model.pi0) @ rng.standard_normal(n)
    q_chol = _psd_chol(model.q)
    xs = np.empty((steps, n))
    ys = np.empty((steps, model.n_nodes, model.meas_dim))
    for i in range(steps):
        xs[i] = x
        for k in range(model.n_nodes):
            rk = model.r_at(k, i)
            ys[i, k] = model.h_at(k, i) @ x + np.linalg.cholesky(rk) @ rng.standard_normal(
                model.meas_dim
            )
        x = model.f_at(i) @ x + model.g_at(i) @ (q_chol @ rng.standard_normal(model.q.shape[0]))
    return xs, ys


def _psd_chol(q: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(_sym(np.asarray(q, dtype=float)))
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
