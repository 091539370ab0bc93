"""Gain selection: Lyapunov certificate, sufficient gain condition, sweep and block floors."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .controller import GeometricController, Gains, ReferencePoint
from .dynamics import State, VehicleParams
from .se3 import E3, hat, quat_exp, quat_to_matrix

log = logging.getLogger(__name__)

LINEARIZATION_STEP = 1e-6


class NonStabilizingGains(ValueError):
    """The linearized closed loop has an eigenvalue with non-negative real part."""


# ---------------------------------------------------------------------------
# linearization and certificate


def _hover_state(x: np.ndarray, p0: np.ndarray) -> State:
    """State from ``[p - p0, v, rotation vector, w]``."""
    return State(p0 + x[0:3], x[3:6].copy(), quat_exp(x[6:9]), x[9:12].copy())


def _closed_loop(x: np.ndarray, gains: Gains, params: VehicleParams, p0: np.ndarray):
    """Time derivative of ``[p, v, rotvec, w]`` under the nominal controller, and the logged error."""
    ref = ReferencePoint(p0, np.zeros(3), np.zeros(3))
    ctrl = GeometricController(gains, params)
    s = _hover_state(x, p0)
    out = ctrl.compute(s, ref)
    R = quat_to_matrix(s.q)
    w = s.w
    T, tau = out.u_raw.T, out.u_raw.tau  # the linearization ignores input limits
    d = np.empty(12)
    d[0:3] = s.v
    d[3:6] = params.g * E3 - T * R[:, 2] / params.m
    # rotation-vector kinematics to first order around the identity
    th = x[6:9]
    d[6:9] = w + 0.5 * hat(th) @ w
    d[9:12] = params.J_inv @ (tau - np.cross(w, params.J @ w))
    return d, out.error


def linearize(gains: Gains, params: VehicleParams, p0=(0.0, 0.0, -1.0),
              h: float = LINEARIZATION_STEP) -> np.ndarray:
    """12x12 Jacobian of the nominal error dynamics at hover, in logged-error coordinates."""
    p0 = np.asarray(p0, dtype=float)
    Ax = np.empty((12, 12))
    Tm = np.empty((12, 12))
    for j in range(12):
        dx = np.zeros(12)
        dx[j] = h
        fp, ep = _closed_loop(dx, gains, params, p0)
        fm, em = _closed_loop(-dx, gains, params, p0)
        Ax[:, j] = (fp - fm) / (2 * h)
        Tm[:, j] = (ep - em) / (2 * h)
    # e = Tm x to first order, so the error dynamics are Tm Ax Tm^-1
    return Tm @ Ax @ np.linalg.inv(Tm)


def solve_lyapunov(A: np.ndarray, Q: np.ndarray | None = None) -> np.ndarray:
    """``P`` with ``A^T P + P A = -Q`` from the vectorized (Kronecker) linear system."""
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    I = np.eye(n)
    # row-major vec: vec(A^T P) = (A^T kron I) vec(P), vec(P A) = (I kron A^T) vec(P)
    M = np.kron(A.T, I) + np.kron(I, A.T)
    P = np.linalg.solve(M, -Q.reshape(-1)).reshape(n, n)
    return 0.5 * (P + P.T)


def lyapunov_residual(A: np.ndarray, P: np.ndarray, Q: np.ndarray | None = None) -> float:
    Q = np.eye(len(A)) if Q is None else Q
    return float(np.linalg.norm(A.T @ P + P @ A + Q))


@dataclass
class LyapunovCertificate:
    A: np.ndarray
    P: np.ndarray
    c1: float
    c2: float
    lam_min: float
    lam_max: float
    residual: float

    @property
    def gamma1(self) -> float:
        return float(np.sqrt(self.lam_max / self.lam_min))

    @property
    def gamma2(self) -> float:
        """Decay rate of the practical bound, ``c1 / (4 lam_max)``."""
        return self.c1 / (4.0 * self.lam_max)

    @property
    def gamma2_lam_min(self) -> float:
        """The rate ``c1 / (4 lam_min)``; faster than any quadratic-Lyapunov argument supports."""
        return self.c1 / (4.0 * self.lam_min)

    @property
    def threshold_ratio(self) -> float:
        """``c1 / (2 c2)``; multiply by the tolerance to get the residual bound."""
        return self.c1 / (2.0 * self.c2)

    def bound(self, t: np.ndarray, e0: float, eps: float, t0: float = 0.0) -> np.ndarray:
        """``gamma1 exp(-gamma2 (t - t0)) |e(t0)| + eps``."""
        return self.gamma1 * np.exp(-self.gamma2 * (np.asarray(t) - t0)) * e0 + eps


def certificate_from_matrix(A: np.ndarray, Q: np.ndarray | None = None) -> LyapunovCertificate:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    eig = np.linalg.eigvals(A)
    if np.max(eig.real) >= 0:
        raise NonStabilizingGains(f"closed loop not Hurwitz (max real part {np.max(eig.real):.3g})")
    Q = np.eye(len(A)) if Q is None else np.asarray(Q, dtype=float)
    P = solve_lyapunov(A, Q)
    lam = np.linalg.eigvalsh(P)
    c1 = float(np.min(np.linalg.eigvalsh(Q)))
    return LyapunovCertificate(A, P, c1, 2.0 * float(np.linalg.norm(P, 2)), float(lam[0]),
                               float(lam[-1]), lyapunov_residual(A, P, Q))


def lyapunov_constants(gains: Gains, params: VehicleParams, p0=(0.0, 0.0, -1.0)) -> LyapunovCertificate:
    """Certificate of the nominal closed loop at hover with ``Q = I``."""
    return certificate_from_matrix(linearize(gains, params, p0))


def gain_condition(rho_sup: float, cert: LyapunovCertificate, eps: float) -> bool:
    """Whether ``rho_sup <= c1 / (2 c2) * eps`` (closed inequality)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return bool(rho_sup <= cert.threshold_ratio * eps)


def practical_bound_holds(t: np.ndarray, e_norm: np.ndarray, cert: LyapunovCertificate,
                          eps: float) -> tuple[bool, float]:
    """Check ``|e(t)| <= gamma1 exp(-gamma2 t) |e(0)| + eps`` at every sample; returns (ok, worst margin)."""
    bound = cert.bound(t, float(e_norm[0]), eps, float(t[0]))
    margin = float(np.min(bound - e_norm))
    return margin >= 0, margin


# ---------------------------------------------------------------------------
# confidence tube


def reference_tube(cfg, spacing: float | None = None, pos: float | None = None,
                   vel: float | None = None, n_dirs: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Reference states every ``spacing`` s plus ``n_dirs`` horizontal radial perturbations each.

    Returns flat states ``(n, 13)`` and their times.
    """
    from .harness.reference import reference
    from .se3 import matrix_to_quat

    sc = cfg.scheduler
    spacing = sc.tube_spacing if spacing is None else spacing
    pos = sc.tube_pos if pos is None else pos
    vel = sc.tube_vel if vel is None else vel
    times = np.arange(0.0, cfg.simulation.horizon + 1e-9, spacing)
    angles = 2 * np.pi * np.arange(n_dirs) / n_dirs if n_dirs else np.empty(0)
    dirs = np.column_stack([np.cos(angles), np.sin(angles), np.zeros(len(angles))])
    rows, ts = [], []
    for t in times:
        r = reference(float(t), cfg.reference, cfg.vehicle.g)
        base = np.concatenate([r.p, r.v, matrix_to_quat(r.R_d), r.w_d])
        rows.append(base)
        ts.append(t)
        for d in dirs:
            x = base.copy()
            x[0:3] += pos * d
            x[3:6] += vel * d
            rows.append(x)
            ts.append(t)
    return np.array(rows), np.array(ts)


def tube_bounds(model, states: np.ndarray, times: np.ndarray, dist_scale: float, freqs,
                beta: float = 2.0, chunk: int = 512) -> np.ndarray:
    """Per-sample ``beta * sigma`` in physical units, shape ``(n, 6)``."""
    from .oracle.features import build_features

    Z = build_features(states, times, dist_scale, freqs)
    out = np.empty((len(Z), 6))
    for i in range(0, len(Z), chunk):
        _, sd = model.predict_batch(Z[i:i + chunk])
        out[i:i + chunk] = sd
    if model.normalize_by_dist:
        out *= abs(dist_scale)
    return beta * out


@dataclass
class TubeBound:
    rho_sup: float
    rho_t_sup: float
    rho_r_sup: float
    n_samples: int


def sup_error_bound(model, cfg, beta: float | None = None, states=None, times=None) -> TubeBound:
    """Largest confidence radius over the tube (or over the given samples)."""
    from .oracle.features import phase_frequencies

    beta = cfg.gp.beta if beta is None else beta
    if states is None:
        states, times = reference_tube(cfg)
    if len(states) < 1:
        raise ValueError("need at least one tube sample")
    b = tube_bounds(model, np.atleast_2d(states), np.atleast_1d(times), cfg.dist_scale,
                    phase_frequencies(cfg.disturbance), beta)
    return TubeBound(float(np.linalg.norm(b, axis=1).max()), float(np.linalg.norm(b[:, 0:3], axis=1).max()),
                     float(np.linalg.norm(b[:, 3:6], axis=1).max()), len(b))


# ---------------------------------------------------------------------------
# sweep


@dataclass
class GridRecord:
    scale: float
    final_error: float
    peak_error: float
    aggressiveness: float
    feasible: bool
    diverged: bool = False
    metrics: dict = field(default_factory=dict)


@dataclass
class SelectionResult:
    chosen: float
    feasible: bool
    eps: float
    records: list

    def record(self, scale: float) -> GridRecord:
        for r in self.records:
            if abs(r.scale - scale) < 1e-9:
                return r
        raise KeyError(scale)

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return {"chosen": self.chosen, "feasible": self.feasible, "eps": self.eps,
                "records": [asdict(r) for r in self.records]}


def _grid_point(args) -> GridRecord:
    from .dynamics import DivergenceError
    from .harness.episode import run_episode
    from .harness.metrics import metrics

    cfg, scale, oracle, eps = args
    try:
        res = run_episode(cfg, oracle, trans_scale=scale)
    except DivergenceError as exc:
        log.warning("scale %.2f diverged: %s", scale, exc)
        return GridRecord(scale, float("inf"), float("inf"), float("nan"), False, True)
    rep = metrics(res, cfg)
    return GridRecord(scale, rep.final_error, rep.peak_error, rep.aggressiveness,
                      bool(rep.final_error <= eps), False, rep.to_dict())


def select(records: list, eps: float) -> SelectionResult:
    """Minimal feasible scale, else the smallest scale among those with the least final error."""
    feasible = [r for r in records if r.feasible]
    if feasible:
        return SelectionResult(min(r.scale for r in feasible), True, eps, records)
    best = min(records, key=lambda r: (r.final_error, r.scale))
    return SelectionResult(best.scale, False, eps, records)


def sweep_select(grid, eps: float, cfg, oracle_factory=None, early_stop: bool = False,
                 jobs: int = 1) -> SelectionResult:
    """One episode per grid scale.

    ``oracle_factory()`` builds a fresh compensation oracle per episode
    (``None`` runs the nominal controller).  With ``early_stop`` the
    ascending sweep ends at the first feasible scale, which is then the
    selection anyway.
    """
    grid = [float(s) for s in grid]
    if not grid:
        raise ValueError("empty grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly ascending")
    make = oracle_factory or (lambda: None)
    if jobs > 1 and not early_stop:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            records = list(ex.map(_grid_point, [(cfg, s, make(), eps) for s in grid]))
    else:
        records = []
        for s in grid:
            rec = _grid_point((cfg, s, make(), eps))
            records.append(rec)
            log.info("scale %.2f: final %.4f", s, rec.final_error)
            if early_stop and rec.feasible:
                break
    return select(records, eps)


# ---------------------------------------------------------------------------
# block scheduling


def block_gain_floor(rho_t_sup: float, rho_r_sup: float, c_t1: float, c_r1: float,
                     eps: float) -> tuple[float, float]:
    """Minimum block decay rates ``2 sqrt(2) c rho / eps`` for the translational and rotational loops."""
    if not eps > 0 or c_t1 <= 0 or c_r1 <= 0:
        raise ValueError("eps and block constants must be positive")
    k = 2.0 * np.sqrt(2.0) / eps
    return k * c_t1 * rho_t_sup, k * c_r1 * rho_r_sup


def block_matrices(gains: Gains, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Decoupled 6x6 translational and rotational error dynamics at hover."""
    m = params.m
    At = np.block([[np.zeros((3, 3)), np.eye(3)], [-np.diag(gains.Kp) / m, -np.diag(gains.Kv) / m]])
    Ji = params.J_inv
    Ar = np.block([[np.zeros((3, 3)), np.eye(3)], [-Ji @ np.diag(gains.KR), -Ji @ np.diag(gains.Kw)]])
    return At, Ar


def block_rates(gains: Gains, params: VehicleParams) -> tuple[float, float]:
    """Slowest decay rate of the decoupled translational and rotational blocks."""
    At, Ar = block_matrices(gains, params)
    return float(-np.max(np.linalg.eigvals(At).real)), float(-np.max(np.linalg.eigvals(Ar).real))


@dataclass
class CalibrationTable:
    scales: np.ndarray
    lam_t: np.ndarray  # translational block rate vs trans_scale
    lam_r: np.ndarray  # rotational block rate vs rot_scale

    def scale_for_floor(self, lam_t_min: float, lam_r_min: float) -> tuple[float | None, float | None]:
        """Smallest tabulated scales meeting each floor (``None`` when none does)."""
        def pick(lam, floor):
            ok = np.nonzero(lam >= floor)[0]
            return float(self.scales[ok[0]]) if len(ok) else None
        return pick(self.lam_t, lam_t_min), pick(self.lam_r, lam_r_min)


def calibration_table(gains: Gains, params: VehicleParams, scales) -> CalibrationTable:
    scales = np.asarray(list(scales), dtype=float)
    lt = np.array([block_rates(gains.with_scales(trans_scale=s), params)[0] for s in scales])
    lr = np.array([block_rates(gains.with_scales(rot_scale=s), params)[1] for s in scales])
    return CalibrationTable(scales, lt, lr)


def scheduled_gains(table: CalibrationTable, gains: Gains, rho_t: float, rho_r: float,
                    c_t1: float, c_r1: float, eps: float) -> Gains | None:
    """Gains picked from the calibration table for the block floors at ``(rho_t, rho_r)``."""
    st, sr = table.scale_for_floor(*block_gain_floor(rho_t, rho_r, c_t1, c_r1, eps))
    if st is None or sr is None:
        return None
    return gains.with_scales(st, sr)


@dataclass(frozen=True)
class AffineBound:
    """``y <= k1 * x + k2``, fitted on calibration samples."""

    k1: float
    k2: float

    def __call__(self, x):
        return self.k1 * np.asarray(x, dtype=float) + self.k2

    def holds(self, x, y, tol: float = 1e-12) -> bool:
        return bool(np.all(np.asarray(y, dtype=float) <= self(x) + tol))


def fit_affine_bound(x, y) -> AffineBound:
    """Affine upper envelope of nondecreasing samples ``y(x)``.

    The slope is the non-negative least-squares slope; the intercept is
    lifted so that each sample ``y[i+1]`` already lies under the line at
    ``x[i]``.  For a nondecreasing (step-like) relation this keeps the
    bound valid between calibration points, not only on them.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or len(x) < 2:
        raise ValueError("need at least two matching samples")
    order = np.argsort(x)
    x, y = x[order], y[order]
    k1 = max(float(np.polyfit(x, y, 1)[0]), 0.0)
    k2 = float(max(np.max(y - k1 * x), np.max(y[1:] - k1 * x[:-1])))
    return AffineBound(k1, k2)
