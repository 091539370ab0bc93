"""Independent exact GPs (squared-exponential ARD kernel) per disturbance channel."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .features import FEATURE_DIM, OUTPUT_DIM

log = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
SIGNAL_BOUNDS = (1e-3, 1e2)
NOISE_BOUNDS = (1e-4, 1.0)
LENGTHSCALE_BOUNDS = (1e-2, 1e3)


class GpFitError(RuntimeError):
    """Gram factorization failed even with the largest jitter."""

    def __init__(self, channel: int, message: str = ""):
        super().__init__(f"Gram factorization failed for output channel {channel}" +
                         (f": {message}" if message else ""))
        self.channel = channel


# ---------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    Z: np.ndarray
    Y: np.ndarray
    noise_std: float = 1e-3
    normalize_by_dist: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.Z.shape[0] != self.Y.shape[0]:
            raise ValueError(f"row mismatch: {self.Z.shape[0]} inputs vs {self.Y.shape[0]} targets")
        if len(self) and (self.Z.shape[1] != FEATURE_DIM or self.Y.shape[1] != OUTPUT_DIM):
            raise ValueError(f"expected {FEATURE_DIM} features and {OUTPUT_DIM} targets")
        if not (np.isfinite(self.Z).all() and np.isfinite(self.Y).all()):
            raise ValueError("dataset contains non-finite entries")

    def __len__(self) -> int:
        return self.Z.shape[0]

    def targets(self) -> np.ndarray:
        """Targets in model units (divided by the disturbance scale when normalizing)."""
        if not self.normalize_by_dist:
            return self.Y
        scale = self.Z[:, -1:]
        if np.any(scale <= 0):
            raise ValueError("normalization needs a positive disturbance scale in every row")
        return self.Y / scale

    def take(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.Z[idx], self.Y[idx], self.noise_std, self.normalize_by_dist, dict(self.meta))

    def nested(self, fraction: float, seed: int = 0) -> Dataset:
        """Prefix of a fixed seeded permutation, so smaller fractions are subsets of larger ones."""
        if not 0 < fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")
        perm = np.random.default_rng(seed).permutation(len(self))
        n = max(1, int(round(fraction * len(self))))
        return self.take(np.sort(perm[:n]))

    @staticmethod
    def concat(parts: list[Dataset]) -> Dataset:
        first = parts[0]
        return Dataset(np.vstack([p.Z for p in parts]), np.vstack([p.Y for p in parts]),
                       first.noise_std, first.normalize_by_dist, dict(first.meta))

    def save(self, path: str | Path):
        """CSV with header ``z_0..z_19,y_0..y_5`` plus a ``.meta.json`` sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = [f"z_{i}" for i in range(FEATURE_DIM)] + [f"y_{i}" for i in range(OUTPUT_DIM)]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for z, y in zip(self.Z, self.Y):
                w.writerow([repr(float(v)) for v in np.concatenate([z, y])])
        meta = {"noise_std": self.noise_std, "normalize_by_dist": self.normalize_by_dist, **self.meta}
        _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> Dataset:
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        if header[:1] != ["z_0"] or len(header) != FEATURE_DIM + OUTPUT_DIM:
            raise ValueError(f"{path}: unexpected header")
        data = np.array(rows[1:], dtype=float).reshape(-1, FEATURE_DIM + OUTPUT_DIM)
        meta = {}
        if _meta_path(path).exists():
            meta = json.loads(_meta_path(path).read_text())
        noise = float(meta.pop("noise_std", 1e-3))
        norm = bool(meta.pop("normalize_by_dist", True))
        return cls(data[:, :FEATURE_DIM], data[:, FEATURE_DIM:], noise, norm, meta)


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


@dataclass
class Hyperparams:
    signal_std: np.ndarray  # (6,)
    lengthscales: np.ndarray  # (6, 20)
    noise_std: np.ndarray  # (6,)

    def __post_init__(self):
        self.signal_std = np.asarray(self.signal_std, dtype=float).reshape(-1)
        self.noise_std = np.asarray(self.noise_std, dtype=float).reshape(-1)
        self.lengthscales = np.atleast_2d(np.asarray(self.lengthscales, dtype=float))
        n = len(self.signal_std)
        if self.noise_std.shape != (n,) or self.lengthscales.shape[0] != n:
            raise ValueError("hyperparameter shapes disagree")
        if not (np.all(self.signal_std > 0) and np.all(self.noise_std > 0)
                and np.all(self.lengthscales > 0)):
            raise ValueError("hyperparameters must be strictly positive")

    def validate(self, bounds=LENGTHSCALE_BOUNDS) -> Hyperparams:
        lo, hi = bounds
        if np.any(self.lengthscales < lo * (1 - 1e-12)) or np.any(self.lengthscales > hi * (1 + 1e-12)):
            raise ValueError(f"length-scales outside [{lo}, {hi}]")
        return self

    @classmethod
    def default(cls, n_out: int = OUTPUT_DIM, dim: int = FEATURE_DIM, signal: float = 1.0,
                lengthscale: float = 1.0, noise: float = 1e-2) -> Hyperparams:
        return cls(np.full(n_out, signal), np.full((n_out, dim), lengthscale), np.full(n_out, noise))

    def channel(self, j: int) -> tuple[float, np.ndarray, float]:
        return float(self.signal_std[j]), self.lengthscales[j], float(self.noise_std[j])

    def to_dict(self) -> dict:
        return {"signal_std": self.signal_std.tolist(), "lengthscales": self.lengthscales.tolist(),
                "noise_std": self.noise_std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparams:
        return cls(d["signal_std"], d["lengthscales"], d["noise_std"])

    def describe(self, j: int) -> str:
        """Kernel in the form ``amplitude^2 SE-ARD + noise delta``."""
        return f"({self.signal_std[j]:.3f})^2 SE-ARD(z, z'; l) + ({self.noise_std[j] ** 2:.1e}) delta"


# ---------------------------------------------------------------------------
# kernel and marginal likelihood


def sq_dist(A: np.ndarray, B: np.ndarray, ell: np.ndarray) -> np.ndarray:
    """Pairwise squared distances after dividing coordinates by ``ell``."""
    a = np.atleast_2d(A) / ell
    b = np.atleast_2d(B) / ell
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def se_ard(A: np.ndarray, B: np.ndarray, signal_std: float, ell: np.ndarray) -> np.ndarray:
    return signal_std ** 2 * np.exp(-0.5 * sq_dist(A, B, ell))


def cholesky_jitter(K: np.ndarray, channel: int = 0) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, escalating diagonal jitter from 0 through 1e-6."""
    eye = np.eye(len(K))
    for jit in JITTER_LADDER:
        try:
            L = np.linalg.cholesky(K + jit * eye)
        except np.linalg.LinAlgError:
            continue
        if np.isfinite(L).all() and np.all(np.diag(L) > 0):
            if jit:
                log.debug("channel %d needed jitter %g", channel, jit)
            return L, jit
    raise GpFitError(channel)


def log_marginal_likelihood(theta: np.ndarray, Z: np.ndarray, y: np.ndarray,
                            grad: bool = True, channel: int = 0):
    """LML and its gradient in ``theta = [log ell (D), log signal_std, log noise_std]``."""
    D = Z.shape[1]
    ell = np.exp(theta[:D])
    sf2 = np.exp(2.0 * theta[D])
    sn2 = np.exp(2.0 * theta[D + 1])
    N = len(y)
    Kf = sf2 * np.exp(-0.5 * sq_dist(Z, Z, ell))
    L, _ = cholesky_jitter(Kf + sn2 * np.eye(N), channel)
    alpha = cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * N * np.log(2.0 * np.pi)
    if not grad:
        return lml
    Kinv = cho_solve((L, True), np.eye(N))
    W = np.outer(alpha, alpha) - Kinv
    M = W * Kf
    g = np.empty(D + 2)
    Z2 = Z * Z
    g[:D] = 0.5 * (2.0 * (M.sum(1) @ Z2) - 2.0 * np.einsum("id,ij,jd->d", Z, M, Z)) / ell ** 2
    g[D] = M.sum()  # 0.5 tr(W dK/dlog sf), dK = 2 Kf
    g[D + 1] = sn2 * np.trace(W)
    return lml, g


# ---------------------------------------------------------------------------
# model


@dataclass
class FitOptions:
    restarts: int = 4
    max_iter: int = 200
    hyper_subset: int = 400
    lengthscale_bounds: tuple = LENGTHSCALE_BOUNDS
    seed: int = 0


class GpModel:
    """Conditioned GP; immutable after construction, safe to share across episodes."""

    def __init__(self, hyper: Hyperparams, Z: np.ndarray, targets: np.ndarray,
                 normalize_by_dist: bool = False, history: list | None = None):
        self.hyper = hyper
        self.Z = np.atleast_2d(np.asarray(Z, dtype=float))
        self.targets = np.atleast_2d(np.asarray(targets, dtype=float))
        self.normalize_by_dist = normalize_by_dist
        self.history = history or []
        n_out = self.targets.shape[1]
        self._L = []
        self.jitter = np.zeros(n_out)
        self.alpha = np.empty_like(self.targets)
        for j in range(n_out):
            sf, ell, sn = hyper.channel(j)
            K = se_ard(self.Z, self.Z, sf, ell) + sn ** 2 * np.eye(len(self.Z))
            L, jit = cholesky_jitter(K, j)
            self._L.append(L)
            self.jitter[j] = jit
            self.alpha[:, j] = cho_solve((L, True), self.targets[:, j])
        self._Linv = None

    @property
    def n_out(self) -> int:
        return self.targets.shape[1]

    def __len__(self) -> int:
        return len(self.Z)

    def factor(self, j: int) -> np.ndarray:
        return self._L[j]

    def _linv(self) -> list[np.ndarray]:
        if self._Linv is None:
            eye = np.eye(len(self.Z))
            self._Linv = [solve_triangular(L, eye, lower=True) for L in self._L]
            # per-channel scaled inputs, stacked so one mat-vec gives every kernel vector
            scaled = [self.Z / self.hyper.lengthscales[j] for j in range(self.n_out)]
            self._Zs = np.vstack(scaled)
            self._Zs_sq = np.concatenate([(a * a).sum(1) for a in scaled])
            self._inv_ell = 1.0 / self.hyper.lengthscales
        return self._Linv

    def predict_batch(self, Zs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent std in model units, shape ``(n, n_out)`` each."""
        Zs = np.atleast_2d(np.asarray(Zs, dtype=float))
        mu = np.empty((len(Zs), self.n_out))
        var = np.empty_like(mu)
        for j in range(self.n_out):
            sf, ell, _ = self.hyper.channel(j)
            Ks = se_ard(Zs, self.Z, sf, ell)
            mu[:, j] = Ks @ self.alpha[:, j]
            v = solve_triangular(self._L[j], Ks.T, lower=True)
            var[:, j] = sf ** 2 - (v * v).sum(0)
        return mu, np.sqrt(np.maximum(var, 0.0))

    def predict(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Single-point posterior mean and latent std in model units."""
        z = np.asarray(z, dtype=float)
        Linv = self._linv()
        n = len(self.Z)
        zs = z * self._inv_ell  # (n_out, D)
        cross = (self._Zs @ zs.T)  # (n_out * n, n_out); only the diagonal blocks are used
        sf2 = self.hyper.signal_std ** 2
        mu = np.empty(self.n_out)
        sd = np.empty(self.n_out)
        for j in range(self.n_out):
            blk = slice(j * n, (j + 1) * n)
            d2 = np.maximum(self._Zs_sq[blk] + zs[j] @ zs[j] - 2.0 * cross[blk, j], 0.0)
            k = sf2[j] * np.exp(-0.5 * d2)
            mu[j] = k @ self.alpha[:, j]
            v = Linv[j] @ k
            sd[j] = np.sqrt(max(sf2[j] - v @ v, 0.0))
        return mu, sd

    def predict_physical(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Like :meth:`predict` but in N / N m, undoing disturbance-scale normalization."""
        mu, sd = self.predict(z)
        if self.normalize_by_dist:
            s = float(z[-1])
            return mu * s, sd * abs(s)
        return mu, sd

    def log_marginal_likelihood(self) -> np.ndarray:
        out = np.empty(self.n_out)
        for j in range(self.n_out):
            L = self._L[j]
            y = self.targets[:, j]
            out[j] = (-0.5 * y @ self.alpha[:, j] - np.log(np.diag(L)).sum()
                      - 0.5 * len(y) * np.log(2 * np.pi))
        return out

    def save(self, path: str | Path, dataset_path: str | Path):
        """JSON snapshot: hyperparameters plus a reference to the training CSV."""
        doc = {"schema_version": 1, "hyperparams": self.hyper.to_dict(),
               "normalize_by_dist": self.normalize_by_dist, "dataset": str(dataset_path),
               "n_train": len(self)}
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(doc, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> GpModel:
        doc = json.loads(Path(path).read_text())
        ds_path = Path(doc["dataset"])
        if not ds_path.is_absolute():
            ds_path = Path(path).parent / ds_path
        return condition(Hyperparams.from_dict(doc["hyperparams"]), Dataset.load(ds_path))


def condition(hyper: Hyperparams, data: Dataset) -> GpModel:
    """Condition fixed hyperparameters on ``data`` (no optimization)."""
    return GpModel(hyper, data.Z, data.targets(), data.normalize_by_dist)


def _initial_theta(Z: np.ndarray, y: np.ndarray, bounds, rng, first: bool) -> np.ndarray:
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    spread = Z.std(0)
    if first:
        ell = np.where(spread > 1e-9, 2.0 * spread, bounds[1])
        ell = np.log(np.clip(ell, bounds[0], bounds[1]))
        sf = np.log(max(y.std(), 1e-2))
        sn = np.log(max(1e-2 * y.std(), 2e-4))
    else:
        base = np.log(np.clip(np.where(spread > 1e-9, spread, 1.0), bounds[0], bounds[1]))
        ell = np.clip(base + rng.uniform(-1.0, 2.5, len(spread)), lo, hi)
        sf = np.log(max(y.std(), 1e-2)) + rng.uniform(-1.0, 1.0)
        sn = rng.uniform(np.log(2e-4), np.log(1e-1))
    return np.concatenate([ell, [np.clip(sf, *np.log(SIGNAL_BOUNDS))], [np.clip(sn, *np.log(NOISE_BOUNDS))]])


def optimize_channel(Z: np.ndarray, y: np.ndarray, opts: FitOptions, channel: int = 0,
                     rng: np.random.Generator | None = None):
    """Multi-start L-BFGS-B on the negative LML.  Returns ``(theta, lml, trace)``."""
    rng = rng or np.random.default_rng(opts.seed)
    D = Z.shape[1]
    bnds = ([tuple(np.log(opts.lengthscale_bounds))] * D
            + [tuple(np.log(SIGNAL_BOUNDS)), tuple(np.log(NOISE_BOUNDS))])

    def obj(th):
        try:
            f, g = log_marginal_likelihood(th, Z, y, channel=channel)
        except GpFitError:
            return 1e25, np.zeros_like(th)
        return -f, -g

    best = None
    for r in range(max(1, opts.restarts)):
        th0 = _initial_theta(Z, y, opts.lengthscale_bounds, rng, first=(r == 0))
        trace = [-obj(th0)[0]]
        res = minimize(obj, th0, jac=True, method="L-BFGS-B", bounds=bnds,
                       options={"maxiter": opts.max_iter},
                       callback=lambda th: trace.append(-obj(th)[0]))
        lml = -float(res.fun)
        if best is None or lml > best[1]:
            best = (res.x, lml, trace)
    return best


def fit(data: Dataset, opts: FitOptions | None = None) -> GpModel:
    """Fit hyperparameters per channel on a seeded subset, then condition on all of ``data``."""
    opts = opts or FitOptions()
    if len(data) < 1:
        raise ValueError("cannot fit an empty dataset")
    T = data.targets()
    rng = np.random.default_rng(opts.seed)
    idx = np.arange(len(data))
    if opts.hyper_subset and len(data) > opts.hyper_subset:
        idx = np.sort(rng.permutation(len(data))[:opts.hyper_subset])
    Zs = data.Z[idx]
    D = Zs.shape[1]
    sig, ells, noise, history = [], [], [], []
    for j in range(T.shape[1]):
        theta, lml, trace = optimize_channel(Zs, T[idx, j], opts, channel=j, rng=rng)
        ells.append(np.exp(theta[:D]))
        sig.append(np.exp(theta[D]))
        noise.append(np.exp(theta[D + 1]))
        history.append(trace)
        log.info("channel %d: lml=%.2f", j, lml)
    hyper = Hyperparams(sig, ells, noise)
    # exp(log(x)) round-off can land a hair outside the bounds
    hyper.lengthscales = np.clip(hyper.lengthscales, *opts.lengthscale_bounds)
    model = GpModel(hyper, data.Z, T, data.normalize_by_dist, history)
    return model


def error_bound(model: GpModel, z: np.ndarray, beta: float = 2.0) -> float:
    """Scaled-std confidence radius ``|| beta * sigma(z) ||`` in physical units."""
    _, sd = model.predict_physical(z)
    return bound_from_std(sd, beta)


def bound_from_std(sd: np.ndarray, beta: float = 2.0) -> float:
    return float(np.linalg.norm(beta * np.asarray(sd, dtype=float)))
