"""Unrolled ADMM abundance estimator with trainable per-layer weights.

K stacked layers replay the sparse-ADMM recursion

    a = W y + B (z + v)
    z = relu(a - v - theta)
    v = v - eta * (a - z)

with (W, B, theta, eta) free per layer.  Analytic initialization sets
W = (M'M + mu I)^{-1} M', B = (M'M + mu I)^{-1} rho and theta =
lambda/rho, which makes the network reproduce the reference iteration
exactly; training then adapts the weights by plain gradient descent on
the squared abundance error of z at the last layer, with exact
reverse-mode gradients written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import EndmemberMatrix, project_columns, project_to_simplex


@dataclass
class UnrollLayer:
    """One layer's weights; also reused as the matching gradient record."""

    W: np.ndarray  # R x L
    B: np.ndarray  # R x R
    theta: float
    eta: float


@dataclass
class UnrollParams:
    layers: list

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("need at least one layer")
        r, l = self.layers[0].W.shape
        for k, lay in enumerate(self.layers):
            if lay.W.shape != (r, l) or lay.B.shape != (r, r):
                raise ValueError(f"layer {k} has inconsistent shapes")
            if not (
                np.all(np.isfinite(lay.W))
                and np.all(np.isfinite(lay.B))
                and np.isfinite(lay.theta)
                and np.isfinite(lay.eta)
            ):
                raise ValueError(f"layer {k} has non-finite entries")
            if lay.theta < 0:
                raise ValueError(f"layer {k} threshold must be >= 0")

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "UnrollParams":
        return UnrollParams(
            layers=[UnrollLayer(l.W.copy(), l.B.copy(), float(l.theta), float(l.eta)) for l in self.layers]
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch_size")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)


def init_params_from_model(
    M: EndmemberMatrix | np.ndarray,
    mu: float,
    rho: float,
    lam: float,
    eta: float,
    K: int,
) -> UnrollParams:
    """Layer weights from the model: every layer gets the ADMM matrices.

    W = (M'M + mu I)^{-1} M', B = (M'M + mu I)^{-1} rho, theta =
    lam/rho.  Raises numpy.linalg.LinAlgError when M'M + mu I is
    singular.
    """
    Md = np.asarray(getattr(M, "data", M), dtype=np.float64)
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if K < 1:
        raise ValueError("need K >= 1 layers")
    R = Md.shape[1]
    P = Md.T @ Md + mu * np.eye(R)
    W = np.linalg.solve(P, Md.T)
    B = np.linalg.solve(P, rho * np.eye(R))
    theta = lam / rho
    layers = [UnrollLayer(W.copy(), B.copy(), float(theta), float(eta)) for _ in range(K)]
    return UnrollParams(layers=layers)


def _forward_pass(params: UnrollParams, Y: np.ndarray):
    """All layer iterates for a batch of pixels (columns of Y)."""
    n = Y.shape[1]
    R = params.layers[0].W.shape[0]
    z = np.zeros((R, n))
    v = np.zeros((R, n))
    cache = []
    for lay in params.layers:
        zin = z + v
        a = lay.W @ Y + lay.B @ zin
        pre = a - v - lay.theta
        z_new = np.maximum(pre, 0.0)
        v_new = v - lay.eta * (a - z_new)
        cache.append({"a": a, "pre": pre, "z": z_new, "v_prev": v, "v": v_new, "zin": zin})
        z, v = z_new, v_new
    return z, v, cache


def unroll_forward(params: UnrollParams, y: np.ndarray, return_trace: bool = False, project: bool = True):
    """Abundance estimate for one pixel (or a batch given as columns).

    The estimate is the nonnegative z iterate of the last layer,
    simplex-projected unless ``project`` is False.  With
    ``return_trace`` the per-layer (a, z, v) triples are returned too.
    """
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    Y = y[:, None] if single else y
    if Y.shape[0] != params.layers[0].W.shape[1]:
        raise ValueError(f"pixel length {Y.shape[0]} does not match W columns")
    z, v, cache = _forward_pass(params, Y)
    if project:
        est = project_columns(z)
    else:
        est = z
    if single:
        est = est[:, 0]
    if return_trace:
        if single:
            trace = [(c["a"][:, 0], c["z"][:, 0], c["v"][:, 0]) for c in cache]
        else:
            trace = [(c["a"], c["z"], c["v"]) for c in cache]
        return est, trace
    return est


def unroll_loss(params: UnrollParams, Y: np.ndarray, A_star: np.ndarray) -> float:
    """Mean squared abundance error of the last-layer z, pre-projection."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    A_star = np.atleast_2d(np.asarray(A_star, dtype=np.float64))
    z, _, _ = _forward_pass(params, Y)
    d = z - A_star
    return float(np.sum(d * d) / Y.shape[1])


def unroll_backward(params: UnrollParams, Y: np.ndarray, A_star: np.ndarray):
    """Exact reverse-mode gradients of the batch loss for every layer.

    Loss is mean over the batch of ||z_K - a*||^2 (pre-projection);
    the relu subgradient at the kink is 0.  Returns a list of
    UnrollLayer records holding dW, dB, dtheta, deta.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    A_star = np.atleast_2d(np.asarray(A_star, dtype=np.float64))
    if Y.shape[1] != A_star.shape[1] or Y.shape[1] < 1:
        raise ValueError("batch must be nonempty with matching pixel/label counts")
    n = Y.shape[1]
    z, _, cache = _forward_pass(params, Y)

    gz = 2.0 * (z - A_star) / n
    gv = np.zeros_like(gz)
    grads: list[UnrollLayer | None] = [None] * params.depth
    for k in range(params.depth - 1, -1, -1):
        lay = params.layers[k]
        c = cache[k]
        mask = c["pre"] > 0.0
        # v_k = v_{k-1} - eta*(a - z): route gv into eta, z and a
        g_eta = float(np.sum(gv * -(c["a"] - c["z"])))
        gz_total = gz + lay.eta * gv
        gp = gz_total * mask
        g_theta = float(-np.sum(gp))
        ga = gp - lay.eta * gv
        gW = ga @ Y.T
        gB = ga @ c["zin"].T
        gv_prev = gv - gp + lay.B.T @ ga
        gz_prev = lay.B.T @ ga
        grads[k] = UnrollLayer(W=gW, B=gB, theta=g_theta, eta=g_eta)
        gz, gv = gz_prev, gv_prev
    return grads


def train_unroll(
    Y: np.ndarray,
    A_star: np.ndarray,
    config: TrainConfig,
    params0: UnrollParams,
):
    """Plain gradient descent on the unrolled network.

    Deterministic per seed: one seeded shuffle fixes the
    train/validation split and the batch order, reused every epoch.
    Thresholds are clipped at zero after each update to keep them
    valid.  Returns (trained UnrollParams, TrainReport with per-epoch
    train and validation loss).
    """
    Y = np.asarray(Y, dtype=np.float64)
    A_star = np.asarray(A_star, dtype=np.float64)
    n = Y.shape[1]
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(config.validation_fraction * n)))
    if n_val >= n:
        raise ValueError("validation split leaves no training pixels")
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    Y_tr, A_tr = Y[:, train_idx], A_star[:, train_idx]
    Y_val, A_val = Y[:, val_idx], A_star[:, val_idx]

    params = params0.copy()
    lr = config.learning_rate
    report = TrainReport()
    report.train_loss.append(unroll_loss(params, Y_tr, A_tr))
    report.val_loss.append(unroll_loss(params, Y_val, A_val))

    n_tr = Y_tr.shape[1]
    starts = range(0, n_tr, config.batch_size)
    for epoch in range(config.epochs):
        for s in starts:
            yb = Y_tr[:, s : s + config.batch_size]
            ab = A_tr[:, s : s + config.batch_size]
            grads = unroll_backward(params, yb, ab)
            for lay, g in zip(params.layers, grads):
                lay.W = lay.W - lr * g.W
                lay.B = lay.B - lr * g.B
                lay.theta = max(0.0, lay.theta - lr * g.theta)
                lay.eta = lay.eta - lr * g.eta
        tr_loss = unroll_loss(params, Y_tr, A_tr)
        if not np.isfinite(tr_loss):
            raise RuntimeError(f"training loss became non-finite at epoch {epoch}")
        report.train_loss.append(tr_loss)
        report.val_loss.append(unroll_loss(params, Y_val, A_val))
    return params, report
