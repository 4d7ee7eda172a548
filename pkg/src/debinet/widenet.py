"""Two-layer, multivariate-output ReLU-family network and its trainer.

The network is ``F(W, A, z) = A' sigma(W' z) / sqrt(m)`` with
``W`` of shape ``(p_N, m)`` (column ``r`` is ``w_r``) and ``A`` of shape
``(m, q)``, ``q = 1 + p_L``.  The loss is the *sum* over rows, not the mean,
so the gradient-descent dynamics line up with the kernel ``H_whole``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DivergenceError, InvalidParameterError, InvalidSizeError, ShapeError

ACTIVATIONS = ("relu", "leaky_relu", "tanh")
OPTIMIZERS = ("gd", "sgd", "adam", "nesterov")
LOSSES = ("mse", "huber")


@dataclass
class WideNet:
    W: np.ndarray
    A: np.ndarray
    activation: str = "relu"
    leaky_alpha: float = 0.01

    @property
    def m(self):
        return self.W.shape[1]

    @property
    def input_dim(self):
        return self.W.shape[0]

    @property
    def output_dim(self):
        return self.A.shape[1]

    def copy(self) -> "WideNet":
        return replace(self, W=self.W.copy(), A=self.A.copy())


def init_network(p_N: int, m: int, p_L: int, activation: str = "relu", seed: int = 0,
                 leaky_alpha: float = 0.01) -> WideNet:
    """w_r ~ N(0, I) and A_rs ~ unif{-1, +1}, all independent."""
    if m < 1:
        raise InvalidSizeError(f"width must be at least 1, got {m}")
    if p_N < 1:
        raise InvalidSizeError(f"input dimension must be at least 1, got {p_N}")
    if p_L < 0:
        raise InvalidSizeError(f"p_L must be non-negative, got {p_L}")
    if activation not in ACTIVATIONS:
        raise InvalidParameterError(f"unknown activation {activation!r}")
    rw, ra = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    W = rw.standard_normal((p_N, m))
    A = np.where(ra.random((m, 1 + p_L)) < 0.5, -1.0, 1.0)
    return WideNet(W=W, A=A, activation=activation, leaky_alpha=leaky_alpha)


def _act(net, P):
    if net.activation == "relu":
        return np.maximum(P, 0.0)
    if net.activation == "leaky_relu":
        return np.where(P >= 0, P, net.leaky_alpha * P)
    return np.tanh(P)


def _act_grad(net, P):
    # Kink convention: the ReLU indicator is I{w'z >= 0}.
    if net.activation == "relu":
        return (P >= 0).astype(float)
    if net.activation == "leaky_relu":
        return np.where(P >= 0, 1.0, net.leaky_alpha)
    t = np.tanh(P)
    return 1.0 - t * t


def _as_rows(net, Z):
    Z = np.asarray(Z, dtype=float)
    single = Z.ndim == 1
    Z2 = Z[None, :] if single else Z
    if Z2.ndim != 2 or Z2.shape[1] != net.input_dim:
        raise ShapeError(f"input has shape {Z.shape}; network expects {net.input_dim} features")
    return Z2, single


def forward(net: WideNet, Z) -> np.ndarray:
    """Network outputs for one input vector (shape ``(q,)``) or a batch (``(n, q)``)."""
    Z2, single = _as_rows(net, Z)
    out = _act(net, Z2 @ net.W) @ net.A / np.sqrt(net.m)
    return out[0] if single else out


def _check_targets(net, Z2, M):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.shape != (Z2.shape[0], net.output_dim):
        raise ShapeError(f"targets have shape {M.shape}, expected {(Z2.shape[0], net.output_dim)}")
    return M


def _loss_value(R, loss, delta):
    # Overflow shows up as inf and is reported by the trainer as divergence.
    with np.errstate(over="ignore", invalid="ignore"):
        if loss == "mse":
            return 0.5 * float(np.sum(R * R))
        a = np.abs(R)
        return float(np.sum(np.where(a <= delta, 0.5 * R * R, delta * (a - 0.5 * delta))))


def _loss_grad(R, loss, delta):
    return R if loss == "mse" else np.clip(R, -delta, delta)


def loss(net: WideNet, Z, M, kind: str = "mse", huber_delta: float = 1.0) -> float:
    """Sum over rows of 1/2 ||F(z_i) - M_i||^2, or its per-component Huber analogue."""
    Z2, _ = _as_rows(net, Z)
    M = _check_targets(net, Z2, M)
    return _loss_value(forward(net, Z2) - M, kind, huber_delta)


def _grads(net, Z2, M, kind, delta, want_A):
    P = Z2 @ net.W
    H = _act(net, P)
    sm = np.sqrt(net.m)
    R = H @ net.A / sm - M
    G = _loss_grad(R, kind, delta)
    dW = Z2.T @ ((G @ net.A.T / sm) * _act_grad(net, P))
    dA = H.T @ G / sm if want_A else None
    return _loss_value(R, kind, delta), dW, dA


def gradient(net: WideNet, Z, M, kind: str = "mse", huber_delta: float = 1.0) -> np.ndarray:
    """dL/dW, shape ``(p_N, m)``."""
    Z2, _ = _as_rows(net, Z)
    M = _check_targets(net, Z2, M)
    return _grads(net, Z2, M, kind, huber_delta, False)[1]


def gradient_A(net: WideNet, Z, M, kind: str = "mse", huber_delta: float = 1.0) -> np.ndarray:
    """dL/dA, shape ``(m, q)``."""
    Z2, _ = _as_rows(net, Z)
    M = _check_targets(net, Z2, M)
    return _grads(net, Z2, M, kind, huber_delta, True)[2]


@dataclass
class EarlyStop:
    val_fraction: float = 0.1
    patience: int = 20
    min_rel_improve: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.val_fraction <= 0.5:
            raise InvalidParameterError(f"val_fraction must lie in (0, 0.5], got {self.val_fraction}")


@dataclass
class TrainConfig:
    optimizer: str = "gd"
    learning_rate: float = 0.01
    max_epochs: int = 1000
    loss: str = "mse"
    huber_delta: float = 1.0
    batch_size: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum: float = 0.9
    early_stop: EarlyStop | None = None
    freeze_second_layer: bool = True
    record_drift: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.early_stop, dict):
            self.early_stop = EarlyStop(**self.early_stop)
        if self.optimizer not in OPTIMIZERS:
            raise InvalidParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise InvalidParameterError(f"unknown loss {self.loss!r}")
        if not self.learning_rate > 0:
            raise InvalidParameterError("learning_rate must be positive")
        if self.max_epochs < 0:
            raise InvalidParameterError("max_epochs must be non-negative")
        if self.optimizer == "sgd" and not self.batch_size:
            raise InvalidParameterError("sgd needs a batch_size")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainTrace:
    loss_per_epoch: np.ndarray
    weight_drift_per_epoch: np.ndarray
    best_epoch: int
    val_loss_per_epoch: np.ndarray | None = None
    stopped_early: bool = False

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss,drift\n")
            for e, (l, d) in enumerate(zip(self.loss_per_epoch, self.weight_drift_per_epoch)):
                fh.write(f"{e},{float(l)!r},{float(d)!r}\n")


class _Optimizer:
    """Per-parameter state for the four update rules."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.state = {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        cfg = self.cfg
        lr = cfg.learning_rate
        self.t += 1
        for name, g in grads.items():
            x = params[name]
            if cfg.optimizer in ("gd", "sgd"):
                x -= lr * g
            elif cfg.optimizer == "nesterov":
                v = self.state.setdefault(name, np.zeros_like(x))
                v_prev = v.copy()
                v *= cfg.momentum
                v -= lr * g
                x += -cfg.momentum * v_prev + (1.0 + cfg.momentum) * v
            else:
                m1, m2 = self.state.setdefault(name, (np.zeros_like(x), np.zeros_like(x)))
                m1 *= cfg.beta1
                m1 += (1 - cfg.beta1) * g
                m2 *= cfg.beta2
                m2 += (1 - cfg.beta2) * g * g
                mhat = m1 / (1 - cfg.beta1 ** self.t)
                vhat = m2 / (1 - cfg.beta2 ** self.t)
                x -= lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)


def train(net: WideNet, Z, M, cfg: TrainConfig) -> tuple[WideNet, TrainTrace]:
    """Train a copy of ``net`` on ``(Z, M)``; the input network is never mutated.

    ``loss_per_epoch[e]`` is the loss on the training rows after ``e`` epochs.
    With early stopping, a seeded ``val_fraction`` of rows is held out and the
    returned network is the one from ``best_epoch``.
    """
    Z2, _ = _as_rows(net, Z)
    M = _check_targets(net, Z2, M)
    net = net.copy()
    W0 = net.W.copy()
    rng = np.random.default_rng(cfg.seed)
    n = Z2.shape[0]

    es = cfg.early_stop
    if es is not None:
        n_val = max(1, int(round(es.val_fraction * n)))
        perm = rng.permutation(n)
        val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        Zv, Mv = Z2[val_idx], M[val_idx]
        Zt, Mt = Z2[tr_idx], M[tr_idx]
    else:
        Zt, Mt = Z2, M
        Zv = Mv = None
    nt = Zt.shape[0]

    params = {"W": net.W} if cfg.freeze_second_layer else {"W": net.W, "A": net.A}
    opt = _Optimizer(cfg)
    kind, delta = cfg.loss, cfg.huber_delta
    full_batch = cfg.optimizer != "sgd" and (cfg.batch_size is None or cfg.batch_size >= nt)

    losses, drifts, val_losses = [], [], []
    best = (np.inf, 0, None)
    since_best = 0

    def record(epoch, current_loss):
        if not np.isfinite(current_loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}", epoch=epoch)
        losses.append(current_loss)
        if cfg.record_drift:
            drifts.append(float(np.sqrt(((net.W - W0) ** 2).sum(axis=0)).max()))
        else:
            drifts.append(np.nan)

    def check_val(epoch):
        nonlocal best, since_best
        v = _loss_value(forward(net, Zv) - Mv, kind, delta)
        if not np.isfinite(v):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
        val_losses.append(v)
        if v < best[0] * (1.0 - es.min_rel_improve) or best[2] is None:
            best = (v, epoch, net.copy())
            since_best = 0
        else:
            since_best += 1
        return since_best >= es.patience

    stopped = False
    for epoch in range(cfg.max_epochs + 1):
        if full_batch:
            cur, dW, dA = _grads(net, Zt, Mt, kind, delta, not cfg.freeze_second_layer)
            record(epoch, cur)
        else:
            record(epoch, _loss_value(forward(net, Zt) - Mt, kind, delta))
        if es is not None and check_val(epoch):
            stopped = True
            break
        if epoch == cfg.max_epochs:
            break
        if full_batch:
            grads = {"W": dW} if cfg.freeze_second_layer else {"W": dW, "A": dA}
            opt.step(params, grads)
        else:
            bs = cfg.batch_size or nt
            order = rng.permutation(nt)
            for start in range(0, nt, bs):
                b = order[start:start + bs]
                _, dW, dA = _grads(net, Zt[b], Mt[b], kind, delta, not cfg.freeze_second_layer)
                grads = {"W": dW} if cfg.freeze_second_layer else {"W": dW, "A": dA}
                opt.step(params, grads)

    if es is not None:
        best_epoch = best[1]
        out = best[2]
    else:
        best_epoch = len(losses) - 1
        out = net
    trace = TrainTrace(
        loss_per_epoch=np.array(losses),
        weight_drift_per_epoch=np.array(drifts),
        best_epoch=best_epoch,
        val_loss_per_epoch=np.array(val_losses) if es is not None else None,
        stopped_early=stopped,
    )
    return out, trace
