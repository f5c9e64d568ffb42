"""Score models: analytic oracles and a small trainable network.

All scores use one convention: a score is a complex array whose real and
imaginary parts are the half-gradients of the log-density with respect to the
real and imaginary parts of the state, so that for a complex Gaussian with
per-entry variance v the score is (mean - s) / v.  Finite-difference checks
against full real-pair gradients must therefore halve the differences.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .sde import SdeSchedule, complex_randn, kernel_moments

CHECKPOINT_MAGIC = b"DIFFENHC"
CHECKPOINT_VERSION = 1

DEFAULT_EMB_FREQS = (0.5, 1.0, 2.0, 4.0)


class ScoreModel:
    """Interface: evaluate(s_t, t) -> score estimate of the same shape."""

    def evaluate(self, s_t: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def score_batch(self, s_t: np.ndarray, t) -> np.ndarray:
        """Per-item scores for a (B, ...) stack; subclasses may vectorize."""
        return np.stack(
            [self.evaluate(s_t[i], float(ti)) for i, ti in enumerate(np.atleast_1d(t))]
        )


# ---------------------------------------------------------------------------
# analytic priors


@dataclass
class AnalyticGaussianPrior(ScoreModel):
    """Complex Gaussian prior with known mean and per-entry variance.

    The perturbed marginal at time t is Gaussian with mean delta_t * mu and
    per-entry variance delta_t^2 * var0 + sigma(t)^2, so the score is exact.
    """

    mean: np.ndarray
    var0: np.ndarray | float
    sched: SdeSchedule

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.complex128)
        if np.any(np.asarray(self.var0) < 0):
            raise ValueError("var0 must be nonnegative")

    def marginal(self, t: float):
        mom = kernel_moments(t, self.sched)
        return mom.delta * self.mean, mom.delta**2 * np.asarray(self.var0) + mom.var

    def evaluate(self, s_t: np.ndarray, t: float) -> np.ndarray:
        mu, var = self.marginal(t)
        if np.any(var <= 0):
            raise ValueError("gaussian_score: zero total variance (t=0 with var0=0)")
        return (mu - s_t) / var

    def log_density(self, s_t: np.ndarray, t: float) -> float:
        mu, var = self.marginal(t)
        var = np.broadcast_to(np.asarray(var, dtype=np.float64), s_t.shape)
        return float(np.sum(-np.log(np.pi * var) - np.abs(s_t - mu) ** 2 / var))

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        mu = np.broadcast_to(self.mean, shape)
        return mu + np.sqrt(np.asarray(self.var0)) * complex_randn(shape, rng)


def gaussian_score(s_t: np.ndarray, t: float, prior: AnalyticGaussianPrior) -> np.ndarray:
    return prior.evaluate(s_t, t)


@dataclass
class GmmPrior(ScoreModel):
    """Mixture of isotropic complex Gaussians over the whole grid.

    components is a list of (weight, mean, var) with positive weights summing
    to one; each mean broadcasts against the state shape and var is a scalar.
    """

    components: list
    sched: SdeSchedule

    def __post_init__(self):
        if not self.components:
            raise ValueError("gmm_score: empty component list")
        w = np.array([c[0] for c in self.components], dtype=np.float64)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"component weights must be positive and sum to 1, got {w}")

    def _marginals(self, t: float, shape):
        mom = kernel_moments(t, self.sched)
        out = []
        for w, mu, var in self.components:
            out.append((w, mom.delta * np.broadcast_to(mu, shape), mom.delta**2 * var + mom.var))
        return out

    def _log_joint(self, s_t: np.ndarray, t: float) -> np.ndarray:
        # per-component joint log density + log weight, stacked
        parts = []
        for w, mu, var in self._marginals(t, s_t.shape):
            n = s_t.size
            quad = float(np.sum(np.abs(s_t - mu) ** 2)) / var
            parts.append(math.log(w) - n * math.log(math.pi * var) - quad)
        return np.array(parts)

    def evaluate(self, s_t: np.ndarray, t: float) -> np.ndarray:
        logs = self._log_joint(s_t, t)
        logs -= logs.max()  # log-sum-exp stabilization
        resp = np.exp(logs)
        resp /= resp.sum()
        score = np.zeros(s_t.shape, dtype=np.complex128)
        for r, (w, mu, var) in zip(resp, self._marginals(t, s_t.shape)):
            score += r * (mu - s_t) / var
        return score

    def log_density(self, s_t: np.ndarray, t: float) -> float:
        logs = self._log_joint(s_t, t)
        peak = logs.max()
        return float(peak + math.log(np.sum(np.exp(logs - peak))))

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        w = np.array([c[0] for c in self.components])
        k = rng.choice(len(self.components), p=w)
        _, mu, var = self.components[k]
        return np.broadcast_to(mu, shape) + math.sqrt(var) * complex_randn(shape, rng)


def gmm_score(s_t: np.ndarray, t: float, components: list, sched: SdeSchedule) -> np.ndarray:
    return GmmPrior(components, sched).evaluate(s_t, t)


# ---------------------------------------------------------------------------
# trainable network


def _time_features(t: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Raw t plus sinusoidal features.  Sub-integer base frequency keeps the
    embedding injective on [0, 1]; with integer-only frequencies t=0 and t=1
    would collide."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    ang = 2.0 * np.pi * np.outer(t, freqs)
    return np.concatenate([t[:, None], np.sin(ang), np.cos(ang)], axis=1)


class ToyScoreNet(ScoreModel):
    """Pointwise MLP scorer: (re, im, time embedding) -> (score re, score im).

    The network output u is mapped to the score as (u - s) / m(t), where
    m(t) = delta_t^2 + sigma(t)^2 is the perturbed marginal variance of a
    unit-variance prior.  A raw MLP saturates outside the training radius and
    stops pulling large states back; this residual form keeps the exact
    Gaussian tail score -s/m(t) at any radius (the ideal u for unit Gaussian
    data is simply zero).

    Parameters are kept in float32 so checkpoints round-trip bit-exactly; a
    float64 instance is available for finite-difference tests.  evaluate()
    uses the EMA weights, score_batch() the live ones.
    """

    def __init__(
        self, hidden=(32, 32), emb_freqs=DEFAULT_EMB_FREQS, seed=0, dtype=np.float32, sched=None
    ):
        self.emb_freqs = np.asarray(emb_freqs, dtype=np.float64)
        self.sched = sched if sched is not None else SdeSchedule()
        in_dim = 3 + 2 * len(self.emb_freqs)
        self.sizes = (in_dim,) + tuple(hidden) + (2,)
        self.ema_decay = 0.999
        self.dtype = np.dtype(dtype)
        self.step = 0
        rng = np.random.default_rng(seed)
        self.params = [
            (
                (rng.standard_normal((a, b)) / math.sqrt(a)).astype(self.dtype),
                np.zeros(b, dtype=self.dtype),
            )
            for a, b in zip(self.sizes[:-1], self.sizes[1:])
        ]
        self.ema_params = [(W.copy(), b.copy()) for W, b in self.params]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.params)

    def _features(self, s_flat: np.ndarray, t_flat: np.ndarray) -> np.ndarray:
        tf = _time_features(t_flat, self.emb_freqs)
        return np.concatenate([s_flat.real[:, None], s_flat.imag[:, None], tf], axis=1)

    @staticmethod
    def _forward(params, X):
        acts = [X]
        h = X
        last = len(params) - 1
        for i, (W, b) in enumerate(params):
            z = h @ W + b
            h = np.tanh(z) if i < last else z
            acts.append(h)
        return h, acts

    def marginal_var(self, t) -> np.ndarray:
        """m(t) = delta_t^2 + sigma(t)^2 for scalar or 1-D t."""
        tt = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = np.empty(tt.shape)
        for i, ti in enumerate(tt):
            mom = kernel_moments(float(ti), self.sched)
            out[i] = mom.delta**2 + mom.var
        return out

    def score_batch(self, s_t: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Score of a (B, ...) stack of grids with live weights, one t per item."""
        b = s_t.shape[0]
        per = s_t.size // b
        flat = s_t.reshape(-1)
        X = self._features(flat, np.repeat(np.asarray(t, dtype=np.float64), per))
        out, _ = self._forward(self.params, X)
        m = np.repeat(self.marginal_var(t), per)
        return (((out[:, 0] + 1j * out[:, 1]) - flat) / m).reshape(s_t.shape)

    def evaluate(self, s_t: np.ndarray, t: float) -> np.ndarray:
        flat = s_t.reshape(-1)
        X = self._features(flat, np.full(s_t.size, float(t)))
        out, _ = self._forward(self.ema_params, X)
        m = self.marginal_var(float(t))[0]
        return (((out[:, 0] + 1j * out[:, 1]) - flat) / m).reshape(s_t.shape)

    def update_ema(self):
        d = self.ema_decay
        self.ema_params = [
            ((d * eW + (1 - d) * W).astype(self.dtype), (d * eb + (1 - d) * b).astype(self.dtype))
            for (eW, eb), (W, b) in zip(self.ema_params, self.params)
        ]


# ---------------------------------------------------------------------------
# objective and training


@dataclass
class TrainBatch:
    """Clean patches with per-item time draws and perturbation noise."""

    s0: np.ndarray  # (B, F, P) complex
    t: np.ndarray  # (B,)
    zeta: np.ndarray  # (B, F, P) complex

    def __post_init__(self):
        if self.s0.shape[0] == 0:
            raise ValueError("empty batch")
        if self.s0.shape != self.zeta.shape or len(self.t) != self.s0.shape[0]:
            raise ValueError("batch field shapes disagree")


def make_train_batch(
    dataset: list, batch_size: int, patch_frames: int, sched: SdeSchedule, rng: np.random.Generator
) -> TrainBatch:
    """Random items, random patch starts, t uniform on [t_min, 1]."""
    items = []
    for _ in range(batch_size):
        spec = dataset[rng.integers(0, len(dataset))]
        if spec.shape[1] < patch_frames:
            raise ValueError(f"item has {spec.shape[1]} frames, patch needs {patch_frames}")
        start = rng.integers(0, spec.shape[1] - patch_frames + 1)
        items.append(spec[:, start : start + patch_frames])
    s0 = np.stack(items)
    t = rng.uniform(sched.t_min, 1.0, batch_size)
    return TrainBatch(s0=s0, t=t, zeta=complex_randn(s0.shape, rng))


def _batch_terms(batch: TrainBatch, sched: SdeSchedule):
    if np.any(batch.t < sched.t_min) or np.any(batch.t > 1.0):
        raise ValueError("training times must lie in [t_min, 1]")
    delta = np.exp(-sched.gamma * batch.t)
    sig = np.sqrt([kernel_moments(float(tt), sched).var for tt in batch.t])
    s_t = delta[:, None, None] * batch.s0 + sig[:, None, None] * batch.zeta
    target = -batch.zeta / sig[:, None, None]
    return s_t, target


def dsm_loss(model, batch: TrainBatch, sched: SdeSchedule) -> float:
    """Mean over the batch of the squared 2-norm of S(s_t, t) - (-zeta/sigma)."""
    s_t, target = _batch_terms(batch, sched)
    resid = model.score_batch(s_t, batch.t) - target
    return float(np.mean(np.sum(np.abs(resid) ** 2, axis=tuple(range(1, resid.ndim)))))


def dsm_loss_and_grad(model: ToyScoreNet, batch: TrainBatch, sched: SdeSchedule):
    """Loss plus its exact gradient with respect to the live parameters."""
    s_t, target = _batch_terms(batch, sched)
    b = s_t.shape[0]
    per = s_t.size // b
    flat = s_t.reshape(-1)
    X = model._features(flat, np.repeat(batch.t, per))
    out, acts = model._forward(model.params, X)
    m = np.repeat(model.marginal_var(batch.t), per)
    rre = (out[:, 0] - flat.real) / m - target.real.reshape(-1)
    rim = (out[:, 1] - flat.imag) / m - target.imag.reshape(-1)
    loss = float(np.sum(rre**2 + rim**2) / b)
    dout = np.stack([2.0 * rre / m, 2.0 * rim / m], axis=1) / b
    grads = []
    d = dout
    for i in range(len(model.params) - 1, -1, -1):
        grads.append((acts[i].T @ d, d.sum(axis=0)))
        if i > 0:
            d = (d @ model.params[i][0].T) * (1.0 - acts[i] ** 2)
    return loss, grads[::-1]


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 1
    steps_per_epoch: int = 100
    patch_frames: int = 256
    lr_decay: str = "constant"  # or "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0 or self.steps_per_epoch < 1:
            raise ValueError("invalid training configuration")
        if self.lr_decay not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")


def train(model: ToyScoreNet, dataset: list, cfg: TrainConfig, sched: SdeSchedule):
    """Adam on the denoising objective with an EMA of the weights.

    Mutates and returns the model; returns (model, per-epoch mean losses).
    Aborts if the loss goes non-finite.
    """
    if not dataset:
        raise ValueError("train: empty dataset")
    model.sched = sched  # the output map's m(t) must follow the training schedule
    rng = np.random.default_rng(cfg.seed)
    m_state = [(np.zeros_like(W, dtype=np.float64), np.zeros_like(b, dtype=np.float64))
               for W, b in model.params]
    v_state = [(np.zeros_like(W, dtype=np.float64), np.zeros_like(b, dtype=np.float64))
               for W, b in model.params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    total = cfg.epochs * cfg.steps_per_epoch
    history = []
    done = 0
    for _ in range(cfg.epochs):
        acc = 0.0
        for _ in range(cfg.steps_per_epoch):
            batch = make_train_batch(dataset, cfg.batch_size, cfg.patch_frames, sched, rng)
            loss, grads = dsm_loss_and_grad(model, batch, sched)
            if not math.isfinite(loss):
                raise RuntimeError(f"training diverged at step {model.step}: loss={loss}")
            acc += loss
            done += 1
            if cfg.lr_decay == "cosine":
                lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * done / total))
            else:
                lr = cfg.lr
            model.step += 1
            k = model.step
            new_params = []
            for i, ((W, bb), (gW, gb)) in enumerate(zip(model.params, grads)):
                mW, mb = m_state[i]
                vW, vb = v_state[i]
                mW[:] = b1 * mW + (1 - b1) * gW
                mb[:] = b1 * mb + (1 - b1) * gb
                vW[:] = b2 * vW + (1 - b2) * gW**2
                vb[:] = b2 * vb + (1 - b2) * gb**2
                den = 1 - b1**k
                hatW = mW / den
                hatb = mb / den
                den2 = 1 - b2**k
                stepW = lr * hatW / (np.sqrt(vW / den2) + eps)
                stepb = lr * hatb / (np.sqrt(vb / den2) + eps)
                new_params.append(
                    ((W - stepW).astype(model.dtype), (bb - stepb).astype(model.dtype))
                )
            model.params = new_params
            model.update_ema()
        history.append(acc / cfg.steps_per_epoch)
    return model, history


# ---------------------------------------------------------------------------
# checkpoints

_G_LEADING_CODES = {"sigma_min": 0, "sigma_max": 1}


def save_checkpoint(model: ToyScoreNet, sched: SdeSchedule, path):
    """Write magic, version, schedule, architecture, then float32 parameter
    and EMA blobs."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(
            struct.pack(
                "<ddddI",
                sched.gamma,
                sched.sigma_min,
                sched.sigma_max,
                sched.t_min,
                _G_LEADING_CODES[sched.g_leading],
            )
        )
        fh.write(struct.pack("<I", len(model.sizes)))
        fh.write(struct.pack(f"<{len(model.sizes)}I", *model.sizes))
        fh.write(struct.pack("<I", len(model.emb_freqs)))
        fh.write(struct.pack(f"<{len(model.emb_freqs)}d", *model.emb_freqs))
        fh.write(struct.pack("<dQ", model.ema_decay, model.step))
        for params in (model.params, model.ema_params):
            blob = np.concatenate([np.concatenate([W.ravel(), b]) for W, b in params])
            blob = blob.astype("<f4")
            fh.write(struct.pack("<Q", blob.size))
            fh.write(blob.tobytes())


def _read_exact(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"{path}: truncated checkpoint")
    return buf


def load_checkpoint(path):
    """Read a checkpoint back as (model, schedule)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 8, path) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic bytes, not a checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        gamma, smin, smax, tmin, glead = struct.unpack("<ddddI", _read_exact(fh, 36, path))
        sched = SdeSchedule(
            gamma=gamma,
            sigma_min=smin,
            sigma_max=smax,
            t_min=tmin,
            g_leading="sigma_min" if glead == 0 else "sigma_max",
        )
        (n_sizes,) = struct.unpack("<I", _read_exact(fh, 4, path))
        sizes = struct.unpack(f"<{n_sizes}I", _read_exact(fh, 4 * n_sizes, path))
        (n_freqs,) = struct.unpack("<I", _read_exact(fh, 4, path))
        freqs = struct.unpack(f"<{n_freqs}d", _read_exact(fh, 8 * n_freqs, path))
        ema_decay, step = struct.unpack("<dQ", _read_exact(fh, 16, path))
        model = ToyScoreNet(hidden=sizes[1:-1], emb_freqs=freqs, dtype=np.float32, sched=sched)
        if model.sizes != tuple(sizes):
            raise ValueError(f"{path}: inconsistent architecture descriptor {sizes}")
        model.ema_decay = ema_decay
        model.step = step
        for attr in ("params", "ema_params"):
            (count,) = struct.unpack("<Q", _read_exact(fh, 8, path))
            if count != model.n_params:
                raise ValueError(f"{path}: parameter blob size {count} != {model.n_params}")
            blob = np.frombuffer(_read_exact(fh, 4 * count, path), dtype="<f4")
            restored = []
            off = 0
            for a, b in zip(model.sizes[:-1], model.sizes[1:]):
                W = blob[off : off + a * b].reshape(a, b).copy()
                off += a * b
                bias = blob[off : off + b].copy()
                off += b
                restored.append((W, bias))
            setattr(model, attr, restored)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after checkpoint payload")
    return model, sched
