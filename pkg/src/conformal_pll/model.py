"""Numpy MLP classifier: Linear -> BatchNorm -> ReLU hidden blocks and a softmax head.

Gradients are derived by hand; ``Adam`` and ``OneCycleSchedule`` drive training.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

LOG_CLAMP = math.log(1e-12)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class TrainingError(RuntimeError):
    pass


class MlpModel:
    """``d``-hidden...-``k`` multilayer perceptron.

    Parameters live in ``self.params`` (a name -> array dict); batch-norm
    running statistics live in ``self.buffers``.
    """

    def __init__(self, d, k, hidden=(300, 300, 300), batch_norm=True, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.d, self.k = int(d), int(k)
        self.hidden = tuple(int(h) for h in hidden)
        self.batch_norm = batch_norm
        self.training = False
        self.buffers = {}
        shapes = {}
        sizes = (self.d,) + self.hidden
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            shapes[f"W{i}"] = (fan_in, fan_out)
            shapes[f"b{i}"] = (fan_out,)
            if batch_norm:
                shapes[f"gamma{i}"] = (fan_out,)
                shapes[f"beta{i}"] = (fan_out,)
                self.buffers[f"mean{i}"] = np.zeros(fan_out)
                self.buffers[f"var{i}"] = np.ones(fan_out)
        last = len(self.hidden)
        shapes[f"W{last}"] = (sizes[-1], self.k)
        shapes[f"b{last}"] = (self.k,)

        # parameters and gradients are views into flat buffers so the optimizer
        # can update everything with a handful of vectorized passes
        total = sum(math.prod(sh) for sh in shapes.values())
        self.flat = np.zeros(total)
        self.grad_flat = np.zeros(total)
        self.params = {}
        self.grads = {}
        pos = 0
        for name, sh in shapes.items():
            size = math.prod(sh)
            self.params[name] = self.flat[pos : pos + size].reshape(sh)
            self.grads[name] = self.grad_flat[pos : pos + size].reshape(sh)
            pos += size

        for i, fan_in in enumerate(sizes[:-1]):
            # Kaiming-uniform for ReLU layers
            bound = math.sqrt(6.0 / fan_in)
            self.params[f"W{i}"][...] = rng.uniform(-bound, bound, shapes[f"W{i}"])
            if batch_norm:
                self.params[f"gamma{i}"][...] = 1.0
        bound = 1.0 / math.sqrt(sizes[-1])
        self.params[f"W{last}"][...] = rng.uniform(-bound, bound, shapes[f"W{last}"])
        self._cache = None

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    @property
    def n_layers(self):
        return len(self.hidden) + 1

    def logits(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ValueError(f"expected a b x {self.d} batch")
        if self.training and self.batch_norm and x.shape[0] < 2:
            raise ValueError("batch norm in train mode needs a batch of at least 2")
        cache = {"x": x}
        h = x
        for i in range(len(self.hidden)):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if self.batch_norm:
                if self.training:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    m = z.shape[0]
                    self.buffers[f"mean{i}"] = (1 - BN_MOMENTUM) * self.buffers[f"mean{i}"] + BN_MOMENTUM * mu
                    self.buffers[f"var{i}"] = (1 - BN_MOMENTUM) * self.buffers[f"var{i}"] + BN_MOMENTUM * var * m / (m - 1)
                else:
                    mu = self.buffers[f"mean{i}"]
                    var = self.buffers[f"var{i}"]
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                zhat = (z - mu) * inv_std
                cache[f"zhat{i}"] = zhat
                cache[f"inv_std{i}"] = inv_std
                z = zhat * self.params[f"gamma{i}"] + self.params[f"beta{i}"]
            cache[f"pre{i}"] = z
            h = np.maximum(z, 0.0)
            cache[f"h{i}"] = h
        last = len(self.hidden)
        out = h @ self.params[f"W{last}"] + self.params[f"b{last}"]
        self._cache = cache
        return out

    def forward(self, x):
        """Class probabilities for a batch; caches activations for :meth:`backward`."""
        return softmax(self.logits(x))

    def predict_proba(self, x, batch_size=4096):
        was_training = self.training
        self.eval()
        try:
            x = np.asarray(x, dtype=np.float64)
            return np.concatenate(
                [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
            ) if len(x) else np.empty((0, self.k))
        finally:
            self.training = was_training

    def backward(self, dlogits):
        """Parameter gradients given the loss gradient w.r.t. the logits of the cached batch.

        Gradients are written into ``self.grads`` (views of ``self.grad_flat``),
        which is also returned.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        cache = self._cache
        grads = self.grads
        last = len(self.hidden)
        h = cache[f"h{last - 1}"] if last else cache["x"]
        np.matmul(h.T, dlogits, out=grads[f"W{last}"])
        dlogits.sum(axis=0, out=grads[f"b{last}"])
        dh = dlogits @ self.params[f"W{last}"].T
        for i in reversed(range(last)):
            dz = dh * (cache[f"pre{i}"] > 0)
            if self.batch_norm:
                zhat = cache[f"zhat{i}"]
                (dz * zhat).sum(axis=0, out=grads[f"gamma{i}"])
                dz.sum(axis=0, out=grads[f"beta{i}"])
                dzhat = dz * self.params[f"gamma{i}"]
                if self.training:
                    m = dzhat.shape[0]
                    dz = cache[f"inv_std{i}"] / m * (
                        m * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0)
                    )
                else:
                    dz = dzhat * cache[f"inv_std{i}"]
            h_in = cache[f"h{i - 1}"] if i else cache["x"]
            np.matmul(h_in.T, dz, out=grads[f"W{i}"])
            dz.sum(axis=0, out=grads[f"b{i}"])
            if i:
                dh = dz @ self.params[f"W{i}"].T
        return grads

    def state(self):
        return {**{k: v.copy() for k, v in self.params.items()},
                **{k: v.copy() for k, v in self.buffers.items()}}


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_weights(weights):
    w = np.asarray(weights, dtype=np.float64)
    if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("weight rows must sum to 1")
    return w


def weighted_log_loss(probs, weights):
    """Mean over rows of ``sum_j w_ij * -log p_ij`` with log-probabilities clamped at ``log(1e-12)``."""
    p = np.asarray(probs, dtype=np.float64)
    w = _check_weights(weights)
    with np.errstate(divide="ignore"):
        logp = np.maximum(np.log(p), LOG_CLAMP)
    return float(-(w * logp).sum() / p.shape[0])


def loss_and_grad(logits, weights):
    """Weighted log-loss computed from logits and its gradient w.r.t. the logits."""
    w = _check_weights(weights)
    logp = log_softmax(logits)
    live = logp > LOG_CLAMP
    clamped = np.where(live, logp, LOG_CLAMP)
    b = logits.shape[0]
    loss = -(w * clamped).sum() / b
    wl = w * live
    p = np.exp(logp)
    grad = (p * wl.sum(axis=1, keepdims=True) - wl) / b
    return float(loss), grad


@dataclass
class Adam:
    """Adam over one flat parameter vector, updated in place."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
            self._tmp = np.empty_like(params)
        self.step_count += 1
        t = self.step_count
        m, v, tmp = self.m, self.v, self._tmp
        m *= self.beta1
        np.multiply(grads, 1.0 - self.beta1, out=tmp)
        m += tmp
        v *= self.beta2
        np.multiply(grads, grads, out=tmp)
        tmp *= 1.0 - self.beta2
        v += tmp
        if not lr:
            return
        # p -= lr * m_hat / (sqrt(v_hat) + eps)
        np.sqrt(v, out=tmp)
        tmp *= 1.0 / math.sqrt(1.0 - self.beta2 ** t)
        tmp += self.eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / (1.0 - self.beta1 ** t)
        params -= tmp


@dataclass(frozen=True)
class OneCycleSchedule:
    total_steps: int
    peak_lr: float = 1e-3
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def __call__(self, step):
        return onecycle_lr(self, step)


def _cos_anneal(start, end, frac):
    return end + (start - end) * (1.0 + math.cos(math.pi * frac)) / 2.0


def onecycle_lr(sched: OneCycleSchedule, step: int) -> float:
    """Cosine warm-up from ``peak/div_factor`` to ``peak``, then cosine decay to ``peak/final_div_factor``."""
    total = sched.total_steps
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    peak = sched.peak_lr
    up = sched.warmup_frac * total
    if step <= up:
        return _cos_anneal(peak / sched.div_factor, peak, step / up if up else 1.0)
    return _cos_anneal(peak, peak / sched.final_div_factor, (step - up) / (total - up))


def train_step(model: MlpModel, x, weights, opt: Adam, lr: float) -> float:
    """One Adam update on the weighted log-loss of a mini-batch; returns the batch loss."""
    model.train()
    logits = model.logits(x)
    loss, dlogits = loss_and_grad(logits, weights)
    model.backward(dlogits)
    if not np.isfinite(model.grad_flat).all():
        bad = [name for name, g in model.grads.items() if not np.isfinite(g).all()]
        raise TrainingError(f"non-finite gradient in {', '.join(bad)} (loss={loss})")
    opt.step(model.flat, model.grad_flat, lr)
    return loss


def save_checkpoint(model: MlpModel, path) -> None:
    """Flat text file: a config line, then ``name shape values...`` per tensor."""
    with open(path, "w", encoding="utf-8") as fh:
        hidden = ",".join(map(str, model.hidden)) or "-"
        fh.write(f"mlp {model.d} {model.k} {hidden} {int(model.batch_norm)}\n")
        for name, arr in model.state().items():
            shape = "x".join(map(str, arr.shape))
            fh.write(f"{name} {shape} " + " ".join(repr(float(v)) for v in arr.ravel()) + "\n")


def load_checkpoint(path) -> MlpModel:
    with open(path, encoding="utf-8") as fh:
        tag, d, k, hidden, bn = fh.readline().split()
        if tag != "mlp":
            raise ValueError(f"{os.fspath(path)}: not a model checkpoint")
        hidden = () if hidden == "-" else tuple(int(h) for h in hidden.split(","))
        model = MlpModel(int(d), int(k), hidden, batch_norm=bool(int(bn)))
        for line in fh:
            name, shape, *values = line.split()
            shape = tuple(int(s) for s in shape.split("x"))
            arr = np.array([float(v) for v in values]).reshape(shape)
            target = model.params if name in model.params else model.buffers
            if name not in target:
                raise ValueError(f"unknown tensor {name!r}")
            target[name][...] = arr
    return model.eval()
