"""Adam training loop with a seeded validation split and best-checkpoint tracking."""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument, TrainingDivergence
from .model import backward_batch, forward_batch, init_params, loss

log = logging.getLogger(__name__)

__all__ = ["Sample", "AdamState", "adam_step", "train", "TrainResult", "evaluate",
           "write_history_csv", "split_indices"]


@dataclass
class Sample:
    """One training pair: masked k-space, its mask and the target coil images."""

    kspace: np.ndarray  # (P, ny, nx) complex, zero outside the mask
    keep: np.ndarray  # (ny, nx) bool
    label: np.ndarray  # (P, ny, nx) complex coil images


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction; returns ``params``."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return params


@dataclass
class TrainResult:
    params: object  # best-validation NetworkParams
    history: list  # dicts with epoch, train_loss, val_loss, lr
    best_epoch: int
    final: object = None  # params after the last epoch
    seconds: float = 0.0


def split_indices(n, val_fraction, rng):
    """Seeded ``(train, val)`` index split; at least one of each when possible."""
    if n < 1:
        raise InvalidArgument("dataset is empty")
    perm = rng.permutation(n)
    n_val = int(round(val_fraction * n)) if n > 1 else 0
    if val_fraction > 0 and n > 1:
        n_val = min(max(n_val, 1), n - 1)
    return perm[n_val:], perm[:n_val]


def _stack(samples, idx):
    ks = np.stack([samples[i].kspace for i in idx])
    keep = np.stack([np.asarray(samples[i].keep, bool) for i in idx])
    lab = np.stack([samples[i].label for i in idx])
    return ks, keep, lab


def evaluate(net, samples, w, batch_size=8, consistency=True, idx=None):
    """Mean per-sample loss on the inference path."""
    idx = np.arange(len(samples)) if idx is None else np.asarray(idx)
    total = 0.0
    for start in range(0, len(idx), batch_size):
        b = idx[start:start + batch_size]
        ks, keep, lab = _stack(samples, b)
        images, _ = forward_batch(net, ks, keep, w, training=False, consistency=consistency)
        total += loss(images, lab) * len(b)
    return total / len(idx)


def _first_nonfinite(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            return name
    return None


def train(spec, cfg, samples, w, init=None, progress=None):
    """Train the network; returns a :class:`TrainResult`.

    The validation split, initialization and every epoch's batch order are
    drawn from ``cfg.seed``. The returned ``params`` are those with the lowest
    validation loss (training loss when there is no validation split).

    Raises
    ------
    TrainingDivergence
        On a non-finite loss or gradient, carrying the offending layer path
        and the last finite parameters.
    """
    samples = list(samples)
    rng = np.random.default_rng(cfg.seed)
    tr, va = split_indices(len(samples), cfg.val_fraction, rng)
    net = init.copy() if init is not None else init_params(spec, seed=cfg.seed)
    if net.spec != spec:
        raise InvalidArgument("initial parameters were built for a different network spec")
    state = AdamState()
    history = []
    best, best_val, best_epoch = net.copy(), np.inf, -1
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(tr)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            ks, keep, lab = _stack(samples, b)
            images, cache = forward_batch(net, ks, keep, w, training=True,
                                          consistency=cfg.train_consistency)
            value = loss(images, lab)
            if not np.isfinite(value):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}", layer_path="loss",
                                         last_good=best, history=history)
            grads = backward_batch(net, images, lab, cache)
            bad = _first_nonfinite(grads)
            if bad is not None:
                raise TrainingDivergence(f"non-finite gradient in {bad} at epoch {epoch}",
                                         layer_path=bad, last_good=best, history=history)
            good = net.copy()
            adam_step(net.params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            bad = _first_nonfinite(net.params)
            if bad is not None:
                raise TrainingDivergence(f"non-finite parameter {bad} at epoch {epoch}",
                                         layer_path=bad, last_good=good, history=history)
            total += value * len(b)
        train_loss = total / len(tr)
        val_loss = evaluate(net, samples, w, cfg.batch_size, idx=va) if len(va) else float("nan")
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr})
        score = val_loss if len(va) else train_loss
        if score < best_val:
            best, best_val, best_epoch = net.copy(), score, epoch
        log.info("epoch %d train %.6g val %.6g lr %.3g", epoch, train_loss, val_loss, lr)
        if progress is not None:
            progress(history[-1])
    return TrainResult(best, history, best_epoch, final=net, seconds=time.perf_counter() - t0)


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for h in history:
            wr.writerow([h["epoch"], repr(float(h["train_loss"])), repr(float(h["val_loss"])),
                         repr(float(h["lr"]))])
