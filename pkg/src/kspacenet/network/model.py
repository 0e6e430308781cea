"""Tight-frame U-net on weighted multi-coil k-space.

Data path per sample::

    weight -> divide by RMS of measured weighted entries -> split to 2P channels
    -> U-net -> merge -> rescale -> unweight (+ optional consistency) -> inverse FFT

Encoder stage ``k`` runs ``convs_per_stage`` x (3x3 conv, batch norm, ReLU).
Between stages the output is Haar-decomposed; LL feeds the next stage and
LH/HL/HH bypass to the matching recomposition. Each decoder level recomposes
the lower output with the bypassed bands, concatenates the encoder skip and
runs another conv block. A 1x1 conv with bias maps back to ``2P`` channels.
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument
from ..phantom import CoilImages, fft2c, ifft2c
from ..weighting import EPS, unweight_array
from .layers import (bn_backward, bn_forward, conv_backward, conv_forward, haar_decompose,
                     haar_recompose, merge_nhwc, relu_backward, relu_forward, split_nhwc)
from .spec import NetworkSpec

__all__ = ["NetworkParams", "init_params", "unet_forward", "unet_backward", "forward",
           "forward_batch", "backward_batch", "loss", "stage_plan", "input_scale"]


@dataclass
class NetworkParams:
    spec: NetworkSpec
    params: OrderedDict  # trainable tensors keyed by layer path
    buffers: OrderedDict = field(default_factory=OrderedDict)  # batch-norm running stats
    seed: int = 0

    def copy(self):
        return NetworkParams(self.spec, OrderedDict((k, v.copy()) for k, v in self.params.items()),
                             OrderedDict((k, v.copy()) for k, v in self.buffers.items()), self.seed)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def num_parameters(self):
        return int(sum(v.size for v in self.params.values()))


def stage_plan(spec):
    """List of ``(name, [(cin, cout), ...])`` conv blocks in forward order."""
    s, n = spec.stages, spec.convs_per_stage
    c = [spec.channels(k) for k in range(s)]
    plan = []

    def block(cin, mid, cout):
        return [(cin, mid)] + [(mid, mid)] * (n - 2) + [(mid, cout)]

    for k in range(s):
        cin = spec.io_channels if k == 0 else c[k - 1]
        cout = c[k - 1] if (k == s - 1 and s > 1) else c[k]
        plan.append((f"enc{k}", block(cin, c[k], cout)))
    for k in range(s - 2, -1, -1):
        plan.append((f"dec{k}", block(2 * c[k], c[k], c[k - 1] if k > 0 else c[0])))
    return plan


def init_params(spec, seed=0, dtype=np.float32):
    """He-uniform convolutions (bound ``sqrt(6 / fan_in)``), unit BN scale, zero shifts."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    buffers = OrderedDict()
    k = spec.kernel
    for name, convs in stage_plan(spec):
        for j, (cin, cout) in enumerate(convs):
            bound = np.sqrt(6.0 / (k * k * cin))
            params[f"{name}.conv{j}.weight"] = rng.uniform(-bound, bound, (k, k, cin, cout)).astype(dtype)
            params[f"{name}.bn{j}.gamma"] = np.ones(cout, dtype)
            params[f"{name}.bn{j}.beta"] = np.zeros(cout, dtype)
            buffers[f"{name}.bn{j}.running_mean"] = np.zeros(cout, dtype)
            buffers[f"{name}.bn{j}.running_var"] = np.ones(cout, dtype)
    c0 = spec.channels(0)
    bound = np.sqrt(3.0 / c0)
    params["head.weight"] = rng.uniform(-bound, bound, (1, 1, c0, spec.io_channels)).astype(dtype)
    params["head.bias"] = np.zeros(spec.io_channels, dtype)
    return NetworkParams(spec, params, buffers, seed)


def _bn_state(net, path):
    return {"running_mean": net.buffers[f"{path}.running_mean"],
            "running_var": net.buffers[f"{path}.running_var"]}


def _block_forward(net, name, nconv, x, training, record):
    spec = net.spec
    caches = []
    for j in range(nconv):
        w = net.params[f"{name}.conv{j}.weight"]
        z = conv_forward(x, w, padding=spec.padding)
        state = _bn_state(net, f"{name}.bn{j}")
        y, bc = bn_forward(z, net.params[f"{name}.bn{j}.gamma"], net.params[f"{name}.bn{j}.beta"],
                           state, training, spec.bn_eps, spec.bn_momentum)
        if training:
            net.buffers[f"{name}.bn{j}.running_mean"] = state["running_mean"]
            net.buffers[f"{name}.bn{j}.running_var"] = state["running_var"]
        a = relu_forward(y)
        caches.append((x, bc, a))
        if record is not None:
            record[f"{name}.relu{j}"] = a
        x = a
    return x, caches


def _block_backward(net, name, g, caches, grads, need_dx=True):
    spec = net.spec
    for j in range(len(caches) - 1, -1, -1):
        x, bc, a = caches[j]
        g = relu_backward(g, a)
        g, dgamma, dbeta = bn_backward(g, net.params[f"{name}.bn{j}.gamma"], bc)
        grads[f"{name}.bn{j}.gamma"] = dgamma
        grads[f"{name}.bn{j}.beta"] = dbeta
        dx, dw, _ = conv_backward(g, x, net.params[f"{name}.conv{j}.weight"], spec.padding,
                                  need_dx=need_dx or j > 0)
        grads[f"{name}.conv{j}.weight"] = dw
        g = dx
    return g


def unet_forward(net, x, training=False, record=None):
    """Run the U-net on channels-last ``x``; returns ``(out, cache)``.

    ``record``, if a dict, receives every post-ReLU activation by layer path.
    """
    spec = net.spec
    s = spec.stages
    plan = dict(stage_plan(spec))
    skips, bands, enc_caches, dec_caches = [], [], [], {}
    h = x
    for k in range(s):
        e, c = _block_forward(net, f"enc{k}", len(plan[f"enc{k}"]), h, training, record)
        enc_caches.append(c)
        if k < s - 1:
            skips.append(e)
            ll, lh, hl, hh = haar_decompose(e)
            bands.append((lh, hl, hh))
            h = ll
        else:
            h = e
    for k in range(s - 2, -1, -1):
        r = haar_recompose(h, *bands[k])
        cat = np.concatenate([r, skips[k]], axis=-1)
        h, c = _block_forward(net, f"dec{k}", len(plan[f"dec{k}"]), cat, training, record)
        dec_caches[k] = c
    out = conv_forward(h, net.params["head.weight"], net.params["head.bias"])
    return out, (h, enc_caches, dec_caches, [sk.shape[-1] for sk in skips])


def unet_backward(net, g_out, cache):
    """Parameter gradients of the U-net given the upstream gradient ``g_out``."""
    h_top, enc_caches, dec_caches, skip_ch = cache
    s = net.spec.stages
    grads = {}
    g, dw, db = conv_backward(g_out, h_top, net.params["head.weight"])
    grads["head.weight"], grads["head.bias"] = dw, db
    g_skip, g_bands = {}, {}
    for k in range(0, s - 1):
        g_cat = _block_backward(net, f"dec{k}", g, dec_caches[k], grads)
        c = skip_ch[k]
        g_r, g_skip[k] = g_cat[..., :c], g_cat[..., c:]
        dll, dlh, dhl, dhh = haar_decompose(g_r)
        g_bands[k] = (dlh, dhl, dhh)
        g = dll
    for k in range(s - 1, -1, -1):
        if k < s - 1:
            g = g_skip[k] + haar_recompose(g, *g_bands[k])
        g = _block_backward(net, f"enc{k}", g, enc_caches[k], grads, need_dx=k > 0)
    return OrderedDict((name, grads[name]) for name in net.params)


def input_scale(zw, keep):
    """Per-sample RMS of the measured weighted entries (1 where that is 0)."""
    kept = np.broadcast_to(keep[:, None], zw.shape)
    num = np.maximum(kept.sum(axis=(1, 2, 3)), 1)
    rms = np.sqrt((np.abs(zw) ** 2 * kept).sum(axis=(1, 2, 3)) / num)
    return np.where(rms > 0, rms, 1.0)


def _batch_arrays(ksm, keep, w):
    ksm = np.asarray(ksm)
    if ksm.ndim == 3:
        ksm = ksm[None]
    keep = np.asarray(keep, dtype=bool)
    if keep.ndim == 2:
        keep = np.broadcast_to(keep, (ksm.shape[0],) + keep.shape)
    wv = w.values if hasattr(w, "values") else np.asarray(w)
    if ksm.shape[2:] != wv.shape or keep.shape[1:] != wv.shape:
        raise InvalidArgument(f"k-space {ksm.shape}, mask {keep.shape} and weight {wv.shape} disagree")
    return ksm, keep, wv


def forward_batch(net, ksm, keep, w, training=False, consistency=True, record=None):
    """Batched network reconstruction; returns ``(images (N, P, H, W), cache)``."""
    ksm, keep, wv = _batch_arrays(ksm, keep, w)
    n, p, ny, nx = ksm.shape
    if p != net.spec.coils:
        raise InvalidArgument(f"network built for {net.spec.coils} coils, data has {p}")
    net.spec.check_grid((ny, nx))
    zw = ksm * wv
    scale = input_scale(zw, keep)
    x = split_nhwc(zw / scale[:, None, None, None], net.dtype)
    u, ucache = unet_forward(net, x, training, record)
    z = merge_nhwc(u.astype(np.float64)) * scale[:, None, None, None]
    ks_hat = unweight_array(z, wv, ksm, keep[:, None], EPS, consistency=consistency)
    images = ifft2c(ks_hat)
    return images, (ucache, scale, keep, wv, consistency, u.dtype)


def loss(output, label):
    """Mean over the batch of the summed squared error over coils and pixels."""
    out = output.images if isinstance(output, CoilImages) else np.asarray(output)
    lab = label.images if isinstance(label, CoilImages) else np.asarray(label)
    if out.shape != lab.shape:
        raise InvalidArgument(f"output {out.shape} and label {lab.shape} differ")
    if out.ndim == 3:
        out, lab = out[None], lab[None]
    return float(np.sum(np.abs(out - lab) ** 2) / out.shape[0])


def backward_batch(net, images, label, cache):
    """Gradients of :func:`loss` with respect to every trainable parameter."""
    ucache, scale, keep, wv, consistency, udtype = cache
    n = images.shape[0]
    g_img = 2.0 * (images - label) / n
    g_k = fft2c(g_img)
    live = wv >= EPS
    live = np.broadcast_to(live, keep.shape) & (~keep if consistency else True)
    g_z = np.where(live[:, None], g_k / np.where(wv >= EPS, wv, 1.0), 0)
    g_u = split_nhwc(g_z * scale[:, None, None, None], udtype)
    return unet_backward(net, g_u, ucache)


def forward(net, ks_masked, mask, w, consistency=True):
    """Inference reconstruction of one frame; returns :class:`CoilImages`."""
    keep = mask.keep if hasattr(mask, "keep") else np.asarray(mask)
    data = ks_masked.data if hasattr(ks_masked, "data") else np.asarray(ks_masked)
    images, _ = forward_batch(net, data[None], keep, w, training=False, consistency=consistency)
    return CoilImages(images[0])
