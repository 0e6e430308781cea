"""Pipelines tying phantom, sampling, reconstruction engines and metrics together.

The desk experiment trains the network on view-shared (``vs_input``) k-space
with GRAPPA (``vs_label``) labels from several jittered phantom slices, then
evaluates one checkpoint on a held-out slice at every requested view-sharing
number against zero filling and GRAPPA.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .aloha import AlohaConfig, complete
from .errors import EngineFailure, InvalidArgument, KSpaceNetError
from .grappa import GrappaGeometry, grappa_recon
from .metrics import ReconReport, psnr, ssim, ssos
from .network import (Sample, infer, init_params, preset, train)
from .network.model import NetworkParams
from .phantom import (CoilImages, ImageGrid, apply_sensitivities, enhancement_scene, forward_kspace,
                      ifft2c, make_coil_sensitivities, make_dynamic_phantom)
from .sampling import build_twist_schedule, mask_for_frame, view_shared_kspace
from .weighting import weight_map

log = logging.getLogger(__name__)

__all__ = ["SliceData", "make_slice", "build_schedule", "reconstruct", "grappa_geometry",
           "training_samples", "network_setup", "onset_frame", "region_curve", "DeskResult",
           "run_desk", "evaluate_engine"]


@dataclass
class SliceData:
    phantom: object  # DynamicPhantom
    sens: object  # CoilSensitivities
    kspace: list  # fully sampled KSpaceStack per frame
    seed: int

    @property
    def reference(self):
        """Clean SSoS reference per frame (the maps have unit SSoS)."""
        return self.phantom.frames


def build_schedule(cfg):
    p, s = cfg.phantom, cfg.schedule
    return build_twist_schedule(ImageGrid(nx=p.nx, ny=p.ny), p.num_frames, s.num_interleaves,
                                s.rx, s.ry, s.a_half_width, s.acs_size)


def make_slice(cfg, seed, jitter=None):
    """One dynamic slice: anatomy drawn from ``seed``, coil array from ``phantom.seed``."""
    p = cfg.phantom
    grid = ImageGrid(nx=p.nx, ny=p.ny)
    scene = enhancement_scene(p.num_frames, p.onset, p.rise, vessel_peak=p.vessel_peak,
                              jitter=p.jitter if jitter is None else jitter)
    if p.noise_std:
        scene = type(scene)(scene.ellipses, scene.num_frames, scene.jitter, p.noise_std)
    ph = make_dynamic_phantom(grid, scene, seed=seed)
    sens = make_coil_sensitivities(grid, p.coils, p.k_support, seed=p.seed)
    ks = [forward_kspace(apply_sensitivities(f, sens), frame_index=t)
          for t, f in enumerate(ph.frames)]
    return SliceData(ph, sens, ks, seed)


def grappa_geometry(cfg):
    s = cfg.schedule
    return GrappaGeometry(rx=s.rx, ry=s.ry, kernel=tuple(cfg.grappa.kernel),
                          acs=tuple(s.acs_size))


def aloha_config(cfg):
    a = cfg.aloha
    return AlohaConfig(filter=tuple(a.filter), rank=a.rank, mu=a.mu, tol=a.tol,
                       max_outer=a.max_outer, levels=a.levels)


def network_setup(cfg):
    """``(NetworkSpec, TrainConfig)`` from the preset plus config overrides."""
    n, t = cfg.network, cfg.train
    over = {"coils": cfg.phantom.coils, "padding": n.padding}
    for key in ("base_channels", "stages"):
        if getattr(n, key) is not None:
            over[key] = getattr(n, key)
    for key in ("epochs", "batch_size", "lr", "seed"):
        if getattr(t, key) is not None:
            over[key] = getattr(t, key)
    return preset(n.preset, **over)


def reconstruct(engine, ks_masked, mask, cfg, net=None, w=None):
    """Reconstruct one frame; returns :class:`CoilImages`."""
    try:
        if engine == "zero":
            return CoilImages(ifft2c(ks_masked.data))
        if engine == "grappa":
            out, _ = grappa_recon(ks_masked, mask, grappa_geometry(cfg), lam=cfg.grappa.lam,
                                  shifts=cfg.grappa.shifts)
            return CoilImages(ifft2c(out.data))
        if engine == "aloha":
            w = w if w is not None else weight_map(ks_masked.shape)
            return CoilImages(ifft2c(complete(ks_masked, mask, w, aloha_config(cfg)).kspace.data))
        if engine == "network":
            if net is None:
                raise InvalidArgument("network engine needs trained parameters")
            w = w if w is not None else weight_map(ks_masked.shape)
            return infer(net, ks_masked, mask, w, consistency=cfg.network.consistency)
    except KSpaceNetError:
        raise
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        raise EngineFailure(f"{engine} failed: {exc}") from exc
    raise InvalidArgument(f"unknown engine {engine!r}")


def _check_label_vs(cfg, sched):
    lab = cfg.train.vs_label
    lattice = sched.lattice
    if np.any(lattice & ~mask_for_frame(sched, 0, lab).keep) and cfg.schedule.num_interleaves > 1:
        raise InvalidArgument(f"label view sharing {lab} does not complete the GRAPPA lattice")


def training_samples(cfg, sched=None):
    """``(vs_input masked k-space, GRAPPA vs_label images)`` pairs from jittered slices."""
    sched = sched or build_schedule(cfg)
    _check_label_vs(cfg, sched)
    t = cfg.train
    samples = []
    for i in range(t.num_slices):
        sl = make_slice(cfg, t.slice_seed + i, jitter=t.jitter)
        for f in range(sched.num_frames):
            ks_lab, m_lab = view_shared_kspace(sched, sl.kspace, f, t.vs_label)
            label = reconstruct("grappa", ks_lab, m_lab, cfg)
            ks_in, m_in = view_shared_kspace(sched, sl.kspace, f, t.vs_input)
            samples.append(Sample(ks_in.data, m_in.keep, label.images))
    return samples


def region_curve(images, region):
    """Mean of each image over a boolean region."""
    return np.array([float(np.mean(np.asarray(im)[region])) for im in images])


def onset_frame(curve, baseline_index=0, fraction=0.5):
    """First frame whose baseline-subtracted value exceeds ``fraction`` of its peak."""
    d = np.asarray(curve, float) - curve[baseline_index]
    peak = d.max()
    if peak <= 0:
        return None
    return int(np.flatnonzero(d > fraction * peak)[0])


def evaluate_engine(engine, sl, sched, vs, cfg, net=None, w=None, frames=None, reference=None):
    """Per-frame :class:`ReconReport` of one engine at one view-sharing number."""
    frames = range(sched.num_frames) if frames is None else frames
    rep = ReconReport(engine=f"{engine}-vs{vs}", reference=cfg.eval.reference)
    for f in frames:
        ks, m = view_shared_kspace(sched, sl.kspace, f, vs)
        t0 = time.perf_counter()
        out = reconstruct(engine, ks, m, cfg, net=net, w=w)
        dt = time.perf_counter() - t0
        ref = sl.reference[f] if reference is None else reference[f]
        rep.add(f, ssos(out), ref, dt)
    return rep.finalize(cfg.eval.baseline_frame)


@dataclass
class DeskResult:
    net: NetworkParams
    history: list
    best_epoch: int
    reports: dict = field(default_factory=dict)  # (engine, vs) -> ReconReport
    table: list = field(default_factory=list)  # dict rows for the test frame
    onsets: dict = field(default_factory=dict)  # vs -> onset frame of the network curve
    curves: dict = field(default_factory=dict)  # vs -> vessel mean curve
    train_seconds: float = 0.0

    @property
    def val_drop(self):
        v0 = self.history[0]["val_loss"]
        return 1.0 - min(h["val_loss"] for h in self.history) / v0

    def psnr_at(self, engine, vs):
        for row in self.table:
            if row["engine"] == engine and row["vs"] == vs:
                return row["psnr_db"]
        raise KeyError((engine, vs))


def run_desk(cfg, engines=("zero", "grappa", "network"), net=None, progress=None):
    """Train (unless ``net`` is given) and evaluate on the held-out slice.

    Runs single-threaded when ``cfg.threads == 1`` so results are bitwise
    reproducible.
    """
    with threadpool_limits(cfg.threads):
        sched = build_schedule(cfg)
        w = weight_map((cfg.phantom.ny, cfg.phantom.nx))
        spec, tcfg = network_setup(cfg)
        history, best_epoch, seconds = [], -1, 0.0
        if net is None:
            samples = training_samples(cfg, sched)
            log.info("training on %d samples", len(samples))
            res = train(spec, tcfg, samples, w, progress=progress)
            net, history, best_epoch, seconds = res.params, res.history, res.best_epoch, res.seconds
        test = make_slice(cfg, cfg.eval.test_seed, jitter=cfg.train.jitter)
        reference = None
        if cfg.eval.reference == "grappa":
            reference = [ssos(reconstruct("grappa", *view_shared_kspace(sched, test.kspace, f,
                                                                         cfg.train.vs_label), cfg))
                         for f in range(sched.num_frames)]
        out = DeskResult(net, history, best_epoch, train_seconds=seconds)
        vessel = test.phantom.region_masks["vessel"]
        for vs in cfg.eval.vs:
            for engine in engines:
                if engine == "grappa" and np.any(sched.lattice & ~mask_for_frame(sched, 0, vs).keep):
                    continue  # GRAPPA needs the full lattice
                rep = evaluate_engine(engine, test, sched, vs, cfg, net=net, w=w,
                                      reference=reference)
                out.reports[(engine, vs)] = rep
                fr = next(r for r in rep.frames if r.frame == cfg.eval.test_frame)
                out.table.append({"engine": engine, "vs": vs, "frame": fr.frame,
                                  "psnr_db": fr.psnr, "ssim": fr.ssim,
                                  "mean_psnr_db": rep.mean_psnr, "mean_ssim": rep.mean_ssim})
                if engine == "network":
                    curve = region_curve(rep.ssos_images, vessel)
                    out.curves[vs] = curve
                    out.onsets[vs] = onset_frame(curve, cfg.eval.baseline_frame)
    return out


def psnr_ssim(recon, ref):
    return psnr(recon, ref), ssim(recon, ref)


def init_network(cfg):
    spec, tcfg = network_setup(cfg)
    return init_params(spec, seed=tcfg.seed)
