"""Command line interface.

Verbs: ``phantom``, ``sample``, ``recon``, ``train``, ``infer``, ``eval`` and
``repro``. Every command writes ``manifest.json`` into its output directory.
On error a JSON object ``{"error": <category>, "message": ...}`` goes to
stderr and the exit code is one of :data:`EXIT_CODES`.
"""

import argparse
import csv
import io as _io
import json
import logging
import os
import platform
import sys
import time

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import KSpaceNetError, MissingFile, SchemaError
from .experiment import (build_schedule, make_slice, network_setup, reconstruct, run_desk,
                         training_samples)
from .io import (atomic_write_bytes, read_volume, sha256_file, write_image_png, write_json,
                 write_mask_png, write_volume)
from .metrics import ReconReport, ssos
from .network import load_checkpoint, save_checkpoint, train
from .network.training import write_history_csv
from .sampling import view_shared_kspace
from .weighting import weight_map

log = logging.getLogger("kspacenet")

EXIT_CODES = {
    "schema-violation": 2,
    "missing-file": 3,
    "engine-failure": 4,
    "calibration-failure": 4,
    "training-divergence": 4,
    "invalid-argument": 5,
}

REPRO_PRESETS = {
    # the acceptance experiment: one checkpoint evaluated at vs 2, 3 and 5
    "desk-vs-sweep": {},
    "desk-smoke": {"train": {"epochs": 2, "num_slices": 2}},
}


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command, cfg, argv):
        self.command = command
        self.cfg = cfg
        self.argv = argv
        self.out = cfg.out
        self.inputs = {}
        self.outputs = []
        os.makedirs(self.out, exist_ok=True)

    def path(self, name):
        p = os.path.join(self.out, name)
        self.outputs.append(p)
        return p

    def read(self, path):
        self.inputs[path] = sha256_file(path)
        return path

    def manifest(self, extra=None):
        data = {
            "command": self.command,
            "argv": self.argv,
            "config": self.cfg.model_dump(mode="json"),
            "seed": {"phantom": self.cfg.phantom.seed, "train": network_setup(self.cfg)[1].seed},
            "versions": {"kspacenet": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {os.path.relpath(p, self.out): sha256_file(p)
                        for p in sorted(set(self.outputs)) if os.path.exists(p)},
        }
        if extra:
            data.update(extra)
        write_json(os.path.join(self.out, "manifest.json"), data)


def _frames(cfg, sched):
    return list(range(sched.num_frames)) if cfg.recon.frames is None else list(cfg.recon.frames)


def _tag(t):
    return f"t{t:02d}"


def _load_inputs(run, cfg, sched):
    """Masked k-space, masks and references per frame, from disk or regenerated."""
    frames = _frames(cfg, sched)
    d = cfg.recon.input_dir
    data = {}
    if d is None:
        sl = make_slice(cfg, cfg.phantom.seed)
        for t in frames:
            ks, m = view_shared_kspace(sched, sl.kspace, t, cfg.recon.vs)
            data[t] = (ks, m, sl.reference[t])
        return data
    if not os.path.isdir(d):
        raise MissingFile(f"input directory {d} not found")
    for t in frames:
        ks = read_volume(run.read(os.path.join(d, f"masked_{_tag(t)}.ksv")))
        m = read_volume(run.read(os.path.join(d, f"mask_{_tag(t)}.ksv")))
        ref_path = os.path.join(d, f"truth_{_tag(t)}.ksv")
        if os.path.exists(ref_path):
            ref = np.abs(read_volume(run.read(ref_path)).images[0])
        else:
            ref = make_slice(cfg, cfg.phantom.seed).reference[t]
        data[t] = (ks, m, ref)
    return data


def cmd_phantom(run):
    cfg = run.cfg
    sl = make_slice(cfg, cfg.phantom.seed)
    for t, ks in enumerate(sl.kspace):
        write_volume(run.path(f"kspace_{_tag(t)}.ksv"), ks)
        write_volume(run.path(f"truth_{_tag(t)}.ksv"), sl.reference[t][None].astype(complex),
                     kind="image", frame=t)
        write_image_png(run.path(f"truth_{_tag(t)}.png"), sl.reference[t])
    write_volume(run.path("coil_maps.ksv"), sl.sens.maps, kind="image")
    run.manifest()


def cmd_sample(run):
    cfg = run.cfg
    sched = build_schedule(cfg)
    d = cfg.recon.input_dir
    if d is None:
        sl = make_slice(cfg, cfg.phantom.seed)
        kspace, refs = sl.kspace, sl.reference
    else:
        kspace, refs = [], []
        for t in range(sched.num_frames):
            kspace.append(read_volume(run.read(os.path.join(d, f"kspace_{_tag(t)}.ksv"))))
            refs.append(np.abs(read_volume(run.read(os.path.join(d, f"truth_{_tag(t)}.ksv"))).images[0]))
    accel = {}
    for t in _frames(cfg, sched):
        ks, m = view_shared_kspace(sched, kspace, t, cfg.recon.vs)
        accel[_tag(t)] = float(m.acceleration)
        write_volume(run.path(f"masked_{_tag(t)}.ksv"), ks)
        write_volume(run.path(f"mask_{_tag(t)}.ksv"), m)
        write_mask_png(run.path(f"mask_{_tag(t)}.png"), m)
        write_volume(run.path(f"truth_{_tag(t)}.ksv"), refs[t][None].astype(complex),
                     kind="image", frame=t)
    run.manifest({"acceleration": accel})


def _network(run, cfg):
    path = cfg.network.checkpoint
    if path is None:
        raise SchemaError("network engine needs network.checkpoint")
    net, _ = load_checkpoint(run.read(path))
    return net


def _recon_frames(run, engine):
    cfg = run.cfg
    sched = build_schedule(cfg)
    data = _load_inputs(run, cfg, sched)
    w = weight_map((cfg.phantom.ny, cfg.phantom.nx))
    net = _network(run, cfg) if engine == "network" else None
    rep = ReconReport(engine=f"{engine}-vs{cfg.recon.vs}", reference="phantom")
    for t, (ks, m, ref) in data.items():
        t0 = time.perf_counter()
        out = reconstruct(engine, ks, m, cfg, net=net, w=w)
        dt = time.perf_counter() - t0
        img = ssos(out)
        write_volume(run.path(f"recon_{_tag(t)}.ksv"), out)
        write_image_png(run.path(f"recon_{_tag(t)}.png"), img)
        rep.add(t, img, ref, dt)
    rep.finalize(cfg.eval.baseline_frame)
    for t, mip in zip(data, rep.mip_images):
        write_image_png(run.path(f"mip_{_tag(t)}.png"), mip)
    rep.write_csv(run.path("report.csv"))
    run.manifest({"mean_psnr_db": rep.mean_psnr, "mean_ssim": rep.mean_ssim})
    return rep


def cmd_recon(run, engine=None):
    return _recon_frames(run, engine or run.cfg.recon.engine)


def cmd_infer(run):
    return _recon_frames(run, "network")


def cmd_eval(run):
    """Score existing reconstructions (``recon_tXX.ksv`` in ``recon.input_dir``)."""
    cfg = run.cfg
    d = cfg.recon.input_dir
    if d is None or not os.path.isdir(d):
        raise MissingFile("eval needs recon.input_dir pointing at a recon output directory")
    sched = build_schedule(cfg)
    sl = None
    rep = ReconReport(engine="eval", reference="phantom")
    for t in _frames(cfg, sched):
        out = read_volume(run.read(os.path.join(d, f"recon_{_tag(t)}.ksv")))
        ref_path = os.path.join(d, f"truth_{_tag(t)}.ksv")
        if os.path.exists(ref_path):
            ref = np.abs(read_volume(run.read(ref_path)).images[0])
        else:
            sl = sl or make_slice(cfg, cfg.phantom.seed)
            ref = sl.reference[t]
        rep.add(t, ssos(out), ref)
    rep.write_csv(run.path("report.csv"))
    run.manifest({"mean_psnr_db": rep.mean_psnr, "mean_ssim": rep.mean_ssim})
    return rep


def cmd_train(run):
    cfg = run.cfg
    spec, tcfg = network_setup(cfg)
    samples = training_samples(cfg)
    w = weight_map((cfg.phantom.ny, cfg.phantom.nx))
    res = train(spec, tcfg, samples, w,
                progress=lambda h: log.info("epoch %(epoch)d train %(train_loss).6g "
                                            "val %(val_loss).6g", h))
    save_checkpoint(res.params, run.path("network.ckpt"), metadata={"best_epoch": res.best_epoch})
    write_history_csv(res.history, run.path("history.csv"))
    run.manifest({"best_epoch": res.best_epoch, "train_seconds": res.seconds})
    return res


def _sweep_csv(result):
    buf = _io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["engine", "vs", "frame", "psnr_db", "ssim", "mean_psnr_db", "mean_ssim"])
    for r in result.table:
        wr.writerow([r["engine"], r["vs"], r["frame"], repr(r["psnr_db"]), repr(r["ssim"]),
                     repr(r["mean_psnr_db"]), repr(r["mean_ssim"])])
    return buf.getvalue()


def _curves_csv(result):
    buf = _io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    vss = sorted(result.curves)
    wr.writerow(["frame"] + [f"vessel_mean_vs{v}" for v in vss])
    n = len(next(iter(result.curves.values()))) if result.curves else 0
    for t in range(n):
        wr.writerow([t] + [repr(float(result.curves[v][t])) for v in vss])
    wr.writerow(["onset"] + [result.onsets[v] for v in vss])
    return buf.getvalue()


def cmd_repro(run, name):
    if name not in REPRO_PRESETS:
        raise SchemaError(f"unknown repro preset {name!r}; known: {sorted(REPRO_PRESETS)}")
    cfg = run.cfg
    result = run_desk(cfg, progress=lambda h: log.info(
        "epoch %(epoch)d train %(train_loss).6g val %(val_loss).6g", h))
    save_checkpoint(result.net, run.path("network.ckpt"),
                    metadata={"best_epoch": result.best_epoch})
    write_history_csv(result.history, run.path("history.csv"))
    atomic_write_bytes(run.path("sweep.csv"), _sweep_csv(result).encode())
    atomic_write_bytes(run.path("vessel_curves.csv"), _curves_csv(result).encode())
    for (engine, vs), rep in result.reports.items():
        rep.write_csv(run.path(f"report_{engine}_vs{vs}.csv"))
        f = cfg.eval.test_frame
        write_image_png(run.path(f"{engine}_vs{vs}_{_tag(f)}.png"), rep.ssos_images[f])
    run.manifest({"preset": name, "val_drop": result.val_drop, "onsets": result.onsets,
                  "train_seconds": result.train_seconds})
    return result


def build_parser():
    p = argparse.ArgumentParser(prog="kspacenet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config")
    common.add_argument("--seed", type=int, help="seed for the phantom and for training")
    common.add_argument("--threads", type=int, help="BLAS threads (1 = bitwise reproducible)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--preset", help="network preset, or the repro preset for 'repro'")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("phantom", "render a dynamic phantom and its k-space"),
                       ("sample", "apply the view-sharing schedule"),
                       ("recon", "reconstruct with one engine"),
                       ("train", "train the network"),
                       ("infer", "reconstruct with a trained checkpoint"),
                       ("eval", "score reconstructions against the reference"),
                       ("repro", "run a named end-to-end experiment")]:
        sp = sub.add_parser(name, parents=[common], help=text)
        if name == "recon":
            sp.add_argument("--engine", choices=["zero", "grappa", "aloha", "network"])
        if name in ("recon", "infer", "eval", "sample"):
            sp.add_argument("--input", help="directory written by the previous stage")
        if name in ("recon", "infer"):
            sp.add_argument("--checkpoint", help="network checkpoint file")
    return p


def _config(args):
    cfg = load_config(args.config)
    upd = {}
    if args.threads is not None:
        upd["threads"] = args.threads
    if args.out is not None:
        upd["out"] = args.out
    sections = {}
    if args.seed is not None:
        sections["phantom"] = {"seed": args.seed}
        sections["train"] = {"seed": args.seed}
    if args.preset is not None and args.command != "repro":
        sections["network"] = {"preset": args.preset}
    if getattr(args, "input", None):
        sections.setdefault("recon", {})["input_dir"] = args.input
    if getattr(args, "checkpoint", None):
        sections["network"] = {**sections.get("network", {}), "checkpoint": args.checkpoint}
    if args.command == "repro":
        for sec, vals in REPRO_PRESETS.get(args.preset or "desk-vs-sweep", {}).items():
            sections[sec] = {**sections.get(sec, {}), **vals}
    data = cfg.model_dump()
    data.update(upd)
    for sec, vals in sections.items():
        data[sec] = {**data[sec], **vals}
    try:
        return ExperimentConfig.model_validate(data)
    except ValueError as exc:
        raise SchemaError(f"invalid configuration: {exc}") from exc


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
        run = Run(args.command, cfg, argv)
        with threadpool_limits(cfg.threads):
            if args.command == "phantom":
                cmd_phantom(run)
            elif args.command == "sample":
                cmd_sample(run)
            elif args.command == "recon":
                cmd_recon(run, args.engine)
            elif args.command == "train":
                cmd_train(run)
            elif args.command == "infer":
                cmd_infer(run)
            elif args.command == "eval":
                cmd_eval(run)
            elif args.command == "repro":
                cmd_repro(run, args.preset or "desk-vs-sweep")
    except KSpaceNetError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except Exception as exc:  # noqa: BLE001 - report any crash in machine-readable form
        print(json.dumps({"error": "internal-error", "message": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
