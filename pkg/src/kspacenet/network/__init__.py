"""Tight-frame U-net k-space interpolation network, written directly in numpy."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Tensor4, complex_merge, complex_split, haar_decompose, haar_recompose
from .model import (NetworkParams, backward_batch, forward, forward_batch, init_params, loss,
                    stage_plan)
from .spec import PRESETS, NetworkSpec, TrainConfig, preset
from .training import AdamState, Sample, TrainResult, adam_step, evaluate, train

__all__ = [
    "NetworkSpec", "TrainConfig", "PRESETS", "preset", "NetworkParams", "init_params",
    "stage_plan", "forward", "forward_batch", "backward_batch", "loss", "Tensor4",
    "complex_split", "complex_merge", "haar_decompose", "haar_recompose", "Sample", "AdamState",
    "adam_step", "train", "evaluate", "TrainResult", "save_checkpoint", "load_checkpoint",
    "infer",
]


def infer(net, ks_masked, mask, w, consistency=True):
    """Single forward pass at any view-sharing mask; no retraining."""
    return forward(net, ks_masked, mask, w, consistency=consistency)
