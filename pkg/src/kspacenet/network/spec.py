"""Network and training hyperparameters, with named presets."""

from dataclasses import asdict, dataclass, replace

from ..errors import InvalidArgument

__all__ = ["NetworkSpec", "TrainConfig", "PRESETS", "preset"]


@dataclass(frozen=True)
class NetworkSpec:
    """Tight-frame U-net layout.

    ``stages`` counts resolution levels; stage ``k`` has
    ``min(base_channels * 2**k, channel_cap)`` channels. ``coils`` fixes the
    ``2 * coils`` input and output channels.
    """

    coils: int = 4
    stages: int = 3
    convs_per_stage: int = 3
    kernel: int = 3
    base_channels: int = 16
    channel_cap: int = 1024
    padding: str = "zero"  # or "periodic"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.coils < 1:
            raise InvalidArgument(f"coils must be >= 1, got {self.coils}")
        if self.stages < 1:
            raise InvalidArgument(f"stages must be >= 1, got {self.stages}")
        if self.convs_per_stage < 2:
            raise InvalidArgument("need at least two convolutions per stage")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise InvalidArgument(f"kernel must be odd, got {self.kernel}")
        if self.base_channels < 1 or self.channel_cap < 1:
            raise InvalidArgument("channel counts must be positive")
        if self.padding not in ("zero", "periodic"):
            raise InvalidArgument(f"unknown padding {self.padding!r}")

    @property
    def io_channels(self):
        return 2 * self.coils

    def channels(self, k):
        return min(self.base_channels * 2**k, self.channel_cap)

    def check_grid(self, shape):
        f = 2 ** (self.stages - 1)
        ny, nx = shape
        if ny % f or nx % f:
            raise InvalidArgument(f"grid {shape} not divisible by {f} for {self.stages} stages")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    halve_every: int = 50
    batch_size: int = 40
    epochs: int = 150
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.1
    seed: int = 0
    train_consistency: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.halve_every < 1:
            raise InvalidArgument("lr, batch size, epochs and halving period must be positive")
        if not 0 <= self.val_fraction < 1:
            raise InvalidArgument(f"validation fraction must be in [0, 1), got {self.val_fraction}")

    def lr_at(self, epoch):
        return self.lr * 0.5 ** (epoch // self.halve_every)


PRESETS = {
    "paper-2018": (NetworkSpec(coils=16, stages=5, base_channels=64, channel_cap=1024),
                   TrainConfig(lr=1e-2, halve_every=50, batch_size=40, epochs=150)),
    "desk": (NetworkSpec(coils=4, stages=3, base_channels=16),
             TrainConfig(lr=1e-2, halve_every=50, batch_size=2, epochs=40, seed=7,
                         train_consistency=True)),
}


def preset(name, **overrides):
    """Return ``(NetworkSpec, TrainConfig)`` for a named preset.

    Keyword overrides are routed to whichever of the two dataclasses owns the
    field.
    """
    if name not in PRESETS:
        raise InvalidArgument(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    spec, cfg = PRESETS[name]
    net_fields = set(asdict(spec))
    train_fields = set(asdict(cfg))
    unknown = set(overrides) - net_fields - train_fields
    if unknown:
        raise InvalidArgument(f"unknown override(s) {sorted(unknown)}")
    spec = replace(spec, **{k: v for k, v in overrides.items() if k in net_fields})
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if k in train_fields})
    return spec, cfg
