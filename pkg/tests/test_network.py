import time

import numpy as np
import pytest

from kspacenet.errors import InvalidArgument, SchemaError, TrainingDivergence
from kspacenet.network import (NetworkSpec, Sample, Tensor4, TrainConfig, adam_step,
                               backward_batch, complex_merge, complex_split, forward,
                               forward_batch, haar_decompose, haar_recompose, infer, init_params,
                               load_checkpoint, loss, preset, save_checkpoint, train)
from kspacenet.network.layers import conv_backward, conv_forward
from kspacenet.network.model import stage_plan
from kspacenet.network.training import AdamState, write_history_csv
from kspacenet.phantom import CoilImages, KSpaceStack, fft2c, ifft2c
from kspacenet.sampling import SamplingMask
from kspacenet.weighting import weight_map


def tiny_spec(stages=1, coils=2, padding="zero"):
    return NetworkSpec(coils=coils, stages=stages, convs_per_stage=2, base_channels=4,
                       padding=padding)


def random_batch(rng, n=3, p=2, h=8, keep_frac=0.4):
    keep = rng.random((n, h, h)) < keep_frac
    keep[:, h // 2, h // 2] = True
    ks = (rng.standard_normal((n, p, h, h)) + 1j * rng.standard_normal((n, p, h, h))) * keep[:, None]
    lab = rng.standard_normal((n, p, h, h)) + 1j * rng.standard_normal((n, p, h, h))
    return ks, keep, lab


def gradient_check(spec, consistency, seed=0):
    """Worst relative error of random directional derivatives, one per parameter group."""
    rng = np.random.default_rng(seed)
    net = init_params(spec, seed=seed + 1, dtype=np.float64)
    ks, keep, lab = random_batch(rng, p=spec.coils)
    w = weight_map((8, 8))

    def value(n):
        img, _ = forward_batch(n, ks, keep, w, training=True, consistency=consistency)
        return loss(img, lab)

    img, cache = forward_batch(net, ks, keep, w, training=True, consistency=consistency)
    grads = backward_batch(net, img, lab, cache)
    h = 1e-5
    worst = {}
    for name, p in net.params.items():
        d = rng.standard_normal(p.shape)
        plus, minus = net.copy(), net.copy()
        plus.params[name] = p + h * d
        minus.params[name] = p - h * d
        num = (value(plus) - value(minus)) / (2 * h)
        ana = float(np.sum(grads[name] * d))
        worst[name] = abs(num - ana) / max(abs(ana), 1e-12)
    return worst


# --- complex split / merge ---

def test_split_single_entry():
    ks = np.zeros((1, 2, 2), complex)
    ks[0, 0, 1] = 3 + 4j
    t = complex_split(KSpaceStack(ks))
    assert t.axes == "NCHW"
    assert t.data.shape == (1, 2, 2, 2)
    assert t.data[0, 0, 0, 1] == 3 and t.data[0, 1, 0, 1] == 4


def test_split_merge_bitwise():
    rng = np.random.default_rng(0)
    ks = rng.standard_normal((3, 6, 8)) + 1j * rng.standard_normal((3, 6, 8))
    back = complex_merge(complex_split(ks))[0]
    assert np.array_equal(back, ks)


def test_split_channel_count_and_odd_merge():
    assert complex_split(np.zeros((16, 4, 4), complex)).data.shape[1] == 32
    with pytest.raises(InvalidArgument):
        complex_merge(Tensor4(np.zeros((1, 3, 4, 4))))


def test_tensor4_axes():
    t = Tensor4(np.zeros((1, 2, 3, 4)))
    assert t.to("NHWC").data.shape == (1, 3, 4, 2)
    with pytest.raises(InvalidArgument):
        Tensor4(np.zeros((2, 3, 4)))


# --- Haar ---

def test_haar_constant():
    t = Tensor4(np.full((1, 2, 4, 6), 1.5))
    ll, lh, hl, hh = haar_decompose(t)
    assert np.allclose(ll.data, 3.0)
    for band in (lh, hl, hh):
        assert np.all(band.data == 0)


def test_haar_energy_and_round_trip():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal((2, 3, 8, 8))
        bands = haar_decompose(Tensor4(x))
        energy = sum(np.sum(b.data**2) for b in bands)
        assert energy == pytest.approx(np.sum(x**2), rel=1e-12)
        back = haar_recompose(*bands).data
        worst = max(worst, np.linalg.norm(back - x) / np.linalg.norm(x))
    assert worst <= 1e-12


def test_haar_single_precision():
    x = np.random.default_rng(2).standard_normal((1, 4, 16, 16)).astype(np.float32)
    back = haar_recompose(*haar_decompose(Tensor4(x))).data
    assert np.linalg.norm(back - x) / np.linalg.norm(x) <= 1e-6


def test_haar_odd_raises():
    with pytest.raises(InvalidArgument):
        haar_decompose(Tensor4(np.zeros((1, 1, 5, 4))))


# --- layers ---

def test_conv_matches_direct_sum():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 5, 6, 2))
    w = rng.standard_normal((3, 3, 2, 3))
    out = conv_forward(x, w)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 5, 6, 3))
    for i in range(5):
        for j in range(6):
            ref[0, i, j] = np.tensordot(xp[0, i:i + 3, j:j + 3], w, axes=([0, 1, 2], [0, 1, 2]))
    assert np.allclose(out, ref, atol=1e-12)


@pytest.mark.parametrize("padding", ["zero", "periodic"])
def test_conv_backward_is_adjoint(padding):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 6, 6, 3))
    w = rng.standard_normal((3, 3, 3, 2))
    g = rng.standard_normal((2, 6, 6, 2))
    dx, dw, _ = conv_backward(g, x, w, padding)
    y = conv_forward(x, w, padding=padding)
    assert np.sum(g * y) == pytest.approx(np.sum(dx * x), rel=1e-12)
    assert np.sum(g * y) == pytest.approx(np.sum(dw * w), rel=1e-12)


# --- forward ---

def test_forward_shape_consistency_and_positivity():
    rng = np.random.default_rng(5)
    spec = NetworkSpec(coils=2, stages=2, base_channels=4)
    net = init_params(spec, seed=0)
    ks, keep, _ = random_batch(rng, n=1, p=2, h=16)
    w = weight_map((16, 16))
    record = {}
    images, _ = forward_batch(net, ks, keep, w, record=record)
    assert images.shape == ks.shape
    assert len(record) == sum(len(c) for _, c in stage_plan(spec))
    for a in record.values():
        assert np.all(a >= 0)
    sel = np.broadcast_to(keep[:, None], ks.shape)
    assert np.max(np.abs((fft2c(images) - ks)[sel])) <= 1e-12
    out = forward(net, KSpaceStack(ks[0]), SamplingMask(keep[0]), w)
    assert isinstance(out, CoilImages) and out.images.shape == (2, 16, 16)


def test_forward_consistency_bitwise_before_fft():
    rng = np.random.default_rng(6)
    spec = NetworkSpec(coils=2, stages=2, base_channels=4)
    net = init_params(spec, seed=0)
    ks, keep, _ = random_batch(rng, n=2, p=2, h=16)
    w = weight_map((16, 16))
    from kspacenet.network import model
    captured = {}
    original = model.ifft2c

    def spy(k):
        captured["k"] = k
        return original(k)
    model.ifft2c = spy
    try:
        forward_batch(net, ks, keep, w)
    finally:
        model.ifft2c = original
    sel = np.broadcast_to(keep[:, None], ks.shape)
    assert np.array_equal(captured["k"][sel], ks[sel])


def test_forward_errors():
    spec = NetworkSpec(coils=2, stages=3, base_channels=4)
    net = init_params(spec)
    w = weight_map((10, 10))
    with pytest.raises(InvalidArgument):
        forward_batch(net, np.zeros((1, 2, 10, 10), complex), np.ones((10, 10), bool), w)
    w = weight_map((16, 16))
    with pytest.raises(InvalidArgument):
        forward_batch(net, np.zeros((1, 3, 16, 16), complex), np.ones((16, 16), bool), w)


def test_inference_is_deterministic():
    rng = np.random.default_rng(7)
    net = init_params(NetworkSpec(coils=2, stages=2, base_channels=4), seed=3)
    ks, keep, _ = random_batch(rng, n=1, p=2, h=16)
    w = weight_map((16, 16))
    a, _ = forward_batch(net, ks, keep, w)
    b, _ = forward_batch(net, ks, keep, w)
    assert np.array_equal(a, b)


# --- loss and gradients ---

def test_loss_examples():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 4, 4)) + 1j * rng.standard_normal((2, 3, 4, 4))
    assert loss(x, x) == 0
    unit = x / np.linalg.norm(x.reshape(2, -1), axis=1)[:, None, None, None]
    assert loss(unit, np.zeros_like(unit)) == pytest.approx(1.0, rel=1e-14)
    assert loss(CoilImages(x[0]), CoilImages(x[1])) >= 0
    with pytest.raises(InvalidArgument):
        loss(x, x[:, :2])


@pytest.mark.parametrize("stages", [1, 2])
def test_gradient_check(stages):
    worst = gradient_check(tiny_spec(stages), consistency=False)
    assert max(worst.values()) <= 1e-4, worst


def test_gradient_check_periodic_with_consistency():
    worst = gradient_check(tiny_spec(2, padding="periodic"), consistency=True, seed=2)
    assert max(worst.values()) <= 1e-4, worst


def test_zero_loss_gradients_vanish():
    rng = np.random.default_rng(9)
    net = init_params(tiny_spec(2), seed=0, dtype=np.float64)
    ks, keep, _ = random_batch(rng)
    w = weight_map((8, 8))
    img, cache = forward_batch(net, ks, keep, w, training=True, consistency=False)
    grads = backward_batch(net, img, img.copy(), cache)
    assert max(np.max(np.abs(g)) for g in grads.values()) <= 1e-12


def test_adam_zero_gradient_and_bias_correction():
    params = {"a": np.array([1.0, -2.0])}
    before = params["a"].copy()
    adam_step(params, {"a": np.zeros(2)}, AdamState(), lr=0.1)
    assert np.array_equal(params["a"], before)
    # first bias-corrected step moves every entry by lr in the sign of the gradient
    adam_step(params, {"a": np.array([3.0, -0.5])}, AdamState(), lr=0.1)
    assert np.allclose(params["a"], before - 0.1 * np.array([1, -1]), atol=1e-7)


# --- training ---

def toy_dataset(n=6, p=2, h=8, seed=0):
    rng = np.random.default_rng(seed)
    ks, keep, lab = random_batch(rng, n=n, p=p, h=h, keep_frac=0.6)
    return [Sample(ks[i], keep[i], ifft2c(ks[i])) for i in range(n)]


def test_train_identity_task_and_determinism():
    spec = tiny_spec(2)
    cfg = TrainConfig(lr=1e-3, batch_size=2, epochs=4, seed=5, val_fraction=0.34)
    data = toy_dataset()
    w = weight_map((8, 8))
    a = train(spec, cfg, data, w)
    b = train(spec, cfg, data, w)
    assert len(a.history) == 4
    h = a.history
    assert h[0]["val_loss"] <= 10 * h[-1]["val_loss"] + 1e-12
    for name in a.params.params:
        assert np.array_equal(a.params.params[name], b.params.params[name])
    for name in a.params.buffers:
        assert np.array_equal(a.params.buffers[name], b.params.buffers[name])
    best = min(range(4), key=lambda e: h[e]["val_loss"])
    assert a.best_epoch == best


def test_train_divergence_carries_path():
    spec = tiny_spec(1)
    cfg = TrainConfig(lr=1e-3, batch_size=2, epochs=2, seed=0)
    data = toy_dataset()
    data[0].label[:] = np.nan
    with pytest.raises(TrainingDivergence) as info:
        train(spec, cfg, data, weight_map((8, 8)))
    assert info.value.layer_path is not None
    assert info.value.last_good is not None


def test_train_config_validation_and_schedule():
    with pytest.raises(InvalidArgument):
        TrainConfig(lr=0)
    with pytest.raises(InvalidArgument):
        TrainConfig(val_fraction=1.0)
    cfg = TrainConfig()
    assert [cfg.lr_at(e) for e in (0, 49, 50, 100)] == [1e-2, 1e-2, 5e-3, 2.5e-3]


def test_presets():
    spec, cfg = preset("paper-2018")
    assert (spec.coils, spec.base_channels, spec.channel_cap, spec.convs_per_stage) == (16, 64, 1024, 3)
    assert (cfg.lr, cfg.halve_every, cfg.batch_size, cfg.epochs, cfg.beta1, cfg.beta2) == \
        (1e-2, 50, 40, 150, 0.9, 0.999)
    assert spec.io_channels == 32
    spec, cfg = preset("desk", epochs=3, base_channels=8)
    assert (spec.stages, spec.base_channels, cfg.epochs, cfg.seed) == (3, 8, 3, 7)
    with pytest.raises(InvalidArgument):
        preset("nope")
    with pytest.raises(InvalidArgument):
        preset("desk", bogus=1)


# --- checkpoint ---

def test_checkpoint_round_trip(tmp_path):
    net = init_params(NetworkSpec(coils=2, stages=2, base_channels=4), seed=11)
    net.buffers["enc0.bn0.running_mean"][:] = 0.25
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path, metadata={"epoch": 3})
    back, meta = load_checkpoint(path)
    assert meta == {"epoch": 3}
    assert back.spec == net.spec and back.seed == 11
    assert list(back.params) == list(net.params)
    for name in net.params:
        assert np.array_equal(back.params[name], net.params[name])
    for name in net.buffers:
        assert np.array_equal(back.buffers[name], net.buffers[name])
    save_checkpoint(back, tmp_path / "again.ckpt", metadata={"epoch": 3})
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp-")]


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint at all")
    with pytest.raises(SchemaError):
        load_checkpoint(bad)


def test_history_csv(tmp_path):
    path = tmp_path / "h.csv"
    write_history_csv([{"epoch": 0, "train_loss": 1.5, "val_loss": 2.0, "lr": 0.01}], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr"
    assert lines[1] == "0,1.5,2.0,0.01"


# --- inference ---

def test_infer_accepts_any_mask_and_is_fast():
    spec, _ = preset("desk")
    net = init_params(spec, seed=0)
    rng = np.random.default_rng(10)
    w = weight_map((64, 64))
    ks = rng.standard_normal((4, 64, 64)) + 1j * rng.standard_normal((4, 64, 64))
    for frac in (0.2, 0.3, 0.5):
        keep = rng.random((64, 64)) < frac
        keep[32, 32] = True
        infer(net, KSpaceStack(ks * keep), SamplingMask(keep), w)
    t0 = time.perf_counter()
    for _ in range(3):
        infer(net, KSpaceStack(ks * keep), SamplingMask(keep), w)
    assert (time.perf_counter() - t0) / 3 <= 0.1
