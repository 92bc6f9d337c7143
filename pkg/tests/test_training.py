import numpy as np
import pytest
import torch

from _reference import dual_loss_loop
from stochdiff.checkpoint import CheckpointError, CheckpointVersionError, checkpoint_load, checkpoint_save, load_into
from stochdiff.model import ModelConfig, StochDiffModel, UnknownVariantError, build_model
from stochdiff.nn import ShapeError, gradient_check
from stochdiff.training import (
    PlateauScheduler,
    TrainConfig,
    TrainingError,
    build_variant,
    draw_training_noise,
    dual_loss,
    gaussian_decoder_loss,
    regression_loss,
    train,
    variant_loss,
)


def _cfg(variant="stochdiff", d=2, w=4, **kw):
    base = dict(hidden=w, latent=w, enc_hidden=w, embed=w, denoiser_hidden=w, context_tokens=2, n_steps=10)
    base.update(kw)
    return ModelConfig(data_dim=d, variant=variant, **base)


def _window(T=3, d=2, seed=0):
    return np.random.default_rng(seed).standard_normal((T, d))


@pytest.mark.parametrize("variant", ["stochdiff", "vlstm_diffusion"])
def test_dual_loss_matches_independent_loop(variant):
    model = build_model(_cfg(variant), seed=3)
    x = _window()
    noise = draw_training_noise(np.random.default_rng(5), (3,), model)
    total, kl, recon = dual_loss(x, model, noise=noise)
    ref = dual_loss_loop(model, x, noise.steps, noise.eps, noise.eps_latent)
    assert total.item() == pytest.approx(ref[0], abs=1e-10)
    assert kl.item() == pytest.approx(ref[1], abs=1e-10)
    assert recon.item() == pytest.approx(ref[2], abs=1e-10)
    if variant == "vlstm_diffusion":
        assert kl.item() > 0


def test_total_is_sum_and_kl_nonnegative():
    model = build_model(_cfg(), seed=1)
    rng = np.random.default_rng(0)
    for _ in range(5):
        total, kl, recon = dual_loss(rng.standard_normal((4, 5, 2)), model, rng=rng, reduce=False)
        assert torch.equal(total, kl + recon)
        assert bool((kl >= 0).all())


def test_zero_length_window():
    model = build_model(_cfg(), seed=0)
    out = dual_loss(np.zeros((0, 2)), model, rng=np.random.default_rng(0))
    assert [v.item() for v in out] == [0.0, 0.0, 0.0]


def test_kl_collapse_when_posterior_copies_prior():
    model = build_model(_cfg(), seed=2)
    rec = model.recurrence
    H = rec.hidden
    with torch.no_grad():
        post, prior = rec.posterior_net, rec.prior_net
        post.encoder.layers[0].weight.zero_()
        post.encoder.layers[0].weight[:, :H] = prior.encoder.layers[0].weight
        post.encoder.layers[0].bias.copy_(prior.encoder.layers[0].bias)
        for a, b in [(post.encoder.layers[1], prior.encoder.layers[1]), (post.mean, prior.mean), (post.var, prior.var)]:
            a.weight.copy_(b.weight)
            a.bias.copy_(b.bias)
    total, kl, recon = dual_loss(_window(5), model, rng=np.random.default_rng(1))
    assert kl.item() == 0.0
    assert total.item() == recon.item()


def test_dual_loss_requires_randomness():
    model = build_model(_cfg(), seed=0)
    with pytest.raises(ValueError):
        dual_loss(_window(), model)


def test_gradient_of_dual_loss():
    model = build_model(_cfg(w=4), seed=4)
    x = _window()
    noise = draw_training_noise(np.random.default_rng(2), (3,), model)
    rep = gradient_check(lambda: dual_loss(x, model, noise=noise)[0], model)
    assert rep.passed, rep.per_parameter


def test_variant_losses():
    x = _window(4)
    lstm = build_model(_cfg("lstm"), 0)
    assert variant_loss(lstm) is regression_loss
    total, kl, recon = regression_loss(x, lstm)
    assert kl.item() == 0.0 and total.item() == recon.item() > 0
    g = build_model(_cfg("vlstm_standard_prior"), 0)
    assert variant_loss(g) is gaussian_decoder_loss
    total, kl, recon = gaussian_decoder_loss(x, g, rng=np.random.default_rng(0))
    assert kl.item() > 0 and torch.equal(total, kl + recon)
    assert not hasattr(g.recurrence, "prior_net")


def test_build_variant_flags_and_equivalence():
    v = build_variant(_cfg("lstm"), 0)
    assert not v.has_kl and not v.probabilistic and v.model.is_deterministic
    v = build_variant(_cfg("stochdiff"), 7)
    x = _window()
    a = v.loss(x, v.model, rng=np.random.default_rng(3))
    b = dual_loss(x, build_model(_cfg("stochdiff"), 7), rng=np.random.default_rng(3))
    assert all(torch.equal(p, q) for p, q in zip(a, b))
    with pytest.raises(UnknownVariantError):
        _cfg("gru")


def test_condition_widths():
    assert StochDiffModel(_cfg("stochdiff")).cond_dim == 4
    assert StochDiffModel(_cfg("vlstm_diffusion")).cond_dim == 8
    assert StochDiffModel(_cfg("stochdiff")).generation_noise_width() == 4 + 10 * 2


def test_plateau_rule_halves_once_after_patience():
    sch = PlateauScheduler(1e-3, patience=10, factor=0.5)
    lrs = [sch.step(1.0) for _ in range(11)]
    assert lrs[:10] == [1e-3] * 10
    assert lrs[10] == 5e-4
    assert [sch.step(1.0) for _ in range(9)] == [5e-4] * 9
    # any relative improvement above 1e-6 resets the counter
    sch = PlateauScheduler(1.0, patience=2)
    for loss in (10.0, 9.0, 8.0, 7.0):
        assert sch.step(loss) == 1.0
    assert sch.step(7.0 * (1 - 1e-8)) == 1.0
    assert sch.step(7.0) == 0.5


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(model=_cfg(), lr=0)
    with pytest.raises(ValueError):
        TrainConfig(model=_cfg(), lr_decay=1.0)


def _sine_windows(M=24, T=16):
    t = np.arange(M * 2 + T)
    s = np.sin(2 * np.pi * t / 12.0)
    return np.stack([s[i : i + T, None] for i in range(0, 2 * M, 2)])


def test_train_is_reproducible_and_lr_monotone():
    cfg = TrainConfig(model=_cfg(d=1, w=4), epochs=4, batch_size=8, seed=3, patience=1, lr=1e-2)
    w = _sine_windows(8, 6)
    _, r1 = train(w, cfg)
    _, r2 = train(w, cfg)
    assert [e.as_record() for e in r1.epochs] == [e.as_record() for e in r2.epochs]
    assert all(a >= b for a, b in zip(r1.lrs, r1.lrs[1:]))


def test_train_surfaces_non_finite_loss():
    w = np.full((3, 4, 1), 1e200)
    with pytest.raises(TrainingError, match=r"epoch 1, window \d"):
        train(w, TrainConfig(model=_cfg(d=1, w=4), epochs=1))


@pytest.mark.slow
def test_noiseless_sine_reconstruction_drops():
    # without the warm-up the posterior collapses onto the prior and the
    # decoder settles on the unconditional x0 estimate
    cfg = TrainConfig(model=_cfg(d=1, w=8, n_steps=20), epochs=200, batch_size=8, lr=1e-2, seed=0, kl_warmup=100)
    _, rep = train(_sine_windows(64), cfg)
    assert rep.recons[-1] < 0.1 * rep.recons[0]
    assert rep.epochs[-1].kl > 0


def test_kl_warmup_weights():
    cfg = TrainConfig(model=_cfg(), kl_warmup=4)
    assert [cfg.kl_weight(e) for e in range(1, 7)] == [0.0, 0.25, 0.5, 0.75, 1.0, 1.0]
    assert TrainConfig(model=_cfg()).kl_weight(1) == 1.0
    with pytest.raises(ValueError):
        TrainConfig(model=_cfg(), kl_warmup=-1)


def test_checkpoint_roundtrip(tmp_path):
    model = build_model(_cfg(), seed=9)
    checkpoint_save(model, tmp_path / "m.ckpt", {"note": "x"})
    tensors, meta = checkpoint_load(tmp_path / "m.ckpt")
    assert meta == {"note": "x"}
    fresh = load_into(StochDiffModel(_cfg()), tensors)
    for (n1, a), (n2, b) in zip(model.named_parameters(), fresh.named_parameters()):
        assert n1 == n2 and a.detach().numpy().tobytes() == b.detach().numpy().tobytes()


def test_checkpoint_corruption(tmp_path):
    model = build_model(_cfg(), seed=9)
    path = tmp_path / "m.ckpt"
    checkpoint_save(model, path)
    raw = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_load(tmp_path / "t.ckpt")
    (tmp_path / "e.ckpt").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint_load(tmp_path / "e.ckpt")
    (tmp_path / "m2.ckpt").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_load(tmp_path / "m2.ckpt")
    (tmp_path / "v.ckpt").write_bytes(raw[:8] + (2).to_bytes(4, "little") + raw[12:])
    with pytest.raises(CheckpointVersionError):
        checkpoint_load(tmp_path / "v.ckpt")


def test_checkpoint_width_mismatch(tmp_path):
    checkpoint_save(build_model(_cfg(w=8), 0), tmp_path / "w8.ckpt")
    tensors, _ = checkpoint_load(tmp_path / "w8.ckpt")
    with pytest.raises(ShapeError):
        load_into(StochDiffModel(_cfg(w=16)), tensors)
    with pytest.raises(ShapeError):
        load_into(StochDiffModel(_cfg("lstm", w=8)), tensors)


def test_model_config_roundtrip():
    cfg = _cfg("vlstm_diffusion")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
