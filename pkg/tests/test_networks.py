import pytest
import torch

from asgan.networks import (build_baseline_ed, build_discriminator, build_ga, build_gs,
                            build_pipeline, build_wnet, count_params, encoder_widths,
                            forward_wnet, init_weights, one_hot, parameter_ratio)


def test_encoder_widths():
    assert encoder_widths(256) == (64, 128, 256, 512, 512, 512, 512, 512)
    assert encoder_widths(64) == (64, 128, 256, 512, 512, 512)
    with pytest.raises(ValueError):
        encoder_widths(100)


def test_desk_wnet_shapes():
    w = init_weights(build_wnet(64), 0)
    x = torch.rand(2, 3, 64, 64) * 2 - 1
    feats = w.ga.encode(x)
    assert feats[-1].shape == (2, 512, 1, 1)
    x2, y = w(x, one_hot(1, 3, batch=2))
    assert x2.shape == y.shape == x.shape
    assert x2.abs().max() <= 1 and y.abs().max() <= 1
    assert w.gs.dec_in == (512, 1024, 1024, 512, 256, 128)


def test_tied_kernels_are_the_same_objects():
    w = build_wnet(64)
    n = len(w.ga.widths)
    for i in range(n):
        assert w.gs.enc_kernels[i] is w.ga.dec_kernels[n - 1 - i]
    assert w.shared_names == [f"shared.{i}" for i in range(n)]
    assert w.ga.param_store()["shared.0"] is w.gs.param_store()["shared.0"]


def test_tied_layer_is_adjoint_of_decoder_layer():
    # <conv(x; K), y> == <x, conv_transpose(y; K)> for the shared K
    torch.manual_seed(0)
    w = init_weights(build_wnet(64), 1)
    k = w.gs.enc_kernels[1]
    x = torch.randn(1, k.shape[1], 16, 16)
    y = torch.randn(1, k.shape[0], 8, 8)
    lhs = (torch.nn.functional.conv2d(x, k, stride=2, padding=1) * y).sum()
    rhs = (x * torch.nn.functional.conv_transpose2d(y, k, stride=2, padding=1)).sum()
    assert torch.allclose(lhs, rhs, rtol=1e-4)


def test_wnet_counts_shared_once():
    w = build_wnet(64)
    untied = count_params(build_ga(64)) + count_params(build_gs(64))
    shared = sum(p.numel() for p in w.ga.dec_kernels)
    assert count_params(w) == untied - shared


def test_parameter_ratio_desk_scale_in_band():
    assert 0.7 < parameter_ratio(64) < 0.85


def test_no_batchnorm_on_first_or_1x1_layers():
    g = build_ga(64)
    rows = g.layer_table()
    enc = [r for r in rows if r["kind"] == "conv-down"]
    assert [r["has_batchnorm"] for r in enc] == [False, True, True, True, True, False]
    dec = [r for r in rows if r["kind"] == "conv-up"]
    assert [r["has_dropout"] for r in dec] == [True, True, True, False, False, False]
    assert dec[-1]["activation"] == "tanh" and not dec[-1]["has_batchnorm"]


def test_discriminator_outputs_probability():
    d = init_weights(build_discriminator(9, 64), 0)
    p = d(torch.rand(3, 9, 64, 64))
    assert p.shape == (3,) and ((p > 0) & (p < 1)).all()
    with pytest.raises(ValueError):
        d(torch.rand(1, 3, 64, 64))
    with pytest.raises(ValueError):
        build_discriminator(4, 64)


def test_generator_rejects_wrong_size_and_missing_label():
    g = build_ga(64)
    with pytest.raises(ValueError):
        g(torch.zeros(1, 3, 32, 32), one_hot(0, 3, 1))
    with pytest.raises(ValueError):
        g(torch.zeros(1, 3, 64, 64))


def test_one_hot_range():
    assert one_hot(2, 3).tolist() == [[0.0, 0.0, 1.0]]
    with pytest.raises(ValueError):
        one_hot(3, 3)


def test_baselines():
    ed = build_pipeline("baseline_ed", 64)
    un = build_pipeline("baseline_unet", 64)
    assert ed.shared_names == [] and un.shared_names == []
    assert ed.ga.num_attributes == 3 and ed.gs.num_attributes is None
    assert un.gs.skips and not ed.gs.skips
    assert count_params(build_baseline_ed(64)) < count_params(un.gs)
    with pytest.raises(ValueError):
        build_pipeline("vae", 64)


def test_init_is_seeded_and_gaussian():
    a = init_weights(build_wnet(64), 3)
    b = init_weights(build_wnet(64), 3)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)
    k = a.ga.enc_kernels[3].detach()
    assert abs(k.std().item() - 0.02) < 0.001
    assert a.ga.enc_biases[3].abs().max() == 0
    assert abs(a.ga.fuse.weight.std().item() - 0.02) < 0.001
    # the label code is drawn at embedding scale, comparable to the bottleneck
    assert 0.8 < a.ga.label_embed.weight.std().item() < 1.2


def test_label_changes_output_after_a_training_step():
    from asgan.training import TrainConfig, build_state, train_step
    from asgan.data import synthetic_dataset
    state = build_state(TrainConfig(resolution=64))
    t = synthetic_dataset(1, 64)[0]
    train_step(state, [(t.x1, t.x2, t.y, t.label.index)])
    x1 = torch.from_numpy(t.x1.transpose(2, 0, 1).copy())[None]
    with torch.no_grad():
        a = forward_wnet(state.generators, x1, 0, seed=1)[0]
        b = forward_wnet(state.generators, x1, 2, seed=1)[0]
    assert (a - b).abs().mean() > 1e-3


def test_dropout_noise_reproducible_with_seed():
    w = init_weights(build_wnet(64), 0)
    x = torch.rand(1, 3, 64, 64) * 2 - 1
    a = forward_wnet(w, x, 0, train_mode=False, seed=11)[0]
    b = forward_wnet(w, x, 0, train_mode=False, seed=11)[0]
    c = forward_wnet(w, x, 0, train_mode=False, seed=12)[0]
    d = forward_wnet(w, x, 0, train_mode=False, seed=12, dropout_at_test=False)[0]
    e = forward_wnet(w, x, 0, train_mode=False, seed=13, dropout_at_test=False)[0]
    assert torch.equal(a, b) and not torch.equal(a, c)
    assert torch.equal(d, e)


def test_tied_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        build_gs(64, shared_from=build_gs(64))
