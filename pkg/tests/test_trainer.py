import numpy as np
import pytest

from oracles import exact_expectation
from zoomcascade import policy as pn
from zoomcascade import rng as rng_mod
from zoomcascade import trainer as tr
from zoomcascade.detectors import SimulatedDetectors
from zoomcascade.errors import TrainingError
from zoomcascade.reward import Hyperparams
from zoomcascade.scene import build_grid
from zoomcascade.synth import SynthConfig, generate
from zoomcascade.trainer import (Adam, Samples, TrainConfig, augment_batch, exact_expected_reward, grad_check,
                                 mc_check, mc_estimate, policy_value, prepare_samples, train, train_samples,
                                 train_step)

GRID = build_grid(2400, 600, 320, 40)


def toy_samples(n, P, side, rf, rc, objects, seed=0):
    x = rng_mod.stream(seed, "toy").random((n, side * side))
    full = lambda v: np.full((n, P), float(v))
    return Samples(x, full(rf), full(rc), full(objects), [(f"t{k}", None) for k in range(n)], int(np.sqrt(P)),
                   False)


def toy_config(**hyper):
    return TrainConfig(hyper=Hyperparams(**hyper), augment=False)


# ---- gradient and estimator checks -------------------------------------------------------------

@pytest.mark.parametrize("case", range(20))
@pytest.mark.parametrize("alpha", [1.0, 0.8])
def test_backward_matches_finite_differences(case, alpha):
    r = rng_mod.stream(case, "gc")
    dims = [int(r.integers(3, 9)), int(r.integers(2, 7)), int(r.integers(2, 6)), int(r.integers(1, 5))]
    model = pn.init_model(dims, seed=case)
    for b in model.biases:
        b[:] = r.normal(size=b.shape) * 0.5
    x = r.normal(size=dims[0])
    a = r.integers(0, 2, dims[-1])
    # central differences are meaningless across a ReLU kink; the seeds above keep clear of them
    _, cache = pn.forward(model, x)
    assert min(np.abs(p).min() for p in cache.pre) > 1e-3
    rep = grad_check(model, x, a, float(r.normal()) * 2, alpha)
    assert rep.n_checked == sum(p.size for p in model.parameters())
    assert rep.max_rel_error <= 1e-4


def test_grad_check_zero_scale_is_exact():
    assert grad_check(pn.init_model([5, 4, 2], 1), np.ones(5), [1, 0], 0.0).max_rel_error == 0.0


def test_grad_check_negative_control():
    rep = grad_check(pn.init_model([5, 4, 2], 1), np.ones(5), [1, 0], 1.0, corrupt=True)
    assert rep.max_rel_error > 1e-2


def test_exact_expectation_matches_enumeration_oracle():
    r = rng_mod.stream(0, "ee")
    for _ in range(20):
        P = int(r.integers(1, 7))
        s = r.uniform(0.05, 0.95, P)
        gains = r.normal(size=P)
        ref = exact_expectation(s.tolist(), lambda a: float(np.dot(a, gains)) + 0.5 * (1 - sum(a)) / P)
        assert exact_expected_reward(s, gains, 0.25, 0.25) == pytest.approx(ref, abs=1e-12)


def test_mc_deterministic_policy_has_no_gap():
    gains = np.array([1.0, -0.5, 0.2, 0.0])
    for n in (1, 100, 10_000):
        rep = mc_estimate(np.array([1.0, 0.0, 1.0, 0.0]), gains, 0.25, 0.25, n, rng_mod.stream(0, "d", n))
        # the 1e-7 probability floor leaves a sliver of mass on the other actions
        assert rep.gap == pytest.approx(0.0, abs=1e-6)


def test_mc_single_sample_gap_is_single_draw_error():
    s = np.full(4, 0.5)
    gains = np.array([1.0, -0.5, 0.2, 0.3])
    rep = mc_estimate(s, gains, 0.25, 0.25, 1, rng_mod.stream(7, "one"))
    a = pn.sample_actions(s.reshape(1, -1), rng_mod.stream(7, "one"))[0]
    r1 = float(np.dot(a, gains)) + 0.5 * (1 - a.sum()) / 4
    assert rep.gap == pytest.approx(abs(r1 - rep.exact), abs=1e-12)


def test_mc_uniform_policy_within_three_standard_errors():
    rep = mc_estimate(np.full(4, 0.5), np.array([1.0, -0.5, 0.2, 0.3]), 0.25, 0.25, 100_000,
                      rng_mod.stream(0, "u"))
    assert rep.gap <= 3 * rep.stderr


def test_mc_check_on_scene_and_p_limit():
    scene = generate(SynthConfig(seed=1, n_scenes=1))[0]
    cfg = TrainConfig(stage="fpnet")
    model = pn.policy_for_grid("fpnet", 16, 4, seed=0)
    rep = mc_check(model, scene, GRID, cfg, SimulatedDetectors(), 100_000, seed=0, patch=5)
    assert rep.gap <= 3 * rep.stderr
    with pytest.raises(ValueError):
        mc_check(pn.policy_for_grid("cpnet", 64, 16), scene, GRID, TrainConfig(), SimulatedDetectors(), 10)
    with pytest.raises(ValueError):
        exact_expected_reward(np.full(13, 0.5), np.zeros(13), 0.25, 0.25)


# ---- training dynamics -------------------------------------------------------------------------

def test_zero_advantage_leaves_parameters_unchanged():
    # a saturated policy with alpha = 1 always samples its greedy action, so A = 0 everywhere
    samples = toy_samples(8, 4, 4, 0.5, 0.5, 0)
    model = pn.zero_model([16, 4])
    model.biases[-1][:] = 40.0
    before = [p.copy() for p in model.parameters()]
    cfg = toy_config(alpha=1.0)
    rec = train_step(model, samples, cfg, rng_mod.stream(0, "z"), Adam(model, 1e-2))
    assert rec.mean_advantage == 0.0
    assert all(np.array_equal(a, b) for a, b in zip(before, model.parameters()))


def test_single_step_ascends_on_positive_advantage():
    model = pn.init_model([4, 3, 1], seed=3)
    x = np.ones(4)
    s0, cache = pn.forward(model, x)
    Adam(model, 1e-3).step(model, pn.backward(model, cache, [1], 1.3, 0.8))
    s1, _ = pn.forward(model, x)
    assert s1[0] >= s0[0]


def test_single_patch_toy_learns_to_zoom():
    # fine beats coarse by 0.5 recall on four objects; zooming is optimal
    samples = toy_samples(16, 1, 4, 0.9, 0.4, 4)
    model = pn.init_model([16, 8, 1], seed=0)
    cfg = toy_config(batch_size=16, epochs=500, learning_rate=1e-3)
    trained, _ = train_samples(model, samples, cfg, seed=0)
    s, _ = pn.forward(trained, samples.x)
    assert s.min() > 0.95


def test_empty_toy_learns_not_to_zoom():
    samples = toy_samples(16, 4, 4, 1.0, 1.0, 0)
    model = pn.init_model([16, 8, 4], seed=0)
    cfg = toy_config(batch_size=16, epochs=500, learning_rate=1e-3)
    trained, _ = train_samples(model, samples, cfg, seed=0)
    s, _ = pn.forward(trained, samples.x)
    assert s.max() < 0.05


def test_constant_reward_shift_leaves_updates_unchanged(monkeypatch):
    samples = toy_samples(8, 4, 4, 0.8, 0.3, 3)
    cfg = toy_config()
    m1 = pn.init_model([16, 6, 4], seed=1)
    m2 = m1.copy()
    train_step(m1, samples, cfg, rng_mod.stream(0, "c"), Adam(m1, 1e-3))
    orig = tr.rewards_from_gains
    monkeypatch.setattr(tr, "rewards_from_gains", lambda *a: orig(*a) + 123.0)
    train_step(m2, samples, cfg, rng_mod.stream(0, "c"), Adam(m2, 1e-3))
    for a, b in zip(m1.parameters(), m2.parameters()):
        np.testing.assert_allclose(a, b, atol=1e-15)


def test_nan_reward_raises_training_error_with_last_good_model():
    samples = toy_samples(8, 4, 4, 0.8, 0.3, 3)
    cfg = TrainConfig(hyper=Hyperparams(beta=float("nan"), epochs=2), augment=False)
    model = pn.init_model([16, 6, 4], seed=1)
    with pytest.raises(TrainingError) as info:
        train_samples(model, samples, cfg, seed=0)
    assert info.value.record is not None
    assert all(np.array_equal(a, b) for a, b in zip(info.value.model.parameters(), model.parameters()))


SCENES = generate(SynthConfig(seed=2, n_scenes=6))


@pytest.mark.parametrize("stage, dims", [("cpnet", [4096, 8, 16]), ("fpnet", [256, 8, 4])])
def test_zero_epochs_returns_initial_model(stage, dims):
    model = pn.init_model(dims, 0, stage)
    cfg = TrainConfig(hyper=Hyperparams(epochs=0), stage=stage)
    out, logs = train(model, SCENES, GRID, cfg, SimulatedDetectors(), seed=0)
    assert out.to_json() == model.to_json() and logs == []


def test_training_is_bit_reproducible():
    cfg = TrainConfig(hyper=Hyperparams(epochs=3, batch_size=4, learning_rate=1e-3))
    runs = [train(pn.init_model([4096, 8, 16], 0), SCENES, GRID, cfg, SimulatedDetectors(), seed=5)[0].to_json()
            for _ in range(2)]
    assert runs[0] == runs[1]


def test_train_rejects_empty_data_and_wrong_stage():
    with pytest.raises(ValueError):
        train(pn.init_model([4096, 4, 16]), [], GRID, TrainConfig(), SimulatedDetectors(), 0)
    with pytest.raises(ValueError):
        train(pn.init_model([4096, 4, 4]), SCENES, GRID, TrainConfig(), SimulatedDetectors(), 0)


def test_fpnet_samples_cover_every_patch():
    s = prepare_samples(SCENES, GRID, TrainConfig(stage="fpnet"), SimulatedDetectors())
    assert len(s) == len(SCENES) * 16
    assert s.x.shape[1] == 256 and s.recall_fine.shape[1] == 4


def test_augmentation_keeps_image_and_outcomes_aligned():
    # tag each patch with a distinct brightness equal to its object count, then check the pairing survives
    n, cell = 4, 16
    counts = np.arange(16, dtype=float)
    img = np.kron(counts.reshape(n, n), np.ones((cell, cell))) / 16.0
    samples = Samples(np.tile(img.ravel(), (32, 1)), np.zeros((32, 16)), np.zeros((32, 16)),
                      np.tile(counts, (32, 1)), [("s", None)] * 32, n, True)
    out = augment_batch(samples, rng_mod.stream(0, "aug"))
    seen = set()
    for k in range(32):
        x = out.x[k].reshape(64, 64)
        patch_values = x[::cell, ::cell].ravel() * 16.0
        np.testing.assert_allclose(patch_values, out.n_objects[k], atol=1e-12)
        seen.add(tuple(out.n_objects[k]))
    assert len(seen) > 1


def test_augmentation_without_rolls_for_overlapping_tiles():
    samples = Samples(np.arange(256, dtype=float)[None, :] / 256, np.arange(4.0)[None, :], np.zeros((1, 4)),
                      np.zeros((1, 4)), [("s", 0)], 2, False)
    for seed in range(10):
        out = augment_batch(samples, rng_mod.stream(seed, "a"))
        img = out.x[0].reshape(16, 16) * 256
        corners = [img[0, 0], img[0, 15], img[15, 0], img[15, 15]]
        # the four corner pixels are the four subpatch corners; outcomes must follow them
        orig = {0.0: 0, 15.0: 1, 240.0: 2, 255.0: 3}
        assert [orig[c] for c in corners] == out.recall_fine[0].tolist()


def test_policy_value_reports_random_baselines_linearly():
    samples = toy_samples(4, 4, 4, 0.9, 0.2, 2)
    rep = policy_value(pn.zero_model([16, 4]), samples, Hyperparams())
    assert rep.random_rewards[0.0] == pytest.approx(0.5 / 4)
    gain = (0.9 - 0.2 - 0.05) * 2
    assert rep.random_rewards[1.0] == pytest.approx(4 * gain + 0.5 * (1 - 4) / 4)
    assert rep.oracle_reward == pytest.approx(rep.random_rewards[1.0])
    # zero model: s = 0.5 -> greedy never zooms
    assert rep.policy_reward == pytest.approx(rep.random_rewards[0.0])
