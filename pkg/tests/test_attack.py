import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import central_difference, random_critic, random_generator, random_profile
from nidsgan.attack import (
    AttackArtifacts,
    AttackConfig,
    Critic,
    Generator,
    adversarial_loss,
    critic_loss,
    generate_adversarial,
    gradient_penalty,
    input_gradients,
    interpolate,
    perturbation_loss,
    train_nidsgan,
)
from nidsgan.constraints import ConstraintProfile, ValidRanges, build_profile, unconstrained_profile, validate_flow
from nidsgan.nids import NotDifferentiableError, TrainingConfig, build_spec, linear_classifier, train_classical, train_classifier


class LinearCritic(torch.nn.Module):
    def __init__(self, w, b=0.0):
        super().__init__()
        self.w = torch.as_tensor(w, dtype=torch.float64)
        self.b = b

    def forward(self, x):
        return x @ self.w + self.b


class ConstantCritic(torch.nn.Module):
    def forward(self, x):
        return torch.zeros(len(x), dtype=x.dtype)


# -- hinge ------------------------------------------------------------------


def along_axis(norm, n=4):
    d = torch.zeros(1, n)
    d[0, 0] = norm
    return d


def test_hinge_cases():
    assert perturbation_loss(along_axis(0.2), 0.3).item() == 0
    assert perturbation_loss(along_axis(0.5), 0.3).item() == pytest.approx(0.2, abs=1e-15)
    assert perturbation_loss(torch.zeros(3, 4), 0.3).item() == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=1, max_size=10), st.floats(0.01, 1))
def test_hinge_zero_iff_inside_ball(norms, eps):
    delta = torch.cat([along_axis(v) for v in norms])
    assert (perturbation_loss(delta, eps).item() == 0) == all(v <= eps for v in norms)


# -- adversarial loss -------------------------------------------------------


def test_adversarial_loss_limits():
    sure = linear_classifier(np.zeros((2, 3)), np.array([200.0, 0.0]), ("Benign", "A"))
    assert adversarial_loss(sure, torch.zeros(4, 3), 0).item() == pytest.approx(0, abs=1e-12)
    even = linear_classifier(np.zeros((2, 3)), np.zeros(2), ("Benign", "A"))
    assert adversarial_loss(even, torch.zeros(4, 3), 0).item() == pytest.approx(math.log(2), abs=1e-12)


def test_adversarial_loss_matches_hand_cross_entropy(rng):
    W, b = rng.normal(size=(3, 5)), rng.normal(size=3)
    clf = linear_classifier(W, b, ("Benign", "A", "B"))
    X = rng.random((10, 5))
    hand = []
    for x in X:
        z = W @ x + b
        hand.append(-(z[0] - math.log(sum(math.exp(v) for v in z))))
    got = adversarial_loss(clf, torch.from_numpy(X), 0).item()
    assert abs(got - sum(hand) / 10) <= 1e-9


def test_adversarial_loss_rejects_classical(blobs):
    tr, _ = blobs
    with pytest.raises(NotDifferentiableError):
        adversarial_loss(train_classical("knn", tr), torch.zeros(1, tr.schema.n_encoded), 0)


# -- gradient penalty -------------------------------------------------------


def test_penalty_unit_linear_and_constant():
    w = np.array([0.6, 0.8, 0.0])
    x = torch.rand(5, 3)
    assert gradient_penalty(LinearCritic(w), x, 10.0).item() == pytest.approx(0, abs=1e-12)
    assert gradient_penalty(ConstantCritic(), x, 10.0).item() == 10.0


def test_input_gradients_match_finite_differences(rng):
    critic = random_critic(6, seed=0)
    f = lambda v: critic(torch.from_numpy(v[None])).item()  # noqa: E731
    for _ in range(20):
        x = rng.random(6)
        auto = input_gradients(critic, torch.from_numpy(x[None]))[0].numpy()
        num = central_difference(f, x)
        assert np.linalg.norm(auto - num) <= 1e-4 * max(np.linalg.norm(num), 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_penalty_nonnegative(seed):
    critic = random_critic(4, seed)
    x = torch.rand(8, 4, generator=torch.Generator().manual_seed(seed))
    assert gradient_penalty(critic, x, 10.0).item() >= 0


def test_interpolates_lie_between_endpoints():
    x, xs = torch.zeros(50, 3), torch.ones(50, 3)
    h = interpolate(x, xs, torch.Generator().manual_seed(0))
    assert torch.all((h >= 0) & (h <= 1))
    assert torch.all(h[:, 0:1] == h)  # one sigma per sample


# -- critic loss ------------------------------------------------------------


def test_critic_loss_trivial_cases():
    x = torch.rand(5, 3)
    assert critic_loss(ConstantCritic(), x, x, x, 10.0).item() == 10.0
    lin = LinearCritic([0.0, 1.0, 0.0])
    assert critic_loss(lin, x, x.clone(), x, 10.0).item() == pytest.approx(0, abs=1e-12)


def test_critic_loss_hand_computation(rng):
    w, b = rng.normal(size=4), 0.3
    lin = LinearCritic(w, b)
    X, Xs, Xh = rng.random((5, 4)), rng.random((5, 4)), rng.random((5, 4))
    lam = 10.0
    real = sum(float(w @ x + b) for x in X) / 5
    fake = sum(float(w @ x + b) for x in Xs) / 5
    pen = lam * (math.sqrt(sum(v * v for v in w)) - 1) ** 2
    got = critic_loss(lin, *(torch.from_numpy(a) for a in (X, Xs, Xh)), lam).item()
    assert abs(got - (real - fake + pen)) <= 1e-9


def test_original_gan_critic_loss_is_log_loss(rng):
    lin = LinearCritic(rng.normal(size=3))
    X, Xs = torch.from_numpy(rng.random((6, 3))), torch.from_numpy(rng.random((6, 3)))
    sig = torch.sigmoid
    hand = -(torch.log(sig(lin(X))).mean() + torch.log(1 - sig(lin(Xs))).mean())
    assert critic_loss(lin, X, Xs, None, 10.0, "original-gan").item() == pytest.approx(hand.item(), abs=1e-12)


# -- generation -------------------------------------------------------------


def test_zero_mask_leaves_flows_unchanged(rng):
    n = 6
    X = rng.random((20, n))
    prof = ConstraintProfile("Attack1", np.zeros(n, np.int8), ValidRanges(X.min(axis=0), X.max(axis=0)))
    np.testing.assert_array_equal(generate_adversarial(random_generator(n, 1), X, prof), X)


def test_untrained_generator_is_identity(rng):
    prof = random_profile(rng, 6)
    X = rng.random((10, 6))
    np.testing.assert_array_equal(generate_adversarial(Generator(6), X, prof), X)


def test_generated_flows_always_comply(rng):
    n = 9
    prof = random_profile(rng, n)
    gen = random_generator(n, seed=5, scale=2.0)
    X = rng.random((1000, n))
    for eps in (None, 0.3):
        X_star = generate_adversarial(gen, X, prof, eps)
        assert all(validate_flow(x, xs, prof).passed for x, xs in zip(X, X_star))
        frozen = prof.mask == 0
        assert np.array_equal(X_star[:, frozen], X[:, frozen])
        if eps is not None:
            assert np.all(np.linalg.norm(X_star - X, axis=1) <= eps + 1e-12)


def test_width_mismatch(rng):
    from nidsgan.constraints import ConstraintError

    with pytest.raises(ConstraintError):
        generate_adversarial(Generator(5), rng.random((2, 6)), random_profile(rng, 6))


# -- training ---------------------------------------------------------------


def test_defaults():
    c = AttackConfig()
    assert (c.alpha, c.beta, c.epsilon, c.lambda_gp) == (0.1, 0.2, 0.3, 10.0)
    assert (c.learning_rate, c.beta1, c.beta2, c.epochs) == (1e-3, 0.5, 0.9, 800)
    assert c.gan_variant == "wgan-gp" and c.critic_steps == 1
    with pytest.raises(ValueError):
        AttackConfig(alpha=0)
    with pytest.raises(ValueError):
        AttackConfig(gan_variant="vae")


@pytest.fixture(scope="module")
def target(blobs):
    tr, te = blobs
    model = train_classifier(build_spec("custom-mlp", tr.schema, [16, 8]), tr, TrainingConfig(epochs=10), test=te)
    assert model.metrics_on_test.accuracy > 0.9
    return model


def test_zero_mask_profile_gives_baseline_rate(blobs, target):
    tr, _ = blobs
    rows = tr.of_class("Attack1")
    prof = ConstraintProfile("Attack1", np.zeros(tr.schema.n_encoded, np.int8),
                             ValidRanges(rows.X.min(axis=0), rows.X.max(axis=0)))
    art = train_nidsgan(AttackConfig(epochs=3, early_stop_rate=None), rows, target, prof)
    baseline = np.mean(target.predict_labels(rows.X) == tr.benign_index)
    assert art.trace[-1]["evasion_rate"] == baseline
    np.testing.assert_array_equal(art.generate(rows.X), rows.X)


def test_training_is_reproducible_and_compliant(blobs, target, tmp_path):
    tr, te = blobs
    prof = build_profile(tr.schema, tr, "Attack1")
    cfg = AttackConfig(epochs=4, early_stop_rate=None, seed=3)
    a = train_nidsgan(cfg, tr.of_class("Attack1"), target, prof)
    b = train_nidsgan(cfg, tr.of_class("Attack1"), target, prof)
    assert a.trace == b.trace and len(a.trace) == 4
    X = te.of_class("Attack1").X
    X_star = a.generate(X)
    assert all(validate_flow(x, xs, prof).passed for x, xs in zip(X, X_star))
    a.save(tmp_path / "art")
    back = AttackArtifacts.load(tmp_path / "art")
    np.testing.assert_array_equal(back.generate(X), X_star)
    assert back.trace == a.trace


def test_early_stop_ends_training(blobs, target):
    tr, _ = blobs
    prof = unconstrained_profile(tr.schema.n_encoded, "Attack1")
    art = train_nidsgan(AttackConfig(epochs=50, epsilon=3.0, early_stop_rate=0.5, seed=0), tr.of_class("Attack1"), target, prof)
    assert art.stopped_early and len(art.trace) < 50


def test_training_rejects_bad_inputs(blobs, target):
    tr, _ = blobs
    prof = build_profile(tr.schema, tr, "Attack1")
    with pytest.raises(ValueError):
        train_nidsgan(AttackConfig(epochs=1), tr.of_class("Benign"), target, prof)
    with pytest.raises(ValueError):
        train_nidsgan(AttackConfig(epochs=1), np.zeros((0, tr.schema.n_encoded)), target, prof)


def test_original_gan_variant_trains(blobs, target):
    tr, _ = blobs
    prof = build_profile(tr.schema, tr, "Attack1")
    art = train_nidsgan(AttackConfig(epochs=2, early_stop_rate=None, gan_variant="original-gan"),
                        tr.of_class("Attack1"), target, prof)
    assert all(np.isfinite(r["generator_loss"]) for r in art.trace)
