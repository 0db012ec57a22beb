"""Shared builders for tests."""
import numpy as np
import torch

from nidsgan.attack import Critic, Generator
from nidsgan.constraints import ConstraintProfile, ValidRanges


def random_profile(rng, n, attack_class="Attack1", keep=0.6):
    mask = (rng.random(n) < keep).astype(np.int8)
    b = rng.random((2, n))
    return ConstraintProfile(attack_class, mask, ValidRanges(b.min(axis=0), b.max(axis=0)))


def random_generator(n, seed, scale=1.0):
    torch.manual_seed(seed)
    g = Generator(n)
    with torch.no_grad():
        g.net[-1].weight.normal_(0, scale)
        g.net[-1].bias.normal_(0, scale)
    return g.eval()


def random_critic(n, seed, hidden=(16, 16)):
    torch.manual_seed(seed)
    return Critic(n, hidden)


def central_difference(f, x, h=1e-6):
    grad = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        grad[j] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


# acceptance verdict lines, echoed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def verdict(name: str, passed: bool, detail: str) -> str:
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    return line
