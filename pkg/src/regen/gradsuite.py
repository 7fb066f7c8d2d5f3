"""Finite-difference verification suite for every differentiable operation.

Central differences against the reverse-mode gradients, over randomized
shapes and seeds. All constants are drawn before the function under test is
built (the numeric side re-evaluates it, so it must be a pure function of the
checked tensor), and structured-op checks read out through a fixed random
projection to avoid kinks at zero.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import Tensor


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _away_from_zero(rng, *shape, margin=0.3):
    x = _rand(rng, *shape)
    return x + np.sign(x) * margin


def op_checks(rng: np.random.Generator) -> dict[str, float]:
    """One randomized trial per op; returns op name -> max relative error."""
    results = {}
    n = int(rng.integers(6, 14))

    a_const = _rand(rng, n)
    results["add"] = ad.grad_check(lambda t: (t + Tensor(a_const)).sum(), Tensor(_rand(rng, n)))
    results["mul"] = ad.grad_check(lambda t: (t * Tensor(a_const)).sum(), Tensor(_rand(rng, n)))
    div_const = np.abs(a_const) + 1.0
    results["div"] = ad.grad_check(
        lambda t: (t / Tensor(div_const)).sum(), Tensor(_rand(rng, n)))
    results["sub"] = ad.grad_check(lambda t: (Tensor(a_const) - t).sum(), Tensor(_rand(rng, n)))
    results["pow"] = ad.grad_check(lambda t: (t ** 3).sum(), Tensor(_rand(rng, n)))
    results["sqrt"] = ad.grad_check(
        lambda t: ad.sqrt(t).sum(), Tensor(np.abs(_rand(rng, n)) + 0.5))
    results["log"] = ad.grad_check(
        lambda t: ad.log(t).sum(), Tensor(np.abs(_rand(rng, n)) + 0.5))
    results["exp"] = ad.grad_check(lambda t: ad.exp(t).sum(), Tensor(_rand(rng, n)))
    results["abs"] = ad.grad_check(
        lambda t: ad.tabs(t).sum(), Tensor(_away_from_zero(rng, n)))
    results["relu"] = ad.grad_check(
        lambda t: ad.relu(t).sum(), Tensor(_away_from_zero(rng, n, margin=0.2)))
    results["leaky_relu"] = ad.grad_check(
        lambda t: ad.leaky_relu(t, 0.2).sum(), Tensor(_away_from_zero(rng, n, margin=0.2)))
    results["tanh"] = ad.grad_check(lambda t: ad.tanh(t).sum(), Tensor(_rand(rng, n)))
    results["maximum_const"] = ad.grad_check(
        lambda t: ad.maximum_const(t, 0.1).sum(), Tensor(np.abs(_rand(rng, n)) + 0.3))
    results["mean"] = ad.grad_check(lambda t: t.mean(), Tensor(_rand(rng, 3, n)))
    results["sum_axis"] = ad.grad_check(
        lambda t: (t.sum(axis=0) * Tensor(a_const)).sum(), Tensor(_rand(rng, 4, n)))
    reshape_read = _rand(rng, 2 * n)
    results["reshape"] = ad.grad_check(
        lambda t: (t.reshape(2 * n) * Tensor(reshape_read)).sum(), Tensor(_rand(rng, 2, n)))
    bcast_const = _rand(rng, 4, 1)
    bcast_read = _rand(rng, 4, n)
    results["broadcast_mul"] = ad.grad_check(
        lambda t: (t * Tensor(bcast_const) * Tensor(bcast_read)).sum(),
        Tensor(_rand(rng, 1, n)))

    w2 = _rand(rng, 4, 5)
    mm_read = _rand(rng, 3, 5)
    results["matmul"] = ad.grad_check(
        lambda t: (ad.matmul(t, Tensor(w2)) * Tensor(mm_read)).sum(),
        Tensor(_rand(rng, 3, 4)))
    lin_x = _rand(rng, 3, 5)
    lin_b = _rand(rng, 4)
    lin_read = _rand(rng, 3, 4)
    results["linear"] = ad.grad_check(
        lambda t: (ad.linear(Tensor(lin_x), t, Tensor(lin_b)) * Tensor(lin_read)).sum(),
        Tensor(_rand(rng, 4, 5)))
    cl_read = _rand(rng, 2, 4, 7)
    results["channel_linear"] = ad.grad_check(
        lambda t: (ad.channel_linear(t, Tensor(w2)) * Tensor(cl_read)).sum(),
        Tensor(_rand(rng, 2, 5, 7)))

    kernel = _rand(rng, 3, 2, 3)
    stride = int(rng.integers(1, 3))
    dilation = int(rng.integers(1, 4))

    def _conv_read(f):
        probe = f(Tensor(np.zeros((2, 2, 16))))
        return _rand(rng, *probe.shape)

    fx = lambda t: ad.conv1d(t, Tensor(kernel), stride=stride, dilation=dilation,
                             pad=(dilation * 2, dilation * 2))
    rx = _conv_read(fx)
    results["conv1d_x"] = ad.grad_check(
        lambda t: (fx(t) * Tensor(rx)).sum(), Tensor(_rand(rng, 2, 2, 16)))

    x_fixed = _rand(rng, 2, 2, 16)
    pad = (int(rng.integers(0, 4)), int(rng.integers(0, 4)))
    fw = lambda t: ad.conv1d(Tensor(x_fixed), t, stride=stride, dilation=1, pad=pad)
    rw = _rand(rng, *fw(Tensor(kernel)).shape)
    results["conv1d_w"] = ad.grad_check(
        lambda t: (fw(t) * Tensor(rw)).sum(), Tensor(kernel))

    fb = lambda t: ad.conv1d(Tensor(x_fixed), Tensor(kernel), t, pad=(1, 1))
    rb = _rand(rng, *fb(Tensor(_rand(rng, 3))).shape)
    results["conv1d_b"] = ad.grad_check(
        lambda t: (fb(t) * Tensor(rb)).sum(), Tensor(_rand(rng, 3)))

    factor = int(rng.integers(2, 5))
    up_read = _rand(rng, 2, 3, 6 * factor)
    results["nearest_upsample1d"] = ad.grad_check(
        lambda t: (ad.nearest_upsample1d(t, factor) * Tensor(up_read)).sum(),
        Tensor(_rand(rng, 2, 3, 6)))
    results["stft_magnitude"] = ad.grad_check(
        lambda t: ad.stft_magnitude(t, 64, 16).sum(), Tensor(_rand(rng, 200)),
        max_coords=20, rng=rng)
    results["frobenius_norm"] = ad.grad_check(
        lambda t: ad.frobenius_norm(t), Tensor(_rand(rng, 5, 6)))
    results["l1_norm"] = ad.grad_check(
        lambda t: ad.l1_norm(t), Tensor(_away_from_zero(rng, 5, 6)))

    u_fixed = _rand(rng, 4)
    u_fixed /= np.linalg.norm(u_fixed)
    v_fixed = _rand(rng, 6)
    v_fixed /= np.linalg.norm(v_fixed)
    sn_read = _rand(rng, 4, 6)

    def sn_loss(t):
        state = ad.SpectralNormState(u_fixed.copy(), v_fixed.copy())
        return (ad.spectral_normalize(t, state, update=False) * Tensor(sn_read)).sum()

    results["spectral_normalize"] = ad.grad_check(sn_loss, Tensor(_rand(rng, 4, 6) + 2.0))

    bn_gamma = _rand(rng, 1, 3, 1)
    bn_read = _rand(rng, 2, 3, 8)

    def bn_like(t):
        mu = t.mean(axis=(0, 2), keepdims=True)
        c = t - mu
        var = (c * c).mean(axis=(0, 2), keepdims=True)
        xn = c / ad.sqrt(var + 1e-5)
        return (xn * Tensor(bn_gamma) * Tensor(bn_read)).sum()

    results["batch_norm"] = ad.grad_check(bn_like, Tensor(_rand(rng, 2, 3, 8)))
    return results


def loss_checks(rng: np.random.Generator) -> dict[str, float]:
    """Gradient checks through the full loss surface.

    Check points use an exactly scaled copy of the target so every
    log-magnitude difference sits at ln(2.5), uniformly away from the L1
    kink; near-null spectral cells grazed by the stencil are handled by
    grad_check's step refinement.
    """
    results = {}
    y = _rand(rng, 1024) * 0.5
    results["spec_loss_single"] = ad.grad_check(
        lambda t: losses.spec_loss_single(Tensor(y), t, 256),
        Tensor(2.5 * y), max_coords=8, rng=rng, skip_below=1e-4)
    y2 = _rand(rng, 2048) * 0.5
    results["spec_loss_multi"] = ad.grad_check(
        lambda t: losses.spec_loss_multi(Tensor(y2), t),
        Tensor(2.5 * y2), max_coords=4, rng=rng, skip_below=1e-4)
    results["sed_loss"] = ad.grad_check(
        lambda t: losses.sed_loss(Tensor(y2), t, Tensor(0.5 * y2)),
        Tensor(2.5 * y2), max_coords=4, rng=rng, skip_below=1e-4)
    d_real = _rand(rng, 8)
    results["lsgan"] = ad.grad_check(
        lambda t: losses.generator_objective(*losses.lsgan_losses(Tensor(d_real), t)),
        Tensor(_rand(rng, 8)))
    return results


def run_suite(seed: int = 0, trials: int = 20) -> dict[str, float]:
    """Worst error per check over `trials` seeded repetitions."""
    worst: dict[str, float] = {}
    for i in range(trials):
        rng = np.random.default_rng(seed + i)
        for part in (op_checks(rng), loss_checks(rng)):
            for name, err in part.items():
                worst[name] = max(worst.get(name, 0.0), err)
    return worst
