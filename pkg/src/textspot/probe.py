"""Isolated sanity harness for the adversarial alignment mechanism.

Trains only the word-embedding head (as generator) against the
discriminator on a frozen batch of random aligned features, with targets
drawn once from a fixed non-negative distribution (the head ends in a relu,
so negative targets would be unreachable by construction).  Used to check
that the two-player game settles near chance accuracy while the predicted
embedding mean moves toward the target mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward, sgd_step
from .model import DISC_PREFIX, ModelConfig, build_params, discriminator_forward, word_embedding_forward
from .rng import Xoshiro256

_TARGET_SEED = 0x7A26E7  # the target distribution is fixed across probe seeds


@dataclass(frozen=True)
class ProbeResult:
    d_accuracy: float
    init_distance: float
    final_distance: float
    steps: int


def _target_batch(n: int, dim: int) -> np.ndarray:
    stream = Xoshiro256(_TARGET_SEED)
    mu = stream.uniform_array((dim,), 0.3, 1.1)
    samples = np.empty((n, dim))
    for i in range(n):
        for k in range(dim):
            samples[i, k] = mu[k] + 0.15 * stream.gauss()
    return np.maximum(samples, 0.0)


def _mean_distance(pred: np.ndarray, targets: np.ndarray) -> float:
    return float(np.linalg.norm(pred.mean(axis=0) - targets.mean(axis=0)))


def _disc_accuracy(d_fake: np.ndarray, d_real: np.ndarray) -> float:
    n = d_fake.size + d_real.size
    return float((np.count_nonzero(d_fake < 0.5) + np.count_nonzero(d_real >= 0.5)) / n)


def run_probe(seed: int, steps: int = 3000, n_samples: int = 64, embed_dim: int = 16,
              lr_g: float = 0.05, lr_d: float = 0.01, g_steps: int = 1) -> ProbeResult:
    """Alternating updates on fixed inputs.

    The two-player game orbits its equilibrium under plain SGD, so the
    reported discriminator accuracy is the average over the last fifth of
    the run rather than a single noisy end-state estimate.  ``g_steps``
    generator updates follow each discriminator update.
    """
    cfg = ModelConfig(backbone_channels=8, head_channels=16, we_fc_hidden=32,
                      embed_dim=embed_dim, align_h=4, align_w=12)
    params = build_params(cfg, seed)
    gen = params.subset("wehead.")
    disc = params.subset(DISC_PREFIX)

    stream = Xoshiro256(seed ^ 0x5EED)
    aligned_np = stream.uniform_array((n_samples, cfg.backbone_channels, cfg.align_h, cfg.align_w),
                                      -1.0, 1.0)
    targets = _target_batch(n_samples, embed_dim)
    ones = np.ones(n_samples)
    zeros = np.zeros(n_samples)

    def predict() -> np.ndarray:
        return word_embedding_forward(params, Tensor(aligned_np), cfg).data

    init_dist = _mean_distance(predict(), targets)

    tail = max(1, steps // 5)
    acc_window = []
    for step in range(steps):
        tape = Tape()
        with tape:
            pred = word_embedding_forward(params, Tensor(aligned_np), cfg)
            d_fake = discriminator_forward(params, pred.detach())
            d_real = discriminator_forward(params, Tensor(targets))
            d_loss = ad.add(ad.binary_cross_entropy(d_fake, zeros),
                            ad.binary_cross_entropy(d_real, ones))
            if steps - step <= tail:
                acc_window.append(_disc_accuracy(d_fake.data, d_real.data))
            backward(d_loss, tape)
            sgd_step(disc, lr_d)
            for k in range(g_steps):
                cur = pred if k == 0 else word_embedding_forward(params, Tensor(aligned_np), cfg)
                g_loss = ad.binary_cross_entropy(discriminator_forward(params, cur), ones)
                backward(g_loss, tape)
                sgd_step(gen, lr_g)
            params.zero_grads()

    return ProbeResult(
        d_accuracy=float(np.mean(acc_window)),
        init_distance=init_dist,
        final_distance=_mean_distance(predict(), targets),
        steps=steps,
    )
