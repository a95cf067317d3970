"""Synthetic trial generators for desk-scale experiments.

Two-class Gaussian time series whose spatial covariance differs between
classes.  Class structure can be confined to a planted channel subset,
leaving the remaining channels identically distributed in both classes,
which makes the correct channel subset recoverable by exhaustive search.
"""

from __future__ import annotations

import numpy as np

from .eeg_io import RawTrialSet
from .spd import airm_distance


def two_class_covariances(
    n_channels: int,
    planted: list[int] | None = None,
    separation: float = 2.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Two SPD spatial covariances with AIRM distance >= ``separation``.

    Class differences live entirely on ``planted`` channels (all channels
    when None): planted variances are scaled by exp(+-a) and the planted
    block receives class-dependent correlations.  ``a`` is grown until
    the separation target is met.
    """
    rng = rng or np.random.default_rng(0)
    if planted is None:
        planted = list(range(n_channels))
    planted = sorted(planted)
    p = len(planted)
    if p < 1:
        raise ValueError("need at least one planted channel")

    # class-dependent rotations of the planted block, fixed by the rng
    q0, _ = np.linalg.qr(rng.standard_normal((p, p)))
    q1, _ = np.linalg.qr(rng.standard_normal((p, p)))
    a = separation / (2.0 * np.sqrt(p))
    for _ in range(60):
        d0 = np.exp(a * np.linspace(1.0, -1.0, p))
        d1 = np.exp(a * np.linspace(-1.0, 1.0, p))
        block0 = q0 @ np.diag(d0) @ q0.T
        block1 = q1 @ np.diag(d1) @ q1.T
        cov0 = np.eye(n_channels)
        cov1 = np.eye(n_channels)
        cov0[np.ix_(planted, planted)] = block0
        cov1[np.ix_(planted, planted)] = block1
        if airm_distance(cov0, cov1) >= separation:
            return cov0, cov1
        a *= 1.25
    raise RuntimeError("could not reach the requested separation")


def synthetic_trials(
    covariances: tuple[np.ndarray, np.ndarray],
    trials_per_class: int,
    samples_per_trial: int,
    sample_rate_hz: float,
    noise_scale: float = 0.1,
    rng: np.random.Generator | None = None,
) -> RawTrialSet:
    """Gaussian trials with class-specific spatial covariance plus
    additive white noise, classes interleaved."""
    rng = rng or np.random.default_rng(0)
    chols = [np.linalg.cholesky(c) for c in covariances]
    n_channels = covariances[0].shape[0]
    trials = []
    for i in range(trials_per_class):
        for label in range(len(covariances)):
            base = chols[label] @ rng.standard_normal((n_channels, samples_per_trial))
            noise = noise_scale * rng.standard_normal((n_channels, samples_per_trial))
            trials.append((label, base + noise))
        del i
    return RawTrialSet(
        sample_rate_hz=sample_rate_hz,
        channels=n_channels,
        samples_per_trial=samples_per_trial,
        trials=trials,
    )


def generate_from_spec(items: dict[str, str]) -> RawTrialSet:
    """Build a synthetic trial set from a flat key=value spec.

    Keys: seed, channels, samples_per_trial, sample_rate, trials_per_class,
    separation, noise, planted (comma-separated indices, optional).
    """
    rng = np.random.default_rng(int(items.get("seed", "0")))
    planted = None
    if items.get("planted", "").strip():
        planted = [int(tok) for tok in items["planted"].split(",")]
    covs = two_class_covariances(
        n_channels=int(items["channels"]),
        planted=planted,
        separation=float(items.get("separation", "2.0")),
        rng=rng,
    )
    return synthetic_trials(
        covs,
        trials_per_class=int(items["trials_per_class"]),
        samples_per_trial=int(items["samples_per_trial"]),
        sample_rate_hz=float(items.get("sample_rate", "250")),
        noise_scale=float(items.get("noise", "0.1")),
        rng=rng,
    )
