"""Splat training: fixed-step gradient descent with a holdout guard.

Views are visited round-robin, one gradient step per visit, which
keeps every run deterministic. Scales are optimized in log space and
opacities as logits so their range invariants cannot be violated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigInvalid, DivergenceDetected
from .cloud import GaussianCloud
from .gradients import LAMBDA_SSIM, loss_and_gradients
from .metrics import psnr, ssim
from .rasterize import View, render

log = logging.getLogger(__name__)

LEARNING_RATES = {
    "mu": 1e-4,
    "log_scales": 5e-3,
    "quats": 1e-3,
    "colors": 2e-3,
    "alpha_logits": 5e-2,
}
HOLDOUT_TOLERANCE = 1.10   # stop when holdout loss exceeds 1.1x its minimum
DIVERGENCE_FACTOR = 2.0
DIVERGENCE_RUN = 50
LOGIT_CLAMP = 12.0
LOG_SCALE_RANGE = (-18.0, 5.0)


@dataclass
class OptimizeResult:
    cloud: GaussianCloud
    iterations: int
    stopped_early: bool
    train_trace: list = field(default_factory=list)
    holdout_trace: list = field(default_factory=list)  # (iteration, loss)


def _mean_loss(cloud: GaussianCloud, views: list, lam: float) -> float:
    return float(
        np.mean([loss_and_gradients(cloud, v, lam)[0] for v in views])
    )


def _snapshot(cloud, log_scales, alpha_logits):
    return (
        cloud.mu.copy(), log_scales.copy(), cloud.quats.copy(),
        cloud.colors.copy(), alpha_logits.copy(),
    )


def optimize(
    cloud: GaussianCloud,
    views: list,
    iters: int,
    lrs: dict = None,
    lam: float = LAMBDA_SSIM,
    eval_every: int = 10,
) -> OptimizeResult:
    """Fit the cloud to its views; the last view is held out.

    Returns the parameter state with the lowest holdout loss seen, so
    the guard (holdout loss within 10% of its minimum) holds for the
    returned cloud by construction. Raises DivergenceDetected when the
    training loss stays above twice its initial value for 50
    consecutive iterations.
    """
    if len(views) < 2:
        raise ConfigInvalid(f"{len(views)} views < 2 (one must be held out)")
    for view in views:
        if view.image is None:
            raise ConfigInvalid("every view needs a target image")
    rates = dict(LEARNING_RATES)
    if lrs:
        rates.update(lrs)

    cloud = cloud.copy()
    train, holdout = views[:-1], views[-1]
    log_scales = np.log(cloud.scales)
    alpha_logits = np.log(cloud.alphas) - np.log1p(-cloud.alphas)

    initial = _mean_loss(cloud, train, lam)
    result = OptimizeResult(cloud=cloud, iterations=0, stopped_early=False)
    best_holdout = loss_and_gradients(cloud, holdout, lam)[0]
    best_state = _snapshot(cloud, log_scales, alpha_logits)
    result.holdout_trace.append((0, best_holdout))

    bad_run = 0
    for it in range(iters):
        view = train[it % len(train)]
        loss, grads = loss_and_gradients(cloud, view, lam)
        result.train_trace.append(loss)

        bad_run = bad_run + 1 if loss > DIVERGENCE_FACTOR * initial else 0
        if bad_run >= DIVERGENCE_RUN:
            raise DivergenceDetected(
                f"training loss {loss:.4g} above {DIVERGENCE_FACTOR}x initial "
                f"{initial:.4g} for {bad_run} iterations"
            )

        cloud.mu -= rates["mu"] * grads["mu"]
        log_scales -= rates["log_scales"] * grads["log_scales"]
        cloud.quats -= rates["quats"] * grads["quats"]
        cloud.colors -= rates["colors"] * grads["colors"]
        alpha_logits -= rates["alpha_logits"] * grads["alpha_logits"]

        np.clip(log_scales, *LOG_SCALE_RANGE, out=log_scales)
        np.clip(alpha_logits, -LOGIT_CLAMP, LOGIT_CLAMP, out=alpha_logits)
        np.clip(cloud.colors, 0.0, 1.0, out=cloud.colors)
        cloud.quats /= np.linalg.norm(cloud.quats, axis=1, keepdims=True)
        cloud.scales = np.exp(log_scales)
        cloud.alphas = 1.0 / (1.0 + np.exp(-alpha_logits))
        result.iterations = it + 1

        if (it + 1) % eval_every == 0 or it + 1 == iters:
            h_loss = loss_and_gradients(cloud, holdout, lam)[0]
            result.holdout_trace.append((it + 1, h_loss))
            if h_loss < best_holdout:
                best_holdout = h_loss
                best_state = _snapshot(cloud, log_scales, alpha_logits)
            elif h_loss > HOLDOUT_TOLERANCE * best_holdout:
                log.info(
                    "holdout loss %.4g exceeded %.4g, stopping at iteration %d",
                    h_loss, HOLDOUT_TOLERANCE * best_holdout, it + 1,
                )
                result.stopped_early = True
                break

    cloud.mu, log_scales, cloud.quats, cloud.colors, alpha_logits = best_state
    cloud.scales = np.exp(log_scales)
    cloud.alphas = 1.0 / (1.0 + np.exp(-alpha_logits))
    return result


def view_metrics(cloud: GaussianCloud, views: list) -> list:
    """Per-view PSNR/SSIM rows against each view's captured image."""
    rows = []
    for i, view in enumerate(views):
        target = render(cloud, view.pose, view.camera)
        rows.append({
            "view": i,
            "psnr": psnr(target.color, view.image),
            "ssim": ssim(target.color, view.image),
        })
    return rows
