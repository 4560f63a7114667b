"""Training objectives.

Both objectives are minimized negations of the evidence-style bound: a
classification term, an optional reconstruction term, and a beta-weighted KL
between the diagonal-Gaussian posterior and the standard-normal prior. The
Monte Carlo expectation over the latent uses explicit noise arrays so the
analytic gradients can be checked against finite differences exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import (
    ContractError,
    EmptyBatchError,
    LabelRangeError,
    NumericsError,
    ShapeError,
    VariantError,
)
from .model import LatentPosterior, VnnModel, encoder_heads, _as_batch

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LossConfig:
    beta: float = 1.0
    mc_samples: int = 1
    reconstruction: str = "bernoulli"

    def __post_init__(self):
        if self.beta < 0:
            raise ContractError(f"beta must be >= 0, got {self.beta}")
        if self.mc_samples < 1:
            raise ContractError(f"mc_samples must be >= 1, got {self.mc_samples}")
        if self.reconstruction not in ("bernoulli", "gaussian"):
            raise ContractError(f"unknown reconstruction {self.reconstruction!r}")


def reparameterize(posterior: LatentPosterior, noise: np.ndarray) -> np.ndarray:
    """z = mean + exp(0.5 * log_variance) * noise."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != posterior.mean.shape:
        raise ShapeError(
            f"noise shape {noise.shape} != posterior shape {posterior.mean.shape}"
        )
    return posterior.mean + np.exp(0.5 * posterior.log_variance) * noise


def kl_term(posterior: LatentPosterior):
    """KL(q || N(0, I)) summed over latent dimensions.

    Returns a scalar for a single posterior, a vector for a batched one.
    """
    mu, lv = posterior.mean, posterior.log_variance
    if not (np.isfinite(mu).all() and np.isfinite(lv).all()):
        raise NumericsError("non-finite posterior")
    per_dim = 0.5 * (mu * mu + np.exp(lv) - 1.0 - lv)
    total = per_dim.sum(axis=-1)
    return float(total) if total.ndim == 0 else total


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    s = logits - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def loss_forward_backward(
    model: VnnModel,
    x: np.ndarray,
    y: np.ndarray,
    config: LossConfig,
    eps: np.ndarray,
    with_reconstruction: bool,
    want_grads: bool = True,
):
    """Full forward pass and, optionally, analytic parameter gradients.

    ``eps`` is the explicit reparameterization noise, shape
    [mc_samples, N, z_dim]. Returns (components, grads-or-None).
    """
    p = model.params
    n = x.shape[0]
    s = eps.shape[0]
    xb, _ = _as_batch(model, x)
    h, enc_caches = model.encoder.forward(xb, p)
    mu, lv, mask = encoder_heads(model, h)
    if eps.shape != (s, n, model.z_dim):
        raise ShapeError(f"noise shape {eps.shape} != ({s}, {n}, {model.z_dim})")

    std = np.exp(0.5 * lv)
    z = mu[None, :, :] + std[None, :, :] * eps  # [S, N, z]
    zf = z.reshape(s * n, model.z_dim)
    logits = zf @ p["cls.w"] + p["cls.b"]
    logp = _log_softmax(logits)
    y_tiled = np.tile(y, s)
    ce = float(-logp[np.arange(s * n), y_tiled].mean())

    kl_per = 0.5 * (mu * mu + np.exp(lv) - 1.0 - lv).sum(axis=1)
    kl = float(kl_per.mean())

    rec = 0.0
    dec_out = dec_caches = None
    if with_reconstruction:
        x_tiled = np.tile(x, (s, 1))
        dec_out, dec_caches = model.decoder.forward(zf, p)
        if config.reconstruction == "bernoulli":
            rec_per = (np.logaddexp(0.0, dec_out) - x_tiled * dec_out).sum(axis=1)
        else:
            rec_per = (0.5 * (x_tiled - dec_out) ** 2 + HALF_LOG_2PI).sum(axis=1)
        rec = float(rec_per.mean())

    total = ce + config.beta * kl + rec
    if not np.isfinite(total):
        raise NumericsError("non-finite loss")
    components = {"total": total, "classification": ce, "kl": kl}
    if with_reconstruction:
        components["reconstruction"] = rec
    if not want_grads:
        return components, None

    grads = {}
    inv = 1.0 / (s * n)
    probs = np.exp(logp)
    glogits = probs * inv
    glogits[np.arange(s * n), y_tiled] -= inv
    grads["cls.w"] = zf.T @ glogits
    grads["cls.b"] = glogits.sum(axis=0)
    gzf = glogits @ p["cls.w"].T

    if with_reconstruction:
        if config.reconstruction == "bernoulli":
            ga = (1.0 / (1.0 + np.exp(-dec_out)) - x_tiled) * inv
        else:
            ga = (dec_out - x_tiled) * inv
        gz_dec, dec_grads = model.decoder.backward(ga, p, dec_caches)
        gzf = gzf + gz_dec
        grads.update(dec_grads)

    gz = gzf.reshape(s, n, model.z_dim)
    gmu = gz.sum(axis=0)
    glv = (gz * eps).sum(axis=0) * 0.5 * std
    gmu = gmu + config.beta * mu / n
    glv = glv + config.beta * 0.5 * (np.exp(lv) - 1.0) / n
    glv = glv * mask  # clamped entries pass no gradient

    grads["mu.w"] = h.T @ gmu
    grads["mu.b"] = gmu.sum(axis=0)
    grads["lv.w"] = h.T @ glv
    grads["lv.b"] = glv.sum(axis=0)
    gh = gmu @ p["mu.w"].T + glv @ p["lv.w"].T
    _, enc_grads = model.encoder.backward(gh, p, enc_caches, need_input_grad=False)
    grads.update(enc_grads)
    return components, grads


def _check_batch(model, batch):
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyBatchError("loss needs a non-empty [N, d] batch")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"labels shape {y.shape} != ({x.shape[0]},)")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise LabelRangeError(f"labels must lie in [0, {model.num_classes})")
    return x, y


def _draw_noise(model, n, config, rng):
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return rng.standard_normal((config.mc_samples, n, model.z_dim))


def m1_loss(model: VnnModel, batch, config: LossConfig, rng):
    """Classification + beta KL, no reconstruction. Works on either variant."""
    x, y = _check_batch(model, batch)
    eps = _draw_noise(model, x.shape[0], config, rng)
    components, _ = loss_forward_backward(
        model, x, y, config, eps, with_reconstruction=False, want_grads=False
    )
    return components["total"], components


def m2_loss(model: VnnModel, batch, config: LossConfig, rng):
    """Reconstruction + classification + beta KL. Requires the m2 variant."""
    if model.variant != "m2":
        raise VariantError("m2_loss needs an m2 model (no decoder present)")
    x, y = _check_batch(model, batch)
    if config.reconstruction == "bernoulli" and (x.min() < 0.0 or x.max() > 1.0):
        raise ContractError("bernoulli reconstruction needs features in [0, 1]")
    eps = _draw_noise(model, x.shape[0], config, rng)
    components, _ = loss_forward_backward(
        model, x, y, config, eps, with_reconstruction=True, want_grads=False
    )
    return components["total"], components
