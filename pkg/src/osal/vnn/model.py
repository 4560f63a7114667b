"""Model assembly, deterministic forward passes, and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ShapeError, VariantError
from . import net

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
DEFAULT_Z_DIM = 60


@dataclass(frozen=True)
class LatentPosterior:
    """Diagonal Gaussian over the latent vector: mean and log-variance."""

    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise ShapeError(
                f"mean shape {self.mean.shape} != log_variance shape "
                f"{self.log_variance.shape}"
            )

    @property
    def z_dim(self) -> int:
        return self.mean.shape[-1]


@dataclass
class VnnModel:
    variant: str  # "m1" or "m2"
    z_dim: int
    num_classes: int
    feature_shape: tuple[int, ...]
    encoder: net.Sequential
    decoder: net.Sequential | None
    params: dict[str, np.ndarray]
    param_order: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.variant not in ("m1", "m2"):
            raise VariantError(f"unknown variant {self.variant!r}")
        if self.variant == "m1" and self.decoder is not None:
            raise VariantError("m1 carries no decoder parameters")
        if self.variant == "m2" and self.decoder is None:
            raise VariantError("m2 requires a decoder")
        if not self.param_order:
            self.param_order = list(self.params)

    @property
    def dim(self) -> int:
        return int(np.prod(self.feature_shape))


def build_model(
    variant: str,
    feature_shape: tuple[int, ...],
    num_classes: int,
    z_dim: int = DEFAULT_Z_DIM,
    rng: np.random.Generator | int | None = None,
    encoder_preset: str | None = None,
    hidden: int | None = None,
    reconstruction_hidden: int = 64,
) -> VnnModel:
    """Construct and initialize a model for the given data shape.

    Image-shaped data (C, H, W) gets the small conv encoder; flat vectors get
    the two-layer dense encoder. ``encoder_preset`` may name ``"vgg16"`` for
    the full-scale stack (never used by the desk-scale experiments).
    """
    feature_shape = tuple(int(s) for s in feature_shape)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if encoder_preset == "vgg16":
        if len(feature_shape) != 3:
            raise ShapeError("vgg16 preset needs image-shaped data")
        arch = net.vgg16_encoder_arch(*feature_shape)
    elif len(feature_shape) == 3:
        arch = net.lenet_encoder_arch(*feature_shape, fc=hidden or 84)
    elif len(feature_shape) == 1:
        arch = net.dense_encoder_arch(feature_shape[0], hidden=hidden or 32)
    else:
        raise ShapeError(f"unsupported feature shape {feature_shape}")
    encoder = net.Sequential(arch, feature_shape)
    enc_out = encoder.output_shape[0]

    params = encoder.init_params(rng)

    def glorot(fi, fo):
        return rng.normal(0.0, np.sqrt(2.0 / (fi + fo)), size=(fi, fo))
    params["mu.w"] = glorot(enc_out, z_dim)
    params["mu.b"] = np.zeros(z_dim)
    params["lv.w"] = glorot(enc_out, z_dim)
    params["lv.b"] = np.zeros(z_dim)
    params["cls.w"] = glorot(z_dim, num_classes)
    params["cls.b"] = np.zeros(num_classes)

    decoder = None
    if variant == "m2":
        dim = int(np.prod(feature_shape))
        decoder = net.Sequential(
            net.dense_decoder_arch(z_dim, dim, hidden=reconstruction_hidden), (z_dim,)
        )
        params.update(decoder.init_params(rng))

    return VnnModel(
        variant=variant,
        z_dim=z_dim,
        num_classes=num_classes,
        feature_shape=feature_shape,
        encoder=encoder,
        decoder=decoder,
        params=params,
        param_order=list(params),
    )


def _as_batch(model: VnnModel, x: np.ndarray):
    """Flat features to the encoder's input layout; remembers batchness."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ShapeError(f"expected features of dimension {model.dim}, got {x.shape}")
    if len(model.feature_shape) == 3:
        x = x.reshape(x.shape[0], *model.feature_shape)
    return x, single


def encoder_heads(model: VnnModel, h: np.ndarray):
    """Posterior parameters from encoder output, with the clamp mask."""
    p = model.params
    mu = h @ p["mu.w"] + p["mu.b"]
    lv_raw = h @ p["lv.w"] + p["lv.b"]
    lv = np.clip(lv_raw, LOGVAR_MIN, LOGVAR_MAX)
    mask = (lv_raw > LOGVAR_MIN) & (lv_raw < LOGVAR_MAX)
    return mu, lv, mask


ENCODE_CHUNK = 512  # bounds the im2col working set on large pools


def encode(model: VnnModel, x: np.ndarray) -> LatentPosterior:
    """Posterior q(z|x). Accepts one flat vector or a [N, d] batch."""
    xb, single = _as_batch(model, x)
    mus, lvs = [], []
    for start in range(0, xb.shape[0], ENCODE_CHUNK):
        h, _ = model.encoder.forward(xb[start : start + ENCODE_CHUNK], model.params)
        mu, lv, _ = encoder_heads(model, h)
        mus.append(mu)
        lvs.append(lv)
    mu, lv = np.concatenate(mus), np.concatenate(lvs)
    if single:
        mu, lv = mu[0], lv[0]
    return LatentPosterior(mean=mu, log_variance=lv)


def classify(model: VnnModel, z: np.ndarray) -> np.ndarray:
    """Softmax class probabilities from a latent vector or [N, z] batch."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if z.shape[1] != model.z_dim:
        raise ShapeError(f"expected latent dimension {model.z_dim}, got {z.shape}")
    logits = z @ model.params["cls.w"] + model.params["cls.b"]
    probs = softmax(logits)
    return probs[0] if single else probs


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def decode(model: VnnModel, z: np.ndarray) -> np.ndarray:
    """Decoder output (logits for bernoulli, means for gaussian)."""
    if model.decoder is None:
        raise VariantError("m1 model has no decoder")
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    out, _ = model.decoder.forward(z, model.params)
    return out[0] if single else out


def predict_proba(model: VnnModel, x: np.ndarray) -> np.ndarray:
    """Deterministic class probabilities: classify the posterior mean."""
    return classify(model, encode(model, x).mean)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_model(model: VnnModel, prefix, rng_state: dict | None = None):
    """Write ``<prefix>.json`` (manifest) and ``<prefix>.bin`` (flat float32)."""
    prefix = Path(prefix)
    manifest = {
        "variant": model.variant,
        "z_dim": model.z_dim,
        "num_classes": model.num_classes,
        "feature_shape": list(model.feature_shape),
        "encoder_arch": model.encoder.arch,
        "decoder_arch": model.decoder.arch if model.decoder else None,
        "param_order": model.param_order,
        "param_shapes": {k: list(model.params[k].shape) for k in model.param_order},
        "rng_state": rng_state,
    }
    prefix.with_suffix(".json").write_text(json.dumps(manifest, sort_keys=True))
    flat = np.concatenate(
        [model.params[k].ravel() for k in model.param_order]
    ).astype("<f4")
    prefix.with_suffix(".bin").write_bytes(flat.tobytes())


def load_model(prefix) -> tuple[VnnModel, dict | None]:
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    feature_shape = tuple(manifest["feature_shape"])
    encoder = net.Sequential(manifest["encoder_arch"], feature_shape)
    decoder = None
    if manifest["decoder_arch"] is not None:
        decoder = net.Sequential(manifest["decoder_arch"], (manifest["z_dim"],))
    flat = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f4").astype(
        np.float64
    )
    params = {}
    offset = 0
    for name in manifest["param_order"]:
        shape = tuple(manifest["param_shapes"][name])
        size = int(np.prod(shape))
        params[name] = flat[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != flat.size:
        raise ShapeError(
            f"checkpoint holds {flat.size} values, manifest declares {offset}"
        )
    model = VnnModel(
        variant=manifest["variant"],
        z_dim=manifest["z_dim"],
        num_classes=manifest["num_classes"],
        feature_shape=feature_shape,
        encoder=encoder,
        decoder=decoder,
        params=params,
        param_order=list(manifest["param_order"]),
    )
    return model, manifest.get("rng_state")
