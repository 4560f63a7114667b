"""Sequential feed-forward nets over the shared conv/pool kernels.

Layers are stateless: parameters live in a flat dict keyed by layer name and
the forward pass returns the caches the backward pass needs. Everything runs
in float64 so analytic gradients can be checked against central differences.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ShapeError


def dense_forward(x, w, b):
    return x @ w + b


def dense_backward(gout, x, w):
    return gout @ w.T, x.T @ gout, gout.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0)


def tanh_forward(x):
    return np.tanh(x)


class Sequential:
    """A stack of conv/pool/flatten/dense/activation layers.

    ``arch`` is a list of layer descriptors (plain dicts). Parameterized
    layers carry a unique ``name``; their arrays live under ``<name>.w`` and
    ``<name>.b`` in the parameter dict.
    """

    def __init__(self, arch: list[dict], input_shape: tuple[int, ...]):
        self.arch = arch
        self.input_shape = tuple(input_shape)
        self.output_shape = self._infer_shapes()

    def _infer_shapes(self):
        shape = self.input_shape
        for layer in self.arch:
            kind = layer["kind"]
            if kind == "conv":
                c, h, w = shape
                if c != layer["in_ch"]:
                    raise ShapeError(
                        f"conv {layer['name']}: expects {layer['in_ch']} channels, got {c}"
                    )
                shape = (layer["out_ch"], h, w)  # stride 1, same padding
            elif kind == "pool2":
                c, h, w = shape
                shape = (c, h // 2, w // 2)
            elif kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif kind == "dense":
                if shape != (layer["in"],):
                    raise ShapeError(
                        f"dense {layer['name']}: expects ({layer['in']},), got {shape}"
                    )
                shape = (layer["out"],)
            elif kind in ("relu", "tanh"):
                pass
            else:
                raise ShapeError(f"unknown layer kind {kind!r}")
        return shape

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for layer in self.arch:
            if layer["kind"] == "conv":
                k = layer["k"]
                shapes[f"{layer['name']}.w"] = (layer["out_ch"], layer["in_ch"], k, k)
                shapes[f"{layer['name']}.b"] = (layer["out_ch"],)
            elif layer["kind"] == "dense":
                shapes[f"{layer['name']}.w"] = (layer["in"], layer["out"])
                shapes[f"{layer['name']}.b"] = (layer["out"],)
        return shapes

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        for layer in self.arch:
            if layer["kind"] == "conv":
                k = layer["k"]
                fan_in = layer["in_ch"] * k * k
                params[f"{layer['name']}.w"] = rng.normal(
                    0.0, np.sqrt(2.0 / fan_in), size=(layer["out_ch"], layer["in_ch"], k, k)
                )
                params[f"{layer['name']}.b"] = np.zeros(layer["out_ch"])
            elif layer["kind"] == "dense":
                fan_in, fan_out = layer["in"], layer["out"]
                params[f"{layer['name']}.w"] = rng.normal(
                    0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out)
                )
                params[f"{layer['name']}.b"] = np.zeros(fan_out)
        return params

    def forward(self, x: np.ndarray, params: dict):
        """Run the stack on a [N, ...] batch; returns (output, caches)."""
        caches = []
        out = x
        for layer in self.arch:
            kind = layer["kind"]
            if kind == "conv":
                k = layer["k"]
                pad = (k - 1) // 2
                xp = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
                w = params[f"{layer['name']}.w"]
                y = kernels.conv2d_forward(
                    np.ascontiguousarray(xp), w, params[f"{layer['name']}.b"]
                )
                caches.append({"xp": xp, "pad": pad})
                out = y
            elif kind == "pool2":
                h, w = out.shape[2], out.shape[3]
                out, idx = kernels.maxpool2_forward(np.ascontiguousarray(out))
                caches.append({"idx": idx, "h": h, "w": w})
            elif kind == "flatten":
                caches.append({"shape": out.shape})
                out = out.reshape(out.shape[0], -1)
            elif kind == "dense":
                caches.append({"x": out})
                out = dense_forward(
                    out, params[f"{layer['name']}.w"], params[f"{layer['name']}.b"]
                )
            elif kind == "relu":
                out = relu_forward(out)
                caches.append({"y": out})
            elif kind == "tanh":
                out = tanh_forward(out)
                caches.append({"y": out})
        return out, caches

    def backward(self, gout: np.ndarray, params: dict, caches: list, need_input_grad=True):
        """Backprop through the stack; returns (input_grad, grads dict)."""
        grads = {}
        g = gout
        for i in range(len(self.arch) - 1, -1, -1):
            layer, cache = self.arch[i], caches[i]
            kind = layer["kind"]
            first = i == 0
            if kind == "conv":
                name = layer["name"]
                w = params[f"{name}.w"]
                g = np.ascontiguousarray(g)
                grads[f"{name}.w"] = kernels.conv2d_backward_weights(
                    np.ascontiguousarray(cache["xp"]), g
                )
                grads[f"{name}.b"] = g.sum(axis=(0, 2, 3))
                if not (first and not need_input_grad):
                    gx = kernels.conv2d_backward_input(g, w)
                    p = cache["pad"]
                    g = gx[:, :, p : gx.shape[2] - p, p : gx.shape[3] - p] if p else gx
            elif kind == "pool2":
                g = kernels.maxpool2_backward(
                    np.ascontiguousarray(g), cache["idx"], cache["h"], cache["w"]
                )
            elif kind == "flatten":
                g = g.reshape(cache["shape"])
            elif kind == "dense":
                name = layer["name"]
                gx, gw, gb = dense_backward(g, cache["x"], params[f"{name}.w"])
                grads[f"{name}.w"] = gw
                grads[f"{name}.b"] = gb
                if not (first and not need_input_grad):
                    g = gx
            elif kind == "relu":
                g = g * (cache["y"] > 0)
            elif kind == "tanh":
                g = g * (1.0 - cache["y"] ** 2)
        return g, grads


def lenet_encoder_arch(channels: int, height: int, width: int, fc: int = 84) -> list[dict]:
    """Small conv stack: two conv/pool blocks and one dense layer."""
    if height % 4 or width % 4:
        raise ShapeError(f"conv encoder needs H, W divisible by 4, got {height}x{width}")
    flat = 16 * (height // 4) * (width // 4)
    return [
        {"kind": "conv", "name": "enc.c1", "in_ch": channels, "out_ch": 6, "k": 5},
        {"kind": "relu"},
        {"kind": "pool2"},
        {"kind": "conv", "name": "enc.c2", "in_ch": 6, "out_ch": 16, "k": 3},
        {"kind": "relu"},
        {"kind": "pool2"},
        {"kind": "flatten"},
        {"kind": "dense", "name": "enc.fc", "in": flat, "out": fc},
        {"kind": "relu"},
    ]


def dense_encoder_arch(dim: int, hidden: int = 32) -> list[dict]:
    """Two-layer dense encoder for plain vector data (tanh keeps it smooth)."""
    return [
        {"kind": "dense", "name": "enc.fc1", "in": dim, "out": hidden},
        {"kind": "tanh"},
        {"kind": "dense", "name": "enc.fc2", "in": hidden, "out": hidden},
        {"kind": "tanh"},
    ]


def dense_decoder_arch(z_dim: int, dim: int, hidden: int = 64) -> list[dict]:
    """Latent back to flat feature logits (or means, for gaussian likelihood)."""
    return [
        {"kind": "dense", "name": "dec.fc1", "in": z_dim, "out": hidden},
        {"kind": "tanh"},
        {"kind": "dense", "name": "dec.fc2", "in": hidden, "out": dim},
    ]


def vgg16_encoder_arch(channels: int, height: int, width: int) -> list[dict]:
    """Full-scale conv stack preset. Provided for completeness, far beyond
    what the desk-scale experiments exercise."""
    cfg = [64, 64, "p", 128, 128, "p", 256, 256, 256, "p", 512, 512, 512, "p", 512, 512, 512, "p"]
    arch = []
    c, h, w, i = channels, height, width, 0
    for item in cfg:
        if item == "p":
            arch.append({"kind": "pool2"})
            h, w = h // 2, w // 2
        else:
            arch.append({"kind": "conv", "name": f"enc.c{i}", "in_ch": c, "out_ch": item, "k": 3})
            arch.append({"kind": "relu"})
            c, i = item, i + 1
    arch += [
        {"kind": "flatten"},
        {"kind": "dense", "name": "enc.fc", "in": c * h * w, "out": 4096},
        {"kind": "relu"},
    ]
    return arch
