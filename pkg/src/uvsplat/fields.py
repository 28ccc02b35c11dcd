"""Parameterized UV-space field models with a reverse-mode gradient contract.

Two variants: a directly optimized UV map, and a small conditioned MLP.
The MLP runs either per texel (input = texel features ++ condition) or as a
grid decoder (condition -> coarse G x G grid, bilinearly upsampled). Field
outputs are raw logits/deltas; activations happen downstream in fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .uvfield import UVMap, upsample_backward, upsample_bilinear


class FieldError(ValueError):
    pass


@dataclass
class ConditionVector:
    """Expression weights psi and pose parameters theta."""

    psi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(self.psi)) and np.all(np.isfinite(self.theta))):
            raise FieldError("condition vector must be finite")

    def vec(self) -> np.ndarray:
        return np.concatenate([self.psi, self.theta])

    @property
    def dim(self) -> int:
        return len(self.psi) + len(self.theta)


class FieldModel:
    """Named parameter tensors with matching gradient accumulators."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _register(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def forward(self, U: UVMap | None = None, cond: ConditionVector | None = None):
        raise NotImplementedError

    def backward(self, record, d_out: np.ndarray):
        raise NotImplementedError


class LearnableUVMap(FieldModel):
    """A single optimizable UV map; forward ignores its inputs."""

    def __init__(self, width: int, height: int, channels: int):
        super().__init__()
        self._register("map", np.zeros((height, width, channels)))

    def forward(self, U: UVMap | None = None, cond: ConditionVector | None = None):
        m = self.params["map"]
        if U is not None and (U.height, U.width) != (m.shape[0], m.shape[1]):
            raise FieldError("input map resolution does not match the parameter map")
        return UVMap(m.copy()), "identity"

    def backward(self, record, d_out: np.ndarray):
        if record != "identity":
            raise FieldError("backward called without a matching forward")
        self.grads["map"] += d_out
        return None


class ConditionedMLP(FieldModel):
    """Tanh MLP over per-texel features and/or a condition vector.

    With grid_size set, the condition alone is decoded into a coarse
    grid_size^2 x out_channels grid and bilinearly upsampled; otherwise the
    network is applied at every texel of the target resolution.
    """

    def __init__(
        self,
        width: int,
        height: int,
        out_channels: int,
        in_channels: int = 0,
        cond_dim: int = 0,
        hidden=(64, 64),
        grid_size: int | None = None,
        seed: int = 0,
    ):
        super().__init__()
        self.width = width
        self.height = height
        self.out_channels = out_channels
        self.in_channels = in_channels
        self.cond_dim = cond_dim
        self.grid_size = grid_size
        if grid_size is not None:
            in_dim = cond_dim
            out_dim = grid_size * grid_size * out_channels
            if in_channels:
                raise FieldError("grid-decoder mode takes the condition only")
        else:
            in_dim = in_channels + cond_dim
            out_dim = out_channels
        if in_dim == 0:
            raise FieldError("MLP needs a nonempty input")
        rng = np.random.default_rng(seed)
        dims = [in_dim, *hidden, out_dim]
        self.n_layers = len(dims) - 1
        for i in range(self.n_layers):
            fan_in = dims[i]
            if i == self.n_layers - 1:
                W = np.zeros((dims[i], dims[i + 1]))  # residual-identity start
            else:
                bound = 1.0 / np.sqrt(fan_in)
                W = rng.uniform(-bound, bound, size=(dims[i], dims[i + 1]))
            self._register(f"w{i}", W)
            self._register(f"b{i}", np.zeros(dims[i + 1]))

    def _inputs(self, U: UVMap | None, cond: ConditionVector | None) -> np.ndarray:
        parts = []
        if self.grid_size is None and self.in_channels:
            if U is None:
                raise FieldError("this model requires a UV input map")
            if (U.height, U.width) != (self.height, self.width):
                raise FieldError("input map resolution mismatch")
            if U.channels != self.in_channels:
                raise FieldError("input map channel mismatch")
            parts.append(U.data.reshape(-1, self.in_channels))
        if self.cond_dim:
            if cond is None:
                raise FieldError("this model requires a condition vector")
            v = cond.vec()
            if len(v) != self.cond_dim:
                raise FieldError(
                    f"condition has dimension {len(v)}, expected {self.cond_dim}"
                )
            if parts:
                v = np.broadcast_to(v, (parts[0].shape[0], len(v)))
                parts.append(v)
            else:
                parts.append(v[None, :])
        return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]

    def forward(self, U: UVMap | None = None, cond: ConditionVector | None = None):
        X = self._inputs(U, cond)
        acts = [X]
        h = X
        for i in range(self.n_layers):
            z = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            h = np.tanh(z) if i < self.n_layers - 1 else z
            acts.append(h)
        if self.grid_size is not None:
            G = self.grid_size
            coarse = h.reshape(G, G, self.out_channels)
            fine, up_rec = upsample_bilinear(coarse, self.width, self.height)
            return UVMap(fine), ("grid", acts, up_rec)
        out = h.reshape(self.height, self.width, self.out_channels)
        return UVMap(out), ("texel", acts, None)

    def backward(self, record, d_out: np.ndarray):
        if not (isinstance(record, tuple) and len(record) == 3):
            raise FieldError("backward called without a matching forward")
        mode, acts, up_rec = record
        if mode == "grid":
            d_coarse = upsample_backward(up_rec, d_out)
            d_h = d_coarse.reshape(1, -1)
        else:
            d_h = d_out.reshape(-1, self.out_channels)
        for i in reversed(range(self.n_layers)):
            a_in = acts[i]
            if i < self.n_layers - 1:
                d_h = d_h * (1.0 - acts[i + 1] ** 2)  # through tanh
            self.grads[f"w{i}"] += a_in.T @ d_h
            self.grads[f"b{i}"] += d_h.sum(axis=0)
            d_h = d_h @ self.params[f"w{i}"].T
        if mode == "texel" and self.in_channels:
            d_X = d_h[:, : self.in_channels]
            return d_X.reshape(self.height, self.width, self.in_channels)
        return None


# --- role-specific wrappers ------------------------------------------------


def base_forward(model: FieldModel, U: UVMap):
    """Base appearance map B (rgb + opacity logits) from the baked normals."""
    if U.channels != 3:
        raise FieldError("normal map must have 3 channels")
    return model.forward(U=U, cond=None)


def dyn_forward(model: FieldModel, U: UVMap, cond: ConditionVector):
    """Residual appearance map conditioned on (psi, theta)."""
    return model.forward(U=U, cond=cond)


def geo_forward(model: FieldModel, cond: ConditionVector):
    """Geometric deformation map (d_mu 3, d_log_s 3, d_r 4) from (psi, theta)."""
    out, rec = model.forward(U=None, cond=cond)
    if out.channels != 10:
        raise FieldError("deformation map must have 10 channels")
    return out, rec


def field_backward(model: FieldModel, record, d_out: np.ndarray):
    """Accumulate parameter gradients; returns the input-map gradient or None."""
    return model.backward(record, d_out)
