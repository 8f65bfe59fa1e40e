"""Compression autoencoder: analysis/synthesis transforms, quantizers,
and the learned factorized entropy model that prices the latent.

Geometry: three 5x5 stride-2 convolution stages with GDN after each on
the analysis side (total downsampling x8), mirrored transposed stages
with IGDN on the synthesis side, final stage mapping back to 3 channels.
Images live in [0, 1] inside the network.  GDN parameters are stored as
squared free values plus floors so they stay positive.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import ShapeError, Tensor
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "CodecConfig",
    "CodecParams",
    "FactorizedEntropyModel",
    "CodecModel",
    "analyze",
    "synthesize",
    "quantize_train",
    "quantize_test",
    "rate_loss",
    "manifest_digest",
    "LIKELIHOOD_FLOOR",
    "BETA_FLOOR",
]

log = logging.getLogger(__name__)

LIKELIHOOD_FLOOR = 2.0 ** -32
BETA_FLOOR = 1e-6
DOWNSAMPLE = 8


@dataclass(frozen=True)
class CodecConfig:
    """Network geometry; ``filters=192`` is the paper-parity setting."""

    filters: int = 32
    kernel_size: int = 5
    stages: int = 3
    in_channels: int = 3

    def to_dict(self):
        return {"filters": self.filters, "kernel_size": self.kernel_size,
                "stages": self.stages, "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, d):
        return cls(filters=d["filters"], kernel_size=d["kernel_size"],
                   stages=d["stages"], in_channels=d["in_channels"])


class _GdnPair:
    """Squared-reparameterized GDN parameters for one stage."""

    def __init__(self, channels: int):
        self.beta_free = Tensor(np.full(channels, np.sqrt(1.0 - BETA_FLOOR), dtype=np.float32),
                                requires_grad=True)
        gamma = (np.sqrt(0.1) * np.eye(channels)).astype(np.float32)
        self.gamma_free = Tensor(gamma, requires_grad=True)

    def beta(self) -> Tensor:
        return ag.square(self.beta_free) + ag.constant(np.float32(BETA_FLOOR))

    def gamma(self) -> Tensor:
        return ag.square(self.gamma_free)


class _ConvStage:
    def __init__(self, kernel: np.ndarray, out_channels: int, norm: bool):
        self.kernel = Tensor(kernel, requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=np.float32), requires_grad=True)
        self.gdn = _GdnPair(out_channels) if norm else None


class CodecParams:
    """Learnable analysis (theta_a) and synthesis (theta_s) parameters."""

    def __init__(self, config: CodecConfig, rng: np.random.Generator):
        k = config.kernel_size
        f = config.filters
        self.config = config
        self.analysis: list[_ConvStage] = []
        cin = config.in_channels
        for _ in range(config.stages):
            fan_in = cin * k * k
            fan_out = f * k * k
            kernel = nn.glorot_uniform(rng, (f, cin, k, k), fan_in, fan_out)
            self.analysis.append(_ConvStage(kernel, f, norm=True))
            cin = f
        self.synthesis: list[_ConvStage] = []
        for s in range(config.stages):
            last = s == config.stages - 1
            cout = config.in_channels if last else f
            fan_in = f * k * k
            fan_out = cout * k * k
            kernel = nn.glorot_uniform(rng, (f, cout, k, k), fan_in, fan_out)
            self.synthesis.append(_ConvStage(kernel, cout, norm=not last))

    @property
    def latent_channels(self) -> int:
        return self.config.filters

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for side, stages in (("analysis", self.analysis), ("synthesis", self.synthesis)):
            for i, st in enumerate(stages):
                out[f"{side}.{i}.kernel"] = st.kernel
                out[f"{side}.{i}.bias"] = st.bias
                if st.gdn is not None:
                    out[f"{side}.{i}.beta_free"] = st.gdn.beta_free
                    out[f"{side}.{i}.gamma_free"] = st.gdn.gamma_free
        return out

    def load_state(self, state: dict[str, np.ndarray]):
        for name, tensor in self.parameters().items():
            if name not in state:
                raise KeyError(f"checkpoint is missing codec parameter {name!r}")
            if state[name].shape != tensor.data.shape:
                raise ShapeError(
                    f"checkpoint entry {name!r} has shape {state[name].shape}, "
                    f"expected {tensor.data.shape}")
            tensor.data = state[name].astype(np.float32).copy()


def analyze(x: Tensor, params: CodecParams) -> Tensor:
    """Image batch (n, 3, h, w) in [0, 1] -> latent (n, F, h/8, w/8)."""
    n, c, h, w = x.shape
    if h % DOWNSAMPLE or w % DOWNSAMPLE:
        raise ShapeError(
            f"analyze needs spatial extents divisible by {DOWNSAMPLE}, got {h}x{w}; "
            "pad by reflection and record the original size (rd_eval does this)")
    t = x
    for st in params.analysis:
        t = nn.conv2d(t, st.kernel, stride=2, padding="same")
        t = t + ag.reshape(st.bias, (1, st.bias.shape[0], 1, 1))
        t = nn.gdn(t, st.gdn.beta(), st.gdn.gamma())
    return t


def synthesize(y: Tensor, params: CodecParams) -> Tensor:
    """Latent (n, F, h, w) -> reconstruction (n, 3, 8h, 8w), unclamped."""
    if y.shape[1] != params.latent_channels:
        raise ShapeError(
            f"latent has {y.shape[1]} channels, synthesis expects {params.latent_channels}")
    t = y
    for st in params.synthesis:
        t = nn.conv2d_up(t, st.kernel, factor=2)
        t = t + ag.reshape(st.bias, (1, st.bias.shape[0], 1, 1))
        if st.gdn is not None:
            t = nn.gdn(t, st.gdn.beta(), st.gdn.gamma(), inverse=True)
    return t


def quantize_train(y: Tensor, rng: np.random.Generator) -> Tensor:
    """Additive uniform(-0.5, 0.5) noise, fresh per call; gradients pass through."""
    noise = rng.uniform(-0.5, 0.5, size=y.shape).astype(y.data.dtype)
    return y + ag.constant(noise)


def quantize_test(y) -> np.ndarray:
    """Round half away from zero to integers."""
    data = y.data if isinstance(y, Tensor) else np.asarray(y)
    return (np.sign(data) * np.floor(np.abs(data) + 0.5)).astype(np.int32)


class FactorizedEntropyModel:
    """Per-channel learned cumulative c(v), strictly increasing onto (0, 1).

    Each channel owns a small monotone map: K+1 softplus-positive matrix
    stages with tanh couplings in between (non-parametric factorized
    density).  The discrete likelihood of a latent value v is
    c(v + 0.5) - c(v - 0.5).
    """

    def __init__(self, channels: int, rng: np.random.Generator,
                 filters: tuple[int, ...] = (3, 3, 3), init_scale: float = 2.0):
        self.channels = channels
        self.filters = tuple(filters)
        self.underflow_count = 0
        dims = (1,) + self.filters + (1,)
        scale = init_scale ** (1.0 / (len(self.filters) + 1))
        self.matrices: list[Tensor] = []
        self.biases: list[Tensor] = []
        self.factors: list[Tensor] = []
        for k in range(len(self.filters) + 1):
            init = np.log(np.expm1(1.0 / scale / dims[k + 1]))
            self.matrices.append(Tensor(
                np.full((channels, dims[k + 1], dims[k]), init, dtype=np.float32),
                requires_grad=True))
            self.biases.append(Tensor(
                rng.uniform(-0.5, 0.5, size=(channels, dims[k + 1], 1)).astype(np.float32),
                requires_grad=True))
            if k < len(self.filters):
                self.factors.append(Tensor(
                    np.zeros((channels, dims[k + 1], 1), dtype=np.float32),
                    requires_grad=True))

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, m in enumerate(self.matrices):
            out[f"entropy.matrix.{i}"] = m
        for i, b in enumerate(self.biases):
            out[f"entropy.bias.{i}"] = b
        for i, f in enumerate(self.factors):
            out[f"entropy.factor.{i}"] = f
        return out

    def load_state(self, state: dict[str, np.ndarray]):
        for name, tensor in self.parameters().items():
            if name not in state:
                raise KeyError(f"checkpoint is missing entropy parameter {name!r}")
            tensor.data = state[name].astype(np.float32).copy()

    def digest(self) -> str:
        """Hash of the current density parameters; pins coder tables to a model."""
        h = hashlib.sha256()
        for name in sorted(self.parameters()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.parameters()[name].data, dtype="<f4").tobytes())
        return h.hexdigest()

    def _logits(self, x: Tensor) -> Tensor:
        # x: (channels, 1, m)
        t = x
        for k in range(len(self.matrices)):
            t = ag.matmul(ag.softplus(self.matrices[k]), t)
            t = t + self.biases[k]
            if k < len(self.factors):
                t = t + ag.tanh(self.factors[k]) * ag.tanh(t)
        return t

    def likelihood(self, y: Tensor) -> Tensor:
        """Discrete probability of each latent element: (n, c, h, w) -> (c, 1, n*h*w)."""
        n, c, h, w = y.shape
        if c != self.channels:
            raise ShapeError(f"latent has {c} channels, entropy model has {self.channels}")
        flat = ag.reshape(ag.transpose(y, (1, 0, 2, 3)), (c, 1, n * h * w))
        half = ag.constant(np.float32(0.5))
        upper = ag.sigmoid(self._logits(flat + half))
        lower = ag.sigmoid(self._logits(flat - half))
        return upper - lower

    def cdf_numpy(self, values: np.ndarray) -> np.ndarray:
        """Plain-numpy c(v) for table building; values (channels, m) float64."""
        t = values.astype(np.float64)[:, None, :]
        for k in range(len(self.matrices)):
            m = np.logaddexp(0.0, self.matrices[k].data.astype(np.float64))
            t = m @ t + self.biases[k].data.astype(np.float64)
            if k < len(self.factors):
                t = t + np.tanh(self.factors[k].data.astype(np.float64)) * np.tanh(t)
        return 1.0 / (1.0 + np.exp(-t[:, 0, :]))


def rate_loss(y_tilde: Tensor, model: FactorizedEntropyModel, pixel_count: int) -> Tensor:
    """Estimated bits per pixel of the (noisy or rounded) latent batch."""
    if pixel_count <= 0:
        raise ValueError(f"pixel_count must be positive, got {pixel_count}")
    p = model.likelihood(y_tilde)
    under = int(np.count_nonzero(p.data < LIKELIHOOD_FLOOR))
    if under:
        model.underflow_count += under
        log.warning("rate_loss floored %d likelihood value(s) at 2^-32", under)
    bits = ag.tsum(ag.log(ag.maximum_const(p, LIKELIHOOD_FLOOR))) * (-1.0 / np.log(2.0))
    return bits * (1.0 / float(pixel_count))


# -- persistence ------------------------------------------------------


def manifest_digest(manifest: dict) -> bytes:
    """32-byte digest of the canonical manifest JSON."""
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


@dataclass
class CodecModel:
    """A trained codec: parameters, entropy model, and its manifest."""

    config: CodecConfig
    params: CodecParams
    entropy: FactorizedEntropyModel
    meta: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, config: CodecConfig, rng: np.random.Generator, meta: dict | None = None):
        return cls(config, CodecParams(config, rng),
                   FactorizedEntropyModel(config.filters, rng), dict(meta or {}))

    def manifest(self) -> dict:
        m = {"format_version": 1, **self.config.to_dict(), **self.meta}
        m["entropy_hash"] = self.entropy.digest()
        return m

    def save(self, directory: str | Path):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        state = {name: t.data for name, t in self.params.parameters().items()}
        state.update({name: t.data for name, t in self.entropy.parameters().items()})
        save_checkpoint(directory / "model.pxck", state)
        (directory / "manifest.json").write_text(
            json.dumps(self.manifest(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "CodecModel":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        config = CodecConfig.from_dict(manifest)
        rng = np.random.default_rng(0)  # values are overwritten by the checkpoint
        model = cls.fresh(config, rng)
        state = load_checkpoint(directory / "model.pxck")
        model.params.load_state(state)
        model.entropy.load_state(state)
        model.meta = {k: v for k, v in manifest.items()
                      if k not in {"format_version", "entropy_hash", *config.to_dict()}}
        if model.entropy.digest() != manifest["entropy_hash"]:
            raise ValueError(f"{directory}: entropy model does not match its manifest hash")
        return model
