"""OTO restoration networks: stem, two (or three) scale branches, fusion, residual tail.

A two-scale model computes, on the luma input ``y``::

    feat = stem(y)
    n1 = branch_normal(feat)
    n2 = upsample(branch_small(maxpool(feat)))
    fused = G_sum(n1 + n2) + alpha * G_dif(n1 - n2)     # Nonlinear
          | n1 + alpha * n2                              # Linear
          | n1 + n2                                      # Sum
    out = y + conv_out(tail(fused))

The three-scale variant fuses the 1/2 and 1/4 branches first, upsamples the
result and fuses it with the full-resolution branch.
"""

from __future__ import annotations

import enum
import hashlib
import zlib
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from oto.tensor import (
    Parameter,
    RunningStats,
    ShapeError,
    Tensor,
    add,
    batch_norm,
    concat,
    conv2d,
    max_pool2x2,
    relu,
    scale_alpha,
    sub,
    upsample2x_nearest,
)

DENSE_GROWTH = 8
DEFAULT_UNITS = {"R": 5, "D": 5, "C": 6}


class ConfigError(ValueError):
    """Invalid architecture or training configuration."""


class UnitKind(str, enum.Enum):
    RES = "R"
    DENSE = "D"
    CNN = "C"


class FusionKind(str, enum.Enum):
    NONLINEAR = "nonlinear"
    LINEAR = "linear"
    SUM = "sum"


@dataclass
class OtoConfig:
    branch_kinds: list[UnitKind] = field(default_factory=lambda: [UnitKind.RES, UnitKind.RES])
    fusion: FusionKind = FusionKind.NONLINEAR
    channels: int = 32
    units_per_branch: int | None = None  # None: 5 for R and D, 6 for C
    tail_resunits: int = 5
    fusion_depth: int = 2
    alpha_init: float = 0.1
    single_branch_ablation: str | None = None  # "normal_only" | "small_only"
    output_init_scale: float = 1e-3

    def __post_init__(self):
        if isinstance(self.branch_kinds, str):
            self.branch_kinds = list(self.branch_kinds)
        try:
            self.branch_kinds = [UnitKind(k) for k in self.branch_kinds]
            if not isinstance(self.fusion, FusionKind):
                self.fusion = FusionKind(str(self.fusion).lower())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.validate()

    @property
    def scales(self) -> int:
        return len(self.branch_kinds)

    def validate(self) -> None:
        if self.scales not in (2, 3):
            raise ConfigError(f"OTO supports 2 or 3 scales, got {self.scales} branch kinds")
        if self.channels < 1 or self.tail_resunits < 1 or self.fusion_depth < 1:
            raise ConfigError("channels, tail_resunits and fusion_depth must be positive")
        if self.units_per_branch is not None and self.units_per_branch < 1:
            raise ConfigError("units_per_branch must be positive")
        if self.single_branch_ablation not in (None, "normal_only", "small_only"):
            raise ConfigError(f"unknown ablation mode {self.single_branch_ablation!r}")
        if self.single_branch_ablation and self.scales != 2:
            raise ConfigError("single-branch ablation is defined for two-scale models only")

    def units_for(self, kind: UnitKind) -> int:
        return self.units_per_branch or DEFAULT_UNITS[kind.value]

    @property
    def name(self) -> str:
        base = "OTO_" + "".join(k.value for k in self.branch_kinds)
        if self.fusion is not FusionKind.NONLINEAR:
            base += f"({self.fusion.value.capitalize()})"
        if self.single_branch_ablation:
            base += f"[{self.single_branch_ablation}]"
        return base

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_kinds"] = "".join(k.value for k in self.branch_kinds)
        d["fusion"] = self.fusion.value
        return d

    def digest(self) -> bytes:
        """8-byte fingerprint of everything that determines the parameter layout."""
        d = self.to_dict()
        d.pop("alpha_init")
        d.pop("output_init_scale")
        text = ";".join(f"{k}={d[k]}" for k in sorted(d))
        return hashlib.sha256(text.encode()).digest()[:8]


# ---------------------------------------------------------------------------
# layers


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def modules(self) -> Iterator[Module]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, list):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)


class Conv3x3(Module):
    def __init__(self, in_c: int, out_c: int):
        self.weight = Parameter(np.zeros((out_c, in_c, 3, 3)), "weight", decay=True)
        self.bias = Parameter(np.zeros(out_c), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, layer=self.weight.name or "conv")


class BatchNorm(Module):
    def __init__(self, channels: int):
        self.gamma = Parameter(np.ones(channels), "gamma")
        self.beta = Parameter(np.zeros(channels), "beta")
        self.stats = RunningStats.fresh(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.stats, self.training)


class ReLU(Module):
    def __call__(self, x: Tensor) -> Tensor:
        return relu(x)


class Sequential(Module):
    def __init__(self, layers: list[Module]):
        self.layers = list(layers)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class ResUnit(Module):
    """Pre-activation residual unit: x + Conv(ReLU(BN(Conv(ReLU(BN(x))))))."""

    def __init__(self, channels: int):
        self.bn1 = BatchNorm(channels)
        self.conv1 = Conv3x3(channels, channels)
        self.bn2 = BatchNorm(channels)
        self.conv2 = Conv3x3(channels, channels)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv1(relu(self.bn1(x)))
        h = self.conv2(relu(self.bn2(h)))
        return add(x, h)


class DenseUnit(Module):
    """BN -> ReLU -> Conv producing ``growth`` channels, concatenated onto the input."""

    def __init__(self, in_c: int, growth: int = DENSE_GROWTH):
        self.bn = BatchNorm(in_c)
        self.conv = Conv3x3(in_c, growth)

    def __call__(self, x: Tensor) -> Tensor:
        return concat([x, self.conv(relu(self.bn(x)))])


class DenseBranch(Module):
    def __init__(self, channels: int, units: int, growth: int = DENSE_GROWTH):
        self.units = [DenseUnit(channels + i * growth, growth) for i in range(units)]
        self.reduce = Conv3x3(channels + units * growth, channels)

    def __call__(self, x: Tensor) -> Tensor:
        for unit in self.units:
            x = unit(x)
        return self.reduce(x)


class CnnUnit(Module):
    def __init__(self, channels: int):
        self.conv = Conv3x3(channels, channels)

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.conv(x))


def make_branch(kind: UnitKind, channels: int, units: int) -> Module:
    if kind is UnitKind.RES:
        return Sequential([ResUnit(channels) for _ in range(units)])
    if kind is UnitKind.DENSE:
        return DenseBranch(channels, units)
    if kind is UnitKind.CNN:
        return Sequential([CnnUnit(channels) for _ in range(units)])
    raise ConfigError(f"unknown unit kind {kind!r}")


def conv_relu_stack(channels: int, depth: int) -> Sequential:
    layers: list[Module] = []
    for _ in range(depth):
        layers += [Conv3x3(channels, channels), ReLU()]
    return Sequential(layers)


# ---------------------------------------------------------------------------
# fusion


def _record(trace: dict | None, prefix: str, **items: Tensor) -> None:
    if trace is not None:
        for k, v in items.items():
            trace[prefix + k] = v


class NonlinearFusion(Module):
    """G_sum(a + b) + alpha * G_dif(a - b)."""

    def __init__(self, channels: int, depth: int, alpha_init: float):
        self.g_sum = conv_relu_stack(channels, depth)
        self.g_dif = conv_relu_stack(channels, depth)
        self.alpha = Parameter(np.array([alpha_init]), "alpha")

    def __call__(self, a: Tensor, b: Tensor, trace: dict | None = None, prefix: str = "") -> Tensor:
        s, d = add(a, b), sub(a, b)
        hs, hd = self.g_sum(s), self.g_dif(d)
        out = add(hs, scale_alpha(hd, self.alpha))
        _record(trace, prefix, sum=s, dif=d, h_sum=hs, h_dif=hd, fused=out)
        return out


class LinearFusion(Module):
    """a + alpha * b."""

    def __init__(self, alpha_init: float):
        self.alpha = Parameter(np.array([alpha_init]), "alpha")

    def __call__(self, a: Tensor, b: Tensor, trace: dict | None = None, prefix: str = "") -> Tensor:
        out = add(a, scale_alpha(b, self.alpha))
        _record(trace, prefix, fused=out)
        return out


class SumFusion(Module):
    def __call__(self, a: Tensor, b: Tensor, trace: dict | None = None, prefix: str = "") -> Tensor:
        out = add(a, b)
        _record(trace, prefix, fused=out)
        return out


def make_fusion(config: OtoConfig) -> Module:
    if config.fusion is FusionKind.NONLINEAR:
        return NonlinearFusion(config.channels, config.fusion_depth, config.alpha_init)
    if config.fusion is FusionKind.LINEAR:
        return LinearFusion(config.alpha_init)
    return SumFusion()


# ---------------------------------------------------------------------------
# model


class OtoModel(Module):
    def __init__(self, config: OtoConfig):
        self.config = config
        c = config.channels
        self.stem = Conv3x3(1, c)
        ablation = config.single_branch_ablation
        self.branches = []
        for i, kind in enumerate(config.branch_kinds):
            skip = (ablation == "normal_only" and i == 1) or (ablation == "small_only" and i == 0)
            self.branches.append(None if skip else make_branch(kind, c, config.units_for(kind)))
        self.fusions = [] if ablation else [make_fusion(config) for _ in range(config.scales - 1)]
        self.tail = Sequential([ResUnit(c) for _ in range(config.tail_resunits)])
        self.out_bn = BatchNorm(c)  # closing BN-ReLU of the pre-activation stack
        self.out = Conv3x3(c, 1)
        self._params: list[Parameter] | None = None

    # -- parameter registry ------------------------------------------------
    def parameters(self) -> list[Parameter]:
        if self._params is None:
            params = []
            for name, p in self.named_parameters():
                p.name = name
                params.append(p)
            self._params = params
        return self._params

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        yield from self.stem.named_parameters(prefix + "stem.")
        for i, br in enumerate(self.branches):
            if br is not None:
                yield from br.named_parameters(f"{prefix}branch{i}.")
        for i, fu in enumerate(self.fusions):
            yield from fu.named_parameters(f"{prefix}fusion{i}.")
        yield from self.tail.named_parameters(prefix + "tail.")
        yield from self.out_bn.named_parameters(prefix + "out_bn.")
        yield from self.out.named_parameters(prefix + "out.")

    def modules(self) -> Iterator[Module]:
        yield self
        parts = [self.stem, *[b for b in self.branches if b is not None], *self.fusions, self.tail, self.out_bn, self.out]
        for part in parts:
            yield from part.modules()

    def bn_layers(self) -> list[BatchNorm]:
        return [m for m in self.modules() if isinstance(m, BatchNorm)]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> OtoModel:
        """Cast parameters and running statistics in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.momentum_buffer = p.momentum_buffer.astype(dtype)
        for bn in self.bn_layers():
            bn.stats.mean = bn.stats.mean.astype(dtype)
            bn.stats.var = bn.stats.var.astype(dtype)
        return self

    def zero_residual(self) -> OtoModel:
        """Zero the output conv so the network is exactly the identity map."""
        self.out.weight.data[...] = 0
        self.out.bias.data[...] = 0
        return self

    # -- forward -----------------------------------------------------------
    def _check_input(self, y: Tensor) -> None:
        if y.data.ndim != 4 or y.shape[1] != 1:
            raise ShapeError(f"expected a (n, 1, h, w) luma batch, got shape {y.shape}")
        step = 2 ** (self.config.scales - 1)
        h, w = y.shape[2:]
        if h % step or w % step:
            raise ShapeError(
                f"{self.config.name}: height and width must be divisible by {step}, got {h}x{w}"
            )

    def features(self, y: Tensor, trace: dict | None = None) -> Tensor:
        """Everything up to (and including) fusion; returns F3."""
        self._check_input(y)
        feat = self.stem(y)
        _record(trace, "", stem=feat)
        cfg = self.config
        if cfg.scales == 2:
            n1 = self.branches[0](feat) if self.branches[0] is not None else None
            n2 = None
            if self.branches[1] is not None:
                n2 = upsample2x_nearest(self.branches[1](max_pool2x2(feat)))
            _record(trace, "", **{k: v for k, v in (("n1", n1), ("n2", n2)) if v is not None})
            if cfg.single_branch_ablation == "normal_only":
                fused = n1
            elif cfg.single_branch_ablation == "small_only":
                fused = n2
            else:
                fused = self.fusions[0](n1, n2, trace, "")
            _record(trace, "", fused=fused)
            return fused
        return self._features_multiscale(feat, trace)

    def _features_multiscale(self, feat: Tensor, trace: dict | None) -> Tensor:
        half = max_pool2x2(feat)
        quarter = max_pool2x2(half)
        n1 = self.branches[0](feat)
        n2 = self.branches[1](half)
        n3 = self.branches[2](quarter)
        _record(trace, "", n1=n1, n2=n2, n3=n3)
        f_half = self.fusions[0](n2, upsample2x_nearest(n3), trace, "stage0.")
        fused = self.fusions[1](n1, upsample2x_nearest(f_half), trace, "stage1.")
        _record(trace, "", fused=fused)
        return fused

    def residual(self, fused: Tensor) -> Tensor:
        return self.out(relu(self.out_bn(self.tail(fused))))

    def forward(self, y, trace: dict | None = None) -> Tensor:
        if not isinstance(y, Tensor):
            y = Tensor(y, dtype=self.stem.weight.dtype)
        fused = self.features(y, trace)
        res = self.residual(fused)
        _record(trace, "", residual=res)
        return add(y, res)

    __call__ = forward

    def restore(self, luma: np.ndarray) -> np.ndarray:
        """Restore one [0, 255] luma plane in eval mode (float64, unclamped).

        The global shortcut is applied in float64 so a zero residual returns
        the input bit for bit.
        """
        luma = np.asarray(luma, dtype=np.float64)
        was_training = self.training
        self.eval()
        try:
            y = Tensor(luma[None, None] / 255.0, dtype=self.stem.weight.dtype)
            res = self.residual(self.features(y)).data[0, 0]
        finally:
            self.train(was_training)
        return luma + res.astype(np.float64) * 255.0


def forward(model: OtoModel, y, trace: dict | None = None) -> Tensor:
    return model.forward(y, trace)


def forward_multiscale(model: OtoModel, y, trace: dict | None = None) -> Tensor:
    if model.config.scales != 3:
        raise ConfigError(f"{model.config.name} is not a three-scale model")
    return model.forward(y, trace)


def _param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def build_model(config: OtoConfig, seed: int = 0) -> OtoModel:
    """Construct a model with He-initialised convolutions.

    Each parameter draws from its own stream keyed by ``(seed, name)``, so
    parts shared between configurations (stem, branches, tail) get identical
    weights for the same seed.
    """
    config.validate()
    model = OtoModel(config)
    for name, p in model.named_parameters():
        p.name = name
        if name.endswith("weight"):
            fan_in = p.data.shape[1] * 9
            std = np.sqrt(2.0 / fan_in)
            if name.startswith("out."):
                std *= config.output_init_scale
            p.data[...] = _param_rng(seed, name).normal(0.0, std, size=p.data.shape)
    model.parameters()
    return model


def read_alpha(model: OtoModel) -> float:
    alphas = [p for n, p in model.named_parameters() if n.endswith("alpha")]
    if not alphas:
        raise ConfigError("alpha fixed at 1, not learnable")
    return float(alphas[-1].data[0])
