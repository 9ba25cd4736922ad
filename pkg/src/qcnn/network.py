"""WDCNN-shaped backbone with quadratic or conventional neurons."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (
    BatchNorm1d,
    Flatten,
    MaxPool1d,
    NeuronVariant,
    QuadraticConv1d,
    QuadraticDense,
    QuadraticParams,
    ReLU,
)
from .tensor import Parameter, conv_output_length


class Profile(enum.Enum):
    QCNN_BASE = "qcnn"
    QCNN_NG = "qcnn-ng"
    QCNN_NP = "qcnn-np"
    QCNN_AQ = "qcnn-aq"
    WDCNN = "wdcnn"

    @classmethod
    def parse(cls, name: "str | Profile") -> "Profile":
        if isinstance(name, Profile):
            return name
        key = name.strip().lower().replace("_", "-")
        aliases = {"qcnn-base": "qcnn"}
        return cls(aliases.get(key, key))


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class ArchitectureError(ValueError):
    pass


@dataclass
class BlockSpec:
    out_channels: int
    kernel: int
    stride: int
    pad: int
    batchnorm: bool = True
    pool: bool = True
    variant: NeuronVariant = NeuronVariant.CONVENTIONAL


@dataclass
class DenseSpec:
    units: int
    variant: NeuronVariant = NeuronVariant.CONVENTIONAL


@dataclass
class ArchitectureSpec:
    blocks: list[BlockSpec]
    dense: list[DenseSpec]
    num_classes: int
    input_len: int
    in_channels: int = 1
    profile: str | None = None

    def stage_lengths(self) -> list[tuple[str, int]]:
        """``(stage, length)`` after every conv and pool; raises on underflow."""
        out = [("input", self.input_len)]
        length = self.input_len
        for i, b in enumerate(self.blocks):
            try:
                length = conv_output_length(length, b.kernel, b.stride, b.pad)
            except ValueError:
                listing = ", ".join(f"{n}={v}" for n, v in out)
                raise ArchitectureError(
                    f"block {i} (kernel {b.kernel}, pad {b.pad}) underflows an input of "
                    f"length {length}; lengths so far: {listing}"
                ) from None
            out.append((f"conv{i}", length))
            if b.pool:
                length = MaxPool1d.output_length(length)
                out.append((f"pool{i}", length))
        return out

    def conv_input_lengths(self) -> list[int]:
        lengths, length = [], self.input_len
        for b in self.blocks:
            lengths.append(length)
            length = conv_output_length(length, b.kernel, b.stride, b.pad)
            if b.pool:
                length = MaxPool1d.output_length(length)
        return lengths

    def flat_features(self) -> int:
        channels = self.blocks[-1].out_channels if self.blocks else self.in_channels
        return channels * self.stage_lengths()[-1][1]

    def validate(self) -> None:
        self.stage_lengths()
        if not self.dense:
            raise ArchitectureError("at least one dense layer is required")
        if self.dense[-1].units != self.num_classes:
            raise ArchitectureError(
                f"final dense width {self.dense[-1].units} != num_classes {self.num_classes}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        for b in d["blocks"] + d["dense"]:
            b["variant"] = b["variant"].value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        blocks = [BlockSpec(**{**b, "variant": NeuronVariant(b["variant"])}) for b in d["blocks"]]
        dense = [DenseSpec(**{**x, "variant": NeuronVariant(x["variant"])}) for x in d["dense"]]
        rest = {k: v for k, v in d.items() if k not in ("blocks", "dense")}
        return cls(blocks=blocks, dense=dense, **rest)


_PROFILE_CONV = {
    Profile.WDCNN: NeuronVariant.CONVENTIONAL,
    Profile.QCNN_BASE: NeuronVariant.QUADRATIC_BASE,
    Profile.QCNN_NG: NeuronVariant.NO_G,
    Profile.QCNN_NP: NeuronVariant.NO_POWER,
    Profile.QCNN_AQ: NeuronVariant.QUADRATIC_BASE,
}


def build_backbone(
    profile: "Profile | str", input_len: int = 2048, num_classes: int = 10, hidden: int = 100
) -> ArchitectureSpec:
    """Six conv blocks (16/32/64/64/64/64 channels, wide first kernel) plus dense layers.

    ``hidden=0`` drops the hidden dense layer, leaving a single classifier layer.
    """
    profile = Profile.parse(profile)
    if input_len < 1024:
        raise ArchitectureError(f"input_len must be >= 1024, got {input_len}")
    conv_v = _PROFILE_CONV[profile]
    dense_v = NeuronVariant.QUADRATIC_BASE if profile is Profile.QCNN_AQ else NeuronVariant.CONVENTIONAL
    geometry = [(16, 64, 16, 24), (32, 3, 1, 1), (64, 3, 1, 1),
                (64, 3, 1, 1), (64, 3, 1, 1), (64, 3, 1, 0)]
    blocks = [BlockSpec(c, k, s, p, variant=conv_v) for c, k, s, p in geometry]
    dense = ([DenseSpec(hidden, dense_v)] if hidden else []) + [DenseSpec(num_classes, dense_v)]
    spec = ArchitectureSpec(blocks, dense, num_classes, input_len, profile=profile.value)
    spec.validate()
    return spec


@dataclass(eq=False)
class Model:
    """Linear stack described by an :class:`ArchitectureSpec`.

    Layer parameters start in ReLinear form with zero ``w_r``; call
    :func:`relinear_init` before use.
    """

    spec: ArchitectureSpec
    rng_seed: int = 0
    layers: list = field(init=False, repr=False)
    names: list[str] = field(init=False, repr=False)
    conv_index: list[int] = field(init=False, repr=False)

    def __post_init__(self):
        self.spec.validate()
        self.layers, self.names, self.conv_index = [], [], []
        c_in = self.spec.in_channels
        for i, b in enumerate(self.spec.blocks):
            self.conv_index.append(len(self.layers))
            params = QuadraticParams.zeros(b.out_channels, c_in, b.kernel, b.variant)
            self._add(f"conv{i}", QuadraticConv1d(params, b.stride, b.pad))
            if b.batchnorm:
                self._add(f"bn{i}", BatchNorm1d(b.out_channels))
            self._add(f"relu{i}", ReLU())
            if b.pool:
                self._add(f"pool{i}", MaxPool1d())
            c_in = b.out_channels
        self._add("flatten", Flatten())
        n = self.spec.flat_features()
        for j, d in enumerate(self.spec.dense):
            self._add(f"dense{j}", QuadraticDense(QuadraticParams.zeros(d.units, 1, n, d.variant)))
            if j < len(self.spec.dense) - 1:
                self._add(f"dense_relu{j}", ReLU())
            n = d.units

    def _add(self, name, layer):
        self.names.append(name)
        self.layers.append(layer)

    @property
    def conv_layers(self) -> list[QuadraticConv1d]:
        return [self.layers[i] for i in self.conv_index]

    def quadratic_params(self) -> list[tuple[str, QuadraticParams]]:
        return [(n, l.params) for n, l in zip(self.names, self.layers)
                if isinstance(l, (QuadraticConv1d, QuadraticDense))]

    def parameters(self) -> dict[str, Parameter]:
        out = {}
        for name, layer in zip(self.names, self.layers):
            for pname, p in layer.parameters().items():
                out[f"{name}.{pname}"] = p
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in zip(self.names, self.layers):
            if isinstance(layer, BatchNorm1d):
                for bname, arr in layer.buffers().items():
                    out[f"{name}.{bname}"] = arr
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2 and self.spec.in_channels == 1:
            x = x[:, None, :]
        want = (self.spec.in_channels, self.spec.input_len)
        if x.ndim != 3 or x.shape[1:] != want:
            raise ValueError(f"expected batch of shape (B, {want[0]}, {want[1]}), got {x.shape}")
        return x

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = self._check_input(x)
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def conv_input(self, x: np.ndarray, conv: int) -> np.ndarray:
        """EVAL-mode feature map entering conv layer ``conv`` (``(B, C_in, L)``)."""
        x = self._check_input(x)
        for layer in self.layers[: self.conv_index[conv]]:
            x = layer.forward(x, False)
        return x

    def block_activation(self, x: np.ndarray, conv: int) -> np.ndarray:
        """EVAL-mode output of block ``conv`` after batchnorm and ReLU, before pooling."""
        x = self.conv_input(x, conv)
        stop = self.conv_index[conv + 1] if conv + 1 < len(self.conv_index) else len(self.layers)
        for layer in self.layers[self.conv_index[conv] : stop]:
            if isinstance(layer, MaxPool1d):
                break
            x = layer.forward(x, False)
        return x


def forward(model: Model, batch: np.ndarray, mode: "Mode | str" = Mode.EVAL) -> np.ndarray:
    return model.forward(batch, train=Mode(mode) is Mode.TRAIN)


def relinear_init(model: Model, seed: int | None = None, std: "str | float" = "scaled") -> Model:
    """ReLinear initialization in place (and returned).

    ``w_r ~ N(0, s)`` with ``s = sqrt(2 / fan_in)`` for ``std="scaled"`` or the
    given float; ``b_r = 0``, ``w_g = 0``, ``b_g = 1``, ``w_b = 0``, ``c = 0``.
    Batchnorm layers are reset. Layers are drawn in network order from one
    generator, so two specs with matching ``w_r`` shapes get identical ``w_r``.
    """
    seed = model.rng_seed if seed is None else seed
    model.rng_seed = seed
    rng = np.random.default_rng(seed)
    for _, qp in model.quadratic_params():
        c_out, c_in, k = qp.shape
        sigma = np.sqrt(2.0 / (c_in * k)) if std == "scaled" else float(std)
        qp.w_r.value[...] = rng.normal(0.0, sigma, size=qp.shape)
        qp.b_r.value[...] = 0.0
        if qp.w_g is not None:
            qp.w_g.value[...] = 0.0
            qp.b_g.value[...] = 1.0
        if qp.w_b is not None:
            qp.w_b.value[...] = 0.0
            qp.c.value[...] = 0.0
    for layer in model.layers:
        if isinstance(layer, BatchNorm1d):
            layer.gamma.value[...] = 1.0
            layer.beta.value[...] = 0.0
            layer.running_mean[...] = 0.0
            layer.running_var[...] = 1.0
    model.zero_grad()
    return model


def build_model(profile: "Profile | str", input_len: int = 2048, num_classes: int = 10,
                seed: int = 0, hidden: int = 100) -> Model:
    """Backbone spec + ReLinear initialization in one call."""
    model = Model(build_backbone(profile, input_len, num_classes, hidden), rng_seed=seed)
    return relinear_init(model, seed)
