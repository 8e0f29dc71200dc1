"""Branch-structured 1D CNN classifiers.

An :class:`ArchitectureSpec` lists one or two convolutional branches (one per
input view) followed by a fully connected stack and a sigmoid output unit.
Each branch block is ``convs_per_block`` times (Conv1D + ReLU) and then one
max pool; block ``f`` has ``initial_filters * filter_growth**f`` channels.
Branch outputs are flattened channel-major and concatenated in branch order.

All trainable tensors of a :class:`Model` are views into one flat float64
vector (``model.params``), with gradients in a parallel vector
(``model.grads``). The flat order is the declaration order recorded in
``model.manifest``; it is also the checkpoint payload order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import (
    ArgumentError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigurationError,
    ViewError,
)
from .fileutil import atomic_write_bytes
from .layers import Conv1D, Dense, Dropout, MaxPool1D, ReLU, Sigmoid
from .numerics import DTYPE, check_finite, glorot_uniform

GLOBAL = "global"
LOCAL = "local"
GAUSSIAN = "gaussian"
VIEW_NAMES = (GLOBAL, LOCAL, GAUSSIAN)
VIEW_LENGTHS = {GLOBAL: 2001, LOCAL: 201, GAUSSIAN: 251}

CHECKPOINT_MAGIC = b"TNET1"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<5sIQ")


@dataclass(frozen=True)
class BranchSpec:
    view: str
    input_length: int
    num_blocks: int
    convs_per_block: int
    initial_filters: int = 16
    filter_growth: int = 2
    kernel_size: int = 5
    pool_window: int = 5
    pool_stride: int = 2

    def __post_init__(self):
        if self.view not in VIEW_NAMES:
            raise ConfigurationError(f"unknown view {self.view!r}")
        for name in ("input_length", "num_blocks", "convs_per_block", "initial_filters",
                     "filter_growth", "kernel_size", "pool_window", "pool_stride"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{self.view} branch: {name} must be >= 1")

    def block_filters(self, block: int) -> int:
        return self.initial_filters * self.filter_growth ** block

    def block_lengths(self) -> list[int]:
        """Length after each block's pool (conv padding is 'same')."""
        lengths = []
        length = self.input_length
        for block in range(self.num_blocks):
            if length < self.pool_window:
                raise ConfigurationError(
                    f"{self.view} branch collapses at block {block}: length {length} "
                    f"< pool window {self.pool_window}")
            length = (length - self.pool_window) // self.pool_stride + 1
            lengths.append(length)
        return lengths

    @property
    def output_channels(self) -> int:
        return self.block_filters(self.num_blocks - 1)

    @property
    def output_size(self) -> int:
        return self.output_channels * self.block_lengths()[-1]


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    branches: tuple[BranchSpec, ...]
    fc_layers: int
    fc_size: int
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        if not 1 <= len(self.branches) <= 2:
            raise ConfigurationError("an architecture needs one or two branches")
        views = [b.view for b in self.branches]
        if len(set(views)) != len(views):
            raise ConfigurationError(f"duplicate branch views {views}")
        if self.fc_layers < 1 or self.fc_size < 1:
            raise ConfigurationError("fc_layers and fc_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout rate {self.dropout_rate} outside [0, 1)")
        for branch in self.branches:
            branch.block_lengths()

    @property
    def views(self) -> tuple[str, ...]:
        return tuple(b.view for b in self.branches)

    def with_dropout(self, rate: float) -> "ArchitectureSpec":
        return replace(self, dropout_rate=float(rate))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branches"] = [asdict(b) for b in self.branches]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ArchitectureSpec":
        try:
            branches = tuple(BranchSpec(**b) for b in d["branches"])
            return cls(name=d["name"], branches=branches, fc_layers=d["fc_layers"],
                       fc_size=d["fc_size"], dropout_rate=d.get("dropout_rate", 0.0))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed architecture description: {exc}") from None


PRESET_NAMES = ("baseline", "ddn", "ddmsn")


def preset(name: str, dropout_rate: float = 0.0) -> ArchitectureSpec:
    """The three named architectures.

    ``baseline`` is the two-branch network (global: 5 blocks of 2 convs, pool 5;
    local: 2 blocks of 2 convs, pool 7; 4 FC layers of 512). ``ddn`` keeps both
    views with 3 and 2 single-conv blocks and 2 FC layers of 128. ``ddmsn``
    reads only the 251-long Gaussian view: 2 blocks of 2 convs, pool 7, then
    4 FC layers of 512.
    """
    key = name.lower()
    if key == "baseline":
        branches = (BranchSpec(GLOBAL, 2001, 5, 2, pool_window=5),
                    BranchSpec(LOCAL, 201, 2, 2, pool_window=7))
        fc_layers, fc_size = 4, 512
    elif key == "ddn":
        branches = (BranchSpec(GLOBAL, 2001, 3, 1, pool_window=5),
                    BranchSpec(LOCAL, 201, 2, 1, pool_window=7))
        fc_layers, fc_size = 2, 128
    elif key == "ddmsn":
        branches = (BranchSpec(GAUSSIAN, 251, 2, 2, pool_window=7),)
        fc_layers, fc_size = 4, 512
    else:
        raise ArgumentError(f"unknown architecture {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return ArchitectureSpec(key, branches, fc_layers, fc_size, dropout_rate)


@dataclass
class _Slot:
    name: str
    layer: object
    attr: str
    shape: tuple[int, ...]
    offset: int = 0

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class _Branch:
    spec: BranchSpec
    layers: list = field(default_factory=list)


class Model:
    """An instantiated architecture. Use :func:`build` for a freshly initialized one."""

    def __init__(self, spec: ArchitectureSpec, params: np.ndarray | None = None):
        self.spec = spec
        self.branches: list[_Branch] = []
        self.head: list = []
        slots: list[_Slot] = []

        def register(prefix, layer):
            for attr, arr in layer.parameters():
                slots.append(_Slot(f"{prefix}.{attr}", layer, attr, arr.shape))

        concat = 0
        for bspec in spec.branches:
            branch = _Branch(bspec)
            channels = 1
            for block in range(bspec.num_blocks):
                filters = bspec.block_filters(block)
                for c in range(bspec.convs_per_block):
                    conv = Conv1D(channels, filters, bspec.kernel_size)
                    register(f"{bspec.view}.block{block}.conv{c}", conv)
                    branch.layers += [conv, ReLU()]
                    channels = filters
                branch.layers.append(MaxPool1D(bspec.pool_window, bspec.pool_stride))
            branch.layers[0].needs_input_grad = False
            concat += bspec.output_size
            self.branches.append(branch)

        width = concat
        for i in range(spec.fc_layers):
            dense = Dense(width, spec.fc_size)
            register(f"fc{i}", dense)
            self.head += [dense, ReLU(), Dropout(spec.dropout_rate)]
            width = spec.fc_size
        out = Dense(width, 1)
        register("output", out)
        self.head += [out, Sigmoid()]

        offset = 0
        for slot in slots:
            slot.offset = offset
            offset += slot.size
        self._slots = slots
        if params is None:
            self.params = np.zeros(offset, DTYPE)
        else:
            params = np.ascontiguousarray(params, dtype=DTYPE)
            if params.shape != (offset,):
                raise ConfigurationError(
                    f"parameter vector has {params.size} entries, architecture needs {offset}")
            self.params = params.copy()
        self.grads = np.zeros(offset, DTYPE)
        for slot in slots:
            sl = slice(slot.offset, slot.offset + slot.size)
            setattr(slot.layer, slot.attr, self.params[sl].reshape(slot.shape))
            setattr(slot.layer, "grad_" + slot.attr, self.grads[sl].reshape(slot.shape))

    @property
    def manifest(self) -> list[dict]:
        return [{"name": s.name, "shape": list(s.shape), "offset": s.offset} for s in self._slots]

    @property
    def layers(self) -> list:
        return [layer for b in self.branches for layer in b.layers] + list(self.head)

    def param_tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(s.name, getattr(s.layer, s.attr)) for s in self._slots]

    def clone(self) -> "Model":
        return Model(self.spec, self.params)

    def _set_training(self, training: bool):
        for layer in self.head:
            if isinstance(layer, Dropout):
                layer.training = training

    def _check_views(self, views: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        checked = {}
        batch = None
        for bspec in self.spec.branches:
            if bspec.view not in views:
                raise ViewError(f"missing {bspec.view!r} view for architecture {self.spec.name}")
            x = np.asarray(views[bspec.view], dtype=DTYPE)
            if x.ndim == 1:
                x = x[None]
            if x.ndim != 2 or x.shape[1] != bspec.input_length:
                raise ViewError(
                    f"{bspec.view} view must have length {bspec.input_length}, got shape {x.shape}")
            if batch is not None and x.shape[0] != batch:
                raise ViewError("views disagree on batch size")
            batch = x.shape[0]
            checked[bspec.view] = x
        return checked

    def forward(self, views: Mapping[str, np.ndarray], training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Probabilities of the positive class, one per example (shape ``(batch,)``).

        ``views`` maps view names to ``(batch, length)`` arrays (a single 1D
        example is accepted too). Training mode applies dropout drawn from
        ``rng``; evaluation mode is deterministic.
        """
        views = self._check_views(views)
        self._set_training(training)
        feats = []
        self._branch_shapes = []
        for branch in self.branches:
            h = views[branch.spec.view][:, :, None]
            for layer in branch.layers:
                h = layer.forward(h)
            self._branch_shapes.append(h.shape)
            feats.append(h.transpose(0, 2, 1).reshape(h.shape[0], -1))
        h = feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1)
        for layer in self.head:
            h = layer.forward(h, rng) if isinstance(layer, Dropout) else layer.forward(h)
        return check_finite(h[:, 0], "model output")

    def backward(self, grad_probs: np.ndarray) -> np.ndarray:
        """Back-propagate ``dL/dp`` (shape ``(batch,)``) and fill ``self.grads``."""
        g = np.asarray(grad_probs, dtype=DTYPE).reshape(-1, 1)
        for layer in reversed(self.head):
            g = layer.backward(g)
        start = 0
        for branch, shape in zip(self.branches, self._branch_shapes):
            batch, length, channels = shape
            size = length * channels
            gb = g[:, start:start + size].reshape(batch, channels, length).transpose(0, 2, 1)
            gb = np.ascontiguousarray(gb)
            start += size
            for layer in reversed(branch.layers):
                gb = layer.backward(gb)
        return self.grads

    def predict(self, views: Mapping[str, np.ndarray], batch_size: int = 256) -> np.ndarray:
        views = self._check_views(views)
        n = next(iter(views.values())).shape[0]
        out = np.empty(n, DTYPE)
        for start in range(0, n, batch_size):
            chunk = {k: v[start:start + batch_size] for k, v in views.items()}
            out[start:start + batch_size] = self.forward(chunk, training=False)
        return out

    def count_params(self, include_optimizer_slots: bool = False) -> int:
        return count_params(self, include_optimizer_slots)

    def summary(self) -> list[tuple[str, str, int]]:
        """``(name, layer description, parameter count)`` rows in declaration order."""
        rows = []
        seen = set()
        for slot in self._slots:
            if id(slot.layer) in seen:
                continue
            seen.add(id(slot.layer))
            n = sum(a.size for _, a in slot.layer.parameters())
            rows.append((slot.name.rsplit(".", 1)[0], repr(slot.layer), n))
        return rows


def build(spec: ArchitectureSpec, rng: np.random.Generator) -> Model:
    """Instantiate ``spec`` with Glorot-uniform weights and zero biases."""
    model = Model(spec)
    for slot in model._slots:
        if slot.attr == "weight":
            fan_in, fan_out = slot.layer.fans()
            view = getattr(slot.layer, slot.attr)
            view[...] = glorot_uniform(fan_in, fan_out, rng, slot.shape)
    return model


def count_params(model: Model, include_optimizer_slots: bool = False) -> int:
    """Trainable parameter count; ``include_optimizer_slots`` adds both Adam moments (x3)."""
    n = int(model.params.size)
    return 3 * n if include_optimizer_slots else n


def checkpoint_bytes(model: Model) -> bytes:
    header = {
        "spec": model.spec.to_dict(),
        "manifest": model.manifest,
        "param_count": int(model.params.size),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    prefix = _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(hbytes))
    return prefix + hbytes + model.params.astype("<f8").tobytes()


def save_checkpoint(model: Model, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(model))


def model_from_checkpoint_bytes(data: bytes) -> Model:
    if len(data) < len(CHECKPOINT_MAGIC) or data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic bytes (not a checkpoint)")
    if len(data) < _PREFIX.size:
        raise CheckpointTruncatedError("file ends inside the fixed header")
    _, version, hlen = _PREFIX.unpack_from(data)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}")
    body = _PREFIX.size + hlen
    if len(data) < body:
        raise CheckpointTruncatedError("file ends inside the JSON header")
    try:
        header = json.loads(data[_PREFIX.size:body].decode("utf-8"))
        spec = ArchitectureSpec.from_dict(header["spec"])
        count = int(header["param_count"])
    except (ValueError, KeyError, TypeError, ConfigurationError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}") from None
    payload = len(data) - body
    if payload < 8 * count:
        raise CheckpointTruncatedError(
            f"parameter payload has {payload} bytes, expected {8 * count}")
    if payload > 8 * count:
        raise CheckpointFormatError(f"{payload - 8 * count} trailing bytes after parameters")
    params = np.frombuffer(data, dtype="<f8", count=count, offset=body).astype(DTYPE)
    try:
        model = Model(spec, params)
    except ConfigurationError as exc:
        raise CheckpointFormatError(str(exc)) from None
    if model.manifest != header.get("manifest"):
        raise CheckpointFormatError("layer manifest does not match the architecture")
    return model


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        return model_from_checkpoint_bytes(fh.read())
