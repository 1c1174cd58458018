"""Feedforward ReLU networks: representation, evaluation and file formats.

Two on-disk formats are supported:

* JSON: ``{"layers": [{"weights": [[...]], "bias": [...]}, {"relu": true}, ...]}``
* ACAS Xu ``.nnet`` text files. Input normalization (means/ranges) and output
  de-normalization are folded into the first and last affine layers, so the
  loaded network consumes raw inputs.

Neurons are numbered globally by *position*: position 0 holds the inputs and
position ``k`` holds the outputs of ``layers[k-1]``. Labels are 0-based.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ParseError, ShapeError


@dataclass(frozen=True, eq=False)
class Affine:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {w.shape}")
        if w.shape[0] != b.shape[0]:
            raise ShapeError(f"weights {w.shape} do not match bias length {b.shape[0]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ShapeError("affine parameters contain NaN or Inf")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class ReLU:
    pass


Layer = Union[Affine, ReLU]


@dataclass(frozen=True, eq=False)
class InputBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ShapeError(f"box bounds differ in length: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ShapeError("box has lower > upper")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def ball(cls, center, radius: float) -> "InputBox":
        """L-infinity ball of ``radius`` around ``center``."""
        c = np.asarray(center, dtype=float).reshape(-1)
        return cls(c - radius, c + radius)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple
    # Valid input domain from a .nnet header; informational only.
    input_domain: InputBox | None = field(default=None)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ShapeError("network needs at least one layer")
        if not isinstance(layers[-1], Affine):
            raise ShapeError("final layer must be affine")
        width = None
        for k, layer in enumerate(layers):
            if isinstance(layer, Affine):
                if width is not None and layer.in_width != width:
                    raise ShapeError(
                        f"layer {k} expects width {layer.in_width}, previous layer gives {width}"
                    )
                width = layer.out_width
            elif not isinstance(layer, ReLU):
                raise ShapeError(f"unsupported layer type {type(layer).__name__}")
        first_affine = next(layer for layer in layers if isinstance(layer, Affine))
        sizes = [first_affine.in_width]
        for layer in layers:
            sizes.append(layer.out_width if isinstance(layer, Affine) else sizes[-1])
        object.__setattr__(self, "_sizes", tuple(sizes))
        object.__setattr__(self, "_offsets", tuple(np.cumsum([0] + sizes[:-1]).tolist()))

    @property
    def input_dim(self) -> int:
        return self._sizes[0]

    @property
    def output_dim(self) -> int:
        return self._sizes[-1]

    @property
    def sizes(self) -> tuple:
        """Width of every position (inputs first)."""
        return self._sizes

    @property
    def offsets(self) -> tuple:
        """Global index of the first neuron at every position."""
        return self._offsets

    @property
    def num_neurons(self) -> int:
        return int(sum(self._sizes))

    @property
    def relu_positions(self) -> list[int]:
        return [k + 1 for k, layer in enumerate(self.layers) if isinstance(layer, ReLU)]

    @property
    def relu_count(self) -> int:
        return sum(self._sizes[p] for p in self.relu_positions)

    def position_of(self, index: int) -> tuple[int, int]:
        """Map a global neuron index to (position, index within position)."""
        if not 0 <= index < self.num_neurons:
            raise IndexError(f"neuron {index} out of range")
        p = int(np.searchsorted(self._offsets, index, side="right")) - 1
        return p, index - self._offsets[p]

    def output_index(self, label: int) -> int:
        return self._offsets[-1] + label


def forward_all(net: Network, x) -> list[np.ndarray]:
    """Values at every position; ``x`` may be a single input or a batch (rows)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise ShapeError(f"input has {x.shape[-1]} entries, network expects {net.input_dim}")
    values = [x]
    for layer in net.layers:
        if isinstance(layer, Affine):
            x = x @ layer.weights.T + layer.bias
        else:
            x = np.maximum(x, 0.0)
        values.append(x)
    return values


def forward(net: Network, x) -> np.ndarray:
    return forward_all(net, x)[-1]


def classify(net: Network, x):
    """Index of the largest output; ties go to the lowest index (``np.argmax``)."""
    return np.argmax(forward(net, x), axis=-1)


# --------------------------------------------------------------------- JSON


def network_from_dict(data: dict) -> Network:
    try:
        entries = data["layers"]
    except (KeyError, TypeError) as exc:
        raise ParseError("missing 'layers' list") from exc
    layers: list = []
    for k, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ParseError(f"layer {k} is not an object")
        if entry.get("relu"):
            layers.append(ReLU())
        elif "weights" in entry and "bias" in entry:
            try:
                w = np.array(entry["weights"], dtype=float)
                b = np.array(entry["bias"], dtype=float)
            except (TypeError, ValueError) as exc:
                raise ParseError(f"layer {k}: non-numeric parameters") from exc
            layers.append(Affine(w, b))
        else:
            raise ParseError(f"layer {k}: expected weights/bias or relu")
    return Network(tuple(layers))


def network_to_dict(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        if isinstance(layer, ReLU):
            layers.append({"relu": True})
        else:
            layers.append({"weights": layer.weights.tolist(), "bias": layer.bias.tolist()})
    return {"layers": layers}


# --------------------------------------------------------------------- .nnet


def _csv_floats(line: str) -> list[float]:
    return [float(tok) for tok in line.strip().split(",") if tok.strip()]


def parse_nnet(text: str) -> Network:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("//")]
    try:
        num_layers, input_size, output_size = (int(v) for v in _csv_floats(lines[0])[:3])
        sizes = [int(v) for v in _csv_floats(lines[1])]
        # lines[2] is the symmetry flag, ignored
        mins = _csv_floats(lines[3])
        maxes = _csv_floats(lines[4])
        means = _csv_floats(lines[5])
        ranges = _csv_floats(lines[6])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"malformed .nnet header: {exc}") from exc
    if len(sizes) != num_layers + 1 or sizes[0] != input_size or sizes[-1] != output_size:
        raise ShapeError(f"layer sizes {sizes} inconsistent with header")
    if len(means) < input_size + 1 or len(ranges) < input_size + 1:
        raise ParseError("normalization lines are too short")

    body = lines[7:]
    cursor = 0
    weights, biases = [], []
    try:
        for k in range(num_layers):
            rows, cols = sizes[k + 1], sizes[k]
            w = np.array([_csv_floats(body[cursor + i])[:cols] for i in range(rows)], dtype=float)
            cursor += rows
            b = np.array([_csv_floats(body[cursor + i])[0] for i in range(rows)], dtype=float)
            cursor += rows
            if w.shape != (rows, cols):
                raise ShapeError(f"layer {k} weights have shape {w.shape}, expected {(rows, cols)}")
            weights.append(w)
            biases.append(b)
    except (IndexError, ValueError) as exc:
        raise ParseError(f"truncated or malformed .nnet body: {exc}") from exc

    in_mean = np.array(means[:input_size])
    in_range = np.array(ranges[:input_size])
    out_mean, out_range = means[input_size], ranges[input_size]
    if np.any(in_range == 0) or out_range == 0:
        raise ParseError("zero normalization range")
    # x_norm = (x - mean) / range  folded into layer 0
    weights[0] = weights[0] / in_range
    biases[0] = biases[0] - weights[0] @ in_mean
    # y = y_norm * range + mean  folded into the last layer
    weights[-1] = weights[-1] * out_range
    biases[-1] = biases[-1] * out_range + out_mean

    layers: list = []
    for k in range(num_layers):
        layers.append(Affine(weights[k], biases[k]))
        if k < num_layers - 1:
            layers.append(ReLU())
    domain = None
    if len(mins) >= input_size and len(maxes) >= input_size:
        domain = InputBox(mins[:input_size], maxes[:input_size])
    return Network(tuple(layers), input_domain=domain)


def nnet_text(net: Network) -> str:
    """Serialize a Affine/ReLU-alternating network to ``.nnet`` with identity normalization."""
    affines = [layer for layer in net.layers if isinstance(layer, Affine)]
    expected = []
    for k in range(len(affines)):
        expected.append(Affine)
        if k < len(affines) - 1:
            expected.append(ReLU)
    if [type(layer) for layer in net.layers] != expected:
        raise ShapeError(".nnet requires alternating affine/ReLU layers")
    sizes = [net.input_dim] + [a.out_width for a in affines]
    m = net.input_dim
    if net.input_domain is not None:
        mins, maxes = net.input_domain.lower.tolist(), net.input_domain.upper.tolist()
    else:
        mins, maxes = [-math.inf] * m, [math.inf] * m

    def row(values) -> str:
        return ",".join(repr(float(v)) for v in values) + ","

    out = [
        "// written by polyrefine",
        f"{len(affines)},{m},{net.output_dim},{max(sizes)},",
        ",".join(str(s) for s in sizes) + ",",
        "0,",
        row(mins),
        row(maxes),
        row([0.0] * (m + 1)),
        row([1.0] * (m + 1)),
    ]
    for a in affines:
        out.extend(row(w_row) for w_row in a.weights)
        out.extend(row([b]) for b in a.bias)
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------- files


def _guess_format(path: Path) -> str:
    return "nnet" if path.suffix.lower() == ".nnet" else "json"


def load_network(path, format: str | None = None) -> Network:
    path = Path(path)
    fmt = format or _guess_format(path)
    text = path.read_text()
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return network_from_dict(data)
    if fmt == "nnet":
        return parse_nnet(text)
    raise ParseError(f"unknown network format {fmt!r}")


def save_network(net: Network, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt == "json":
        path.write_text(json.dumps(network_to_dict(net)))
    elif fmt == "nnet":
        path.write_text(nnet_text(net))
    else:
        raise ParseError(f"unknown network format {fmt!r}")


def random_network(rng: np.random.Generator, sizes: Sequence[int], scale: float = 1.0) -> Network:
    """Gaussian-initialized ReLU network with the given position widths."""
    layers: list = []
    for k in range(len(sizes) - 1):
        w = rng.normal(0.0, scale / np.sqrt(sizes[k]), size=(sizes[k + 1], sizes[k]))
        b = rng.normal(0.0, 0.5 * scale, size=sizes[k + 1])
        layers.append(Affine(w, b))
        if k < len(sizes) - 2:
            layers.append(ReLU())
    return Network(tuple(layers))
