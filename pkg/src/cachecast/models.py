"""The six demand predictors behind one interface.

Learned kinds (CNN-LSTM, LSTM, GRU, RNN) map a normalized feature sequence to
one demand estimate per step through a dense head. The two heuristics score
blocks from raw feature columns:

* LRU: ``1 / (1 + recency_gap_t)``
* LFU: cumulative block accesses through t over cumulative global load
"""

from __future__ import annotations

import base64
import enum
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import InvalidSpec, MissingForwardTrace, ShapeMismatch
from .features import COUNT_COL, LOAD_COL, NUM_FEATURES, RECENCY_COL, DemandSeries, FeatureMatrix, NormStats


class Kind(str, enum.Enum):
    CNN_LSTM = "cnn-lstm"
    LSTM = "lstm"
    GRU = "gru"
    RNN = "rnn"
    LRU = "lru"
    LFU = "lfu"

    @property
    def learned(self) -> bool:
        return self not in (Kind.LRU, Kind.LFU)

    @property
    def display(self) -> str:
        return _DISPLAY[self]


_DISPLAY = {Kind.CNN_LSTM: "CNN-LSTM", Kind.LSTM: "LSTM", Kind.GRU: "GRU-RNN",
            Kind.RNN: "RNN", Kind.LRU: "LRU", Kind.LFU: "LFU"}
TABLE1_ORDER = (Kind.LRU, Kind.LFU, Kind.RNN, Kind.GRU, Kind.LSTM, Kind.CNN_LSTM)
DEFAULT_CONV_LAYERS = ((16, 3), (8, 3))
DEFAULT_HIDDEN = 16


@dataclass(frozen=True)
class ArchSpec:
    kind: Kind
    conv_layers: tuple[tuple[int, int], ...] = ()
    hidden_size: int = DEFAULT_HIDDEN
    seed: int = 0
    input_size: int = NUM_FEATURES
    conv_activation: str = "relu"
    conv_padding: str = "causal"

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "conv_layers",
                           tuple((int(c), int(k)) for c, k in self.conv_layers))
        if self.conv_layers and self.kind is not Kind.CNN_LSTM:
            raise InvalidSpec("conv_layers are only valid for cnn-lstm")
        if self.kind is Kind.CNN_LSTM and not self.conv_layers:
            raise InvalidSpec("cnn-lstm needs at least one conv layer")
        for c, k in self.conv_layers:
            if c < 1 or k < 1 or k % 2 == 0:
                raise InvalidSpec(f"conv layer ({c}, {k}) needs channels >= 1 and odd k")
        if self.kind.learned and self.hidden_size < 1:
            raise InvalidSpec("hidden_size must be >= 1")
        if self.input_size < 1:
            raise InvalidSpec("input_size must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpec("seed must be a 64-bit unsigned integer")
        if self.conv_activation not in ("relu", "identity"):
            raise InvalidSpec(f"unknown conv activation {self.conv_activation!r}")
        if self.conv_padding not in ("causal", "same"):
            raise InvalidSpec(f"unknown conv padding {self.conv_padding!r}")

    @classmethod
    def default(cls, kind: Kind | str, seed: int = 0, hidden_size: int = DEFAULT_HIDDEN) -> "ArchSpec":
        kind = Kind(kind)
        conv = DEFAULT_CONV_LAYERS if kind is Kind.CNN_LSTM else ()
        return cls(kind, conv, hidden_size, seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["conv_layers"] = [list(x) for x in self.conv_layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        d = dict(d)
        d["conv_layers"] = tuple(tuple(x) for x in d.get("conv_layers", ()))
        return cls(**d)


class Model:
    """Parameters for one ArchSpec plus the input normalization it was trained with."""

    def __init__(self, spec: ArchSpec, conv=None, recurrent=None, head=None,
                 norm: NormStats | None = None):
        self.spec = spec
        self.conv: list[nn.Conv1dParams] = list(conv or [])
        self.recurrent = recurrent
        self.head: nn.DenseParams | None = head
        self.norm = norm
        self._check()

    def _check(self):
        s = self.spec
        if not s.kind.learned:
            if self.conv or self.recurrent is not None or self.head is not None:
                raise InvalidSpec("heuristic models carry no parameters")
            return
        width = s.input_size
        if len(self.conv) != len(s.conv_layers):
            raise ShapeMismatch("conv stack does not match spec")
        for p, (c, k) in zip(self.conv, s.conv_layers):
            if p.W.shape != (c, width, k):
                raise ShapeMismatch(f"conv kernel {p.W.shape} != {(c, width, k)}")
            width = c
        expected = {Kind.CNN_LSTM: nn.LstmParams, Kind.LSTM: nn.LstmParams,
                    Kind.GRU: nn.GruParams, Kind.RNN: nn.RnnParams}[s.kind]
        r = self.recurrent
        if not isinstance(r, expected) or r.hidden != s.hidden_size or r.input_size != width:
            raise ShapeMismatch("recurrent layer does not match spec")
        if self.head is None or self.head.W.shape != (1, s.hidden_size):
            raise ShapeMismatch("dense head does not match spec")

    @property
    def kind(self) -> Kind:
        return self.spec.kind

    def layers(self):
        """(prefix, params) pairs in a fixed order."""
        out = [(f"conv{i}", p) for i, p in enumerate(self.conv)]
        if self.recurrent is not None:
            out.append((self.kind.value.split("-")[-1], self.recurrent))
        if self.head is not None:
            out.append(("dense", self.head))
        return out

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{prefix}.{k}", v) for prefix, p in self.layers() for k, v in p.arrays().items()]

    def copy(self) -> "Model":
        return Model(self.spec, [p.copy() for p in self.conv],
                     self.recurrent.copy() if self.recurrent is not None else None,
                     self.head.copy() if self.head is not None else None, self.norm)

    # -- learned forward/backward on already-normalized inputs -------------

    def forward(self, Xn: np.ndarray):
        if not self.kind.learned:
            raise InvalidSpec("heuristic models have no learned forward pass")
        Xb = np.asarray(Xn, dtype=np.float64)
        if Xb.ndim != 3 or Xb.shape[2] != self.spec.input_size:
            raise ShapeMismatch(f"expected (B, T, {self.spec.input_size}) input, got {Xb.shape}")
        cache = {"conv": []}
        h = Xb
        for p in self.conv:
            h, c = nn.conv1d_forward_cached(h, p, self.spec.conv_activation, self.spec.conv_padding)
            cache["conv"].append(c)
        if isinstance(self.recurrent, nn.LstmParams):
            H, cache["rec"] = nn.lstm_forward(h, self.recurrent)
        elif isinstance(self.recurrent, nn.GruParams):
            H, cache["rec"] = nn.gru_forward(h, self.recurrent)
        else:
            H, cache["rec"] = nn.rnn_forward(h, self.recurrent)
        cache["H"] = H
        return nn.dense(H, self.head), cache

    def backward(self, cache, dpred: np.ndarray) -> dict[str, np.ndarray]:
        if not cache:
            raise MissingForwardTrace("backward needs the cache returned by forward")
        dH, g_head = nn.dense_backward(dpred, cache["H"], self.head)
        backward = {nn.LstmParams: nn.lstm_backward, nn.GruParams: nn.gru_backward,
                    nn.RnnParams: nn.rnn_backward}[type(self.recurrent)]
        dh, g_rec = backward(dH, cache["rec"])
        grads = {}
        for i in range(len(self.conv) - 1, -1, -1):
            dh, g = nn.conv1d_backward(dh, cache["conv"][i])
            grads.update({f"conv{i}.{k}": v for k, v in g.items()})
        rec_prefix = self.kind.value.split("-")[-1]
        grads.update({f"{rec_prefix}.{k}": v for k, v in g_rec.items()})
        grads.update({f"dense.{k}": v for k, v in g_head.items()})
        return grads

    def loss(self, Xn, y) -> float:
        pred, _ = self.forward(Xn)
        return nn.mse(pred, y)

    def loss_and_grads(self, Xn, y):
        pred, cache = self.forward(Xn)
        return nn.mse(pred, y), self.backward(cache, nn.mse_grad(pred, y))

    # -- serialization -----------------------------------------------------

    def to_payload(self) -> dict:
        blobs = []
        for name, arr in self.named_parameters():
            blobs.append({"name": name, "shape": list(arr.shape),
                          "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode()})
        return {"spec": self.spec.to_dict(), "params": blobs,
                "norm": self.norm.to_dict() if self.norm is not None else None}

    @classmethod
    def from_payload(cls, payload: dict) -> "Model":
        spec = ArchSpec.from_dict(payload["spec"])
        model = init_model(spec)
        norm = payload.get("norm")
        model.norm = NormStats.from_dict(norm) if norm else None
        live = dict(model.named_parameters())
        stored = payload["params"]
        if sorted(b["name"] for b in stored) != sorted(live):
            raise ShapeMismatch("checkpoint parameter names do not match spec")
        for blob in stored:
            arr = np.frombuffer(base64.b64decode(blob["data"], validate=True), dtype="<f8")
            target = live[blob["name"]]
            if list(target.shape) != list(blob["shape"]) or arr.size != target.size:
                raise ShapeMismatch(f"shape mismatch for {blob['name']}")
            target[...] = arr.reshape(target.shape)
        return model


def _layer_rng(seed: int, layer: int) -> np.random.Generator:
    # Philox is counter-based; the 128-bit key packs (layer, seed)
    return np.random.Generator(np.random.Philox(key=(layer << 64) | seed))


def init_model(spec: ArchSpec) -> Model:
    """Uniform(-s, s) weights with s = sqrt(1 / fan_in); zero biases except the
    LSTM forget gate, which starts at 1."""
    if not spec.kind.learned:
        return Model(spec)
    layer = 0
    conv = []
    width = spec.input_size
    for c, k in spec.conv_layers:
        rng = _layer_rng(spec.seed, layer)
        s = np.sqrt(1.0 / (width * k))
        conv.append(nn.Conv1dParams(rng.uniform(-s, s, (c, width, k)), np.zeros(c)))
        width = c
        layer += 1

    H = spec.hidden_size
    rng = _layer_rng(spec.seed, layer)
    s = np.sqrt(1.0 / (H + width))

    def gate():
        return rng.uniform(-s, s, (H, H + width))

    if spec.kind in (Kind.CNN_LSTM, Kind.LSTM):
        rec = nn.LstmParams(gate(), gate(), gate(), gate(),
                            np.zeros(H), np.ones(H), np.zeros(H), np.zeros(H))
    elif spec.kind is Kind.GRU:
        rec = nn.GruParams(gate(), gate(), gate(), np.zeros(H), np.zeros(H), np.zeros(H))
    else:
        rec = nn.RnnParams(gate(), np.zeros(H))
    layer += 1

    rng = _layer_rng(spec.seed, layer)
    s = np.sqrt(1.0 / H)
    head = nn.DenseParams(rng.uniform(-s, s, (1, H)), np.zeros(1))
    return Model(spec, conv, rec, head)


def _heuristic(kind: Kind, Xraw: np.ndarray) -> np.ndarray:
    if kind is Kind.LRU:
        return 1.0 / (1.0 + Xraw[..., RECENCY_COL])
    counts = np.cumsum(Xraw[..., COUNT_COL], axis=-1)
    load = np.cumsum(Xraw[..., LOAD_COL], axis=-1)
    return np.divide(counts, load, out=np.zeros_like(counts), where=load > 0)


def predict_array(model: Model, Xraw: np.ndarray) -> np.ndarray:
    """Predictions for raw (un-normalized) features of shape (T, N) or (B, T, N)."""
    Xraw = np.asarray(Xraw, dtype=np.float64)
    if Xraw.ndim not in (2, 3) or Xraw.shape[-1] != model.spec.input_size:
        raise ShapeMismatch(f"expected (..., T, {model.spec.input_size}) features, got {Xraw.shape}")
    if not model.kind.learned:
        return _heuristic(model.kind, Xraw)
    Xn = model.norm.apply(Xraw) if model.norm is not None else Xraw
    squeeze = Xn.ndim == 2
    pred, _ = model.forward(Xn[None] if squeeze else Xn)
    return pred[0] if squeeze else pred


def predict_sequence(model: Model, X: FeatureMatrix) -> DemandSeries:
    return DemandSeries(X.block_id, predict_array(model, X.values))


def count_params(model: Model) -> int:
    return int(sum(arr.size for _, arr in model.named_parameters()))
