"""Siamese B-Rep encoder and dense joint-link prediction head.

Each part's vertex features go through a face MLP or an edge MLP depending on
the vertex kind, then two GATv2 layers propagate over the part's adjacency.
A 3-layer MLP scores every (u, v) pair of the two parts' embeddings; the
resulting n x m logit matrix is trained with an all-cells cross entropy plus a
row/column ("symmetric") cross entropy.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .brep import DEFAULT_FEATURES, ConnectivityIndex, PartGraph, feature_width, featurize
from .errors import CheckpointError, EmptyGraph, NoPositiveLabels, ShapeMismatch


@dataclass
class NetworkConfig:
    features: tuple = tuple(sorted(DEFAULT_FEATURES))
    hidden: int = 384
    attention_slope: float = 0.2

    @property
    def in_features(self) -> int:
        return feature_width(self.features)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ModelParams:
    """Ordered named weights plus the config that shaped them."""

    def __init__(self, config: NetworkConfig, tensors: "OrderedDict[str, Tensor]"):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    @classmethod
    def init(cls, config: Optional[NetworkConfig] = None, seed: int = 0) -> "ModelParams":
        config = config or NetworkConfig()
        rng = np.random.default_rng(seed)
        f, h = config.in_features, config.hidden
        shapes: list[tuple[str, tuple[int, int] | tuple[int]]] = []
        for mlp in ("face_mlp", "edge_mlp"):
            shapes += [(f"{mlp}.w1", (f, h)), (f"{mlp}.b1", (h,)), (f"{mlp}.w2", (h, h)), (f"{mlp}.b2", (h,))]
        for gat in ("gat1", "gat2"):
            shapes += [
                (f"{gat}.w_src", (h, h)),
                (f"{gat}.w_dst", (h, h)),
                (f"{gat}.att", (h, 1)),
                (f"{gat}.bias", (h,)),
            ]
        shapes += [
            ("head.w1", (2 * h, h)),
            ("head.b1", (h,)),
            ("head.w2", (h, h)),
            ("head.b2", (h,)),
            ("head.w3", (h, 1)),
            ("head.b3", (1,)),
        ]
        tensors = OrderedDict()
        for name, shape in shapes:
            data = _glorot(rng, *shape) if len(shape) == 2 else np.zeros(shape)
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(config, tensors)

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data) for k, t in self.tensors.items())

    def meta(self) -> dict:
        cfg = asdict(self.config)
        cfg["features"] = list(cfg["features"])
        return {"network": cfg}

    def save(self, path, extra_meta: Optional[dict] = None):
        meta = self.meta()
        if extra_meta:
            meta.update(extra_meta)
        return ad.save_tensors(path, self.arrays(), meta)

    @classmethod
    def load(cls, path) -> "ModelParams":
        arrays, meta = ad.load_tensors(path)
        try:
            cfg = dict(meta["network"])
        except KeyError:
            raise CheckpointError("checkpoint has no network config") from None
        cfg["features"] = tuple(cfg["features"])
        config = NetworkConfig(**cfg)
        template = cls.init(config)
        for name, tensor in template.tensors.items():
            if name not in arrays or arrays[name].shape != tensor.shape:
                raise CheckpointError(f"checkpoint tensor {name!r} missing or misshapen")
            tensor.data = arrays[name].copy()
        return template

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            OrderedDict(
                (k, Tensor(t.data.copy(), requires_grad=True, name=k)) for k, t in self.tensors.items()
            ),
        )


@dataclass
class GraphInput:
    """Everything the encoder needs from one part."""

    features: np.ndarray
    is_face: np.ndarray
    edge_index: np.ndarray
    nurbs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.nurbs is None:
            self.nurbs = np.zeros(len(self.is_face), dtype=bool)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @classmethod
    def from_part(cls, part: PartGraph, features: Iterable[str] = DEFAULT_FEATURES) -> "GraphInput":
        return cls(featurize(part, features), part.kinds, part.edge_index(), part.nurbs_mask)


def _mlp2(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    hidden = ad.relu(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    return hidden @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]


def _with_self_loops(edge_index: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Both link directions plus one self-loop per vertex: (sources, targets)."""
    s, t = edge_index
    loops = np.arange(n)
    return np.concatenate([s, t, loops]), np.concatenate([t, s, loops])


def gatv2_layer(params: ModelParams, prefix: str, h: Tensor, src: np.ndarray, dst: np.ndarray) -> Tensor:
    """Single-head GATv2: score = att . LeakyReLU(W_src h_j + W_dst h_i)."""
    n = h.shape[0]
    x_src = h @ params[f"{prefix}.w_src"]
    x_dst = h @ params[f"{prefix}.w_dst"]
    msg = ad.gather_rows(x_src, src)
    pre = ad.leaky_relu(msg + ad.gather_rows(x_dst, dst), params.config.attention_slope)
    scores = ad.reshape(pre @ params[f"{prefix}.att"], (len(src),))
    alpha = ad.segment_softmax(scores, dst, n)
    out = ad.scatter_add_rows(ad.scale_rows(msg, alpha), dst, n)
    return out + params[f"{prefix}.bias"]


def embed_vertices(params: ModelParams, graph: GraphInput) -> Tensor:
    """Per-kind MLP embeddings, one row per vertex in vertex order."""
    n = graph.n
    if n == 0:
        raise EmptyGraph("cannot encode an empty graph")
    if graph.features.shape[1] != params.config.in_features:
        raise ShapeMismatch(
            f"encode: feature shape {graph.features.shape} vs configured width "
            f"({n}, {params.config.in_features})"
        )
    x = Tensor(graph.features)
    face_idx = np.flatnonzero(graph.is_face)
    edge_idx = np.flatnonzero(~graph.is_face)
    blocks = []
    if face_idx.size:
        blocks.append(_mlp2(params, "face_mlp", ad.gather_rows(x, face_idx)))
    if edge_idx.size:
        blocks.append(_mlp2(params, "edge_mlp", ad.gather_rows(x, edge_idx)))
    stacked = blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=0)
    order = np.concatenate([face_idx, edge_idx])
    return ad.gather_rows(stacked, np.argsort(order, kind="stable"))


def first_gat(params: ModelParams, h: Tensor, graph: GraphInput) -> Tensor:
    src, dst = _with_self_loops(graph.edge_index, graph.n)
    return ad.relu(gatv2_layer(params, "gat1", h, src, dst))


def second_gat(params: ModelParams, h: Tensor, graph: GraphInput) -> Tensor:
    src, dst = _with_self_loops(graph.edge_index, graph.n)
    return gatv2_layer(params, "gat2", h, src, dst)


def encode(params: ModelParams, graph: GraphInput) -> Tensor:
    """Per-vertex embeddings (n x hidden) for one part."""
    h = embed_vertices(params, graph)
    return second_gat(params, first_gat(params, h, graph), graph)


def predict_logits(params: ModelParams, h1: Tensor, h2: Tensor, idx: Optional[ConnectivityIndex] = None) -> Tensor:
    """n x m joint logits, head(h_u ++ h_v) for every cross-part pair.

    The first head layer acting on a concatenation splits into one matmul per
    part, which avoids materialising the n*m x 2H input.
    """
    hid = params.config.hidden
    if h1.ndim != 2 or h2.ndim != 2 or h1.shape[1] != hid or h2.shape[1] != hid:
        raise ShapeMismatch(f"predict_logits: embedding shapes {h1.shape} and {h2.shape}, width {hid}")
    n, m = h1.shape[0], h2.shape[0]
    idx = idx or ConnectivityIndex(n, m)
    if (idx.n, idx.m) != (n, m):
        raise ShapeMismatch(f"predict_logits: index {idx.n}x{idx.m} vs embeddings {n}x{m}")
    w1 = params["head.w1"]
    part_u = h1 @ ad.gather_rows(w1, np.arange(hid))
    part_v = h2 @ ad.gather_rows(w1, np.arange(hid, 2 * hid))
    z = ad.gather_rows(part_u, idx.sources()) + ad.gather_rows(part_v, idx.targets())
    z = ad.relu(z + params["head.b1"])
    z = ad.relu(z @ params["head.w2"] + params["head.b2"])
    out = z @ params["head.w3"] + params["head.b3"]
    return ad.reshape(out, (n, m))


def forward(params: ModelParams, g1: GraphInput, g2: GraphInput) -> Tensor:
    return predict_logits(params, encode(params, g1), encode(params, g2))


def valid_mask(g1: GraphInput, g2: GraphInput) -> np.ndarray:
    """Cells eligible as predictions: neither entity is NURBS."""
    return ~g1.nurbs[:, None] & ~g2.nurbs[None, :]


def masked_scores(logits, mask: Optional[np.ndarray] = None) -> np.ndarray:
    data = np.array(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    if mask is not None:
        data[~mask] = -np.inf
    return data


def _target(labels: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if mask is not None:
        labels = np.where(mask, labels, 0.0)
    total = labels.sum()
    if total <= 0:
        raise NoPositiveLabels("label matrix has no positive entry")
    return labels / total


def loss_ce(logits: Tensor, labels: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Cross entropy of the normalized labels against a softmax over all cells."""
    if logits.shape != np.shape(labels):
        raise ShapeMismatch(f"loss_ce: logits {logits.shape} vs labels {np.shape(labels)}")
    target = Tensor(_target(labels, mask))
    return -ad.sum_(target * ad.log_softmax(logits, None, mask))


def loss_sym(logits: Tensor, labels: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-softmax plus column-softmax cross entropy of the label matrix."""
    if logits.shape != np.shape(labels):
        raise ShapeMismatch(f"loss_sym: logits {logits.shape} vs labels {np.shape(labels)}")
    target = Tensor(_target(labels, mask))
    rows = ad.sum_(target * ad.log_softmax(logits, 1, mask))
    cols = ad.sum_(target * ad.log_softmax(logits, 0, mask))
    return -(rows + cols)


def top_k(logits, k: int, mask: Optional[np.ndarray] = None) -> list[tuple[int, int, float]]:
    """Highest-scoring cells, ties broken in row-major order; masked cells skipped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = masked_scores(logits, mask)
    n, m = scores.shape
    flat = scores.reshape(-1)
    order = np.argsort(-flat, kind="stable")
    out = []
    for cell in order:
        if not np.isfinite(flat[cell]) and flat[cell] < 0:
            break
        out.append((int(cell // m), int(cell % m), float(flat[cell])))
        if len(out) == k:
            break
    return out
