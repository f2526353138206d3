"""Finite-difference check of the network's analytic gradients on toy inputs."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .brep import feature_width
from .network import (
    GraphInput,
    ModelParams,
    NetworkConfig,
    embed_vertices,
    first_gat,
    forward,
    loss_ce,
    loss_sym,
    predict_logits,
    second_gat,
)

FD_STEP = 1e-5
GRAD_FLOOR = 1e-8
# central differences at FD_STEP carry roughly 1e-10 absolute roundoff,
# so relative error is measured against at least this magnitude
REL_ERROR_FLOOR = 1e-5
GRADCHECK_TOL = 1e-4
TOY_FEATURES = ("length", "reversed")

# parameter prefix -> first forward stage it enters
_STAGE_OF = {"face_mlp": 0, "edge_mlp": 0, "gat1": 1, "gat2": 2, "head": 3}


@dataclass
class GradcheckReport:
    max_rel_error: float
    networks: int
    coordinates: int
    checked: int
    skipped_kinks: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < GRADCHECK_TOL

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "networks": self.networks,
            "coordinates": self.coordinates,
            "checked": self.checked,
            "skipped_kinks": self.skipped_kinks,
            "seconds": self.seconds,
            "passed": self.passed,
        }


def random_graph(rng: np.random.Generator, n: int, width: int) -> GraphInput:
    """Random connected toy graph with mixed faces and edges."""
    is_face = rng.random(n) < 0.5
    links = [(i - 1, i) for i in range(1, n)]
    links += [(int(a), int(b)) for a, b in rng.integers(0, n, size=(n // 2, 2)) if a != b]
    edge_index = np.array(links, dtype=np.int64).T.reshape(2, -1)
    return GraphInput(rng.normal(size=(n, width)), is_face, edge_index)


def random_labels(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    labels = (rng.random((n, m)) < 0.15).astype(np.float64)
    labels[rng.integers(n), rng.integers(m)] = 1.0
    return labels


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERROR_FLOOR)


class _StagedLoss:
    """Loss recomputed from a given stage, reusing cached earlier stages.

    Stages: vertex MLPs, first GAT layer, second GAT layer, head plus loss.
    ReLU sign patterns of each stage are logged separately so a perturbation
    is compared only against the stages it actually recomputed.
    """

    def __init__(self, params: ModelParams, g1: GraphInput, g2: GraphInput, labels: np.ndarray):
        self.params, self.graphs, self.labels = params, (g1, g2), labels
        self.cache: list = [None] * 4
        self.base_value, self.base_kinks = self.evaluate(0)
        self.base_cache = list(self.cache)

    def evaluate(self, stage: int) -> tuple[float, list]:
        params = self.params
        kinks = []
        hs = self.cache[stage]
        layers = (first_gat, second_gat)
        for s in range(stage, 3):
            with ad.record_kinks() as log:
                if s == 0:
                    hs = tuple(embed_vertices(params, g) for g in self.graphs)
                else:
                    hs = tuple(layers[s - 1](params, h, g) for h, g in zip(hs, self.graphs))
            kinks.append(log)
            self.cache[s + 1] = hs
        with ad.record_kinks() as log:
            logits = predict_logits(params, *hs)
            value = (loss_ce(logits, self.labels) + loss_sym(logits, self.labels)).item()
        kinks.append(log)
        return value, kinks

    def perturbed(self, stage: int) -> tuple[float, bool]:
        """Loss from ``stage`` on, and whether every ReLU kept its base sign."""
        self.cache = list(self.base_cache)
        value, kinks = self.evaluate(stage)
        same = all(_same_pattern(a, b) for a, b in zip(self.base_kinks[stage:], kinks))
        return value, same


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_network(params: ModelParams, g1: GraphInput, g2: GraphInput, labels: np.ndarray,
                  step: float = FD_STEP) -> tuple[float, int, int, int]:
    """(max relative error, coordinates, checked, skipped at kinks) for one instance.

    Coordinates whose analytic and numeric gradients are both below the floor
    are not checked. A coordinate whose stencil flips any ReLU sign relative
    to the unperturbed pass is skipped, since the central difference there
    straddles a kink.
    """
    for p in params:
        p.grad = None
    with ad.Tape() as tape:
        logits = forward(params, g1, g2)
        loss = loss_ce(logits, labels) + loss_sym(logits, labels)
    tape.backward(loss)
    staged = _StagedLoss(params, g1, g2, labels)
    worst, total, checked, skipped = 0.0, 0, 0, 0
    for name, p in params.tensors.items():
        stage = _STAGE_OF[name.split(".")[0]]
        analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            total += 1
            orig = flat[i]
            flat[i] = orig + step
            up, same_up = staged.perturbed(stage)
            flat[i] = orig - step
            down, same_down = staged.perturbed(stage)
            flat[i] = orig
            if not (same_up and same_down):
                skipped += 1
                continue
            numeric = (up - down) / (2 * step)
            a = float(analytic[i])
            if max(abs(a), abs(numeric)) <= GRAD_FLOOR:
                continue
            checked += 1
            worst = max(worst, rel_error(a, numeric))
    return worst, total, checked, skipped


def gradcheck(seed: int = 0, networks: int = 20, width: int = 8, max_vertices: int = 6) -> GradcheckReport:
    """Check (loss_ce + loss_sym) gradients over randomly initialized toy networks."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    in_width = feature_width(TOY_FEATURES)
    worst, total, checked, skipped = 0.0, 0, 0, 0
    for _ in range(networks):
        config = NetworkConfig(features=TOY_FEATURES, hidden=width)
        params = ModelParams.init(config, int(rng.integers(2**31)))
        n, m = (int(x) for x in rng.integers(1, max_vertices + 1, size=2))
        g1, g2 = random_graph(rng, n, in_width), random_graph(rng, m, in_width)
        labels = random_labels(rng, n, m)
        w, t, c, s = check_network(params, g1, g2, labels)
        worst = max(worst, w)
        total, checked, skipped = total + t, checked + c, skipped + s
    return GradcheckReport(worst, networks, total, checked, skipped, time.perf_counter() - start)
