"""Model parameters and forward scoring for BoxE and MLP-BoxE.

Every entity carries a position embedding and a translational bump
embedding.  In a binary fact the head's scored point is its position
translated by the tail's bump, and vice versa; unary facts score the bare
position against a class box.  In feature mode ("mlp-boxe") two MLPs map
node features to position/bump space and their outputs are summed with the
(scaled) embeddings.

Trainable boxes are parametrized by a free center and a free ``size_raw``
vector; the box extent is ``softplus(size_raw) > 0`` so corners cannot
invert during optimization.  ``ExplicitConfig`` is the raw, materialized
view (points plus box corners) that scoring, evaluation, and the
expressiveness oracle operate on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import autodiff as ad
from .data import DataError, Fact, Unary, Vocabulary
from .geometry import check_norm_order, lx_norm, piecewise_distance

if TYPE_CHECKING:
    from .autodiff import Tensor

MODE_BOXE = "boxe"
MODE_MLP_BOXE = "mlp-boxe"

CHECKPOINT_FORMAT = "boxkg-model"
CHECKPOINT_VERSION = 1


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def inv_softplus(y: np.ndarray) -> np.ndarray:
    """Inverse of softplus; maps 0 to -inf and is the identity for large y."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("inv_softplus requires non-negative input")
    with np.errstate(divide="ignore"):
        small = np.log(np.expm1(np.minimum(y, 30.0)))
    return np.where(y > 30.0, y, small)


# ---------------------------------------------------------------------------
# feature MLPs


@dataclass
class MlpParams:
    """Plain MLP: rectifier on hidden layers, identity on the output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias shape must match layer output")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ValueError("consecutive layer dimensions must chain")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def mlp_init(input_dim: int, hidden: tuple[int, ...], output_dim: int, rng) -> MlpParams:
    """Fan-in-scaled uniform initialization for weights and biases."""
    sizes = [input_dim, *hidden, output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases)


def mlp_forward(mlp: MlpParams, x: np.ndarray) -> np.ndarray:
    h = np.asarray(x, dtype=np.float64)
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def mlp_zeroed(input_dim: int, hidden: tuple[int, ...], output_dim: int) -> MlpParams:
    sizes = [input_dim, *hidden, output_dim]
    return MlpParams(
        [np.zeros((a, b)) for a, b in zip(sizes, sizes[1:])],
        [np.zeros(b) for b in sizes[1:]],
    )


# ---------------------------------------------------------------------------
# configuration and parameters


@dataclass(frozen=True)
class ModelConfig:
    d: int
    norm: int = 2
    mode: str = MODE_BOXE
    embedding_scale: float | None = None  # None -> 1.0 pure, 0.5 feature mode
    mlp_hidden: tuple[int, ...] = (1000, 1000)
    feature_dim: int | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimensionality must be >= 1")
        check_norm_order(self.norm)
        if self.mode not in (MODE_BOXE, MODE_MLP_BOXE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_MLP_BOXE and self.feature_dim is None:
            raise ValueError("feature mode requires feature_dim")
        object.__setattr__(self, "mlp_hidden", tuple(self.mlp_hidden))

    @property
    def feature_mode(self) -> bool:
        return self.mode == MODE_MLP_BOXE

    @property
    def scale(self) -> float:
        if self.embedding_scale is not None:
            return self.embedding_scale
        return 0.5 if self.feature_mode else 1.0


@dataclass
class ModelParams:
    config: ModelConfig
    point_emb: np.ndarray
    bump_emb: np.ndarray
    class_center: np.ndarray
    class_size_raw: np.ndarray
    rel_head_center: np.ndarray
    rel_head_size_raw: np.ndarray
    rel_tail_center: np.ndarray
    rel_tail_size_raw: np.ndarray
    mlp_point: MlpParams | None = None
    mlp_bump: MlpParams | None = None

    def __post_init__(self):
        if (self.mlp_point is None) != (self.mlp_bump is None):
            raise ValueError("both feature MLPs must be present, or neither")
        if self.config.feature_mode != (self.mlp_point is not None):
            raise ValueError("feature MLPs present iff feature mode enabled")

    @property
    def n_entities(self) -> int:
        return self.point_emb.shape[0]

    @property
    def n_classes(self) -> int:
        return self.class_center.shape[0]

    @property
    def n_relations(self) -> int:
        return self.rel_head_center.shape[0]

    @property
    def d(self) -> int:
        return self.config.d

    def param_dict(self) -> dict[str, np.ndarray]:
        """Named live views of every trainable array (shared, not copied)."""
        out = {
            "point_emb": self.point_emb,
            "bump_emb": self.bump_emb,
            "class_center": self.class_center,
            "class_size_raw": self.class_size_raw,
            "rel_head_center": self.rel_head_center,
            "rel_head_size_raw": self.rel_head_size_raw,
            "rel_tail_center": self.rel_tail_center,
            "rel_tail_size_raw": self.rel_tail_size_raw,
        }
        for prefix, mlp in (("mlp_point", self.mlp_point), ("mlp_bump", self.mlp_bump)):
            if mlp is not None:
                for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
                    out[f"{prefix}.w{i}"] = w
                    out[f"{prefix}.b{i}"] = b
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            point_emb=self.point_emb.copy(),
            bump_emb=self.bump_emb.copy(),
            class_center=self.class_center.copy(),
            class_size_raw=self.class_size_raw.copy(),
            rel_head_center=self.rel_head_center.copy(),
            rel_head_size_raw=self.rel_head_size_raw.copy(),
            rel_tail_center=self.rel_tail_center.copy(),
            rel_tail_size_raw=self.rel_tail_size_raw.copy(),
            mlp_point=None if self.mlp_point is None else self.mlp_point.copy(),
            mlp_bump=None if self.mlp_bump is None else self.mlp_bump.copy(),
        )


def init_params(
    counts: Vocabulary | tuple[int, int, int],
    config: ModelConfig,
    seed: int,
) -> ModelParams:
    """Seeded initialization: small uniform points, near-unit box widths."""
    if isinstance(counts, Vocabulary):
        n_e, n_c, n_r = counts.n_entities, counts.n_classes, counts.n_relations
    else:
        n_e, n_c, n_r = counts
    rng = np.random.default_rng(seed)
    d = config.d
    bound = 0.5 / np.sqrt(d)

    def points(n):
        return rng.uniform(-bound, bound, size=(n, d))

    def size_raw(n):
        return inv_softplus(rng.uniform(0.01, 0.1, size=(n, d)))

    mlp_point = mlp_bump = None
    if config.feature_mode:
        mlp_point = mlp_init(config.feature_dim, config.mlp_hidden, d, rng)
        mlp_bump = mlp_init(config.feature_dim, config.mlp_hidden, d, rng)

    return ModelParams(
        config=config,
        point_emb=points(n_e),
        bump_emb=points(n_e),
        class_center=points(n_c),
        class_size_raw=size_raw(n_c),
        rel_head_center=points(n_r),
        rel_head_size_raw=size_raw(n_r),
        rel_tail_center=points(n_r),
        rel_tail_size_raw=size_raw(n_r),
        mlp_point=mlp_point,
        mlp_bump=mlp_bump,
    )


def box_corners(center: np.ndarray, size_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    half = 0.5 * softplus(size_raw)
    return center - half, center + half


# ---------------------------------------------------------------------------
# explicit (materialized) configurations


@dataclass(eq=False)
class ExplicitConfig:
    """Raw scoring configuration: entity points and box corners."""

    positions: np.ndarray
    bumps: np.ndarray
    class_lower: np.ndarray
    class_upper: np.ndarray
    rel_head_lower: np.ndarray
    rel_head_upper: np.ndarray
    rel_tail_lower: np.ndarray
    rel_tail_upper: np.ndarray
    norm: int = 2

    def __post_init__(self):
        check_norm_order(self.norm)
        arrays = [
            self.positions,
            self.bumps,
            self.class_lower,
            self.class_upper,
            self.rel_head_lower,
            self.rel_head_upper,
            self.rel_tail_lower,
            self.rel_tail_upper,
        ]
        d = arrays[0].shape[1]
        for arr in arrays:
            if arr.ndim != 2 or arr.shape[1] != d:
                raise ValueError("all configuration arrays must be (n, d)")
            if not np.all(np.isfinite(arr)):
                raise ValueError("configuration arrays must be finite")
        if self.positions.shape != self.bumps.shape:
            raise ValueError("positions and bumps must have matching shapes")
        for lower, upper in (
            (self.class_lower, self.class_upper),
            (self.rel_head_lower, self.rel_head_upper),
            (self.rel_tail_lower, self.rel_tail_upper),
        ):
            if lower.shape != upper.shape:
                raise ValueError("box corner arrays must have matching shapes")
            if np.any(lower > upper):
                raise ValueError("box corners require lower <= upper")

    @property
    def n_entities(self) -> int:
        return self.positions.shape[0]

    @property
    def n_classes(self) -> int:
        return self.class_lower.shape[0]

    @property
    def n_relations(self) -> int:
        return self.rel_head_lower.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]


def empty_boxes(d: int) -> np.ndarray:
    return np.zeros((0, d))


def materialize(params: ModelParams, features: np.ndarray | None = None) -> ExplicitConfig:
    """Resolve embeddings (+MLP outputs) and box corners into raw arrays."""
    if params.config.feature_mode:
        if features is None:
            raise DataError("feature mode requires a feature matrix")
        scale = params.config.scale
        positions = scale * params.point_emb + mlp_forward(params.mlp_point, features)
        bumps = scale * params.bump_emb + mlp_forward(params.mlp_bump, features)
    else:
        positions = params.point_emb.copy()
        bumps = params.bump_emb.copy()
    class_lower, class_upper = box_corners(params.class_center, params.class_size_raw)
    head_lower, head_upper = box_corners(params.rel_head_center, params.rel_head_size_raw)
    tail_lower, tail_upper = box_corners(params.rel_tail_center, params.rel_tail_size_raw)
    return ExplicitConfig(
        positions=positions,
        bumps=bumps,
        class_lower=class_lower,
        class_upper=class_upper,
        rel_head_lower=head_lower,
        rel_head_upper=head_upper,
        rel_tail_lower=tail_lower,
        rel_tail_upper=tail_upper,
        norm=params.config.norm,
    )


def entity_representation(
    params: ModelParams, entity: int, features: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Position and bump vector of one entity (embedding + MLP in feature mode)."""
    if not 0 <= entity < params.n_entities:
        raise IndexError(f"entity index {entity} out of range")
    if params.config.feature_mode:
        if features is None:
            raise DataError("feature mode requires a feature matrix")
        x = features[entity]
        scale = params.config.scale
        position = scale * params.point_emb[entity] + mlp_forward(params.mlp_point, x)
        bump = scale * params.bump_emb[entity] + mlp_forward(params.mlp_bump, x)
        return position, bump
    return params.point_emb[entity].copy(), params.bump_emb[entity].copy()


def config_unary_scores(cfg: ExplicitConfig, cls, ent) -> np.ndarray:
    cls = np.asarray(cls, dtype=np.intp)
    ent = np.asarray(ent, dtype=np.intp)
    dist = piecewise_distance(
        cfg.positions[ent], cfg.class_lower[cls], cfg.class_upper[cls]
    )
    return lx_norm(dist, cfg.norm)


def config_binary_scores(cfg: ExplicitConfig, rel, head, tail) -> np.ndarray:
    rel = np.asarray(rel, dtype=np.intp)
    head = np.asarray(head, dtype=np.intp)
    tail = np.asarray(tail, dtype=np.intp)
    head_final = cfg.positions[head] + cfg.bumps[tail]
    tail_final = cfg.positions[tail] + cfg.bumps[head]
    head_dist = piecewise_distance(head_final, cfg.rel_head_lower[rel], cfg.rel_head_upper[rel])
    tail_dist = piecewise_distance(tail_final, cfg.rel_tail_lower[rel], cfg.rel_tail_upper[rel])
    return lx_norm(head_dist, cfg.norm) + lx_norm(tail_dist, cfg.norm)


def config_score_fact(cfg: ExplicitConfig, fact: Fact) -> float:
    if isinstance(fact, Unary):
        return float(config_unary_scores(cfg, [fact.cls], [fact.ent])[0])
    return float(config_binary_scores(cfg, [fact.rel], [fact.head], [fact.tail])[0])


def config_class_scores(cfg: ExplicitConfig, ent) -> np.ndarray:
    """Scores of every class for each given entity, shape (n_ent, n_classes)."""
    ent = np.asarray(ent, dtype=np.intp)
    points = cfg.positions[ent][:, None, :]
    dist = piecewise_distance(points, cfg.class_lower[None], cfg.class_upper[None])
    return lx_norm(dist, cfg.norm, axis=2)


def config_scores_all_heads(cfg: ExplicitConfig, rel: int, tail: int) -> np.ndarray:
    """Scores of rel(h, tail) for every candidate head h."""
    head_final = cfg.positions + cfg.bumps[tail]
    tail_final = cfg.positions[tail][None, :] + cfg.bumps
    head_dist = piecewise_distance(head_final, cfg.rel_head_lower[rel], cfg.rel_head_upper[rel])
    tail_dist = piecewise_distance(tail_final, cfg.rel_tail_lower[rel], cfg.rel_tail_upper[rel])
    return lx_norm(head_dist, cfg.norm) + lx_norm(tail_dist, cfg.norm)


def config_scores_all_tails(cfg: ExplicitConfig, rel: int, head: int) -> np.ndarray:
    """Scores of rel(head, t) for every candidate tail t."""
    head_final = cfg.positions[head][None, :] + cfg.bumps
    tail_final = cfg.positions + cfg.bumps[head]
    head_dist = piecewise_distance(head_final, cfg.rel_head_lower[rel], cfg.rel_head_upper[rel])
    tail_dist = piecewise_distance(tail_final, cfg.rel_tail_lower[rel], cfg.rel_tail_upper[rel])
    return lx_norm(head_dist, cfg.norm) + lx_norm(tail_dist, cfg.norm)


def score_fact(params: ModelParams, fact: Fact, features: np.ndarray | None = None) -> float:
    """Plausibility score of one fact (lower is more plausible)."""
    if isinstance(fact, Unary):
        if not 0 <= fact.cls < params.n_classes:
            raise IndexError(f"class index {fact.cls} out of range")
        position, _ = entity_representation(params, fact.ent, features)
        lower, upper = box_corners(
            params.class_center[fact.cls], params.class_size_raw[fact.cls]
        )
        return float(lx_norm(piecewise_distance(position, lower, upper), params.config.norm))
    if not 0 <= fact.rel < params.n_relations:
        raise IndexError(f"relation index {fact.rel} out of range")
    head_pos, head_bump = entity_representation(params, fact.head, features)
    tail_pos, tail_bump = entity_representation(params, fact.tail, features)
    head_final = head_pos + tail_bump
    tail_final = tail_pos + head_bump
    h_lower, h_upper = box_corners(
        params.rel_head_center[fact.rel], params.rel_head_size_raw[fact.rel]
    )
    t_lower, t_upper = box_corners(
        params.rel_tail_center[fact.rel], params.rel_tail_size_raw[fact.rel]
    )
    norm = params.config.norm
    return float(
        lx_norm(piecewise_distance(head_final, h_lower, h_upper), norm)
        + lx_norm(piecewise_distance(tail_final, t_lower, t_upper), norm)
    )


# ---------------------------------------------------------------------------
# checkpoint container (structured text, lossless round trip)


def save_model(params: ModelParams, path) -> None:
    cfg = params.config
    tensors = {
        name: {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
        for name, arr in params.param_dict().items()
    }
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "config": {
            "d": cfg.d,
            "norm": cfg.norm,
            "mode": cfg.mode,
            "embedding_scale": cfg.embedding_scale,
            "mlp_hidden": list(cfg.mlp_hidden),
            "feature_dim": cfg.feature_dim,
        },
        "counts": {
            "entities": params.n_entities,
            "classes": params.n_classes,
            "relations": params.n_relations,
        },
        "tensors": tensors,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True)
        handle.write("\n")


def load_model(path) -> ModelParams:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a model checkpoint")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(
            f"checkpoint version {payload.get('format_version')} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    raw_cfg = payload["config"]
    config = ModelConfig(
        d=raw_cfg["d"],
        norm=raw_cfg["norm"],
        mode=raw_cfg["mode"],
        embedding_scale=raw_cfg["embedding_scale"],
        mlp_hidden=tuple(raw_cfg["mlp_hidden"]),
        feature_dim=raw_cfg["feature_dim"],
    )

    def tensor(name: str) -> np.ndarray:
        entry = payload["tensors"][name]
        return np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])

    mlp_point = mlp_bump = None
    if config.feature_mode:
        def load_mlp(prefix: str) -> MlpParams:
            weights, biases, i = [], [], 0
            while f"{prefix}.w{i}" in payload["tensors"]:
                weights.append(tensor(f"{prefix}.w{i}"))
                biases.append(tensor(f"{prefix}.b{i}"))
                i += 1
            return MlpParams(weights, biases)

        mlp_point = load_mlp("mlp_point")
        mlp_bump = load_mlp("mlp_bump")

    params = ModelParams(
        config=config,
        point_emb=tensor("point_emb"),
        bump_emb=tensor("bump_emb"),
        class_center=tensor("class_center"),
        class_size_raw=tensor("class_size_raw"),
        rel_head_center=tensor("rel_head_center"),
        rel_head_size_raw=tensor("rel_head_size_raw"),
        rel_tail_center=tensor("rel_tail_center"),
        rel_tail_size_raw=tensor("rel_tail_size_raw"),
        mlp_point=mlp_point,
        mlp_bump=mlp_bump,
    )
    if params.point_emb.shape[1] != config.d:
        raise DataError(
            f"checkpoint dimensionality mismatch: tensors have d={params.point_emb.shape[1]}"
            f" but config says d={config.d}"
        )
    return params


def check_dataset_compat(params: ModelParams, dataset) -> None:
    """Raise when a checkpoint cannot score the given dataset."""
    vocab = dataset.vocab
    mismatches = []
    if params.n_entities != vocab.n_entities:
        mismatches.append(f"entities {params.n_entities} != {vocab.n_entities}")
    if params.n_classes != vocab.n_classes:
        mismatches.append(f"classes {params.n_classes} != {vocab.n_classes}")
    if params.n_relations != vocab.n_relations:
        mismatches.append(f"relations {params.n_relations} != {vocab.n_relations}")
    if params.config.feature_mode:
        if dataset.features is None:
            mismatches.append("model expects features but dataset has none")
        elif dataset.feature_dim != params.config.feature_dim:
            mismatches.append(
                f"feature dim {params.config.feature_dim} != {dataset.feature_dim}"
            )
    if mismatches:
        raise DataError("model/dataset mismatch: " + "; ".join(mismatches))


# ---------------------------------------------------------------------------
# differentiable scoring graph (used by the training module)


def param_tensors(params: ModelParams) -> dict[str, "Tensor"]:
    return {name: ad.Tensor(arr, requires_grad=True) for name, arr in params.param_dict().items()}


def mlp_forward_tensors(pt: dict, prefix: str, n_layers: int, x: np.ndarray) -> "Tensor":
    h: "Tensor" = ad.Tensor(x)
    for i in range(n_layers):
        h = ad.matmul(h, pt[f"{prefix}.w{i}"]) + pt[f"{prefix}.b{i}"]
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


def representation_tensors(
    params: ModelParams, pt: dict, features: np.ndarray | None
) -> tuple["Tensor", "Tensor"]:
    """Position and bump matrices for all entities as graph nodes."""
    if not params.config.feature_mode:
        return pt["point_emb"], pt["bump_emb"]
    if features is None:
        raise DataError("feature mode requires a feature matrix")
    n_layers = len(params.mlp_point.weights)
    scale = params.config.scale
    positions = ad.mul(pt["point_emb"], scale) + mlp_forward_tensors(
        pt, "mlp_point", n_layers, features
    )
    bumps = ad.mul(pt["bump_emb"], scale) + mlp_forward_tensors(
        pt, "mlp_bump", n_layers, features
    )
    return positions, bumps


def _box_center_width(center: "Tensor", size_raw: "Tensor"):
    width = ad.softplus(size_raw) + 1.0
    return center, width


def box_score_rows(
    points: "Tensor",
    center: "Tensor",
    width: "Tensor",
    order: int,
    box_ids: np.ndarray | None = None,
) -> "Tensor":
    """Fused piecewise-distance-plus-norm with a hand-derived backward pass.

    Scores every row of ``points`` against one box (``(1, d)`` center/width)
    or, with ``box_ids``, against the per-row box from ``(n_boxes, d)``
    banks.  Kappa is derived internally, so the width gradient carries the
    d(kappa)/d(width) term.  Boundary points take the inside-branch
    subgradient; an all-zero distance row under the L2 norm gets a zero
    subgradient instead of a division by zero.
    """
    p = points.data
    if box_ids is None:
        c, w = center.data, width.data
    else:
        c, w = center.data[box_ids], width.data[box_ids]
    diff = p - c
    offset = np.abs(diff)
    inside = offset <= 0.5 * (w - 1.0)
    inv_w = 1.0 / w
    kappa = 0.5 * (w - 1.0) * (w - inv_w)
    dist = np.where(inside, offset * inv_w, offset * w - kappa)
    if order == 1:
        norms = dist.sum(axis=1)
    else:
        norms = np.sqrt((dist * dist).sum(axis=1))

    def backward(g):
        gs = g[:, None]
        if order == 1:
            g_dist = np.broadcast_to(gs, dist.shape)
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(norms[:, None] > 0, dist / norms[:, None], 0.0)
            g_dist = gs * unit
        indicator = None
        if box_ids is not None and (center.requires_grad or width.requires_grad):
            # per-box reduction as a matmul; boxes are few, rows are many
            indicator = np.zeros((center.data.shape[0], len(box_ids)))
            indicator[box_ids, np.arange(len(box_ids))] = 1.0
        g_points = g_dist * np.where(inside, inv_w, w)
        g_points = g_points * np.sign(diff)
        if points.requires_grad:
            points._accumulate(g_points)
        if center.requires_grad:
            if box_ids is None:
                center._accumulate(-g_points)
            else:
                center._accumulate(-(indicator @ g_points))
        if width.requires_grad:
            dkappa_dw = 0.5 * (2.0 * w - 1.0 - inv_w * inv_w)
            g_width = g_dist * np.where(inside, -offset * inv_w * inv_w, offset - dkappa_dw)
            if box_ids is None:
                width._accumulate(g_width)
            else:
                width._accumulate(indicator @ g_width)

    return ad._node(norms, (points, center, width), backward)


def unary_score_tensors(
    params: ModelParams, pt: dict, positions: "Tensor", cls: np.ndarray, ent: np.ndarray
) -> "Tensor":
    cls = np.asarray(cls, dtype=np.intp)
    ent = np.asarray(ent, dtype=np.intp)
    points = ad.take_rows(positions, ent)
    center, width = _box_center_width(pt["class_center"], pt["class_size_raw"])
    return box_score_rows(points, center, width, params.config.norm, box_ids=cls)


def unary_all_class_score_tensors(
    params: ModelParams, pt: dict, positions: "Tensor", ent: np.ndarray
) -> "Tensor":
    """Scores against every class box, shape (n_facts, n_classes)."""
    ent = np.asarray(ent, dtype=np.intp)
    points = ad.take_rows(positions, ent)
    center, width = _box_center_width(pt["class_center"], pt["class_size_raw"])
    columns = []
    for cls in range(params.n_classes):
        idx = np.array([cls], dtype=np.intp)
        col = box_score_rows(
            points, ad.take_rows(center, idx), ad.take_rows(width, idx), params.config.norm
        )
        columns.append(ad.reshape(col, (len(ent), 1)))
    return columns[0] if len(columns) == 1 else ad.concat(columns, axis=1)


def binary_score_tensors(
    params: ModelParams,
    pt: dict,
    positions: "Tensor",
    bumps: "Tensor",
    rel: np.ndarray,
    head: np.ndarray,
    tail: np.ndarray,
) -> "Tensor":
    rel = np.asarray(rel, dtype=np.intp)
    head = np.asarray(head, dtype=np.intp)
    tail = np.asarray(tail, dtype=np.intp)
    head_final = ad.take_rows(positions, head) + ad.take_rows(bumps, tail)
    tail_final = ad.take_rows(positions, tail) + ad.take_rows(bumps, head)
    hc, hw = _box_center_width(pt["rel_head_center"], pt["rel_head_size_raw"])
    tc, tw = _box_center_width(pt["rel_tail_center"], pt["rel_tail_size_raw"])
    norm = params.config.norm
    head_scores = box_score_rows(head_final, hc, hw, norm, box_ids=rel)
    tail_scores = box_score_rows(tail_final, tc, tw, norm, box_ids=rel)
    return head_scores + tail_scores
