"""End-to-end forward pass: fusion -> mixed conv trunk -> spatial and
temporal heads -> decoded tube, plus weight (de)serialisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_random_state
from .exceptions import ShapeError
from .fusion import FusionWeights, SentenceFeature, VisualFeatureMap, cross_modal_fuse
from .io import read_gktn, read_json, write_gktn, write_json
from .mixed_conv import MixedConvWeights, mixed_network
from .spatial import SpatialHeadWeights, SpatialPrediction, decode_boxes, spatial_head_forward
from .temporal import (
    CandidateScheme,
    TemporalEmbedding,
    TemporalHeadWeights,
    TemporalInterval,
    generate_candidates,
    select_tube,
    temporal_embed_forward,
)
from .tensor import ConvKernel


@dataclass(frozen=True)
class ModelConfig:
    map_size: int = 16
    proj_dim: int = 16
    c1: int = 16
    c2: int = 16
    n_blocks: int = 1
    k2: int = 3
    k3: int = 3
    activation: str = "relu"
    frame_height: int = 224
    frame_width: int = 224
    scales: tuple | None = None
    stride_fraction: float = 0.25

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        scheme = d.pop("candidate_scheme", None) or {}
        if "scales" in scheme:
            d["scales"] = tuple(scheme["scales"])
        if "stride_fraction" in scheme:
            d["stride_fraction"] = scheme["stride_fraction"]
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("scales", "stride_fraction")}
        d["candidate_scheme"] = {
            "scales": list(self.scales) if self.scales is not None else None,
            "stride_fraction": self.stride_fraction,
        }
        return d

    @property
    def channels(self) -> int:
        return self.c1 + self.c2

    def scheme(self, T: int) -> CandidateScheme:
        if self.scales is None:
            return CandidateScheme.default(T, self.stride_fraction)
        return CandidateScheme(tuple(self.scales), T, self.stride_fraction)


@dataclass(frozen=True)
class GKCMNWeights:
    fusion: FusionWeights
    mixed: tuple
    spatial: SpatialHeadWeights
    temporal: TemporalHeadWeights

    def __post_init__(self):
        object.__setattr__(self, "mixed", tuple(self.mixed))
        c = self.fusion.out_channels
        for i, blk in enumerate(self.mixed):
            if blk.channels != c:
                raise ShapeError(f"mixed block {i} expects {blk.channels} channels, fusion emits {c}")
        if self.spatial.channels != c:
            raise ShapeError(f"spatial head expects {self.spatial.channels} channels, fusion emits {c}")
        if self.temporal.channels != c:
            raise ShapeError(f"temporal head expects {self.temporal.channels} channels, fusion emits {c}")

    @classmethod
    def random(cls, visual_dim, word_dim, config: ModelConfig = ModelConfig(), seed=None) -> GKCMNWeights:
        rng = check_random_state(seed)
        c = config.channels
        fusion = FusionWeights.random(visual_dim, word_dim, config.proj_dim, config.c1, config.c2, config.activation, rng)
        # small trunk init keeps the residual stack from blowing up activations
        mixed = [MixedConvWeights.random(c, config.k2, config.k3, rng, scale=0.02) for _ in range(config.n_blocks)]
        return cls(fusion, mixed, SpatialHeadWeights.random(c, rng), TemporalHeadWeights.random(c, rng, scale=0.02))

    @classmethod
    def zeros(cls, visual_dim, word_dim, config: ModelConfig = ModelConfig()) -> GKCMNWeights:
        c = config.channels
        z = np.zeros
        fusion = FusionWeights(
            z((visual_dim, config.proj_dim)), z((word_dim, config.proj_dim)),
            z((config.proj_dim, config.c1)), z((visual_dim, config.c2)), config.activation,
        )
        mixed = [MixedConvWeights.zeros(c, config.k2, config.k3) for _ in range(config.n_blocks)]
        return cls(fusion, mixed, SpatialHeadWeights.zeros(c), TemporalHeadWeights.zeros(c))


@dataclass
class ForwardOutput:
    fused: np.ndarray
    m_mix: np.ndarray
    spatial: SpatialPrediction
    embedding: TemporalEmbedding
    candidates: list
    tube: TemporalInterval
    boxes: list = field(default_factory=list)

    @property
    def tube_confidence(self) -> float:
        return float(max(c.predicted_score for c in self.candidates))


def forward(visual, sentence, weights: GKCMNWeights, config: ModelConfig = ModelConfig()) -> ForwardOutput:
    if not isinstance(visual, VisualFeatureMap):
        visual = VisualFeatureMap(visual)
    if not isinstance(sentence, SentenceFeature):
        sentence = SentenceFeature(sentence)
    if visual.feature_dim != weights.fusion.visual_dim:
        raise ShapeError(f"visual features have d={visual.feature_dim}, weights expect {weights.fusion.visual_dim}")
    if sentence.word_dim != weights.fusion.word_dim:
        raise ShapeError(f"sentence features have D={sentence.word_dim}, weights expect {weights.fusion.word_dim}")
    fused = cross_modal_fuse(visual, sentence, weights.fusion).tensor
    m_mix = mixed_network(fused, weights.mixed)
    spatial = spatial_head_forward(m_mix, weights.spatial, config.map_size)
    T = visual.frame_count
    cands = generate_candidates(config.scheme(T))
    emb = temporal_embed_forward(m_mix, weights.temporal, cands)
    cands = emb.attach(cands)
    tube = select_tube(cands, T)
    boxes = decode_boxes(spatial, config.frame_height, config.frame_width)
    return ForwardOutput(fused, m_mix, spatial, emb, cands, tube, boxes)


def prediction_record(video_id: str, out: ForwardOutput, config: ModelConfig) -> dict:
    """One video entry of a prediction file; carries a box for every frame."""
    return {
        "id": video_id,
        "num_frames": int(out.m_mix.shape[1]),
        "frame_height": config.frame_height,
        "frame_width": config.frame_width,
        "tube": {
            "t_start": float(out.tube.start),
            "t_end": float(out.tube.end),
            "confidence": out.tube_confidence,
            "boxes": [
                {"t": t, "x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2, "peak_score": s}
                for t, b, s in out.boxes
            ],
        },
    }


# -- weight manifests ---------------------------------------------------------


def _save_kernel(root: Path, prefix: str, k: ConvKernel) -> dict:
    write_gktn(root / f"{prefix}.weight.gktn", k.weights)
    write_gktn(root / f"{prefix}.bias.gktn", k.bias)
    return {"weight": f"{prefix}.weight.gktn", "bias": f"{prefix}.bias.gktn"}


def _save_array(root: Path, name: str, arr) -> str:
    write_gktn(root / f"{name}.gktn", np.atleast_1d(np.asarray(arr, dtype=np.float32)))
    return f"{name}.gktn"


def save_weights(weights: GKCMNWeights, directory) -> Path:
    """Write every tensor as GKTN plus ``weights.json`` naming them."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    f = weights.fusion
    manifest = {
        "fusion": {name: _save_array(root, f"fusion.{name}", getattr(f, name)) for name in ("W_v1", "W_s1", "W_f2", "W_v2")},
        "mixed": [
            {name: _save_kernel(root, f"mixed{i}.{name}", getattr(blk, name)) for name in ("k2", "k3_serial", "k3_parallel", "k3_mixed")}
            for i, blk in enumerate(weights.mixed)
        ],
        "spatial_head": {
            "heat": _save_kernel(root, "spatial.heat", weights.spatial.heat),
            "size": _save_kernel(root, "spatial.size", weights.spatial.size),
        },
        "temporal_head": {
            **{name: _save_kernel(root, f"temporal.{name}", getattr(weights.temporal, name)) for name in ("k1", "k3", "k5")},
            **{name: _save_array(root, f"temporal.{name}", getattr(weights.temporal, name)) for name in ("score_w", "score_b", "offset_w", "offset_b")},
        },
    }
    manifest["fusion"]["activation"] = f.activation
    path = root / "weights.json"
    write_json(path, manifest)
    return path


class WeightsLoadError(ShapeError):
    """A weight tensor is missing or has the wrong shape; ``name`` says which."""

    def __init__(self, name: str, message: str):
        self.name = name
        super().__init__(f"{name}: {message}")


def load_weights(manifest_path) -> GKCMNWeights:
    path = Path(manifest_path)
    root = path.parent
    m = read_json(path)

    def arr(name, rel):
        try:
            return read_gktn(root / rel)
        except (OSError, ValueError) as exc:
            raise WeightsLoadError(name, str(exc)) from exc

    def kernel(name, spec):
        try:
            return ConvKernel(arr(f"{name}.weight", spec["weight"]), arr(f"{name}.bias", spec["bias"]))
        except WeightsLoadError:
            raise
        except (ShapeError, KeyError) as exc:
            raise WeightsLoadError(name, str(exc)) from exc

    def build(name, fn):
        try:
            return fn()
        except WeightsLoadError:
            raise
        except (ShapeError, KeyError, ValueError) as exc:
            raise WeightsLoadError(name, str(exc)) from exc

    fm = m["fusion"]
    fusion = build("fusion", lambda: FusionWeights(
        *(arr(f"fusion.{n}", fm[n]) for n in ("W_v1", "W_s1", "W_f2", "W_v2")), fm.get("activation", "relu")
    ))
    mixed = [
        build(f"mixed{i}", lambda blk=blk, i=i: MixedConvWeights(
            *(kernel(f"mixed{i}.{n}", blk[n]) for n in ("k2", "k3_serial", "k3_parallel", "k3_mixed"))
        ))
        for i, blk in enumerate(m["mixed"])
    ]
    sh = m["spatial_head"]
    spatial = build("spatial_head", lambda: SpatialHeadWeights(kernel("spatial.heat", sh["heat"]), kernel("spatial.size", sh["size"])))
    th = m["temporal_head"]
    temporal = build("temporal_head", lambda: TemporalHeadWeights(
        *(kernel(f"temporal.{n}", th[n]) for n in ("k1", "k3", "k5")),
        *(arr(f"temporal.{n}", th[n]) for n in ("score_w", "score_b", "offset_w", "offset_b")),
    ))
    return build("weights", lambda: GKCMNWeights(fusion, mixed, spatial, temporal))


def synthetic_features(seed=0, T=8, h=7, w=7, visual_dim=32, n_words=6, word_dim=32):
    """Random nonnegative visual maps and normal word features for demos and tests."""
    rng = check_random_state(seed)
    visual = np.abs(rng.standard_normal((visual_dim, T, h, w))).astype(np.float32)
    sentence = rng.standard_normal((n_words, word_dim)).astype(np.float32)
    return visual, sentence
