"""Run configuration: every tunable of a render/refine/benchmark run in one JSON document."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from handshadow.metrics import TAU_SEMANTIC
from handshadow.objective import ObjectiveWeights
from handshadow.refine import RefineConfig
from handshadow.render import SceneConfig

CONFIG_FORMAT = "handshadow-config"
CONFIG_VERSION = 1


@dataclass(frozen=True)
class HypothesisConfig:
    n_hypotheses: int = 20
    top_k: int = 3
    joint_sigma: float = 0.1
    translation_sigma: float = 0.05
    score_iou_weight: float = 0.5
    score_chamfer_weight: float = 0.5
    include_swaps: bool = True

    def __post_init__(self):
        if self.n_hypotheses < 1 or not 1 <= self.top_k <= self.n_hypotheses:
            raise ValueError("need 1 <= top_k <= n_hypotheses")
        if self.joint_sigma < 0 or self.translation_sigma < 0:
            raise ValueError("perturbation scales must be >= 0")
        if self.score_iou_weight < 0 or self.score_chamfer_weight < 0:
            raise ValueError("score weights must be >= 0")


@dataclass(frozen=True)
class SaliencyConfig:
    kernel_size: int = 15
    sigma: float = 2.5  # pixels

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    refine: RefineConfig = field(default_factory=RefineConfig)
    hypotheses: HypothesisConfig = field(default_factory=HypothesisConfig)
    saliency: SaliencyConfig = field(default_factory=SaliencyConfig)
    tau_semantic: float = TAU_SEMANTIC

    def to_dict(self) -> dict:
        return {
            "format": CONFIG_FORMAT,
            "version": CONFIG_VERSION,
            "scene": self.scene.to_dict(),
            "weights": self.weights.to_dict(),
            "refine": self.refine.to_dict(),
            "hypotheses": asdict(self.hypotheses),
            "saliency": asdict(self.saliency),
            "tau_semantic": self.tau_semantic,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Missing sections or fields fall back to defaults; unknown keys are rejected."""
        if data.get("format", CONFIG_FORMAT) != CONFIG_FORMAT:
            raise ValueError(f"not a {CONFIG_FORMAT} document")
        known = {"format", "version", "scene", "weights", "refine", "hypotheses", "saliency", "tau_semantic"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        sections = (
            ("scene", SceneConfig),
            ("weights", ObjectiveWeights),
            ("refine", RefineConfig),
            ("hypotheses", HypothesisConfig),
            ("saliency", SaliencyConfig),
        )
        for name, sub in sections:
            extra = set(data.get(name, {})) - set(sub.__dataclass_fields__)
            if extra:
                raise ValueError(f"unknown {name} keys: {sorted(extra)}")
        return cls(
            scene=SceneConfig.from_dict(data.get("scene", {})),
            weights=ObjectiveWeights.from_dict(data.get("weights", {})),
            refine=RefineConfig.from_dict(data.get("refine", {})),
            hypotheses=HypothesisConfig(**data.get("hypotheses", {})),
            saliency=SaliencyConfig(**data.get("saliency", {})),
            tau_semantic=float(data.get("tau_semantic", TAU_SEMANTIC)),
        )

    def digest(self) -> str:
        return digest_of(self.to_dict())


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest_of(data) -> str:
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()


def scene_digest(scene: SceneConfig) -> str:
    return digest_of(scene.to_dict())


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
