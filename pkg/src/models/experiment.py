from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from src.models.augmentation import RandAugmentConfig
from src.models.dataset import GlyphSpec, NoiseKind, SymmetricConvention
from src.models.mixture import HistogramBin
from src.models.network import LrSchedule
from src.models.strategy import CoTeachPlusConfig, DivideMixConfig, MdyrhConfig

LAST_WINDOW = 5


class DataSource(str, Enum):
    GLYPHS = "glyphs"
    IDX = "idx"


class LossViews(str, Enum):
    PLAIN = "plain"
    ANALYSIS = "analysis"


class DataSection(BaseModel):
    source: DataSource = DataSource.GLYPHS
    glyph: GlyphSpec = Field(default_factory=GlyphSpec)
    test_samples_per_class: int = Field(100, ge=1)
    seed: Optional[int] = Field(None, ge=0)
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None


class NoiseSection(BaseModel):
    kind: NoiseKind = NoiseKind.SYMMETRIC
    rate: float = Field(0.5, ge=0, le=1)
    seed: Optional[int] = Field(None, ge=0)
    convention: SymmetricConvention = SymmetricConvention.ALL_CLASSES


class AugmentSection(BaseModel):
    randaugment: RandAugmentConfig = Field(default_factory=RandAugmentConfig)
    pad: int = Field(2, ge=0)
    loss_views: LossViews = LossViews.PLAIN


class OptimSection(BaseModel):
    lr: float = Field(0.02, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0)
    batch_size: int = Field(32, ge=1)
    drop_epoch: int = Field(40, ge=0)
    factor: float = Field(10.0, gt=0)

    def schedule(self) -> LrSchedule:
        return LrSchedule(base=self.lr, drop_epoch=self.drop_epoch, factor=self.factor)


class ExperimentConfig(BaseModel):
    """Everything needed to reproduce a run; serialized as INI sections."""

    strategy: str = "dividemix-WS-WAW"
    epochs: int = Field(60, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [1], min_length=1)
    output_dir: Optional[str] = None
    probe_epoch: int = Field(20, ge=1)
    probe_bins: int = Field(20, ge=1)
    histogram_every: int = Field(0, ge=0)
    data: DataSection = Field(default_factory=DataSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    augment: AugmentSection = Field(default_factory=AugmentSection)
    optim: OptimSection = Field(default_factory=OptimSection)
    dividemix: DivideMixConfig = Field(default_factory=DivideMixConfig)
    coteaching: CoTeachPlusConfig = Field(default_factory=CoTeachPlusConfig)
    mdyrh: MdyrhConfig = Field(default_factory=MdyrhConfig)

    @field_validator("seeds", mode="before")
    @classmethod
    def split_seeds(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [int(item) for item in value.split(",") if item.strip()]
        if isinstance(value, int):
            return [value]
        return value


class RunResult(BaseModel):
    seed: int
    strategy: str
    noise_rate: float
    test_acc: List[float] = Field(default_factory=list)
    train_loss: List[float] = Field(default_factory=list)
    auc: List[Optional[float]] = Field(default_factory=list)
    lr: List[float] = Field(default_factory=list)
    wall_time: float = 0.0
    audit_violations: int = 0
    audit_counts: Dict[str, int] = Field(default_factory=dict)

    @property
    def best(self) -> float:
        return max(self.test_acc) if self.test_acc else 0.0

    @property
    def last(self) -> float:
        if not self.test_acc:
            return 0.0
        return float(np.mean(self.test_acc[-LAST_WINDOW:]))

    def summary(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "strategy": self.strategy,
            "noise_rate": self.noise_rate,
            "best": self.best,
            "last": self.last,
            "last_convention": f"mean test accuracy of the final {LAST_WINDOW} epochs",
            "epochs": len(self.test_acc),
            "wall_time": self.wall_time,
            "audit_violations": self.audit_violations,
            "audit_counts": self.audit_counts,
        }


class ProbeResult(BaseModel):
    seed: int
    p_strong: float
    epoch: int
    auc: Optional[float]
    histogram: List[HistogramBin]


class ExperimentReport(BaseModel):
    strategy: str
    results: List[RunResult] = Field(default_factory=list)

    def aggregate(self) -> Dict[str, float]:
        """Mean and sample standard deviation of best/last over seeds."""
        out: Dict[str, float] = {}
        for name in ("best", "last"):
            values = np.array([getattr(r, name) for r in self.results], dtype=np.float64)
            out[f"{name}_mean"] = float(values.mean()) if values.size else 0.0
            out[f"{name}_std"] = float(values.std(ddof=1)) if values.size > 1 else 0.0
        return out
