from dataclasses import dataclass
from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field


class OpKind(str, Enum):
    IDENTITY = "identity"
    FLIP_H = "flip_h"
    CROP_PAD = "crop_pad"
    ROTATE = "rotate"
    SHEAR_X = "shear_x"
    SHEAR_Y = "shear_y"
    TRANSLATE_X = "translate_x"
    TRANSLATE_Y = "translate_y"
    INVERT = "invert"
    SOLARIZE = "solarize"
    POSTERIZE = "posterize"
    CONTRAST = "contrast"
    BRIGHTNESS = "brightness"
    SHARPNESS = "sharpness"
    AUTOCONTRAST = "autocontrast"
    EQUALIZE = "equalize"


# Ops whose effect vanishes at magnitude 0.
MAGNITUDE_OPS = (
    OpKind.CROP_PAD,
    OpKind.ROTATE,
    OpKind.SHEAR_X,
    OpKind.SHEAR_Y,
    OpKind.TRANSLATE_X,
    OpKind.TRANSLATE_Y,
    OpKind.SOLARIZE,
    OpKind.POSTERIZE,
    OpKind.CONTRAST,
    OpKind.BRIGHTNESS,
    OpKind.SHARPNESS,
)


@dataclass(frozen=True)
class AugOp:
    """A pool op at a magnitude on the 0-10 RandAugment scale."""

    kind: OpKind
    magnitude: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.magnitude <= 10.0:
            raise ValueError(f"magnitude must lie in [0, 10], got {self.magnitude}")


class RandAugmentConfig(BaseModel):
    N: int = Field(1, ge=1)
    M: float = Field(6.0, ge=0, le=10)

    def describe(self) -> str:
        return f"strong:N={self.N},M={self.M:g}"


class PolicyKind(str, Enum):
    RAW = "raw"
    WEAK = "weak"
    STRONG = "strong"


class Policy(BaseModel):
    kind: PolicyKind = PolicyKind.WEAK
    randaugment: RandAugmentConfig = Field(default_factory=RandAugmentConfig)
    pad: int = Field(2, ge=0)

    def describe(self) -> str:
        if self.kind == PolicyKind.STRONG:
            return self.randaugment.describe()
        return self.kind.value


class AugVariant(str, Enum):
    RAW = "Raw"
    EXPANSION_W = "ExpansionW"
    EXPANSION_S = "ExpansionS"
    RUNTIME_W = "RuntimeW"
    RUNTIME_S = "RuntimeS"
    AUGDESC_WW = "AugDescWW"
    AUGDESC_SS = "AugDescSS"
    AUGDESC_WS = "AugDescWS"


class WarmupVariant(str, Enum):
    WAW = "WAW"
    SAW = "SAW"


_ANALYSIS = {
    AugVariant.RAW: PolicyKind.RAW,
    AugVariant.EXPANSION_W: PolicyKind.RAW,
    AugVariant.EXPANSION_S: PolicyKind.RAW,
    AugVariant.RUNTIME_W: PolicyKind.WEAK,
    AugVariant.RUNTIME_S: PolicyKind.STRONG,
    AugVariant.AUGDESC_WW: PolicyKind.WEAK,
    AugVariant.AUGDESC_SS: PolicyKind.STRONG,
    AugVariant.AUGDESC_WS: PolicyKind.WEAK,
}

_DESCENT = {
    **_ANALYSIS,
    AugVariant.AUGDESC_WS: PolicyKind.STRONG,
}


class AugStrategy(BaseModel):
    variant: AugVariant = AugVariant.AUGDESC_WS
    warmup: WarmupVariant = WarmupVariant.WAW

    @property
    def analysis_policy(self) -> PolicyKind:
        return _ANALYSIS[self.variant]

    @property
    def descent_policy(self) -> PolicyKind:
        return _DESCENT[self.variant]

    @property
    def is_augdesc(self) -> bool:
        return self.variant in (
            AugVariant.AUGDESC_WW,
            AugVariant.AUGDESC_SS,
            AugVariant.AUGDESC_WS,
        )

    @property
    def expansion_policy(self) -> Optional[PolicyKind]:
        if self.variant == AugVariant.EXPANSION_W:
            return PolicyKind.WEAK
        if self.variant == AugVariant.EXPANSION_S:
            return PolicyKind.STRONG
        return None

    @property
    def warmup_policy(self) -> PolicyKind:
        if self.warmup == WarmupVariant.SAW:
            return PolicyKind.STRONG
        if self.variant in (AugVariant.RAW, AugVariant.EXPANSION_W, AugVariant.EXPANSION_S):
            return PolicyKind.RAW
        return PolicyKind.WEAK
