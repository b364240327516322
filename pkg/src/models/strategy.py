from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field

from src.models.augmentation import AugStrategy, AugVariant, RandAugmentConfig, WarmupVariant
from src.utils.errors import UsageError


class StrategyFamily(str, Enum):
    CE = "ce"
    COTEACHING_PLUS = "coteaching+"
    MDYRH = "mdyrh"
    DIVIDEMIX = "dividemix"


class ViewRole(str, Enum):
    PLAIN = "plain"
    ANALYSIS = "analysis"
    DESCENT = "descent"


class ViewPurpose(str, Enum):
    FIT = "fit"
    PSEUDO_LABEL = "pseudo_label"
    SELECT = "select"
    UPDATE = "update"
    EVALUATE = "evaluate"


class DivideMixConfig(BaseModel):
    M: int = Field(2, ge=1)
    T: float = Field(0.5, gt=0)
    tau: float = Field(0.5, gt=0, lt=1)
    alpha: Optional[float] = Field(None, gt=0)
    lambda_u: Optional[float] = Field(None, ge=0)
    lambda_r: float = Field(1.0, ge=0)
    warm_up: int = Field(10, ge=0)
    rampup_length: int = Field(16, ge=1)
    clamp_lambda: bool = True
    confidence_penalty: Optional[bool] = None
    strategy: AugStrategy = Field(
        default_factory=lambda: AugStrategy(variant=AugVariant.RUNTIME_W)
    )

    def resolved(self, noise_rate: float, asymmetric: bool = False) -> "DivideMixConfig":
        """Fill the noise-dependent defaults (alpha, lambda_u, penalty)."""
        high = noise_rate >= 0.5
        return self.model_copy(
            update={
                "alpha": self.alpha if self.alpha is not None else (4.0 if high else 0.5),
                "lambda_u": self.lambda_u
                if self.lambda_u is not None
                else (25.0 if high else 0.0),
                "confidence_penalty": self.confidence_penalty
                if self.confidence_penalty is not None
                else asymmetric,
            }
        )


class CoTeachPlusConfig(BaseModel):
    tau: Optional[float] = Field(None, gt=0, lt=1)
    Tk: int = Field(10, ge=1)
    Tmax: int = Field(60, ge=1)
    warm_up: int = Field(5, ge=0)
    randaugment: RandAugmentConfig = Field(default_factory=RandAugmentConfig)
    strategy: AugStrategy = Field(default_factory=AugStrategy)

    def resolved(self, noise_rate: float) -> "CoTeachPlusConfig":
        if self.tau is not None:
            return self
        return self.model_copy(update={"tau": min(max(noise_rate, 0.05), 0.95)})


class MdyrhConfig(BaseModel):
    alpha: float = Field(32.0, gt=0)
    lambda_r: float = Field(1.0, ge=0)
    warm_up: int = Field(10, ge=0)
    hard_bootstrap: bool = True
    randaugment: RandAugmentConfig = Field(default_factory=RandAugmentConfig)
    strategy: AugStrategy = Field(default_factory=AugStrategy)


_FAMILY_DEFAULTS = {
    StrategyFamily.CE: AugVariant.RUNTIME_S,
    StrategyFamily.DIVIDEMIX: AugVariant.RUNTIME_W,
    StrategyFamily.COTEACHING_PLUS: AugVariant.AUGDESC_WS,
    StrategyFamily.MDYRH: AugVariant.AUGDESC_WS,
}

_AUG_SUFFIXES = {
    "ww": AugVariant.AUGDESC_WW,
    "ss": AugVariant.AUGDESC_SS,
    "ws": AugVariant.AUGDESC_WS,
    "raw": AugVariant.RAW,
    "expw": AugVariant.EXPANSION_W,
    "exps": AugVariant.EXPANSION_S,
    "runw": AugVariant.RUNTIME_W,
    "runs": AugVariant.RUNTIME_S,
}

_WARMUP_SUFFIXES = {"waw": WarmupVariant.WAW, "saw": WarmupVariant.SAW}

# Families whose warm-up stays on weak views.
_WEAK_WARMUP_ONLY = (StrategyFamily.COTEACHING_PLUS, StrategyFamily.MDYRH)


class StrategySpec(BaseModel):
    family: StrategyFamily
    augmentation: AugStrategy

    @property
    def name(self) -> str:
        return format_strategy(self)


def parse_strategy(text: str) -> StrategySpec:
    """Parse harness strategy names such as ``dividemix-WS-WAW`` or ``ce-raw``."""
    raw = text.strip()
    family_token, *suffixes = raw.split("-")
    try:
        family = StrategyFamily(family_token.lower())
    except ValueError:
        known = ", ".join(f.value for f in StrategyFamily)
        raise UsageError(f"Unknown strategy '{text}' (families: {known})") from None

    variant: Optional[AugVariant] = None
    warmup: Optional[WarmupVariant] = None
    for suffix in suffixes:
        token = suffix.lower()
        if token in _AUG_SUFFIXES and variant is None:
            variant = _AUG_SUFFIXES[token]
        elif token in _WARMUP_SUFFIXES and warmup is None:
            warmup = _WARMUP_SUFFIXES[token]
        else:
            raise UsageError(f"Unknown or repeated strategy suffix '-{suffix}' in '{text}'")
    if warmup == WarmupVariant.SAW and family in _WEAK_WARMUP_ONLY:
        raise UsageError(
            f"'{text}': {family.value} warms up on weak views only; drop the -SAW suffix"
        )

    return StrategySpec(
        family=family,
        augmentation=AugStrategy(
            variant=variant or _FAMILY_DEFAULTS[family],
            warmup=warmup or WarmupVariant.WAW,
        ),
    )


def format_strategy(spec: StrategySpec) -> str:
    suffix = {v: k for k, v in _AUG_SUFFIXES.items()}[spec.augmentation.variant]
    label = suffix.upper() if spec.augmentation.is_augdesc else suffix
    return f"{spec.family.value}-{label}-{spec.augmentation.warmup.value}"
