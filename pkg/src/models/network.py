from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field


class LayerKind(str, Enum):
    DENSE = "dense"
    CONV2D = "conv2d"
    RELU = "relu"
    FLATTEN = "flatten"


@dataclass
class Layer:
    """One network layer.

    Dense weights are (fan_in, fan_out); conv2d weights are (kh, kw, c_in, filters)
    acting on NHWC batches with stride 1 and no padding.
    """

    kind: LayerKind
    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None

    @property
    def has_parameters(self) -> bool:
        return self.weight is not None


@dataclass
class Network:
    layers: List[Layer]
    input_shape: Tuple[int, ...]
    num_classes: int

    def parameters(self) -> List[np.ndarray]:
        params: List[np.ndarray] = []
        for layer in self.layers:
            if layer.has_parameters:
                params.extend([layer.weight, layer.bias])
        return params

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def copy(self) -> "Network":
        return Network(
            layers=[
                Layer(
                    kind=layer.kind,
                    weight=None if layer.weight is None else layer.weight.copy(),
                    bias=None if layer.bias is None else layer.bias.copy(),
                )
                for layer in self.layers
            ],
            input_shape=tuple(self.input_shape),
            num_classes=self.num_classes,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


@dataclass
class OptimizerState:
    buffers: List[np.ndarray]
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr: float = 0.02
    steps: int = 0

    @classmethod
    def for_network(
        cls, net: Network, lr: float = 0.02, momentum: float = 0.9, weight_decay: float = 0.0005
    ) -> "OptimizerState":
        return cls(
            buffers=[np.zeros_like(p) for p in net.parameters()],
            momentum=momentum,
            weight_decay=weight_decay,
            lr=lr,
        )


class LrSchedule(BaseModel):
    base: float = Field(0.02, gt=0)
    drop_epoch: int = Field(150, ge=0)
    factor: float = Field(10.0, gt=0)


@dataclass
class ForwardCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    logits: Optional[np.ndarray] = None
