"""Full networks: encoder plus a segmentation decoder or a classification head."""
from __future__ import annotations

import numpy as np

from tuni import autodiff as ad
from tuni.autodiff import Tensor
from tuni.encoder import Encoder, EncoderOutput, ModelConfig
from tuni.head import MLPDecoder
from tuni.layers import Linear, Module, ParamRegistry, init_params


class SegmentationModel(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder = MLPDecoder(config.rgb_channels, config.decoder_dim, config.num_classes)

    def __call__(self, rgb: Tensor, thermal: Tensor, trace: list | None = None) -> Tensor:
        return self.decoder(self.encoder(rgb, thermal, trace))


class ClassificationModel(Module):
    """Encoder with global average pooling over the last RGB stage and a linear classifier."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.cls_head = Linear(config.rgb_channels[-1], config.num_classes)

    def features(self, rgb: Tensor, thermal: Tensor) -> EncoderOutput:
        return self.encoder(rgb, thermal)

    def __call__(self, rgb: Tensor, thermal: Tensor, trace: list | None = None) -> Tensor:
        r4 = self.encoder(rgb, thermal, trace).rgb[-1]
        return self.cls_head(ad.reduce(r4, (2, 3), "mean"))


def build_model(config: ModelConfig, task: str = "seg", seed: int = 0, dtype=np.float32):
    """Instantiate and initialize a model; returns (model, registry)."""
    model = SegmentationModel(config) if task == "seg" else ClassificationModel(config)
    registry = ParamRegistry.from_module(model)
    init_params(registry, seed=seed)
    if dtype != np.float32:
        model.astype(dtype)
    return model, registry
