"""Perceptual metric networks scoring image blocks.

A shared convolutional backbone produces a three-stage feature pyramid
(plus the raw pixels as stage 0). Two heads turn paired pyramids into
scalar dissimilarities:

- DISTS: per-channel texture (mean) and structure (covariance) similarity,
  blended by learned non-negative weights; 0 for identical inputs.
- LPIPS: channel-normalized feature differences, squared, weighted by
  learned non-negative channel weights, averaged over space, summed over
  stages; 0 for identical inputs.

Weights are loaded from a checkpoint file; nothing here downloads models.
make_synthetic_weights builds a valid checkpoint from a seed for tests and
offline smoke runs.
"""

import hashlib
from pathlib import Path

import torch
from torch import nn

STAGE_CHANNELS = (3, 8, 16, 32)
_EPS = 1e-10
_DISTS_C1 = 1e-6
_DISTS_C2 = 1e-6


class Backbone(nn.Module):
    """VGG-style stages: two 3x3 convs + ReLU each, 2x2 average pooling between."""

    def __init__(self):
        super().__init__()
        stages = []
        for index in range(1, len(STAGE_CHANNELS)):
            cin, cout = STAGE_CHANNELS[index - 1], STAGE_CHANNELS[index]
            stages.append(
                nn.Sequential(
                    nn.Conv2d(cin, cout, 3, padding=1),
                    nn.ReLU(),
                    nn.Conv2d(cout, cout, 3, padding=1),
                    nn.ReLU(),
                )
            )
        self.stages = nn.ModuleList(stages)
        self.pool = nn.AvgPool2d(2)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [x]
        for index, stage in enumerate(self.stages):
            if index > 0:
                x = self.pool(x)
            x = stage(x)
            feats.append(x)
        return feats


class DistsHead(nn.Module):
    """DISTS dissimilarity from paired feature pyramids."""

    def __init__(self):
        super().__init__()
        self.alpha = nn.ParameterList(
            nn.Parameter(torch.ones(c)) for c in STAGE_CHANNELS
        )
        self.beta = nn.ParameterList(
            nn.Parameter(torch.ones(c)) for c in STAGE_CHANNELS
        )

    def forward(self, feats_x: list[torch.Tensor], feats_y: list[torch.Tensor]) -> torch.Tensor:
        total = sum(a.abs().sum() + b.abs().sum() for a, b in zip(self.alpha, self.beta))
        score = 0.0
        for fx, fy, a, b in zip(feats_x, feats_y, self.alpha, self.beta):
            mx = fx.mean(dim=(2, 3))
            my = fy.mean(dim=(2, 3))
            vx = fx.var(dim=(2, 3), unbiased=False)
            vy = fy.var(dim=(2, 3), unbiased=False)
            cov = (fx * fy).mean(dim=(2, 3)) - mx * my
            texture = (2 * mx * my + _DISTS_C1) / (mx * mx + my * my + _DISTS_C1)
            structure = (2 * cov + _DISTS_C2) / (vx + vy + _DISTS_C2)
            score = score + (a.abs() * texture + b.abs() * structure).sum(dim=1)
        return 1.0 - score / (total + _EPS)


class LpipsHead(nn.Module):
    """LPIPS-style weighted feature distance from paired pyramids."""

    def __init__(self):
        super().__init__()
        self.weights = nn.ParameterList(
            nn.Parameter(torch.ones(c)) for c in STAGE_CHANNELS
        )

    def forward(self, feats_x: list[torch.Tensor], feats_y: list[torch.Tensor]) -> torch.Tensor:
        score = 0.0
        for fx, fy, w in zip(feats_x, feats_y, self.weights):
            nx = fx / (fx.square().sum(dim=1, keepdim=True).sqrt() + _EPS)
            ny = fy / (fy.square().sum(dim=1, keepdim=True).sqrt() + _EPS)
            diff = (nx - ny).square()
            weighted = (diff * w.abs().view(1, -1, 1, 1)).sum(dim=1)
            score = score + weighted.mean(dim=(1, 2))
        return score


class MetricModel(nn.Module):
    """Backbone plus both heads; scores batches of paired blocks."""

    def __init__(self):
        super().__init__()
        self.backbone = Backbone()
        self.dists = DistsHead()
        self.lpips = LpipsHead()

    def score(self, metric: str, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        feats_x = self.backbone(x)
        feats_y = self.backbone(y)
        if metric == "dists":
            return self.dists(feats_x, feats_y)
        if metric == "lpips":
            return self.lpips(feats_x, feats_y)
        raise ValueError(f"unknown metric {metric!r}")


def make_synthetic_weights(seed: int) -> dict:
    """Random but reproducible weights with the correct shapes."""
    gen = torch.Generator().manual_seed(seed)
    model = MetricModel()
    state = model.state_dict()
    for key, tensor in state.items():
        if "alpha" in key or "beta" in key or "weights" in key:
            state[key] = torch.rand(tensor.shape, generator=gen)
        elif key.endswith(".bias"):
            state[key] = torch.zeros(tensor.shape)
        else:
            state[key] = torch.randn(tensor.shape, generator=gen) * 0.2
    return state


def save_weights(state: dict, path: str | Path) -> None:
    torch.save(state, Path(path))


def load_model(weights_path: str | Path) -> MetricModel:
    path = Path(weights_path)
    if not path.exists():
        raise FileNotFoundError(
            f"weights file {path} not found; set PROMKIT_EXPORTER_WEIGHTS to a "
            "checkpoint (scripts/make_test_weights.py generates one)"
        )
    state = torch.load(path, map_location="cpu", weights_only=True)
    model = MetricModel()
    model.load_state_dict(state)
    model.eval()
    return model


def weights_digest(weights_path: str | Path) -> str:
    return hashlib.sha256(Path(weights_path).read_bytes()).hexdigest()
