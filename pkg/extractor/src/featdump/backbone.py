"""Residual backbones with taps on the four stage outputs."""

import torch
from torchvision import models

# level number -> torchvision stage attribute
_STAGES = {1: "layer1", 2: "layer2", 3: "layer3", 4: "layer4"}

_FACTORIES = {
    "wide_resnet50_2": (models.wide_resnet50_2, models.Wide_ResNet50_2_Weights.IMAGENET1K_V1),
    "resnet50": (models.resnet50, models.ResNet50_Weights.IMAGENET1K_V1),
    "resnet18": (models.resnet18, models.ResNet18_Weights.IMAGENET1K_V1),
}


class BackboneError(ValueError):
    pass


class WeightsUnavailableError(RuntimeError):
    pass


def available_backbones() -> tuple[str, ...]:
    return tuple(sorted(_FACTORIES))


def load_backbone(name: str, weights: str, seed: int = 0) -> torch.nn.Module:
    """Build the named network in eval mode.

    weights: "pretrained" loads the packaged ImageNet weights (may hit the
    network on first use); "random" seeds the default initialization for
    reproducible smoke runs.
    """
    if name not in _FACTORIES:
        raise BackboneError(f"unknown backbone {name!r}; choose from {available_backbones()}")
    factory, pretrained_weights = _FACTORIES[name]
    if weights == "pretrained":
        try:
            model = factory(weights=pretrained_weights)
        except Exception as exc:  # download/cache failures surface here
            raise WeightsUnavailableError(
                f"could not obtain pretrained weights for {name}: {exc}"
            ) from exc
    elif weights == "random":
        torch.manual_seed(seed)
        model = factory(weights=None)
    else:
        raise BackboneError(f"weights must be 'pretrained' or 'random', got {weights!r}")
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


@torch.no_grad()
def stage_outputs(model: torch.nn.Module, batch: torch.Tensor, levels) -> dict[int, torch.Tensor]:
    """Run one batch and collect the requested stage outputs."""
    captured: dict[int, torch.Tensor] = {}
    handles = []
    try:
        for level in levels:
            stage = getattr(model, _STAGES[level])

            def hook(_module, _inputs, output, level=level):
                captured[level] = output

            handles.append(stage.register_forward_hook(hook))
        model(batch)
    finally:
        for h in handles:
            h.remove()
    return captured
