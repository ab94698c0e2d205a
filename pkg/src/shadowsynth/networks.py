"""Network definitions: shadow feature encoder, generator, discriminators,
and the two removal networks (which reuse the generator architecture).

All modules take and return LAB-space tensors (N,3,H,W); the affine
mapping to the tanh-friendly [-1,1] range happens inside each module, so
callers never see normalized values. Feature maps are raw activations.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

# LAB box: L in [0,100], a/b in [-128,127]. x_net = (lab - center) / half.
_LAB_CENTER = (50.0, -0.5, -0.5)
_LAB_HALF = (50.0, 127.5, 127.5)


def _center_half(like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    center = torch.tensor(_LAB_CENTER, dtype=like.dtype, device=like.device)
    half = torch.tensor(_LAB_HALF, dtype=like.dtype, device=like.device)
    return center.view(1, 3, 1, 1), half.view(1, 3, 1, 1)


def normalize_lab(lab: torch.Tensor) -> torch.Tensor:
    center, half = _center_half(lab)
    return (lab - center) / half


def denormalize_lab(x: torch.Tensor) -> torch.Tensor:
    center, half = _center_half(x)
    return x * half + center


def _conv_in_relu(in_ch: int, out_ch: int, kernel: int, stride: int) -> list[nn.Module]:
    pad = kernel // 2
    if stride == 1:
        conv = nn.Conv2d(in_ch, out_ch, kernel, stride, pad, padding_mode="reflect")
    else:
        conv = nn.Conv2d(in_ch, out_ch, kernel, stride, pad)
    return [conv, nn.InstanceNorm2d(out_ch), nn.ReLU(inplace=True)]


class ResidualBlock(nn.Module):
    """Two 3x3 convs with instance norm, ReLU between them, additive skip.

    No activation after the second norm: the residual branch must be able
    to subtract (darken) as well as add.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.body(x)


class ShadowEncoder(nn.Module):
    """One 7x7 conv plus two residual blocks; preserves spatial dims."""

    def __init__(self, in_channels: int = 3, feat_channels: int = 32):
        super().__init__()
        self.feat_channels = feat_channels
        self.body = nn.Sequential(
            *_conv_in_relu(in_channels, feat_channels, 7, 1),
            ResidualBlock(feat_channels),
            ResidualBlock(feat_channels),
        )

    def forward(self, lab: torch.Tensor) -> torch.Tensor:
        return self.body(normalize_lab(lab))


class Generator(nn.Module):
    """Encoder-decoder with nine residual blocks at the bottleneck.

    Input is a channel stack whose last 3 channels are a LAB image (any
    leading channels are feature maps and pass through unscaled); output
    is a LAB image squashed into the valid LAB box by a scaled tanh.
    """

    def __init__(
        self,
        in_channels: int,
        base_channels: int = 64,
        res_blocks: int = 9,
    ):
        super().__init__()
        self.in_channels = in_channels
        b = base_channels
        layers: list[nn.Module] = [
            *_conv_in_relu(in_channels, b, 7, 1),
            *_conv_in_relu(b, 2 * b, 3, 2),
            *_conv_in_relu(2 * b, 4 * b, 3, 2),
        ]
        layers += [ResidualBlock(4 * b) for _ in range(res_blocks)]
        layers += [
            nn.ConvTranspose2d(4 * b, 2 * b, 3, 2, 1, output_padding=1),
            nn.InstanceNorm2d(2 * b),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * b, b, 3, 2, 1, output_padding=1),
            nn.InstanceNorm2d(b),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, 3, 7, 1, 3, padding_mode="reflect"),
            nn.Tanh(),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % 4 or w % 4 or h < 8 or w < 8:
            raise ValueError(
                f"spatial dims must be divisible by 4 and at least 8, got {h}x{w}"
            )
        x = torch.cat([x[:, :-3], normalize_lab(x[:, -3:])], dim=1)
        return denormalize_lab(self.body(x))


class PatchDiscriminator(nn.Module):
    """Three stride-2 convs, two stride-1 convs, global average pooling.

    Following PatchGAN convention the first layer has no normalization and
    activations are leaky ReLU (slope 0.2). Returns one scalar per image.
    Inputs must be at least 16x16: three halvings must leave >=2 pixels per
    side for the instance statistics to exist.
    """

    MIN_SIZE = 16

    def __init__(self, in_channels: int = 3, base_channels: int = 64):
        super().__init__()
        b = base_channels
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, b, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(b, 2 * b, 4, 2, 1),
            nn.InstanceNorm2d(2 * b),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * b, 4 * b, 4, 2, 1),
            nn.InstanceNorm2d(4 * b),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(4 * b, 8 * b, 3, 1, 1),
            nn.InstanceNorm2d(8 * b),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(8 * b, 1, 3, 1, 1),
        )

    def forward(self, lab: torch.Tensor) -> torch.Tensor:
        h, w = lab.shape[-2:]
        if h < self.MIN_SIZE or w < self.MIN_SIZE:
            raise ValueError(
                f"discriminator input must be at least "
                f"{self.MIN_SIZE}x{self.MIN_SIZE}, got {h}x{w}"
            )
        patch_map = self.body(normalize_lab(lab))
        return patch_map.mean(dim=(1, 2, 3))


def build_encoder(in_channels: int = 3, feat_channels: int = 32) -> ShadowEncoder:
    if in_channels < 1 or feat_channels < 1:
        raise ValueError("channel counts must be positive")
    return ShadowEncoder(in_channels, feat_channels)


def build_generator(
    in_channels: int, base_channels: int = 64, res_blocks: int = 9
) -> Generator:
    if in_channels < 3:
        raise ValueError("generator needs at least the 3 image channels")
    return Generator(in_channels, base_channels, res_blocks)


def build_discriminator(base_channels: int = 64) -> PatchDiscriminator:
    return PatchDiscriminator(3, base_channels)


def build_removal_nets(
    base_channels: int = 64, res_blocks: int = 9
) -> tuple[Generator, Generator]:
    """Inverse and refinement networks: generator architecture, 3-channel input."""
    inverse = Generator(3, base_channels, res_blocks)
    refine = Generator(3, base_channels, res_blocks)
    return inverse, refine


def init_weights(net: nn.Module, rng: torch.Generator) -> None:
    """Draw every conv/deconv weight from N(0, 0.02^2); zero all biases."""
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.normal_(0.0, 0.02, generator=rng)
                if m.bias is not None:
                    m.bias.zero_()


def concat_inputs(feature: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    """Channel-concatenate feature map then image, in that fixed order."""
    if feature.shape[-2:] != image.shape[-2:] or feature.shape[0] != image.shape[0]:
        raise ValueError(
            f"spatial/batch dims mismatch: feature {tuple(feature.shape)} "
            f"vs image {tuple(image.shape)}"
        )
    return torch.cat([feature, image], dim=1)


def param_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def image_to_tensor(lab: np.ndarray) -> torch.Tensor:
    """HxWx3 float array -> (1,3,H,W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(lab)).permute(2, 0, 1)[None].float()


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(1,3,H,W) or (3,H,W) tensor -> HxWx3 float64 array."""
    if t.ndim == 4:
        t = t[0]
    return t.detach().permute(1, 2, 0).cpu().numpy().astype(np.float64)


def mask_to_tensor(values: np.ndarray) -> torch.Tensor:
    """HxW {0,1} array -> (1,1,H,W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(values))[None, None].float()


MANIFEST_NAME = "manifest.json"


def save_checkpoint(
    directory: str | Path,
    nets: dict[str, nn.Module],
    arch: dict,
    epoch: int,
    seed: int,
    stage: str,
) -> Path:
    """Write one weights file per network plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, net in nets.items():
        torch.save(net.state_dict(), directory / f"{name}.pt")
    manifest = {
        "schema_version": 1,
        "stage": stage,
        "arch": arch,
        "epoch": epoch,
        "seed": seed,
        "nets": sorted(nets),
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return directory


def load_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    return json.loads(path.read_text())


def load_checkpoint(directory: str | Path) -> tuple[dict[str, nn.Module], dict]:
    """Rebuild the networks named in the manifest and load their weights."""
    directory = Path(directory)
    manifest = load_manifest(directory)
    arch = manifest["arch"]
    nets: dict[str, nn.Module] = {}
    for name in manifest["nets"]:
        if name == "encoder":
            net: nn.Module = build_encoder(3, arch["feat_channels"])
        elif name == "generator":
            net = build_generator(
                3 + arch["feat_channels"], arch["base_channels"], arch["res_blocks"]
            )
        elif name in ("disc_shadow", "disc_nonshadow"):
            net = build_discriminator(arch["disc_channels"])
        elif name in ("inverse", "refine"):
            net = build_generator(3, arch["base_channels"], arch["res_blocks"])
        else:
            raise ValueError(f"unknown network {name!r} in manifest")
        net.load_state_dict(torch.load(directory / f"{name}.pt", weights_only=True))
        net.eval()
        nets[name] = net
    return nets, manifest
