"""Two-stage shadow removal: an inverse network turns a (pseudo) shadow
region back into non-shadow content, the result is composed into the full
image at the mask, and a refinement network polishes the composite.
Training consumes the pseudo pairs exported by the synthesis stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import imgio, networks
from .colorspace import rgb_to_lab
from .data import BinaryMask, RegionIdentity, dilate_mask
from .losses import LossReport, removal_loss_terms
from .synthesis import TrainConfig, lr_at


@dataclass
class PseudoPair:
    """One removal-training example: synthesized shadow over a real region."""

    name: str
    pseudo_shadow: np.ndarray
    target_nonshadow: RegionIdentity
    mask: BinaryMask
    source_path: Path


@dataclass
class RemovalOutput:
    """Inference stages: coarse inverse result, mask composite, refinement."""

    coarse: np.ndarray
    composed: np.ndarray
    refined: np.ndarray


def compose(coarse: torch.Tensor, source: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Take `coarse` inside the mask and `source` outside, pixel-exact."""
    if coarse.shape != source.shape:
        raise ValueError(
            f"shape mismatch: {tuple(coarse.shape)} vs {tuple(source.shape)}"
        )
    if mask.shape[-2:] != source.shape[-2:]:
        raise ValueError(
            f"mask dims {tuple(mask.shape[-2:])} do not match image "
            f"{tuple(source.shape[-2:])}"
        )
    return torch.where(mask.bool(), coarse, source)


def scaled_dilation_kernel(image_size: int, kernel: int = 50, ref_size: int = 400) -> int:
    """Dilation kernel proportional to image size (minimum 3)."""
    return max(3, round(image_size * kernel / ref_size))


def removal_forward(
    inverse_net: Callable[[torch.Tensor], torch.Tensor],
    refine_net: Callable[[torch.Tensor], torch.Tensor],
    pseudo_shadow: torch.Tensor,
    source: torch.Tensor,
    mask: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """coarse = inverse(pseudo); composed = blend into source; refined."""
    coarse = inverse_net(pseudo_shadow)
    composed = compose(coarse, source, mask)
    refined = refine_net(composed)
    return coarse, composed, refined


class PseudoPairDataset:
    """Reads the triples written by the synthesis export."""

    def __init__(self, pairs_dir: str | Path):
        self.root = Path(pairs_dir)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.is_file():
            raise FileNotFoundError(f"no pseudo-pair manifest at {manifest_path}")
        self.manifest = json.loads(manifest_path.read_text())
        self.entries = self.manifest["entries"]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx: int) -> PseudoPair:
        entry = self.entries[idx]
        name = entry["name"]
        pseudo = rgb_to_lab(imgio.load_image(self.root / "pseudo" / name))
        target = rgb_to_lab(imgio.load_image(self.root / "target" / name))
        mask = BinaryMask(
            imgio.load_mask_array(self.root / "masks" / name), kind="nonshadow"
        )
        source_path = self.root / "source" / name
        if not source_path.is_file():
            source_path = Path(entry["source"])
        return PseudoPair(
            name=name,
            pseudo_shadow=pseudo,
            target_nonshadow=RegionIdentity(
                image=target * mask.values[..., None], mask=mask
            ),
            mask=mask,
            source_path=source_path,
        )


class RemovalTrainer:
    """Trains the inverse and refinement networks on pseudo pairs."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg.validate()
        torch.manual_seed(cfg.seed)
        init_rng = torch.Generator().manual_seed(cfg.seed)
        self.inverse_net, self.refine_net = networks.build_removal_nets(
            cfg.base_channels, cfg.res_blocks
        )
        networks.init_weights(self.inverse_net, init_rng)
        networks.init_weights(self.refine_net, init_rng)
        params = list(self.inverse_net.parameters()) + list(
            self.refine_net.parameters()
        )
        self.optimizer = torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas)
        self.data_rng = np.random.default_rng(cfg.seed)
        self.step = 0

    @property
    def arch(self) -> dict:
        return {
            "base_channels": self.cfg.base_channels,
            "res_blocks": self.cfg.res_blocks,
        }

    def set_lr(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    def train_step(
        self,
        pseudo_shadow: torch.Tensor,
        source: torch.Tensor,
        mask: torch.Tensor,
        dilated_mask: torch.Tensor,
        target_region: torch.Tensor,
    ) -> LossReport:
        """One optimizer step over both networks; returns the loss report.

        Losses are computed in the networks' normalized space, matching the
        magnitude convention of the synthesis stage.
        """
        coarse, _, refined = removal_forward(
            self.inverse_net, self.refine_net, pseudo_shadow, source, mask
        )
        norm = networks.normalize_lab
        terms = removal_loss_terms(
            norm(coarse),
            norm(target_region),
            norm(refined),
            norm(source),
            dilated_mask,
        )
        total = terms["removal_total"]
        if not torch.isfinite(total.detach()):
            detail = {k: float(v.detach()) for k, v in terms.items()}
            raise RuntimeError(f"non-finite removal loss at step {self.step}: {detail}")
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        self.step += 1
        return LossReport(terms)

    def prepare_batch(
        self, pair: PseudoPair
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        source = rgb_to_lab(imgio.load_image(pair.source_path))
        h = source.shape[0]
        kernel = scaled_dilation_kernel(h)
        dilated = dilate_mask(pair.mask, kernel)
        return (
            networks.image_to_tensor(pair.pseudo_shadow),
            networks.image_to_tensor(source),
            networks.mask_to_tensor(pair.mask.values),
            networks.mask_to_tensor(dilated.values),
            networks.image_to_tensor(pair.target_nonshadow.image),
        )

    def fit(
        self,
        dataset: PseudoPairDataset,
        out_dir: str | Path | None = None,
        max_steps: int | None = None,
    ) -> list[LossReport]:
        cfg = self.cfg
        out_dir = Path(out_dir) if out_dir is not None else None
        log_file = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            log_file = (out_dir / "losses.jsonl").open("w")
        reports: list[LossReport] = []
        try:
            done = False
            for epoch in range(cfg.epochs):
                if done:
                    break
                self.set_lr(lr_at(epoch, cfg))
                order = self.data_rng.permutation(len(dataset))
                for idx in order:
                    batch = self.prepare_batch(dataset[int(idx)])
                    report = self.train_step(*batch)
                    reports.append(report)
                    if log_file is not None:
                        log_file.write(report.to_json() + "\n")
                    if max_steps is not None and self.step >= max_steps:
                        done = True
                        break
            if out_dir is not None:
                self.save(out_dir / "checkpoint", cfg.epochs)
        finally:
            if log_file is not None:
                log_file.close()
        return reports

    def save(self, directory: str | Path, epoch: int) -> Path:
        return networks.save_checkpoint(
            directory,
            {"inverse": self.inverse_net, "refine": self.refine_net},
            self.arch,
            epoch,
            self.cfg.seed,
            stage="removal",
        )


def load_removal_nets(checkpoint_dir: str | Path) -> tuple[torch.nn.Module, torch.nn.Module]:
    nets, _ = networks.load_checkpoint(checkpoint_dir)
    if "inverse" not in nets or "refine" not in nets:
        raise ValueError(f"{checkpoint_dir} is not a removal checkpoint")
    return nets["inverse"], nets["refine"]


def remove_shadow(
    inverse_net: torch.nn.Module,
    refine_net: torch.nn.Module,
    image: np.ndarray,
    mask: BinaryMask,
) -> RemovalOutput:
    """De-shadow one LAB image given its shadow mask.

    The inverse network sees the masked shadow region (matching its
    training distribution of region images); the refined image is the
    user-facing result.
    """
    if mask.values.shape != image.shape[:2]:
        raise ValueError(
            f"mask dims {mask.values.shape} do not match image {image.shape[:2]}"
        )
    inverse_net.eval()
    refine_net.eval()
    with torch.no_grad():
        region = networks.image_to_tensor(image * mask.values[..., None])
        source = networks.image_to_tensor(image)
        mask_t = networks.mask_to_tensor(mask.values)
        coarse, composed, refined = removal_forward(
            inverse_net, refine_net, region, source, mask_t
        )
    return RemovalOutput(
        coarse=networks.tensor_to_image(coarse),
        composed=networks.tensor_to_image(composed),
        refined=networks.tensor_to_image(refined),
    )
