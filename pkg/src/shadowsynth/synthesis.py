"""Min-max training loop for the pseudo-shadow synthesis stage.

Each step decouples one image into shadow / non-shadow region identities,
runs the encoder/generator over every feature-detail pairing (self, cross,
and cycle), updates the encoder+generator on the reconstruction,
adversarial, color, and cycle terms, then updates the two discriminators
on real-vs-pseudo separation. Trained models export pseudo pairs that the
removal stage consumes.
"""

from __future__ import annotations

import itertools
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import data as datamod
from . import imgio, networks
from .colorspace import lab_to_rgb, validate_lab
from .losses import (
    AblationFlags,
    LossReport,
    LossWeights,
    l1,
    loss_rec,
    loss_total_synth,
)


@dataclass
class TrainConfig:
    """Hyperparameters shared by the synthesis and removal trainers."""

    epochs: int = 100
    batch_size: int = 1
    lr: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    decay_epochs: int = 50
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    resize_to: int = 448
    crop_to: int = 400
    flip_prob: float = 0.5
    augment: bool = True
    feat_channels: int = 32
    base_channels: int = 64
    res_blocks: int = 9
    disc_channels: int = 64
    min_mask_area: float = 0.01
    mask_retries: int = 10
    freeze_nonshadow_mask: bool = False
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.decay_epochs < 1:
            raise ValueError("decay_epochs must be >= 1")
        if self.crop_to > self.resize_to:
            raise ValueError("crop_to must not exceed resize_to")
        if self.crop_to % 4:
            raise ValueError("crop_to must be divisible by 4")
        return self


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Constant lr, linearly decayed to exactly 0 over the final epochs."""
    decay = min(cfg.decay_epochs, cfg.epochs)
    flat_until = cfg.epochs - decay
    if epoch <= flat_until:
        return cfg.lr
    return cfg.lr * max(cfg.epochs - epoch, 0) / decay


@dataclass
class SynthForward:
    """Every tensor produced by one synthesis forward pass.

    Cross pairings feed the shadow feature to the other region's detail
    image; cycle outputs push the cross pseudo images back through the
    encoder/generator with the original features. Fields on skipped
    branches are None.
    """

    feat_s: torch.Tensor
    feat_f: torch.Tensor
    rec_s: torch.Tensor | None
    rec_f: torch.Tensor | None
    pseudo_shadow: torch.Tensor
    pseudo_nonshadow: torch.Tensor | None
    feat_s_cycle: torch.Tensor | None
    feat_f_cycle: torch.Tensor | None
    back_f: torch.Tensor | None
    back_s: torch.Tensor | None


def forward_synth(
    encoder: Callable[[torch.Tensor], torch.Tensor],
    generator: Callable[[torch.Tensor], torch.Tensor],
    region_s: torch.Tensor,
    region_f: torch.Tensor,
    include_self: bool = True,
    include_nonshadow: bool = True,
    include_cycle: bool = True,
) -> SynthForward:
    """Run all feature/detail pairings for one decoupled sample."""
    if region_s.shape != region_f.shape:
        raise ValueError(
            f"region shapes differ: {tuple(region_s.shape)} vs {tuple(region_f.shape)}"
        )
    cat = networks.concat_inputs
    feat_s = encoder(region_s)
    feat_f = encoder(region_f)

    rec_s = generator(cat(feat_s, region_s)) if include_self else None
    rec_f = generator(cat(feat_f, region_f)) if include_self else None

    pseudo_shadow = generator(cat(feat_s, region_f))
    pseudo_nonshadow = (
        generator(cat(feat_f, region_s)) if include_nonshadow else None
    )

    feat_s_cycle = feat_f_cycle = back_f = back_s = None
    if include_cycle:
        feat_s_cycle = encoder(pseudo_shadow)
        back_f = generator(cat(feat_f, pseudo_shadow))
        if include_nonshadow:
            feat_f_cycle = encoder(pseudo_nonshadow)
            back_s = generator(cat(feat_s, pseudo_nonshadow))

    return SynthForward(
        feat_s=feat_s,
        feat_f=feat_f,
        rec_s=rec_s,
        rec_f=rec_f,
        pseudo_shadow=pseudo_shadow,
        pseudo_nonshadow=pseudo_nonshadow,
        feat_s_cycle=feat_s_cycle,
        feat_f_cycle=feat_f_cycle,
        back_f=back_f,
        back_s=back_s,
    )


def _chroma(t: torch.Tensor) -> torch.Tensor:
    return t[:, 1:3]


class SynthTrainer:
    """Owns the four networks, their two optimizers, and the RNG streams."""

    def __init__(self, cfg: TrainConfig, ablation: AblationFlags | None = None):
        self.cfg = cfg.validate()
        self.ablation = ablation or AblationFlags()
        torch.manual_seed(cfg.seed)
        init_rng = torch.Generator().manual_seed(cfg.seed)
        self.encoder = networks.build_encoder(3, cfg.feat_channels)
        self.generator = networks.build_generator(
            3 + cfg.feat_channels, cfg.base_channels, cfg.res_blocks
        )
        self.disc_shadow = networks.build_discriminator(cfg.disc_channels)
        self.disc_nonshadow = networks.build_discriminator(cfg.disc_channels)
        for net in (self.encoder, self.generator, self.disc_shadow, self.disc_nonshadow):
            networks.init_weights(net, init_rng)
        self.opt_gen = torch.optim.Adam(
            itertools.chain(self.encoder.parameters(), self.generator.parameters()),
            lr=cfg.lr,
            betas=cfg.betas,
        )
        self.opt_disc = torch.optim.Adam(
            itertools.chain(
                self.disc_shadow.parameters(), self.disc_nonshadow.parameters()
            ),
            lr=cfg.lr,
            betas=cfg.betas,
        )
        self.data_rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self._frozen_masks: dict[str, datamod.BinaryMask] = {}

    @property
    def arch(self) -> dict:
        cfg = self.cfg
        return {
            "feat_channels": cfg.feat_channels,
            "base_channels": cfg.base_channels,
            "res_blocks": cfg.res_blocks,
            "disc_channels": cfg.disc_channels,
        }

    def _set_disc_grads(self, enabled: bool) -> None:
        for p in itertools.chain(
            self.disc_shadow.parameters(), self.disc_nonshadow.parameters()
        ):
            p.requires_grad_(enabled)

    def train_step(self, region_s: torch.Tensor, region_f: torch.Tensor) -> LossReport:
        """One generator-phase update followed by one discriminator-phase
        update; returns the full loss report for the step."""
        fwd = forward_synth(
            self.encoder,
            self.generator,
            region_s,
            region_f,
            include_self=not self.ablation.no_self,
            include_nonshadow=not self.ablation.no_pseudo_nonshadow,
            include_cycle=not self.ablation.no_cycle,
        )
        comp = self.generator_phase(fwd, region_s, region_f)
        comp.update(self.discriminator_phase(fwd, region_s, region_f))
        self.step += 1
        return loss_total_synth(comp, self.cfg.weights, self.ablation)

    def generator_phase(
        self, fwd: SynthForward, region_s: torch.Tensor, region_f: torch.Tensor
    ) -> dict[str, torch.Tensor]:
        """Update encoder+generator; discriminators are graded through but
        receive no parameter gradients. Image losses are computed in the
        networks' normalized space so the published trade-off weights keep
        the terms at comparable magnitudes."""
        abl = self.ablation
        w = self.cfg.weights
        self._set_disc_grads(False)
        norm = networks.normalize_lab
        ns, nf = norm(region_s), norm(region_f)
        zero = torch.zeros(())
        comp: dict[str, torch.Tensor] = {k: zero for k in (
            "self_rec_s", "self_rec_f", "adv_G", "color", "cycle_rec", "cycle_feat",
        )}
        if not abl.no_self:
            comp["self_rec_s"] = loss_rec(ns, norm(fwd.rec_s))
            comp["self_rec_f"] = loss_rec(nf, norm(fwd.rec_f))
        if not abl.no_disc:
            adv = 0.5 * ((self.disc_shadow(fwd.pseudo_shadow) - 1.0) ** 2).mean()
            if fwd.pseudo_nonshadow is not None:
                adv = adv + 0.5 * (
                    (self.disc_nonshadow(fwd.pseudo_nonshadow) - 1.0) ** 2
                ).mean()
            comp["adv_G"] = adv
        if not abl.no_color:
            color = l1(_chroma(norm(fwd.pseudo_shadow)), _chroma(nf))
            if fwd.pseudo_nonshadow is not None:
                color = color + l1(_chroma(norm(fwd.pseudo_nonshadow)), _chroma(ns))
            comp["color"] = color
        if not abl.no_cycle:
            cyc_rec = loss_rec(nf, norm(fwd.back_f))
            cyc_feat = l1(fwd.feat_s, fwd.feat_s_cycle)
            if fwd.back_s is not None:
                cyc_rec = cyc_rec + loss_rec(ns, norm(fwd.back_s))
                cyc_feat = cyc_feat + l1(fwd.feat_f, fwd.feat_f_cycle)
            comp["cycle_rec"] = cyc_rec
            comp["cycle_feat"] = cyc_feat

        gen_total = (
            w.self_shadow * comp["self_rec_s"]
            + w.self_nonshadow * comp["self_rec_f"]
            + w.adv_gen * comp["adv_G"]
            + w.color * comp["color"]
            + w.cycle_rec * comp["cycle_rec"]
            + w.cycle_feat * comp["cycle_feat"]
        )
        self._abort_if_nonfinite(gen_total, comp)
        if gen_total.requires_grad:
            self.opt_gen.zero_grad(set_to_none=True)
            gen_total.backward()
            self.opt_gen.step()
        self._set_disc_grads(True)
        return comp

    def discriminator_phase(
        self, fwd: SynthForward, region_s: torch.Tensor, region_f: torch.Tensor
    ) -> dict[str, torch.Tensor]:
        """Update the discriminators on detached pseudo images; the
        encoder/generator receive no gradients."""
        abl = self.ablation
        w = self.cfg.weights
        comp: dict[str, torch.Tensor] = {
            "adv_Ds": torch.zeros(()),
            "adv_Df": torch.zeros(()),
        }
        if abl.no_disc:
            return comp
        fake_s = self.disc_shadow(fwd.pseudo_shadow.detach())
        real_s = self.disc_shadow(region_s)
        comp["adv_Ds"] = (fake_s**2).mean() + ((real_s - 1.0) ** 2).mean()
        disc_total = w.adv_disc_shadow * comp["adv_Ds"]
        if fwd.pseudo_nonshadow is not None:
            fake_f = self.disc_nonshadow(fwd.pseudo_nonshadow.detach())
            real_f = self.disc_nonshadow(region_f)
            comp["adv_Df"] = (fake_f**2).mean() + ((real_f - 1.0) ** 2).mean()
            disc_total = disc_total + w.adv_disc_nonshadow * comp["adv_Df"]
        self._abort_if_nonfinite(disc_total, comp)
        self.opt_disc.zero_grad(set_to_none=True)
        disc_total.backward()
        self.opt_disc.step()
        return comp

    def _abort_if_nonfinite(self, total: torch.Tensor, comp: dict) -> None:
        if not torch.isfinite(total.detach()):
            detail = {k: float(v.detach()) if hasattr(v, 'detach') else float(v) for k, v in comp.items()}
            raise RuntimeError(f"non-finite loss at step {self.step}: {detail}")

    def set_lr(self, lr: float) -> None:
        for opt in (self.opt_gen, self.opt_disc):
            for group in opt.param_groups:
                group["lr"] = lr

    def prepare_batch(
        self, sample: datamod.Sample, mask_pool: list[datamod.BinaryMask]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Augment, sample a non-shadow mask, decouple, and tensorize."""
        cfg = self.cfg
        if cfg.augment:
            sample = datamod.augment(
                sample, self.data_rng, cfg.resize_to, cfg.crop_to, cfg.flip_prob
            )
        if cfg.freeze_nonshadow_mask and sample.name in self._frozen_masks:
            # Re-restrict to the current complement: augmentation may have
            # moved the shadow mask since the frozen draw.
            frozen = self._frozen_masks[sample.name]
            nonshadow = datamod.BinaryMask(
                frozen.values & (1 - sample.shadow_mask.values), kind="nonshadow"
            )
        else:
            nonshadow = datamod.sample_nonshadow_mask(
                sample, mask_pool, self.data_rng, cfg.min_mask_area, cfg.mask_retries
            )
            if cfg.freeze_nonshadow_mask:
                self._frozen_masks[sample.name] = nonshadow
        region_s, region_f = datamod.decouple(sample, nonshadow)
        return (
            networks.image_to_tensor(region_s.image),
            networks.image_to_tensor(region_f.image),
        )

    def fit(
        self,
        dataset: datamod.ShadowDataset,
        out_dir: str | Path | None = None,
        max_steps: int | None = None,
        log_every: int = 1,
    ) -> list[LossReport]:
        """Train for cfg.epochs (or max_steps), logging JSONL reports.

        Writes losses.jsonl and a final checkpoint under out_dir when given.
        """
        cfg = self.cfg
        out_dir = Path(out_dir) if out_dir is not None else None
        log_file = None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            log_file = (out_dir / "losses.jsonl").open("w")
        mask_pool_all = dataset.masks()
        reports: list[LossReport] = []
        try:
            done = False
            for epoch in range(cfg.epochs):
                if done:
                    break
                self.set_lr(lr_at(epoch, cfg))
                order = self.data_rng.permutation(len(dataset))
                for idx in order:
                    sample = dataset[int(idx)]
                    pool = mask_pool_all[: int(idx)] + mask_pool_all[int(idx) + 1 :]
                    region_s, region_f = self.prepare_batch(sample, pool)
                    report = self.train_step(region_s, region_f)
                    reports.append(report)
                    if log_file is not None and (self.step % log_every == 0):
                        log_file.write(report.to_json() + "\n")
                    if max_steps is not None and self.step >= max_steps:
                        done = True
                        break
                if (
                    out_dir is not None
                    and cfg.checkpoint_every
                    and (epoch + 1) % cfg.checkpoint_every == 0
                ):
                    self.save(out_dir / "checkpoint", epoch + 1)
            if out_dir is not None:
                self.save(out_dir / "checkpoint", cfg.epochs)
        finally:
            if log_file is not None:
                log_file.close()
        return reports

    def save(self, directory: str | Path, epoch: int) -> Path:
        return networks.save_checkpoint(
            directory,
            {
                "encoder": self.encoder,
                "generator": self.generator,
                "disc_shadow": self.disc_shadow,
                "disc_nonshadow": self.disc_nonshadow,
            },
            self.arch,
            epoch,
            self.cfg.seed,
            stage="synthesis",
        )


def export_pseudo_pairs(
    encoder: torch.nn.Module,
    generator: torch.nn.Module,
    dataset: datamod.ShadowDataset,
    out_dir: str | Path,
    rng: np.random.Generator,
    min_mask_area: float = 0.01,
    mask_retries: int = 10,
) -> int:
    """Write (pseudo shadow, target region, mask) triples for the removal
    stage, plus a manifest recording each source image. Returns the count.
    """
    out_dir = Path(out_dir)
    for sub in ("pseudo", "target", "masks", "source"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    encoder.eval()
    generator.eval()
    mask_pool_all = dataset.masks()
    entries = []
    count = 0
    with torch.no_grad():
        for idx in range(len(dataset)):
            sample = dataset[idx]
            pool = mask_pool_all[:idx] + mask_pool_all[idx + 1 :]
            nonshadow = datamod.sample_nonshadow_mask(
                sample, pool, rng, min_mask_area, mask_retries
            )
            region_s, region_f = datamod.decouple(sample, nonshadow)
            feat_s = encoder(networks.image_to_tensor(region_s.image))
            pseudo = generator(
                networks.concat_inputs(
                    feat_s, networks.image_to_tensor(region_f.image)
                )
            )
            pseudo_lab = validate_lab(networks.tensor_to_image(pseudo), "pseudo shadow")
            name = sample.name
            imgio.save_image(out_dir / "pseudo" / name, lab_to_rgb(pseudo_lab))
            imgio.save_image(out_dir / "target" / name, lab_to_rgb(region_f.image))
            imgio.save_mask_array(out_dir / "masks" / name, nonshadow.values)
            shutil.copyfile(
                dataset.image_dir / name, out_dir / "source" / name
            )
            entries.append({"name": name, "source": str(dataset.image_dir / name)})
            count += 1
    manifest = {
        "schema_version": 1,
        "dataset_root": str(dataset.root),
        "split": dataset.split,
        "entries": entries,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return count


def load_synth_nets(checkpoint_dir: str | Path) -> tuple[torch.nn.Module, torch.nn.Module]:
    """Load the encoder and generator from a synthesis checkpoint."""
    nets, _ = networks.load_checkpoint(checkpoint_dir)
    if "encoder" not in nets or "generator" not in nets:
        raise ValueError(f"{checkpoint_dir} is not a synthesis checkpoint")
    return nets["encoder"], nets["generator"]
