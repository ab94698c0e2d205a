"""Training objectives for synthesis (self/inter/cycle reconstruction) and
for the two-stage removal network. Every function is a pure map from
tensors to a differentiable scalar; `LossReport` is the float-only record
used for logging and tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import Iterable, Mapping

import torch

SYNTH_KEYS = (
    "self_rec_s",
    "self_rec_f",
    "adv_G",
    "color",
    "adv_Ds",
    "adv_Df",
    "cycle_rec",
    "cycle_feat",
)
REMOVAL_KEYS = ("inverse", "refine")


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights for the synthesis objective."""

    self_shadow: float = 1.0
    self_nonshadow: float = 1.0
    adv_gen: float = 0.05
    color: float = 0.01
    adv_disc_shadow: float = 1.0
    adv_disc_nonshadow: float = 1.0
    cycle_rec: float = 0.1
    cycle_feat: float = 0.01

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"weight {f.name} must be nonnegative")

    def for_key(self, key: str) -> float:
        return {
            "self_rec_s": self.self_shadow,
            "self_rec_f": self.self_nonshadow,
            "adv_G": self.adv_gen,
            "color": self.color,
            "adv_Ds": self.adv_disc_shadow,
            "adv_Df": self.adv_disc_nonshadow,
            "cycle_rec": self.cycle_rec,
            "cycle_feat": self.cycle_feat,
        }[key]


@dataclass(frozen=True)
class AblationFlags:
    """Component toggles; each removes one piece of the training signal."""

    no_self: bool = False
    no_cycle: bool = False
    no_color: bool = False
    no_pseudo_nonshadow: bool = False
    no_disc: bool = False

    NAMES = ("no_self", "no_cycle", "no_color", "no_pseudo_nonshadow", "no_disc")

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "AblationFlags":
        names = list(names)
        unknown = [n for n in names if n not in cls.NAMES]
        if unknown:
            raise ValueError(f"unknown ablation flags: {unknown}")
        return cls(**{n: True for n in names})

    def zeroed_keys(self) -> set[str]:
        """Report entries this configuration forces to exactly zero."""
        keys: set[str] = set()
        if self.no_self:
            keys |= {"self_rec_s", "self_rec_f"}
        if self.no_cycle:
            keys |= {"cycle_rec", "cycle_feat"}
        if self.no_color:
            keys.add("color")
        if self.no_disc:
            keys |= {"adv_G", "adv_Ds", "adv_Df"}
        if self.no_pseudo_nonshadow:
            keys.add("adv_Df")
        return keys


def _to_float(value: object) -> float:
    if torch.is_tensor(value):
        return float(value.detach())
    return float(value)  # type: ignore[arg-type]


class LossReport:
    """Ordered name -> scalar map, one JSON line per training step."""

    def __init__(self, entries: Mapping[str, float]):
        self.entries = {k: _to_float(v) for k, v in entries.items()}

    def __getitem__(self, key: str) -> float:
        return self.entries[key]

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LossReport) and self.entries == other.entries

    def __repr__(self) -> str:
        body = ", ".join(f"{k}={v:.4g}" for k, v in self.entries.items())
        return f"LossReport({body})"

    def to_json(self) -> str:
        return json.dumps(self.entries)

    @classmethod
    def from_json(cls, line: str) -> "LossReport":
        return cls(json.loads(line))


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    _check_same_shape(a, b)
    return (a - b).abs().mean()


def ffl(a: torch.Tensor, b: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
    """Frequency-weighted spectral distance between two images.

    Per channel, computes the orthonormal 2-D DFT of both inputs and the
    squared complex distance at each frequency. Each frequency is weighted
    by the magnitude of the spectral difference (raised to `alpha`,
    normalized to max 1 per image, and detached so the weighting does not
    receive gradients). Returns the mean weighted distance.
    """
    _check_same_shape(a, b)
    fa = torch.fft.fft2(a, norm="ortho")
    fb = torch.fft.fft2(b, norm="ortho")
    diff = fa - fb
    dist = diff.real**2 + diff.imag**2
    with torch.no_grad():
        weight = dist.sqrt() ** alpha
        if weight.ndim == 4:
            peak = weight.flatten(1).max(dim=1).values.view(-1, 1, 1, 1)
        else:
            peak = weight.max()
        weight = torch.where(peak > 0, weight / peak.clamp_min(1e-300), weight)
    return (weight * dist).mean()


def loss_rec(target: torch.Tensor, pseudo: torch.Tensor) -> torch.Tensor:
    """Reconstruction distance: pixel-space L1 plus spectral distance."""
    return l1(target, pseudo) + ffl(target, pseudo)


def loss_self(
    region_s: torch.Tensor,
    region_f: torch.Tensor,
    rec_s: torch.Tensor,
    rec_f: torch.Tensor,
    w: LossWeights,
) -> torch.Tensor:
    """Weighted identity-reconstruction loss for both region identities."""
    return w.self_shadow * loss_rec(region_s, rec_s) + w.self_nonshadow * loss_rec(
        region_f, rec_f
    )


def loss_adv_gen(d_s_out: torch.Tensor, d_f_out: torch.Tensor) -> torch.Tensor:
    """Least-squares generator loss: both pseudo images should score 1."""
    return 0.5 * ((d_s_out - 1.0) ** 2).mean() + 0.5 * ((d_f_out - 1.0) ** 2).mean()


def loss_adv_disc(d_fake: torch.Tensor, d_real: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator loss: fake scores 0, real scores 1."""
    return (d_fake**2).mean() + ((d_real - 1.0) ** 2).mean()


def _ab(t: torch.Tensor) -> torch.Tensor:
    if t.ndim != 4 or t.shape[1] != 3:
        raise ValueError(f"expected (N,3,H,W) LAB tensor, got {tuple(t.shape)}")
    return t[:, 1:3]


def loss_color(
    pseudo_shadow: torch.Tensor,
    region_f: torch.Tensor,
    pseudo_nonshadow: torch.Tensor,
    region_s: torch.Tensor,
) -> torch.Tensor:
    """L1 distance on the a/b channels only; lightness is free to change."""
    return l1(_ab(pseudo_shadow), _ab(region_f)) + l1(
        _ab(pseudo_nonshadow), _ab(region_s)
    )


def loss_cycle_feat(
    feat_s: torch.Tensor,
    feat_s_cycle: torch.Tensor,
    feat_f: torch.Tensor,
    feat_f_cycle: torch.Tensor,
) -> torch.Tensor:
    """Features re-extracted from pseudo images must match the originals."""
    return l1(feat_s, feat_s_cycle) + l1(feat_f, feat_f_cycle)


def loss_cycle_rec(
    region_f: torch.Tensor,
    back_f: torch.Tensor,
    region_s: torch.Tensor,
    back_s: torch.Tensor,
) -> torch.Tensor:
    """Pseudo images pushed back through the pipeline must reconstruct."""
    return loss_rec(region_f, back_f) + loss_rec(region_s, back_s)


def loss_total_synth(
    components: Mapping[str, object],
    w: LossWeights,
    ablation: AblationFlags | None = None,
) -> LossReport:
    """Assemble the full synthesis report from its named components.

    `components` maps each of SYNTH_KEYS to a scalar (tensor or float);
    ablated entries are forced to exactly 0 before the weighted total.
    """
    missing = [k for k in SYNTH_KEYS if k not in components]
    if missing:
        raise ValueError(f"missing loss components: {missing}")
    zeroed = ablation.zeroed_keys() if ablation else set()
    entries = {
        k: 0.0 if k in zeroed else _to_float(components[k]) for k in SYNTH_KEYS
    }
    entries["total"] = sum(w.for_key(k) * entries[k] for k in SYNTH_KEYS)
    return LossReport(entries)


def removal_loss_terms(
    coarse: torch.Tensor,
    target_region: torch.Tensor,
    refined: torch.Tensor,
    source: torch.Tensor,
    dilated_mask: torch.Tensor,
) -> dict[str, torch.Tensor]:
    """Differentiable removal-loss terms (kept as tensors for backward)."""
    inverse = l1(coarse, target_region)
    refine = l1(refined, source) + l1(dilated_mask * refined, dilated_mask * source)
    return {"inverse": inverse, "refine": refine, "removal_total": inverse + refine}


def loss_removal(
    coarse: torch.Tensor,
    target_region: torch.Tensor,
    refined: torch.Tensor,
    source: torch.Tensor,
    dilated_mask: torch.Tensor,
) -> LossReport:
    """Removal objective: inverse-stage L1 plus mask-focused refinement."""
    terms = removal_loss_terms(coarse, target_region, refined, source, dilated_mask)
    return LossReport(terms)
