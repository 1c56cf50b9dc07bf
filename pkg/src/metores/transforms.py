"""Target-word masking and pool-based target substitution."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .corpus import MASK_STRING, Sample


@dataclass(frozen=True)
class TargetPool:
    """Multiset of target surface forms, kept in first-seen order."""

    forms: tuple[str, ...]
    seed: int = 0
    # dataset name each form came from, parallel to ``forms``
    kinds: tuple[str, ...] = ()

    @classmethod
    def from_samples(cls, samples: Iterable[Sample], seed: int = 0) -> "TargetPool":
        samples = list(samples)
        return cls(tuple(s.target for s in samples), seed, tuple(s.dataset for s in samples))

    def __len__(self) -> int:
        return len(self.forms)


def replace_target(sample: Sample, surface: str, suffix: str,
                   keep_key: bool = False) -> Sample:
    text = sample.text[: sample.target_start] + surface + sample.text[sample.target_end:]
    return replace(
        sample,
        id=sample.id + suffix,
        text=text,
        target_end=sample.target_start + len(surface),
        pmw_key=sample.pmw_key if keep_key else surface.casefold(),
    )


def mask_target(sample: Sample) -> Sample:
    """Replace the target with the mask string; label and PMW key are kept."""
    if sample.target == MASK_STRING and sample.id.endswith(":mask"):
        return sample
    return replace_target(sample, MASK_STRING, ":mask", keep_key=True)


def mask_all(samples: Iterable[Sample]) -> list[Sample]:
    return [mask_target(s) for s in samples]


def augment(samples: Sequence[Sample], pool: TargetPool, copies: int = 9,
            type_compatible: bool = False) -> list[Sample]:
    """Originals followed by ``copies`` substituted variants of each original.

    Fresh targets are drawn uniformly from the pool multiset, so frequent
    forms are drawn more often. With ``type_compatible`` the draw for a
    sample is restricted to pool forms that came from the same dataset
    name, falling back to the whole pool for unseen datasets.
    """
    if copies < 0:
        raise ValueError("copies must be >= 0")
    if copies == 0:
        return list(samples)
    if len(pool) == 0:
        raise ValueError("cannot augment from an empty target pool")
    out = list(samples)
    by_kind: dict[str, list[str]] = {}
    if type_compatible:
        for form, kind in zip(pool.forms, pool.kinds):
            by_kind.setdefault(kind, []).append(form)
    for idx, s in enumerate(samples):
        # per-sample stream so results do not depend on processing order
        rng = np.random.default_rng([pool.seed, idx])
        forms = by_kind.get(s.dataset, pool.forms) if type_compatible else pool.forms
        picks = rng.integers(0, len(forms), size=copies)
        for c, p in enumerate(picks, 1):
            out.append(replace_target(s, forms[p], f":aug{c}"))
    return out
