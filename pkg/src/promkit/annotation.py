"""Crowdsourced vote aggregation and bootstrap confidence curves.

An image's prominence is the fraction of yes votes among its assessors.
The bootstrap asks how stable that estimate is under smaller panels: for
each panel size k, votes are resampled with replacement `resamples` times
and the empirical 95% interval of the resampled prominences is reported
(nearest-rank percentiles).

Votes arrive as a JSON array of {"id", "votes": [0/1, ...],
"flagged_participants": [indices]}; flagged participants (control-question
failures) are dropped at load time. Each image's PRNG stream is derived
from the global seed plus a hash of its id, so results do not depend on
processing order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ContractError, FormatError, ValidationError

DEFAULT_K_MAX = 100
DEFAULT_RESAMPLES = 1000
DEFAULT_LEVEL = 0.95


@dataclass(frozen=True)
class VoteSet:
    """Filtered yes/no votes of one image."""

    id: str
    votes: tuple[bool, ...]

    def __post_init__(self):
        if not self.id:
            raise ContractError("vote set needs a nonempty id")
        votes = tuple(bool(v) for v in self.votes)
        if not votes:
            raise ContractError(f"vote set {self.id!r} has no votes")
        object.__setattr__(self, "votes", votes)


@dataclass(frozen=True)
class BootstrapCurve:
    """Per-k confidence bounds; bounds[k-1] = (lower, upper)."""

    resamples: int
    level: float
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for k, (lower, upper) in enumerate(self.bounds, start=1):
            if not 0.0 <= lower <= upper <= 1.0:
                raise ContractError(f"k={k}: bad interval [{lower}, {upper}]")

    def to_csv_text(self) -> str:
        lines = ["k,lower,upper"]
        for k, (lower, upper) in enumerate(self.bounds, start=1):
            lines.append(f"{k},{lower!r},{upper!r}")
        return "\n".join(lines) + "\n"


def prominence(votes: VoteSet) -> float:
    """Fraction of yes votes."""
    return sum(votes.votes) / len(votes.votes)


def _image_rng(seed: int, image_id: str) -> np.random.Generator:
    digest = int.from_bytes(hashlib.sha256(image_id.encode("utf-8")).digest()[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([seed, digest]))


def bootstrap_ci(
    votes: VoteSet,
    k_max: int = DEFAULT_K_MAX,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    level: float = DEFAULT_LEVEL,
) -> BootstrapCurve:
    """Resample k votes with replacement; nearest-rank percentile interval per k."""
    if k_max < 1:
        raise ContractError("k_max must be >= 1")
    if resamples < 1:
        raise ContractError("resamples must be >= 1")
    if not 0.0 < level < 1.0:
        raise ContractError("level must lie in (0, 1)")
    if seed < 0:
        raise ContractError("seed must be nonnegative")
    values = np.array(votes.votes, dtype=np.float64)
    rng = _image_rng(seed, votes.id)
    rank_low = int(np.ceil((1.0 - level) / 2.0 * resamples))
    rank_high = int(np.ceil((1.0 + level) / 2.0 * resamples))
    bounds = []
    for k in range(1, k_max + 1):
        draws = rng.integers(0, len(values), size=(resamples, k))
        means = np.sort(values[draws].mean(axis=1))
        bounds.append((float(means[rank_low - 1]), float(means[rank_high - 1])))
    return BootstrapCurve(resamples=resamples, level=level, bounds=tuple(bounds))


# --------------------------------------------------------------------------
# Votes file


def filter_votes(votes: Sequence[bool], flagged: Sequence[int]) -> tuple[bool, ...]:
    """Drop flagged participant indices, keeping vote order."""
    dropped = set(flagged)
    return tuple(bool(v) for i, v in enumerate(votes) if i not in dropped)


def load_votes(path: str | Path) -> list[VoteSet]:
    """Read a votes JSON file, applying each entry's participant filter."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(entries, list):
        raise ValidationError(f"{path}: expected a JSON array of vote entries")
    out = []
    seen = set()
    for index, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ValidationError(f"{path}: entry {index} is not an object")
        unknown = set(entry) - {"id", "votes", "flagged_participants"}
        if unknown:
            raise ValidationError(f"{path}: entry {index} has unknown keys {sorted(unknown)}")
        if "id" not in entry or "votes" not in entry:
            raise ValidationError(f"{path}: entry {index} needs 'id' and 'votes'")
        rid = entry["id"]
        if not isinstance(rid, str) or not rid:
            raise ValidationError(f"{path}: entry {index} id must be a nonempty string")
        if rid in seen:
            raise ValidationError(f"{path}: duplicate id {rid!r}")
        seen.add(rid)
        raw = entry["votes"]
        if not isinstance(raw, list) or any(v not in (0, 1) for v in raw):
            raise ValidationError(f"{path}: entry {rid!r} votes must be a list of 0/1")
        flagged = entry.get("flagged_participants", [])
        if not isinstance(flagged, list) or any(
            not isinstance(i, int) or isinstance(i, bool) or i < 0 or i >= len(raw)
            for i in flagged
        ):
            raise ValidationError(
                f"{path}: entry {rid!r} flagged_participants must be valid vote indices"
            )
        kept = filter_votes([bool(v) for v in raw], flagged)
        if not kept:
            raise ValidationError(f"{path}: entry {rid!r} has no votes after filtering")
        out.append(VoteSet(id=rid, votes=kept))
    return out
