"""Local differential privacy (clip + Laplace) and update screening."""
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fedprompt.core.errors import InvalidInput, NumericalError
from fedprompt.core.seeding import SeedLike, make_rng
from fedprompt.models.prompt import PromptTensor
from fedprompt.schemas.config import ScreenSpec

logger = logging.getLogger(__name__)

MAD_SCALE = 1.4826
MAD_GUARD = 1e-12


def clip_gradient(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale g down to L2 norm clip_norm when it is longer; otherwise return it."""
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericalError("Cannot clip a non-finite gradient")
    norm = float(np.linalg.norm(g))
    if norm <= clip_norm:
        return g
    return g * (clip_norm / norm)


def laplace_noise(shape: tuple[int, ...], scale: float, seed: SeedLike) -> np.ndarray:
    """i.i.d. Laplace(0, scale) by inverse CDF of seeded uniforms in (0, 1)."""
    if scale < 0:
        raise InvalidInput("Laplace scale must be non-negative")
    rng = make_rng(seed)
    u = rng.random(size=shape)
    # random() is [0, 1); 0 would make log(0) below
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    centered = u - 0.5
    return -scale * np.sign(centered) * np.log1p(-2.0 * np.abs(centered))


def add_laplace(p: PromptTensor, scale: float, seed: SeedLike) -> PromptTensor:
    """Prompt plus per-entry Laplace noise; scale 0 returns p unchanged."""
    if scale == 0:
        return p
    return PromptTensor(p.values + laplace_noise(p.shape, scale, seed))


@dataclass
class ScreenResult:
    """Outcome of screening: indices into the screened list."""
    accepted: list[int]
    rejected: list[int]
    scores: list[float] = field(default_factory=list)
    passthrough: bool = False


def robust_z(x: np.ndarray) -> np.ndarray:
    """|x - median| / (1.4826 * MAD + 1e-12)."""
    median = np.median(x)
    mad = np.median(np.abs(x - median))
    return np.abs(x - median) / (MAD_SCALE * mad + MAD_GUARD)


def screen_updates(prompts: Sequence[PromptTensor], spec: ScreenSpec) -> ScreenResult:
    """Flag uploads whose prompt mean or standard deviation is a robust outlier.

    At most floor(K/2) updates are rejected; when more are flagged, the ones
    with the smallest z-scores are waived.
    """
    count = len(prompts)
    if count < 3:
        logger.warning(f"Screening skipped: {count} updates, need at least 3")
        return ScreenResult(accepted=list(range(count)), rejected=[], passthrough=True)

    means = np.array([float(np.mean(p.values)) for p in prompts])
    stds = np.array([float(np.std(p.values)) for p in prompts])
    scores = np.maximum(robust_z(means), robust_z(stds))

    flagged = [i for i in range(count) if scores[i] > spec.mad_threshold]
    quorum_cap = count // 2
    if len(flagged) > quorum_cap:
        # keep the strongest outliers; stable sort keeps ties in index order
        flagged = sorted(flagged, key=lambda i: -scores[i])[:quorum_cap]
    rejected = sorted(flagged)
    accepted = [i for i in range(count) if i not in set(rejected)]
    if rejected:
        logger.warning(f"Screening rejected {len(rejected)} of {count} updates")
    return ScreenResult(
        accepted=accepted,
        rejected=rejected,
        scores=[float(s) for s in scores],
    )
