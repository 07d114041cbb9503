"""Minutiae data model, text-format parsing, and synthetic capture simulation.

Minutiae arrive as pre-extracted point lists (x, y, theta); raw fingerprint
image processing is out of scope. The text format is the ingestion boundary:

    line 1:            "<width> <height>"
    following lines:   "<x> <y> <theta>"   (integer x, y; decimal theta)
    lines starting "#" are ignored; encoding is UTF-8 with LF line endings.

Angles are degrees, normalized into [0, 360) at parse time. All types are
immutable after construction and every operation here is a pure function,
so concurrent use needs no locking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Minutia",
    "MinutiaeSet",
    "PerturbationProfile",
    "MinutiaeError",
    "InsufficientMinutiaeError",
    "MinutiaeParseError",
    "normalize_degrees",
    "parse_minutiae_file",
    "serialize_minutiae",
    "synthesize_subject",
    "perturb",
    "synthesize_dataset",
]


class MinutiaeError(ValueError):
    """Invalid minutiae data."""


class InsufficientMinutiaeError(MinutiaeError):
    """Fewer than two minutiae; pair features are undefined."""


class MinutiaeParseError(MinutiaeError):
    """Malformed minutiae file; carries the offending 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def normalize_degrees(theta: float) -> float:
    """Reduce a finite angle into [0, 360)."""
    t = math.fmod(float(theta), 360.0)
    if t < 0.0:
        t += 360.0
    # fmod of a tiny negative can round up to exactly 360.0
    return 0.0 if t >= 360.0 else t


@dataclass(frozen=True)
class Minutia:
    """A single ridge feature: pixel position plus orientation in degrees."""

    x: int
    y: int
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", int(self.x))
        object.__setattr__(self, "y", int(self.y))
        object.__setattr__(self, "theta", float(self.theta))
        if self.x < 0 or self.y < 0:
            raise MinutiaeError(f"negative coordinate ({self.x}, {self.y})")
        if not math.isfinite(self.theta) or not 0.0 <= self.theta < 360.0:
            raise MinutiaeError(f"theta {self.theta!r} not in [0, 360)")


@dataclass(frozen=True)
class MinutiaeSet:
    """One impression's minutiae with capture metadata.

    Order is significant and preserved from the source. Needs at least two
    minutiae (otherwise no pair vector exists) and no exact duplicates.
    """

    subject_id: str
    impression_id: int
    width: int
    height: int
    minutiae: tuple[Minutia, ...]

    def __post_init__(self):
        object.__setattr__(self, "minutiae", tuple(self.minutiae))
        if self.width <= 0 or self.height <= 0:
            raise MinutiaeError(f"non-positive image size {self.width}x{self.height}")
        if len(self.minutiae) < 2:
            raise InsufficientMinutiaeError(
                f"insufficient minutiae: found {len(self.minutiae)}, need at least 2"
            )
        seen = set()
        for m in self.minutiae:
            if m.x > self.width or m.y > self.height:
                raise MinutiaeError(
                    f"minutia ({m.x}, {m.y}) outside {self.width}x{self.height} image"
                )
            key = (m.x, m.y, m.theta)
            if key in seen:
                raise MinutiaeError(f"duplicate minutia {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.minutiae)


@dataclass(frozen=True)
class PerturbationProfile:
    """Intra-subject capture variation used to synthesize genuine impressions.

    Gaussian positional jitter (pixels), Gaussian orientation jitter
    (degrees), a dropped fraction of true minutiae and a spurious fraction
    of invented ones. Deterministic for a fixed ``rng_seed``.
    """

    translation_sigma: float = 0.0
    rotation_sigma: float = 0.0
    drop_rate: float = 0.0
    spurious_rate: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.translation_sigma < 0 or self.rotation_sigma < 0:
            raise MinutiaeError("perturbation sigmas must be >= 0")
        if not 0.0 <= self.drop_rate <= 1.0 or not 0.0 <= self.spurious_rate <= 1.0:
            raise MinutiaeError("drop/spurious rates must lie in [0, 1]")


def _format_theta(theta: float) -> str:
    return str(int(theta)) if float(theta).is_integer() else repr(theta)


def serialize_minutiae(mset: MinutiaeSet) -> bytes:
    """Render the canonical text form (inverse of :func:`parse_minutiae_file`)."""
    lines = [f"{mset.width} {mset.height}"]
    lines.extend(f"{m.x} {m.y} {_format_theta(m.theta)}" for m in mset.minutiae)
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_minutiae_file(
    data: bytes, subject_id: str = "", impression_id: int = 0
) -> MinutiaeSet:
    """Parse the minutiae text format into a :class:`MinutiaeSet`.

    Subject/impression identifiers are not part of the format; callers supply
    them (typically from the file name). Parsing is byte-deterministic and
    raises :class:`MinutiaeParseError` naming the offending line.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MinutiaeParseError(0, f"not valid UTF-8: {exc}") from None

    lines = text.split("\n")
    if not lines or not lines[0].strip() or lines[0].lstrip().startswith("#"):
        raise MinutiaeParseError(1, "malformed header: expected '<width> <height>'")
    header = lines[0].split()
    if len(header) != 2:
        raise MinutiaeParseError(1, "malformed header: expected '<width> <height>'")
    try:
        width, height = int(header[0]), int(header[1])
    except ValueError:
        raise MinutiaeParseError(1, f"malformed header: non-numeric {lines[0]!r}") from None
    if width <= 0 or height <= 0:
        raise MinutiaeParseError(1, f"malformed header: non-positive size {width}x{height}")

    minutiae: list[Minutia] = []
    seen: set[tuple[int, int, float]] = set()
    last_line = 1
    for lineno, raw in enumerate(lines[1:], start=2):
        if raw:
            last_line = lineno
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 3:
            raise MinutiaeParseError(lineno, f"expected '<x> <y> <theta>', got {raw!r}")
        try:
            x, y = int(fields[0]), int(fields[1])
        except ValueError:
            raise MinutiaeParseError(lineno, f"non-numeric coordinate in {raw!r}") from None
        try:
            theta_raw = float(fields[2])
        except ValueError:
            raise MinutiaeParseError(lineno, f"non-numeric angle {fields[2]!r}") from None
        if not math.isfinite(theta_raw):
            raise MinutiaeParseError(lineno, f"angle {fields[2]!r} out of range after normalization")
        theta = normalize_degrees(theta_raw)
        if x < 0 or x > width or y < 0 or y > height:
            raise MinutiaeParseError(lineno, f"coordinate ({x}, {y}) outside {width}x{height} image")
        key = (x, y, theta)
        if key in seen:
            raise MinutiaeParseError(lineno, f"duplicate minutia {key}")
        seen.add(key)
        minutiae.append(Minutia(x, y, theta))

    if len(minutiae) < 2:
        raise MinutiaeParseError(
            last_line, f"insufficient minutiae: found {len(minutiae)}, need at least 2"
        )
    return MinutiaeSet(subject_id, impression_id, width, height, tuple(minutiae))


def synthesize_subject(
    n_minutiae: int,
    width: int,
    height: int,
    seed: int,
    subject_id: str | None = None,
) -> MinutiaeSet:
    """Generate a subject with minutiae uniform over the image rectangle.

    Pure function of its arguments: the same seed always yields the same set.
    Coordinates are drawn from [0, width] x [0, height] inclusive, angles
    uniform over [0, 360).
    """
    if n_minutiae < 2:
        raise InsufficientMinutiaeError(
            f"insufficient minutiae: requested {n_minutiae}, need at least 2"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    minutiae: list[Minutia] = []
    seen: set[tuple[int, int, float]] = set()
    while len(minutiae) < n_minutiae:
        x = int(rng.integers(0, width, endpoint=True))
        y = int(rng.integers(0, height, endpoint=True))
        theta = normalize_degrees(rng.uniform(0.0, 360.0))
        key = (x, y, theta)
        if key in seen:
            continue
        seen.add(key)
        minutiae.append(Minutia(x, y, theta))
    sid = subject_id if subject_id is not None else f"synth-{seed}"
    return MinutiaeSet(sid, 0, width, height, tuple(minutiae))


def perturb(mset: MinutiaeSet, profile: PerturbationProfile) -> MinutiaeSet:
    """Simulate a fresh capture of the same finger.

    Surviving minutiae are displaced by Gaussian noise in position and
    orientation, a ``drop_rate`` fraction is removed, and a ``spurious_rate``
    fraction of invented minutiae is appended. Deterministic for a fixed
    profile seed; the all-zero profile is the identity map.
    """
    rng = np.random.default_rng(np.random.SeedSequence(profile.rng_seed))
    n = len(mset.minutiae)

    dx = rng.normal(0.0, profile.translation_sigma, size=n)
    dy = rng.normal(0.0, profile.translation_sigma, size=n)
    dtheta = rng.normal(0.0, profile.rotation_sigma, size=n)

    moved: list[Minutia] = []
    for m, ddx, ddy, ddt in zip(mset.minutiae, dx, dy, dtheta):
        x = int(np.clip(round(m.x + ddx), 0, mset.width))
        y = int(np.clip(round(m.y + ddy), 0, mset.height))
        moved.append(Minutia(x, y, normalize_degrees(m.theta + ddt)))

    n_drop = int(round(profile.drop_rate * n))
    if n_drop:
        drop = set(rng.choice(n, size=n_drop, replace=False).tolist())
        moved = [m for i, m in enumerate(moved) if i not in drop]

    n_spurious = int(round(profile.spurious_rate * n))
    seen = {(m.x, m.y, m.theta) for m in moved}
    for _ in range(n_spurious):
        while True:
            x = int(rng.integers(0, mset.width, endpoint=True))
            y = int(rng.integers(0, mset.height, endpoint=True))
            theta = normalize_degrees(rng.uniform(0.0, 360.0))
            if (x, y, theta) not in seen:
                break
        seen.add((x, y, theta))
        moved.append(Minutia(x, y, theta))

    # positional rounding can collide two survivors; keep first occurrence
    unique: list[Minutia] = []
    kept: set[tuple[int, int, float]] = set()
    for m in moved:
        key = (m.x, m.y, m.theta)
        if key not in kept:
            kept.add(key)
            unique.append(m)

    if len(unique) < 2:
        raise InsufficientMinutiaeError(
            f"insufficient minutiae: {len(unique)} left after perturbation"
        )
    return replace(mset, minutiae=tuple(unique))


def synthesize_dataset(
    n_subjects: int,
    n_impressions: int,
    profile: PerturbationProfile,
    *,
    n_minutiae: int = 30,
    width: int = 388,
    height: int = 374,
    seed: int = 0,
) -> list[list[MinutiaeSet]]:
    """Build a synthetic gallery: ``dataset[s][i]`` is impression i of subject s.

    Genuine impressions re-perturb one underlying subject with per-impression
    sub-seeds; different subjects are synthesized independently, so
    cross-subject comparisons behave as impostor pairs.
    """
    if n_subjects < 1 or n_impressions < 1:
        raise MinutiaeError("need at least one subject and one impression")
    dataset: list[list[MinutiaeSet]] = []
    for s in range(n_subjects):
        base_seed = int(np.random.SeedSequence([seed, s]).generate_state(1, np.uint64)[0])
        base = synthesize_subject(n_minutiae, width, height, base_seed, subject_id=f"s{s:04d}")
        impressions = []
        for i in range(n_impressions):
            sub_seed = int(
                np.random.SeedSequence([seed, s, i]).generate_state(1, np.uint64)[0]
            )
            cap = perturb(base, replace(profile, rng_seed=sub_seed))
            impressions.append(replace(cap, impression_id=i))
        dataset.append(impressions)
    return dataset
