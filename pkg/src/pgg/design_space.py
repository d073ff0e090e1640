"""Design space of public goods games and the samplers that draw from it.

A configuration is a point in 14 dimensions: 13 sampled parameters plus the
punishment flag. Learning designs come from a (scrambled) Sobol sequence over
the 13-dimensional unit cube; validation designs are drawn uniformly at random
and checked against the learning designs.

Unit-cube coordinate order (``PARAMETER_ORDER``) is a fixed convention:

    0 group_size              7 actor_anonymity
    1 game_length             8 horizon_knowledge
    2 contribution_type       9 peer_incentive_cost
    3 contribution_framing   10 punishment_impact
    4 mpcr (intermediate)    11 reward_enabled
    5 communication          12 reward_impact
    6 peer_outcome_visibility
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Sequence

import numpy as np

from ._direction_numbers import JOE_KUO, MAX_DIM

__all__ = [
    "PARAMETER_ORDER",
    "ParameterBounds",
    "PggConfig",
    "UnsupportedDimensionError",
    "ExhaustedDesignSpaceError",
    "sobol_generate",
    "map_unit_point_to_config",
    "random_generate",
    "sobol_design",
    "validate_config",
    "same_design",
    "round_half_away",
]

PARAMETER_ORDER = (
    "group_size",
    "game_length",
    "contribution_type",
    "contribution_framing",
    "mpcr",
    "communication",
    "peer_outcome_visibility",
    "actor_anonymity",
    "horizon_knowledge",
    "peer_incentive_cost",
    "punishment_impact",
    "reward_enabled",
    "reward_impact",
)
N_DIMS = len(PARAMETER_ORDER)

CONTRIBUTION_TYPES = ("variable", "all_or_nothing")
FRAMINGS = ("opt_in", "opt_out")
ANONYMITY = ("revealed", "hidden")

_BITS = 32
_SCALE = float(2**_BITS)


class UnsupportedDimensionError(ValueError):
    pass


class ExhaustedDesignSpaceError(RuntimeError):
    pass


def round_half_away(x: float) -> int:
    """Round to the nearest integer, ties away from zero.

    A 1e-9 guard absorbs binary representation error so that values such as
    12.499999999999998 (a true 12.5) resolve as ties.
    """
    if x >= 0:
        return int(math.floor(x + 0.5 + 1e-9))
    return -int(math.floor(-x + 0.5 + 1e-9))


@dataclass(frozen=True)
class ParameterBounds:
    group_size: tuple[int, int] = (2, 20)
    game_length: tuple[int, int] = (1, 30)
    mpcr_max: float = 0.7
    peer_incentive_cost: tuple[int, int] = (1, 4)
    punishment_impact: tuple[int, int] = (1, 4)
    reward_impact: tuple[float, float] = (0.5, 1.5)

    def mpcr_min(self, group_size: int) -> float:
        return 1.0 / group_size


DEFAULT_BOUNDS = ParameterBounds()


@dataclass(frozen=True)
class PggConfig:
    group_size: int
    game_length: int
    contribution_type: str
    contribution_framing: str
    mpcr: float
    communication: bool
    peer_outcome_visibility: bool
    actor_anonymity: str
    horizon_knowledge: bool
    peer_incentive_cost: int
    punishment_impact: int
    reward_enabled: bool
    reward_impact: float
    punishment_enabled: bool = False
    config_id: str = ""
    wave: str = "learning"

    @property
    def multiplier(self) -> float:
        return self.mpcr * self.group_size

    @property
    def all_or_nothing(self) -> bool:
        return self.contribution_type == "all_or_nothing"

    @property
    def opt_out(self) -> bool:
        return self.contribution_framing == "opt_out"

    @property
    def identities_revealed(self) -> bool:
        return self.actor_anonymity == "revealed"

    def with_punishment(self, enabled: bool) -> "PggConfig":
        return replace(self, punishment_enabled=enabled)

    def design_values(self) -> tuple:
        return tuple(getattr(self, name) for name in PARAMETER_ORDER)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------------------
# Sobol sequence
# ---------------------------------------------------------------------------


def _direction_numbers(dim: int) -> np.ndarray:
    """Return a (dim, 32) table of 32-bit direction numbers."""
    v = np.zeros((dim, _BITS), dtype=np.uint64)
    for k in range(_BITS):
        v[0, k] = 1 << (_BITS - 1 - k)
    for d in range(1, dim):
        s, a, m = JOE_KUO[d - 1]
        vd = [0] * _BITS
        for k in range(min(s, _BITS)):
            vd[k] = m[k] << (_BITS - 1 - k)
        for k in range(s, _BITS):
            x = vd[k - s] ^ (vd[k - s] >> s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    x ^= vd[k - i]
            vd[k] = x
        v[d] = vd
    return v


def _lms_scramble(v: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Linear matrix scramble of the generator matrices plus a digital shift.

    Each coordinate gets a random lower-triangular binary matrix with unit
    diagonal; digit r of the output depends only on digits 1..r of the input,
    which keeps every dyadic elementary interval balanced.
    """
    dim = v.shape[0]
    out = np.zeros_like(v)
    for d in range(dim):
        low = np.tril(rng.integers(0, 2, size=(_BITS, _BITS)), -1)
        low[np.diag_indices(_BITS)] = 1
        masks = [
            sum(1 << (_BITS - 1 - c) for c in range(r + 1) if low[r, c]) for r in range(_BITS)
        ]
        for k in range(_BITS):
            word = int(v[d, k])
            new = 0
            for r, mask in enumerate(masks):
                if bin(word & mask).count("1") & 1:
                    new |= 1 << (_BITS - 1 - r)
            out[d, k] = new
    shift = rng.integers(0, 2**_BITS, size=dim, dtype=np.uint64)
    return out, shift


def sobol_generate(dim: int, n: int, scramble: bool = False, seed: int = 0) -> np.ndarray:
    """Generate ``n`` points of a ``dim``-dimensional Sobol sequence.

    Points are produced in Gray-code order, so the unscrambled sequence starts
    at the origin. ``seed`` keys the scramble and is ignored when
    ``scramble`` is false. Returns an ``(n, dim)`` array in [0, 1).
    """
    if dim < 1 or dim > MAX_DIM:
        raise UnsupportedDimensionError(f"dim must be in [1, {MAX_DIM}], got {dim}")
    if n < 0:
        raise ValueError("n must be non-negative")
    if n and n & (n - 1):
        warnings.warn(
            f"n={n} is not a power of 2; balance properties of the Sobol sequence are not guaranteed",
            stacklevel=2,
        )
    if n > 2**_BITS:
        raise ValueError("n exceeds the sequence period")
    v = _direction_numbers(dim)
    x = np.zeros(dim, dtype=np.uint64)
    if scramble:
        v, x = _lms_scramble(v, np.random.default_rng(seed))
    out = np.empty((n, dim), dtype=np.float64)
    for i in range(n):
        out[i] = x / _SCALE
        # rightmost zero bit of i selects the direction number
        c = (~i & (i + 1)).bit_length() - 1
        x = x ^ v[:, c]
    return out


# ---------------------------------------------------------------------------
# Unit cube -> configuration
# ---------------------------------------------------------------------------


def _scale_int(u: float, lo: int, hi: int) -> int:
    return lo + round_half_away(u * (hi - lo))


def map_unit_point_to_config(
    u: Sequence[float],
    bounds: ParameterBounds = DEFAULT_BOUNDS,
    *,
    config_id: str = "",
    wave: str = "learning",
    punishment_enabled: bool = False,
) -> PggConfig:
    u = [float(x) for x in u]
    if len(u) != N_DIMS:
        raise ValueError(f"unit point must have {N_DIMS} coordinates, got {len(u)}")
    if any(not 0.0 <= x <= 1.0 for x in u):
        raise ValueError("unit point coordinates must lie in [0, 1]")
    group_size = _scale_int(u[0], *bounds.group_size)
    lo_mpcr = bounds.mpcr_min(group_size)
    rlo, rhi = bounds.reward_impact
    return PggConfig(
        group_size=group_size,
        game_length=_scale_int(u[1], *bounds.game_length),
        contribution_type=CONTRIBUTION_TYPES[round_half_away(u[2])],
        contribution_framing=FRAMINGS[round_half_away(u[3])],
        mpcr=lo_mpcr + u[4] * (bounds.mpcr_max - lo_mpcr),
        communication=bool(round_half_away(u[5])),
        peer_outcome_visibility=bool(round_half_away(u[6])),
        actor_anonymity=ANONYMITY[round_half_away(u[7])],
        horizon_knowledge=bool(round_half_away(u[8])),
        peer_incentive_cost=_scale_int(u[9], *bounds.peer_incentive_cost),
        punishment_impact=_scale_int(u[10], *bounds.punishment_impact),
        reward_enabled=bool(round_half_away(u[11])),
        reward_impact=rlo + u[12] * (rhi - rlo),
        punishment_enabled=punishment_enabled,
        config_id=config_id,
        wave=wave,
    )


def sobol_design(
    n: int, scramble: bool = True, seed: int = 0, bounds: ParameterBounds = DEFAULT_BOUNDS
) -> list[PggConfig]:
    points = sobol_generate(N_DIMS, n, scramble=scramble, seed=seed)
    return [
        map_unit_point_to_config(p, bounds, config_id=f"L{i:04d}", wave="learning")
        for i, p in enumerate(points)
    ]


def same_design(a: PggConfig, b: PggConfig, tol: float = 1e-9) -> bool:
    """True when two configs agree on all 13 sampled parameters."""
    for x, y in zip(a.design_values(), b.design_values()):
        if isinstance(x, float) or isinstance(y, float):
            if abs(float(x) - float(y)) > tol:
                return False
        elif x != y:
            return False
    return True


def random_generate(
    n: int,
    bounds: ParameterBounds = DEFAULT_BOUNDS,
    seed: int = 0,
    exclusions: Iterable[PggConfig] = (),
    max_attempts: int | None = None,
) -> list[PggConfig]:
    """Draw ``n`` distinct configs uniformly, none matching an exclusion.

    Each parameter is drawn independently from a uniform unit coordinate and
    mapped with the same scaling used for Sobol points.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    taken = list(exclusions)
    out: list[PggConfig] = []
    budget = max_attempts if max_attempts is not None else 1000 * max(n, 1)
    attempts = 0
    while len(out) < n:
        if attempts >= budget:
            raise ExhaustedDesignSpaceError(
                f"found only {len(out)} of {n} distinct configs after {attempts} draws"
            )
        attempts += 1
        cfg = map_unit_point_to_config(
            rng.random(N_DIMS), bounds, config_id=f"V{len(out):04d}", wave="validation"
        )
        if any(same_design(cfg, other) for other in taken):
            continue
        taken.append(cfg)
        out.append(cfg)
    return out


def validate_config(cfg: PggConfig, bounds: ParameterBounds = DEFAULT_BOUNDS) -> list[str]:
    """List every way ``cfg`` falls outside the design space (empty if valid)."""
    problems = []

    def check_range(name, lo, hi):
        value = getattr(cfg, name)
        if not lo <= value <= hi:
            problems.append(f"{name}={value} outside [{lo}, {hi}]")

    for name in ("group_size", "game_length", "peer_incentive_cost", "punishment_impact"):
        value = getattr(cfg, name)
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            problems.append(f"{name} must be an integer, got {value!r}")
        check_range(name, *getattr(bounds, name))
    check_range("reward_impact", *bounds.reward_impact)
    if cfg.contribution_type not in CONTRIBUTION_TYPES:
        problems.append(f"contribution_type {cfg.contribution_type!r} not in {CONTRIBUTION_TYPES}")
    if cfg.contribution_framing not in FRAMINGS:
        problems.append(f"contribution_framing {cfg.contribution_framing!r} not in {FRAMINGS}")
    if cfg.actor_anonymity not in ANONYMITY:
        problems.append(f"actor_anonymity {cfg.actor_anonymity!r} not in {ANONYMITY}")
    if cfg.wave not in ("learning", "validation"):
        problems.append(f"wave {cfg.wave!r} not in ('learning', 'validation')")
    if cfg.group_size >= 1:
        lo = bounds.mpcr_min(cfg.group_size)
        if cfg.mpcr < lo - 1e-12 or cfg.mpcr > bounds.mpcr_max + 1e-12:
            problems.append(f"mpcr={cfg.mpcr} outside [{lo}, {bounds.mpcr_max}]")
    if abs(cfg.multiplier - 1.0) < 1e-9:
        problems.append("degenerate multiplier: multiplier is 1, normalized efficiency undefined")
    return problems
