"""Sensitivity-region sweeps, ignorance intervals, and estimated
uncertainty intervals (EUIs).

A sensitivity region Gamma is a product of closed intervals, one per
scenario-legal parameter. The sweep refits the scenario on a full grid over
Gamma (all corner points included exactly), the ignorance interval is the
span of point estimates over the grid, and the EUI widens it for sampling
uncertainty with the Imbens-Manski construction: the critical value
c_alpha solves

    Phi(c + (est_u - est_l) / max(se_l, se_u)) - Phi(-c) = 1 - alpha,

which interpolates between the two-sided normal quantile (degenerate
region) and the one-sided quantile (wide region). Callers pass standard
errors directly; any root-n scaling is already inside them, so the gap in
the equation above is the estimate spread in standard-error units.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (CepResult, Contrast, RiskEstimates, Scenario,
                   SensitivityPoint, cep, fit_scenario)
from .errors import ConfigError, EstimationError, PsemError
from .mathutil import norm_cdf, norm_quantile
from .weights import WeightedRecords

MAX_GRID_CELLS = 200_000


@dataclass(frozen=True)
class SensitivityConfig:
    scenario: Scenario
    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    grid_points: int = 21          # per axis where the range is nondegenerate
    alpha: float = 0.05
    contrast: Contrast = Contrast.ADDITIVE

    def __post_init__(self):
        legal = set(self.scenario.sensitivity_keys)
        illegal = set(self.ranges) - legal
        if illegal:
            raise ConfigError(f"sensitivity keys {sorted(illegal)} are not "
                              f"legal for scenario {self.scenario.value}")
        for k, (lo, hi) in self.ranges.items():
            if lo > hi:
                raise ConfigError(f"range for {k} has lower > upper: [{lo}, {hi}]")
        if self.grid_points < 2 and any(lo < hi for lo, hi in self.ranges.values()):
            raise ConfigError("grid_points must be >= 2 for a nondegenerate range")
        if not 0.0 < self.alpha < 0.5:
            raise ConfigError(f"alpha must be in (0, 0.5), got {self.alpha}")
        cells = 1
        for lo, hi in self.ranges.values():
            cells *= self.grid_points if lo < hi else 1
        if cells > MAX_GRID_CELLS:
            raise ConfigError(f"sensitivity grid has {cells} cells; lower "
                              "grid_points or shrink the region")

    def axes(self) -> dict[str, np.ndarray]:
        out = {}
        for key in self.scenario.sensitivity_keys:
            lo, hi = self.ranges.get(key, (0.0, 0.0))
            out[key] = (np.array([lo]) if lo == hi
                        else np.linspace(lo, hi, self.grid_points))
        return out

    def points(self) -> list[SensitivityPoint]:
        axes = self.axes()
        keys = list(axes)
        return [SensitivityPoint(self.scenario, dict(zip(keys, combo)))
                for combo in itertools.product(*(axes[k] for k in keys))]

    def corner_points(self) -> list[SensitivityPoint]:
        axes = self.axes()
        keys = list(axes)
        corners = [(v[0], v[-1]) if len(v) > 1 else (v[0],) for v in axes.values()]
        return [SensitivityPoint(self.scenario, dict(zip(keys, combo)))
                for combo in itertools.product(*corners)]


@dataclass
class SweepCell:
    point: SensitivityPoint
    estimates: RiskEstimates | None
    cep: CepResult | None
    error: str | None = None


@dataclass
class SweepResult:
    config: SensitivityConfig
    cells: list[SweepCell]

    def ok_cells(self) -> list[SweepCell]:
        return [c for c in self.cells if c.error is None]


TARGETS_CEP = {"cep_00": "00", "cep_10": "10", "cep_11": "11"}


def _extract(cell: SweepCell, target: str) -> tuple[float, float]:
    if target == "mu":
        return cell.cep.mu, cell.cep.mu_se
    if target in TARGETS_CEP:
        s = TARGETS_CEP[target]
        if s not in cell.cep.values:
            raise KeyError(f"{target} not available in scenario "
                           f"{cell.point.scenario.value}")
        return cell.cep.values[s], cell.cep.ses[s]
    est = cell.estimates
    return est.value(target), est.se(target)


def sweep(weighted: WeightedRecords, config: SensitivityConfig) -> SweepResult:
    """Refit the scenario at every grid point of the sensitivity region.

    Individual grid-point failures are recorded per cell rather than
    raised, unless every cell fails.
    """
    cells = []
    for point in config.points():
        try:
            est = fit_scenario(weighted, point)
            cells.append(SweepCell(point=point, estimates=est,
                                   cep=cep(est, config.contrast)))
        except PsemError as exc:
            cells.append(SweepCell(point=point, estimates=None, cep=None,
                                   error=f"{type(exc).__name__}: {exc}"))
    result = SweepResult(config=config, cells=cells)
    if not result.ok_cells():
        raise EstimationError(
            "every sensitivity grid point failed; first error: "
            + str(cells[0].error))
    return result


@dataclass
class IgnoranceInterval:
    target: str
    lower: float
    upper: float
    se_lower: float
    se_upper: float
    point_lower: SensitivityPoint
    point_upper: SensitivityPoint
    extrema_on_corners: bool
    n_failed: int


def ignorance_interval(grid: SweepResult, target: str = "mu") -> IgnoranceInterval:
    """Span of the point estimates over the grid, with the achieving
    sensitivity-parameter points retained.

    The full grid is scanned even where monotonicity guarantees corner
    extremes; in scenario B a non-corner extreme indicates a numerical
    problem and triggers a warning, while for the scenario C variants
    corner attainment is only measured and reported.
    """
    ok = grid.ok_cells()
    if not ok:
        raise EstimationError("no successful grid cells")
    vals = [_extract(c, target) for c in ok]
    i_lo = min(range(len(ok)), key=lambda i: vals[i][0])
    i_hi = max(range(len(ok)), key=lambda i: vals[i][0])
    corner_vals = {tuple(sorted(p.as_dict().items()))
                   for p in grid.config.corner_points()}

    def on_corner(cell):
        return tuple(sorted(cell.point.as_dict().items())) in corner_vals

    on_corners = on_corner(ok[i_lo]) and on_corner(ok[i_hi])
    if not on_corners and grid.config.scenario is Scenario.B:
        warnings.warn(
            f"ignorance-interval extremes for {target} fall inside the "
            "sensitivity region in scenario B, where the estimate is "
            "monotone; check for numerical problems", RuntimeWarning,
            stacklevel=2)
    return IgnoranceInterval(
        target=target,
        lower=vals[i_lo][0], upper=vals[i_hi][0],
        se_lower=vals[i_lo][1], se_upper=vals[i_hi][1],
        point_lower=ok[i_lo].point, point_upper=ok[i_hi].point,
        extrema_on_corners=on_corners,
        n_failed=len(grid.cells) - len(ok))


@dataclass
class IntervalResult:
    target: str
    estimate_lower: float
    estimate_upper: float
    se_lower: float
    se_upper: float
    ignorance: tuple[float, float]
    eui: tuple[float, float]
    c_alpha: float
    alpha: float
    n: float
    degenerate: bool = False
    point_lower: SensitivityPoint | None = None
    point_upper: SensitivityPoint | None = None


def solve_c_alpha(scaled_gap: float, alpha: float, tol: float = 1e-10) -> float:
    """Critical value on [z_{1-a}, z_{1-a/2}] by bisection; the gap is the
    ignorance-interval width in units of the larger standard error."""
    if scaled_gap < 0:
        raise ValueError("scaled gap must be nonnegative")
    lo = norm_quantile(1.0 - alpha)
    hi = norm_quantile(1.0 - alpha / 2.0)

    def f(c):
        return norm_cdf(c + scaled_gap) - norm_cdf(-c) - (1.0 - alpha)

    if f(lo) >= 0.0:
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def eui(est_l: float, se_l: float, est_u: float, se_u: float, n: float,
        alpha: float = 0.05, target: str = "") -> IntervalResult:
    """Imbens-Manski estimated uncertainty interval.

    ``se_l``/``se_u`` are the standard errors of the lower/upper estimates
    (root-n scaling already inside, see the module docstring); ``n`` is kept
    for reporting only. With a degenerate region (est_l = est_u, equal SEs)
    the EUI is the usual two-sided Wald interval.
    """
    if est_l > est_u:
        raise ValueError("est_l must not exceed est_u")
    if se_l < 0 or se_u < 0:
        raise ValueError("standard errors must be nonnegative")
    if n < 1:
        raise ValueError("n must be at least 1")
    max_se = max(se_l, se_u)
    if max_se == 0.0:
        return IntervalResult(target=target, estimate_lower=est_l,
                              estimate_upper=est_u, se_lower=se_l, se_upper=se_u,
                              ignorance=(est_l, est_u), eui=(est_l, est_u),
                              c_alpha=float("nan"), alpha=alpha, n=n,
                              degenerate=True)
    c = solve_c_alpha((est_u - est_l) / max_se, alpha)
    return IntervalResult(target=target, estimate_lower=est_l,
                          estimate_upper=est_u, se_lower=se_l, se_upper=se_u,
                          ignorance=(est_l, est_u),
                          eui=(est_l - c * se_l, est_u + c * se_u),
                          c_alpha=c, alpha=alpha, n=n)


def interval_for(grid: SweepResult, target: str = "mu") -> IntervalResult:
    """Ignorance interval plus EUI for one target of a completed sweep."""
    ii = ignorance_interval(grid, target)
    n = grid.ok_cells()[0].estimates.n
    res = eui(ii.lower, ii.se_lower, ii.upper, ii.se_upper, n,
              grid.config.alpha, target=target)
    res.point_lower, res.point_upper = ii.point_lower, ii.point_upper
    return res


@dataclass
class EffectModificationTest:
    reject: bool
    interval: IntervalResult
    grid: SweepResult


def test_effect_modification(weighted: WeightedRecords,
                             config: SensitivityConfig) -> EffectModificationTest:
    """Reject equal effect modification iff the EUI for
    mu = CEP(1,0) - CEP(0,0) excludes zero."""
    grid = sweep(weighted, config)
    interval = interval_for(grid, "mu")
    lo, hi = interval.eui
    return EffectModificationTest(reject=not (lo <= 0.0 <= hi),
                                  interval=interval, grid=grid)
