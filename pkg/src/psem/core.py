"""Principal-stratification effect-modification estimators.

Estimands: within the early-always-survivor (EAS) stratum, the per-stratum
risks risk_z(s1, s0) = P(Y(z)=1 | S*(1)=s1, S*(0)=s0, no early event under
either arm), the stratum prevalences p(s1, s0), and contrasts
CEP(s1, s0) = h(risk_1(s1,s0), risk_0(s1,s0)).

Four assumption scenarios are supported, each consuming its own set of
fixed log-odds-ratio sensitivity parameters:

* ``A``         equal early clinical risk, control-arm marker varies,
                marker monotonicity (``beta0``, ``beta1_reversed``);
* ``B``         equal early clinical risk, constant control-arm marker
                (``beta0``);
* ``C_protect`` early no-harm monotonicity (active arm never causes the
                early event), constant control-arm marker
                (``beta0``, ``beta2``, ``beta3``, ``beta4``);
* ``C_harm``    the reversed monotonicity direction (active arm never
                prevents the early event), constant control-arm marker
                (``beta0``, ``beta1_marginal``).

``beta1_reversed`` and ``beta1_marginal`` are distinct knobs that happen to
share a subscript in common notation: the first is the selection parameter
of the reversed-direction always-survivor solve in scenario A, the second
the marginal mixing parameter of scenario C_harm. They are never
interchangeable and are therefore separate configuration keys.

Every fit stacks its estimating functions (identified means, IPW means,
odds-ratio constraints, mixture constraints, derived quantities) into one
system and reports the joint empirical sandwich covariance, so delta-method
standard errors for any contrast come from a single consistent object.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Callable, Mapping

import numpy as np

from .errors import (ConfigError, DataError, EstimationError,
                     IncompatibleSensitivityError, OrderingError)
from .estimating import _fd_jacobian, delta_method
from .mathutil import expit, fisher_exact_two_sided, solve_logit_mixture
from .tables import S_NEG, S_POS, S_UNDEF
from .weights import WeightedRecords, fit_missingness


class Scenario(enum.Enum):
    A = "A"
    B = "B"
    C_PROTECT = "C_protect"
    C_HARM = "C_harm"

    @property
    def sensitivity_keys(self) -> tuple[str, ...]:
        return _SENSITIVITY_KEYS[self]


_SENSITIVITY_KEYS = {
    Scenario.A: ("beta0", "beta1_reversed"),
    Scenario.B: ("beta0",),
    Scenario.C_PROTECT: ("beta0", "beta2", "beta3", "beta4"),
    Scenario.C_HARM: ("beta0", "beta1_marginal"),
}


@dataclass(frozen=True)
class SensitivityPoint:
    """One point in sensitivity-parameter space; only scenario-legal keys."""

    scenario: Scenario
    values: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        legal = set(self.scenario.sensitivity_keys)
        illegal = set(self.values) - legal
        if illegal:
            raise ConfigError(
                f"sensitivity keys {sorted(illegal)} are not legal for "
                f"scenario {self.scenario.value}; legal keys: {sorted(legal)}")
        object.__setattr__(self, "values", dict(self.values))

    def get(self, key: str) -> float:
        return float(self.values.get(key, 0.0))

    def as_dict(self) -> dict[str, float]:
        return {k: self.get(k) for k in self.scenario.sensitivity_keys}


class Direction(enum.Enum):
    STANDARD_MONOTONE = "standard"   # P(S(1) <= S(0)) = 1
    REVERSED = "reversed"            # P(S(1) >= S(0)) = 1


# ---------------------------------------------------------------------------
# stacked-system plumbing


class _Stack:
    """Named estimating-function rows over the dataset cells.

    Rows are either per-cell functions (length-ncells arrays) or
    deterministic constraints (scalars, zero at the solution). Solutions
    are computed blockwise by the scenario builders; this class assembles
    the joint sandwich covariance and verifies the stacked residual.
    """

    def __init__(self, cells):
        self.cells = cells
        self.names: list[str] = []
        self.fns: list[Callable] = []
        self.sol: dict[str, float] = {}

    def add(self, name: str, value: float, fn: Callable) -> None:
        if name in self.sol:
            raise ValueError(f"duplicate parameter {name}")
        self.names.append(name)
        self.fns.append(fn)
        self.sol[name] = float(value)

    def theta(self) -> np.ndarray:
        return np.array([self.sol[n] for n in self.names])

    def contribs(self, theta: np.ndarray) -> np.ndarray:
        d = dict(zip(self.names, theta))
        ncells = len(self.cells.count)
        cols = np.empty((ncells, len(self.names)))
        for j, fn in enumerate(self.fns):
            cols[:, j] = fn(d)
        return cols

    def sandwich(self) -> tuple[np.ndarray, np.ndarray]:
        count = self.cells.count
        n = float(count.sum())
        theta = self.theta()
        u = self.contribs(theta)
        resid = count @ u / n
        if float(np.max(np.abs(resid))) > 1e-8:
            raise EstimationError(
                f"stacked residual {float(np.max(np.abs(resid))):.3e} exceeds "
                "tolerance; the blockwise solution is inconsistent",
                theta=theta, residual=float(np.max(np.abs(resid))))
        meat = (u * count[:, None]).T @ u / n

        def mean_eq(t):
            return count @ self.contribs(t) / n

        bread = _fd_jacobian(mean_eq, theta)
        try:
            bread_inv = np.linalg.inv(bread)
        except np.linalg.LinAlgError:
            raise EstimationError("singular bread matrix in the stacked fit",
                                  theta=theta) from None
        cov = bread_inv @ meat @ bread_inv.T / n
        return theta, 0.5 * (cov + cov.T)


def _wmean(cells, sel, resp, what: str) -> float:
    """Weighted mean of resp over cells, selection weights sel >= 0."""
    denom = float(np.sum(cells.count * sel))
    if denom <= 0.0:
        raise EstimationError(f"empty stratum: no observations for {what}")
    return float(np.sum(cells.count * sel * resp) / denom)


def _odds_row(p1: str, p2: str, beta: float) -> Callable:
    """Odds-ratio constraint odds(p1)/odds(p2) = exp(beta) in product form
    (polynomial, so finite-difference safe at boundary risks)."""
    eb = math.exp(beta)

    def fn(d):
        a, b = d[p1], d[p2]
        return a * (1.0 - b) - eb * b * (1.0 - a)

    return fn


def _features(cells):
    """Common per-cell selectors; marker weight m is 1/pi on measured
    survivor cells and 0 on unmeasured ones (IPW drop-and-reweight)."""
    z = cells.z.astype(float)
    yt = cells.yt.astype(float)
    surv = 1.0 - yt
    measured = (cells.s == S_NEG) | (cells.s == S_POS)
    m = np.where(measured, cells.w, 0.0) * surv
    return SimpleNamespace(
        z=z, surv=surv, y=cells.y.astype(float),
        neg=(cells.s == S_NEG).astype(float),
        pos=(cells.s == S_POS).astype(float),
        m=m,
    )


def _check_unit_interval(name: str, value: float, context: str) -> None:
    if not -1e-12 <= value <= 1.0 + 1e-12:
        raise IncompatibleSensitivityError(
            f"derived {name} = {value:.6g} lies outside [0, 1]; the "
            f"sensitivity parameters are incompatible with the data ({context})")


def _finalize(st: "_Stack", with_cov: bool, report: list[str] | None = None):
    """Extract (names, theta, cov) from a solved stack, optionally skipping
    the sandwich (point-estimate-only path used inside grid sweeps)."""
    if with_cov:
        theta, cov = st.sandwich()
    else:
        theta, cov = st.theta(), None
    if report is None:
        return tuple(st.names), theta, cov
    idx = [st.names.index(nm) for nm in report]
    sub = cov[np.ix_(idx, idx)] if cov is not None else None
    return tuple(report), theta[idx], sub


# ---------------------------------------------------------------------------
# fitted-result containers


@dataclass
class RiskEstimates:
    """Fitted risks and mixing proportions with their joint covariance.

    ``names`` indexes both ``theta`` and ``cov``. Core names shared by all
    scenarios: risk1, risk0, p00, p10, risk1_00, risk1_10, risk0_00,
    risk0_10; scenario A adds p11, risk1_11, risk0_11; scenario C_protect
    adds its early-protected intermediates.
    """

    scenario: Scenario
    sensitivity: SensitivityPoint
    names: tuple[str, ...]
    theta: np.ndarray
    cov: np.ndarray | None
    n: float

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"{name!r} not reported by scenario "
                           f"{self.scenario.value}") from None

    def value(self, name: str) -> float:
        return float(self.theta[self.index(name)])

    def se(self, name: str) -> float:
        if self.cov is None:
            raise EstimationError("covariance was not computed for this fit")
        i = self.index(name)
        return math.sqrt(max(float(self.cov[i, i]), 0.0))

    def has(self, name: str) -> bool:
        return name in self.names

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.theta)}

    def mixing_residual(self) -> float:
        """Largest violation of risk_z = sum_s p(s) risk_z(s) over z."""
        worst = 0.0
        p11 = self.value("p11") if self.has("p11") else 0.0
        for z in (0, 1):
            mix = (self.value("p00") * self.value(f"risk{z}_00")
                   + self.value("p10") * self.value(f"risk{z}_10"))
            if self.has("p11"):
                mix += p11 * self.value(f"risk{z}_11")
            worst = max(worst, abs(self.value(f"risk{z}") - mix))
        return worst


class Contrast(enum.Enum):
    ADDITIVE = "additive"   # h(x, y) = x - y
    VE = "ve"               # h(x, y) = 1 - x/y
    LOG_RR = "log_rr"       # h(x, y) = log(x/y)

    def apply(self, x: float, y: float) -> float:
        if self is Contrast.ADDITIVE:
            return x - y
        if y <= 0.0:
            raise EstimationError(
                f"{self.value} contrast undefined: control risk {y} is not "
                "positive (zero-event stratum)")
        if self is Contrast.VE:
            return 1.0 - x / y
        if x <= 0.0:
            raise EstimationError(
                f"log relative risk undefined: active risk {x} is not positive")
        return math.log(x / y)


@dataclass
class CepResult:
    contrast: Contrast
    values: dict[str, float]        # keys "00", "10" and, scenario A, "11"
    ses: dict[str, float]
    mu: float                       # CEP(1,0) - CEP(0,0)
    mu_se: float
    sensitivity: SensitivityPoint


def cep(estimates: RiskEstimates, contrast: Contrast | str) -> CepResult:
    """Per-stratum contrasts of the fitted risks with delta-method errors.

    mu = CEP(1,0) - CEP(0,0) is computed jointly, so its standard error
    carries all covariances among the four risks involved.
    """
    if isinstance(contrast, str):
        contrast = Contrast(contrast.lower())
    if estimates.cov is None:
        raise EstimationError("contrast errors need a fit with covariance")
    strata = ["00", "10"] + (["11"] if estimates.has("risk1_11") else [])
    values, ses = {}, {}
    for s in strata:
        i1, i0 = estimates.index(f"risk1_{s}"), estimates.index(f"risk0_{s}")

        def g(t, i1=i1, i0=i0):
            return contrast.apply(float(t[i1]), float(t[i0]))

        val, var = delta_method(g, estimates.theta, estimates.cov)
        values[s], ses[s] = val, math.sqrt(max(var, 0.0))

    idx = [estimates.index(f"risk{z}_{s}") for s in ("10", "00") for z in (1, 0)]

    def g_mu(t):
        return (contrast.apply(float(t[idx[0]]), float(t[idx[1]]))
                - contrast.apply(float(t[idx[2]]), float(t[idx[3]])))

    mu, mu_var = delta_method(g_mu, estimates.theta, estimates.cov)
    return CepResult(contrast=contrast, values=values, ses=ses,
                     mu=mu, mu_se=math.sqrt(max(mu_var, 0.0)),
                     sensitivity=estimates.sensitivity)


# ---------------------------------------------------------------------------
# identified quantities


def estimate_identified(weighted: WeightedRecords,
                        scenario: Scenario) -> RiskEstimates:
    """Nonparametrically identified pieces under equal early clinical risk:
    per-arm survivor risks and the IPW mixing proportions."""
    if scenario not in (Scenario.A, Scenario.B):
        raise ConfigError("risk_z and the mixing proportions are directly "
                          "identified only in scenarios A and B")
    cells = weighted.cells
    f = _features(cells)
    st = _Stack(cells)
    point = SensitivityPoint(scenario, {})

    risk1 = _wmean(cells, f.z * f.surv, f.y, "arm-1 survivors")
    risk0 = _wmean(cells, (1 - f.z) * f.surv, f.y, "arm-0 survivors")
    p00 = _wmean(cells, f.z * f.m, f.neg, "measured arm-1 survivor markers")
    st.add("risk1", risk1, lambda d: f.z * f.surv * (f.y - d["risk1"]))
    st.add("risk0", risk0, lambda d: (1 - f.z) * f.surv * (f.y - d["risk0"]))
    st.add("p00", p00, lambda d: f.z * f.m * (f.neg - d["p00"]))
    if scenario is Scenario.A:
        p11 = _wmean(cells, (1 - f.z) * f.m, f.pos,
                     "measured arm-0 survivor markers")
        st.add("p11", p11, lambda d: (1 - f.z) * f.m * (f.pos - d["p11"]))
        p10 = 1.0 - p00 - p11
        st.add("p10", p10, lambda d: 1.0 - d["p00"] - d["p11"] - d["p10"])
    else:
        p10 = 1.0 - p00
        st.add("p10", p10, lambda d: 1.0 - d["p00"] - d["p10"])
    if p10 <= 0.0:
        raise EstimationError(
            f"estimated p(1,0) = {p10:.6g} is not positive; the always-"
            "survivor effect-modification stratum is empty in these data")
    theta, cov = st.sandwich()
    return RiskEstimates(scenario=scenario, sensitivity=point,
                         names=tuple(st.names), theta=theta, cov=cov,
                         n=cells.n)


# ---------------------------------------------------------------------------
# the always-survivor estimator under a logistic selection-bias model


@dataclass
class SaceFit:
    """Two always-stratum outcome means and their 2x2 covariance."""
    p11_treated: float
    p11_control: float
    cov: np.ndarray
    alpha: float


def _cell_s_values(cells, s_definition):
    """Evaluate a user intermediate-state definition per cell.

    The definition receives a view with fields z, y_tau, marker (0/1 or
    None when unavailable) and y; returning None means the marker is needed
    but unavailable. Cells whose state is computable without the marker get
    weight 1; marker-dependent cells get the IPW weight (0 if unmeasured).
    """
    s_vals = np.zeros(len(cells.count))
    m_vals = np.zeros(len(cells.count))
    for i in range(len(cells.count)):
        marker = {S_NEG: 0, S_POS: 1}.get(int(cells.s[i]))
        view = SimpleNamespace(z=int(cells.z[i]), y_tau=int(cells.yt[i]),
                               marker=None, y=int(cells.y[i]))
        blind = s_definition(view)
        if blind is not None:
            s_vals[i], m_vals[i] = float(blind), 1.0
            continue
        if marker is None:
            if cells.s[i] == S_UNDEF:
                raise DataError(
                    "the intermediate-state definition must be computable "
                    "for early-event records (their marker never exists)")
            s_vals[i], m_vals[i] = 0.0, 0.0   # unmeasured: dropped, reweighted
            continue
        view.marker = marker
        val = s_definition(view)
        if val not in (0, 1):
            raise DataError(f"intermediate state must be 0 or 1, got {val!r}")
        s_vals[i], m_vals[i] = float(val), float(cells.w[i])
    return s_vals, m_vals


def selection_sace(weighted: WeightedRecords, s_definition, beta: float,
                   direction: Direction = Direction.STANDARD_MONOTONE,
                   ordering_label: str = "the survivor ordering") -> SaceFit:
    """Always-stratum outcome means under a logistic selection-bias model.

    With intermediate state S defined by ``s_definition`` and monotonicity
    P(S(1) <= S(0)) = 1 (``STANDARD_MONOTONE``), P(Y(1)=1 | S(1)=S(0)=1) is
    the observed mean among treated S=1 and P(Y(0)=1 | S(1)=S(0)=1) is
    recovered through the selection model
    P(S(1)=1 | S(0)=1, Y(0)=y) = expit(alpha + beta*y) with log odds ratio
    ``beta`` fixed by the user and alpha solved from the S margins
    (Jemiai et al., 2007 parameterization). ``REVERSED`` swaps the roles of
    the arms. beta = 0 is the no-selection-bias model.

    Requires the supporting ordering P(S(1)=1) < P(S(0)=1) (reversed:
    flipped); violations raise OrderingError naming ``ordering_label``.
    """
    cells = weighted.cells
    f = _features(cells)
    s_vals, m_vals = _cell_s_values(cells, s_definition)
    st = _Stack(cells)

    pS1 = _wmean(cells, f.z * m_vals, s_vals, "arm-1 intermediate states")
    pS0 = _wmean(cells, (1 - f.z) * m_vals, s_vals, "arm-0 intermediate states")
    st.add("pS1", pS1, lambda d: f.z * m_vals * (s_vals - d["pS1"]))
    st.add("pS0", pS0, lambda d: (1 - f.z) * m_vals * (s_vals - d["pS0"]))
    q1 = _wmean(cells, f.z * m_vals * s_vals, f.y, "treated S=1 outcomes")
    q0 = _wmean(cells, (1 - f.z) * m_vals * s_vals, f.y, "control S=1 outcomes")
    st.add("q1", q1, lambda d: f.z * m_vals * s_vals * (f.y - d["q1"]))
    st.add("q0", q0, lambda d: (1 - f.z) * m_vals * s_vals * (f.y - d["q0"]))

    if direction is Direction.STANDARD_MONOTONE:
        hi, lo, q_mix = pS0, pS1, q0
    else:
        hi, lo, q_mix = pS1, pS0, q1
    if not lo < hi:
        raise OrderingError(
            f"{ordering_label} fails: the selection model needs "
            f"P(S=1) = {lo:.4g} in the shrinking arm below {hi:.4g} in the "
            "other arm; estimates would not be asymptotically normal")
    rho = lo / hi
    if rho <= 0.0:
        raise EstimationError("no intermediate-positive mass in the shrinking arm")
    # alpha solves the margin identity rho = (1-q) expit(a) + q expit(a+beta)
    w1v, w0v = solve_logit_mixture(rho, q_mix, beta)
    alpha = math.log(w0v / (1.0 - w0v))
    adjusted = w1v * q_mix / rho

    if direction is Direction.STANDARD_MONOTONE:
        p11_t, p11_c = q1, adjusted

        def alpha_row(d):
            return d["pS1"] - d["pS0"] * ((1 - d["q0"]) * expit(d["alpha"])
                                          + d["q0"] * expit(d["alpha"] + beta))

        def adj_row(d):
            return d["p11c"] * d["pS1"] - expit(d["alpha"] + beta) * d["q0"] * d["pS0"]

        st.add("alpha", alpha, alpha_row)
        st.add("p11c", adjusted, adj_row)
        st.add("p11t", q1, lambda d: d["q1"] - d["p11t"])
        report = ("p11t", "p11c")
    else:
        p11_t, p11_c = adjusted, q0

        def alpha_row(d):
            return d["pS0"] - d["pS1"] * ((1 - d["q1"]) * expit(d["alpha"])
                                          + d["q1"] * expit(d["alpha"] + beta))

        def adj_row(d):
            return d["p11t"] * d["pS0"] - expit(d["alpha"] + beta) * d["q1"] * d["pS1"]

        st.add("alpha", alpha, alpha_row)
        st.add("p11t", adjusted, adj_row)
        st.add("p11c", q0, lambda d: d["q0"] - d["p11c"])
        report = ("p11t", "p11c")

    theta, cov = st.sandwich()
    idx = [st.names.index(r) for r in report]
    return SaceFit(p11_treated=p11_t, p11_control=p11_c,
                   cov=cov[np.ix_(idx, idx)], alpha=alpha)


# ---------------------------------------------------------------------------
# scenario fits


def _identified_block(st, f, cells):
    risk1 = _wmean(cells, f.z * f.surv, f.y, "arm-1 survivors")
    risk0 = _wmean(cells, (1 - f.z) * f.surv, f.y, "arm-0 survivors")
    p00 = _wmean(cells, f.z * f.m, f.neg, "measured arm-1 survivor markers")
    st.add("risk1", risk1, lambda d: f.z * f.surv * (f.y - d["risk1"]))
    st.add("risk0", risk0, lambda d: (1 - f.z) * f.surv * (f.y - d["risk0"]))
    st.add("p00", p00, lambda d: f.z * f.m * (f.neg - d["p00"]))
    return risk1, risk0, p00


def fit_scenario_b(weighted: WeightedRecords, beta0: float = 0.0,
                   with_cov: bool = True) -> RiskEstimates:
    """Scenario B fit: equal early clinical risk plus a constant control-arm
    marker, selection bias indexed by ``beta0``.

    risk_1(0,0) and the mixing proportion are direct IPW means among active-
    arm survivors; risk_0(0,0) and risk_0(1,0) jointly solve the odds-ratio
    model odds(risk_0(0,0)) / odds(risk_0(1,0)) = exp(beta0) together with
    the mixture identity for the identified control survivor risk; and
    risk_1(1,0) is recovered from the mixture identity for the active arm,
    which makes the mixing identity hold exactly by construction.
    """
    point = SensitivityPoint(Scenario.B, {"beta0": beta0})
    cells = weighted.cells
    f = _features(cells)
    st = _Stack(cells)
    risk1, risk0, p00 = _identified_block(st, f, cells)
    p10 = 1.0 - p00
    if p10 <= 0.0:
        raise EstimationError(
            f"estimated p(1,0) = {p10:.6g} is not positive; no marker-positive "
            "mass among active-arm survivors")
    r100 = _wmean(cells, f.z * f.m * f.neg, f.y, "active-arm marker-negative survivors")
    st.add("risk1_00", r100, lambda d: f.z * f.m * f.neg * (f.y - d["risk1_00"]))
    st.add("p10", p10, lambda d: 1.0 - d["p00"] - d["p10"])

    r000, r010 = solve_logit_mixture(risk0, p00, beta0)
    st.add("risk0_00", r000, _odds_row("risk0_00", "risk0_10", beta0))
    st.add("risk0_10", r010,
           lambda d: d["risk0"] - d["p00"] * d["risk0_00"] - d["p10"] * d["risk0_10"])

    r110 = (risk1 - p00 * r100) / p10
    _check_unit_interval("risk1_10", r110,
                         "active-arm mixture identity; check the weights")
    st.add("risk1_10", r110,
           lambda d: d["risk1"] - d["p00"] * d["risk1_00"] - d["p10"] * d["risk1_10"])

    names, theta, cov = _finalize(st, with_cov)
    return RiskEstimates(scenario=Scenario.B, sensitivity=point,
                         names=names, theta=theta, cov=cov, n=cells.n)


def fit_scenario_a(weighted: WeightedRecords, beta0: float = 0.0,
                   beta1_reversed: float = 0.0,
                   with_cov: bool = True) -> RiskEstimates:
    """Scenario A fit: equal early clinical risk with a varying control-arm
    marker under marker monotonicity.

    Two selection-model solves run back to back: the standard direction on
    state (survivor and marker-negative) recovers the (0,0) stratum risks
    with ``beta0``; the reversed direction on state (survivor and marker-
    positive) recovers the (1,1) stratum risks with ``beta1_reversed``. The
    (1,0) risks then come from the three-component mixture identity.
    """
    point = SensitivityPoint(Scenario.A, {
        "beta0": beta0, "beta1_reversed": beta1_reversed})
    cells = weighted.cells
    f = _features(cells)
    st = _Stack(cells)
    risk1, risk0, p00 = _identified_block(st, f, cells)
    p11 = _wmean(cells, (1 - f.z) * f.m, f.pos, "measured arm-0 survivor markers")
    st.add("p11", p11, lambda d: (1 - f.z) * f.m * (f.pos - d["p11"]))
    p10 = 1.0 - p00 - p11
    if p11 <= 0.0:
        raise EstimationError(
            "estimated p(1,1) is not positive: the control-arm marker never "
            "varies in these data, so use scenario B instead of A")
    if p10 <= 0.0:
        raise EstimationError(f"estimated p(1,0) = {p10:.6g} is not positive")
    st.add("p10", p10, lambda d: 1.0 - d["p00"] - d["p11"] - d["p10"])

    # survivor & marker-negative state: S computable without the marker only
    # for early-event cells (state 0); measured survivor cells carry weight w
    sa = f.surv * f.neg
    ma = np.where(f.surv > 0, f.m, 1.0)
    pSa1 = _wmean(cells, f.z * ma, sa, "arm-1 negative-survivor states")
    pSa0 = _wmean(cells, (1 - f.z) * ma, sa, "arm-0 negative-survivor states")
    if not pSa1 < pSa0:
        raise OrderingError(
            "marker ordering (A5') fails in the negative direction: "
            f"P(survivor & negative) is {pSa1:.4g} (active) vs {pSa0:.4g} "
            "(control); the standard-direction solve is invalid")
    qa0 = _wmean(cells, (1 - f.z) * ma * sa, f.y, "control negative survivors")
    r100 = _wmean(cells, f.z * ma * sa, f.y, "active negative survivors")
    rho_a = pSa1 / pSa0
    w1a, w0a = solve_logit_mixture(rho_a, qa0, beta0)
    alpha_a = math.log(w0a / (1.0 - w0a))
    r000 = w1a * qa0 / rho_a
    st.add("pSa1", pSa1, lambda d: f.z * ma * (sa - d["pSa1"]))
    st.add("pSa0", pSa0, lambda d: (1 - f.z) * ma * (sa - d["pSa0"]))
    st.add("qa0", qa0, lambda d: (1 - f.z) * ma * sa * (f.y - d["qa0"]))
    st.add("risk1_00", r100, lambda d: f.z * ma * sa * (f.y - d["risk1_00"]))
    st.add("alpha_a", alpha_a,
           lambda d: d["pSa1"] - d["pSa0"] * ((1 - d["qa0"]) * expit(d["alpha_a"])
                                              + d["qa0"] * expit(d["alpha_a"] + beta0)))
    st.add("risk0_00", r000,
           lambda d: d["risk0_00"] * d["pSa1"]
           - expit(d["alpha_a"] + beta0) * d["qa0"] * d["pSa0"])

    # survivor & marker-positive state, reversed monotonicity direction
    sb = f.surv * f.pos
    pSb1 = _wmean(cells, f.z * ma, sb, "arm-1 positive-survivor states")
    pSb0 = _wmean(cells, (1 - f.z) * ma, sb, "arm-0 positive-survivor states")
    if not pSb0 < pSb1:
        raise OrderingError(
            "marker ordering (A5') fails: P(survivor & positive) is "
            f"{pSb1:.4g} (active) vs {pSb0:.4g} (control); the reversed-"
            "direction solve is invalid")
    qb1 = _wmean(cells, f.z * ma * sb, f.y, "active positive survivors")
    r011 = _wmean(cells, (1 - f.z) * ma * sb, f.y, "control positive survivors")
    rho_b = pSb0 / pSb1
    w1b, w0b = solve_logit_mixture(rho_b, qb1, beta1_reversed)
    alpha_b = math.log(w0b / (1.0 - w0b))
    r111 = w1b * qb1 / rho_b
    st.add("pSb1", pSb1, lambda d: f.z * ma * (sb - d["pSb1"]))
    st.add("pSb0", pSb0, lambda d: (1 - f.z) * ma * (sb - d["pSb0"]))
    st.add("qb1", qb1, lambda d: f.z * ma * sb * (f.y - d["qb1"]))
    st.add("risk0_11", r011, lambda d: (1 - f.z) * ma * sb * (f.y - d["risk0_11"]))
    st.add("alpha_b", alpha_b,
           lambda d: d["pSb0"] - d["pSb1"] * ((1 - d["qb1"]) * expit(d["alpha_b"])
                                              + d["qb1"] * expit(d["alpha_b"] + beta1_reversed)))
    st.add("risk1_11", r111,
           lambda d: d["risk1_11"] * d["pSb0"]
           - expit(d["alpha_b"] + beta1_reversed) * d["qb1"] * d["pSb1"])

    r110 = (risk1 - p00 * r100 - p11 * r111) / p10
    r010 = (risk0 - p00 * r000 - p11 * r011) / p10
    _check_unit_interval("risk1_10", r110, "three-component mixture, active arm")
    _check_unit_interval("risk0_10", r010, "three-component mixture, control arm")
    st.add("risk1_10", r110,
           lambda d: d["risk1"] - d["p00"] * d["risk1_00"]
           - d["p11"] * d["risk1_11"] - d["p10"] * d["risk1_10"])
    st.add("risk0_10", r010,
           lambda d: d["risk0"] - d["p00"] * d["risk0_00"]
           - d["p11"] * d["risk0_11"] - d["p10"] * d["risk0_10"])

    report = ["risk1", "risk0", "p00", "p11", "p10", "risk1_00", "risk1_10",
              "risk1_11", "risk0_00", "risk0_10", "risk0_11"]
    names, theta, cov = _finalize(st, with_cov, report)
    return RiskEstimates(scenario=Scenario.A, sensitivity=point,
                         names=names, theta=theta, cov=cov, n=cells.n)


def fit_scenario_c_protect(weighted: WeightedRecords, beta0: float = 0.0,
                           beta2: float = 0.0, beta3: float = 0.0,
                           beta4: float = 0.0,
                           with_cov: bool = True) -> RiskEstimates:
    """Scenario C fit under early no-harm monotonicity (active arm never
    causes the early event) and a constant control-arm marker.

    Active-arm survivors mix the always-survivor stratum with the early-
    protected (EP) stratum, so three extra odds-ratio models split them:
    ``beta4`` splits the marker prevalence (always-survivor vs EP),
    ``beta2``/``beta3`` split the marker-negative/-positive outcome risks.
    ``beta0`` plays the same role as in scenario B for the control risks.
    Requires the testable ordering A4'': the active arm must show the lower
    early-event rate.
    """
    point = SensitivityPoint(Scenario.C_PROTECT, {
        "beta0": beta0, "beta2": beta2, "beta3": beta3, "beta4": beta4})
    cells = weighted.cells
    f = _features(cells)
    st = _Stack(cells)

    risk0 = _wmean(cells, (1 - f.z) * f.surv, f.y, "arm-0 survivors")
    pyt1 = _wmean(cells, f.z, 1 - f.surv, "arm-1 records")
    pyt0 = _wmean(cells, 1 - f.z, 1 - f.surv, "arm-0 records")
    st.add("risk0", risk0, lambda d: (1 - f.z) * f.surv * (f.y - d["risk0"]))
    st.add("pyt1", pyt1, lambda d: f.z * (1 - f.surv - d["pyt1"]))
    st.add("pyt0", pyt0, lambda d: (1 - f.z) * (1 - f.surv - d["pyt0"]))
    if not pyt1 < pyt0:
        raise OrderingError(
            "early-event ordering (A4'') fails: the active-arm early rate "
            f"{pyt1:.4g} is not below the control rate {pyt0:.4g}; Wald "
            "inference under early no-harm monotonicity is invalid here")
    phi = (1.0 - pyt0) / (1.0 - pyt1)   # P(control survives early | active does)
    st.add("phi", phi, lambda d: d["phi"] * (1 - d["pyt1"]) - (1 - d["pyt0"]))

    s1m = _wmean(cells, f.z * f.m, f.pos, "measured arm-1 survivor markers")
    mr1 = _wmean(cells, f.z * f.m * f.pos, f.y, "active positive survivors")
    mr0 = _wmean(cells, f.z * f.m * f.neg, f.y, "active negative survivors")
    st.add("s1m", s1m, lambda d: f.z * f.m * (f.pos - d["s1m"]))
    st.add("mrisk1_1", mr1, lambda d: f.z * f.m * f.pos * (f.y - d["mrisk1_1"]))
    st.add("mrisk1_0", mr0, lambda d: f.z * f.m * f.neg * (f.y - d["mrisk1_0"]))

    p10, q_ep = solve_logit_mixture(s1m, phi, beta4)
    p00 = 1.0 - p10
    if p10 <= 0.0 or p00 <= 0.0:
        raise EstimationError(
            f"always-survivor marker split degenerate: p(1,0) = {p10:.6g}")
    st.add("p10", p10, _odds_row("p10", "ep_pos_rate", beta4))
    st.add("ep_pos_rate", q_ep,
           lambda d: d["s1m"] - d["phi"] * d["p10"]
           - (1 - d["phi"]) * d["ep_pos_rate"])
    st.add("p00", p00, lambda d: 1.0 - d["p10"] - d["p00"])

    r000, r010 = solve_logit_mixture(risk0, p00, beta0)
    st.add("risk0_00", r000, _odds_row("risk0_00", "risk0_10", beta0))
    st.add("risk0_10", r010,
           lambda d: d["risk0"] - d["p00"] * d["risk0_00"] - d["p10"] * d["risk0_10"])

    if s1m <= 0.0 or s1m >= 1.0:
        raise EstimationError(
            "active-arm survivor markers are all one value; the early-"
            "protected split is undefined")
    w1s = p10 * phi / s1m
    w0s = p00 * phi / (1.0 - s1m)
    _check_unit_interval("always-survivor share among positives", w1s, "B.4 split")
    _check_unit_interval("always-survivor share among negatives", w0s, "B.4 split")
    st.add("w1s", w1s, lambda d: d["w1s"] * d["s1m"] - d["p10"] * d["phi"])
    st.add("w0s", w0s, lambda d: d["w0s"] * (1 - d["s1m"]) - d["p00"] * d["phi"])

    r110, r11u = solve_logit_mixture(mr1, w1s, beta3)
    r100, r10u = solve_logit_mixture(mr0, w0s, beta2)
    st.add("risk1_10", r110, _odds_row("risk1_10", "risk1_1star", beta3))
    st.add("risk1_1star", r11u,
           lambda d: d["mrisk1_1"] - d["w1s"] * d["risk1_10"]
           - (1 - d["w1s"]) * d["risk1_1star"])
    st.add("risk1_00", r100, _odds_row("risk1_00", "risk1_0star", beta2))
    st.add("risk1_0star", r10u,
           lambda d: d["mrisk1_0"] - d["w0s"] * d["risk1_00"]
           - (1 - d["w0s"]) * d["risk1_0star"])

    risk1 = p00 * r100 + p10 * r110
    st.add("risk1", risk1,
           lambda d: d["p00"] * d["risk1_00"] + d["p10"] * d["risk1_10"] - d["risk1"])

    report = ["risk1", "risk0", "p00", "p10", "risk1_00", "risk1_10",
              "risk0_00", "risk0_10", "risk1_0star", "risk1_1star",
              "ep_pos_rate", "phi"]
    names, theta, cov = _finalize(st, with_cov, report)
    return RiskEstimates(scenario=Scenario.C_PROTECT, sensitivity=point,
                         names=names, theta=theta, cov=cov, n=cells.n)


def fit_scenario_c_harm(weighted: WeightedRecords, beta0: float = 0.0,
                        beta1_marginal: float = 0.0,
                        with_cov: bool = True) -> RiskEstimates:
    """Scenario C fit with the monotonicity direction reversed (active arm
    never prevents the early event), constant control-arm marker.

    Active-arm survivors are then exactly the always-survivor stratum, so
    the active risks are direct; what needs a sensitivity model is the
    control survivor risk, which mixes always-survivors with the early-
    harmed stratum. ``beta1_marginal`` is the log odds ratio between those
    two control risks; at 0 this fit equals scenario B's exactly.
    """
    point = SensitivityPoint(Scenario.C_HARM, {
        "beta0": beta0, "beta1_marginal": beta1_marginal})
    cells = weighted.cells
    f = _features(cells)
    st = _Stack(cells)

    riskm0 = _wmean(cells, (1 - f.z) * f.surv, f.y, "arm-0 survivors")
    pyt1 = _wmean(cells, f.z, 1 - f.surv, "arm-1 records")
    pyt0 = _wmean(cells, 1 - f.z, 1 - f.surv, "arm-0 records")
    st.add("riskm0", riskm0, lambda d: (1 - f.z) * f.surv * (f.y - d["riskm0"]))
    st.add("pyt1", pyt1, lambda d: f.z * (1 - f.surv - d["pyt1"]))
    st.add("pyt0", pyt0, lambda d: (1 - f.z) * (1 - f.surv - d["pyt0"]))
    phi_r = (1.0 - pyt1) / (1.0 - pyt0)   # P(active survives early | control does)
    st.add("phi_r", phi_r, lambda d: d["phi_r"] * (1 - d["pyt0"]) - (1 - d["pyt1"]))

    risk1 = _wmean(cells, f.z * f.surv, f.y, "arm-1 survivors")
    p00 = _wmean(cells, f.z * f.m, f.neg, "measured arm-1 survivor markers")
    r100 = _wmean(cells, f.z * f.m * f.neg, f.y, "active negative survivors")
    st.add("risk1", risk1, lambda d: f.z * f.surv * (f.y - d["risk1"]))
    st.add("p00", p00, lambda d: f.z * f.m * (f.neg - d["p00"]))
    st.add("risk1_00", r100, lambda d: f.z * f.m * f.neg * (f.y - d["risk1_00"]))
    p10 = 1.0 - p00
    if p10 <= 0.0:
        raise EstimationError(f"estimated p(1,0) = {p10:.6g} is not positive")
    st.add("p10", p10, lambda d: 1.0 - d["p00"] - d["p10"])

    risk0, r_eh = solve_logit_mixture(riskm0, phi_r, beta1_marginal)
    st.add("risk0", risk0, _odds_row("risk0", "eh_risk", beta1_marginal))
    st.add("eh_risk", r_eh,
           lambda d: d["riskm0"] - d["phi_r"] * d["risk0"]
           - (1 - d["phi_r"]) * d["eh_risk"])

    r000, r010 = solve_logit_mixture(risk0, p00, beta0)
    st.add("risk0_00", r000, _odds_row("risk0_00", "risk0_10", beta0))
    st.add("risk0_10", r010,
           lambda d: d["risk0"] - d["p00"] * d["risk0_00"] - d["p10"] * d["risk0_10"])

    r110 = (risk1 - p00 * r100) / p10
    _check_unit_interval("risk1_10", r110, "active-arm mixture identity")
    st.add("risk1_10", r110,
           lambda d: d["risk1"] - d["p00"] * d["risk1_00"] - d["p10"] * d["risk1_10"])

    report = ["risk1", "risk0", "p00", "p10", "risk1_00", "risk1_10",
              "risk0_00", "risk0_10", "eh_risk", "phi_r"]
    names, theta, cov = _finalize(st, with_cov, report)
    return RiskEstimates(scenario=Scenario.C_HARM, sensitivity=point,
                         names=names, theta=theta, cov=cov, n=cells.n)


_FITTERS = {
    Scenario.A: lambda w, p, c: fit_scenario_a(
        w, p.get("beta0"), p.get("beta1_reversed"), with_cov=c),
    Scenario.B: lambda w, p, c: fit_scenario_b(w, p.get("beta0"), with_cov=c),
    Scenario.C_PROTECT: lambda w, p, c: fit_scenario_c_protect(
        w, p.get("beta0"), p.get("beta2"), p.get("beta3"), p.get("beta4"),
        with_cov=c),
    Scenario.C_HARM: lambda w, p, c: fit_scenario_c_harm(
        w, p.get("beta0"), p.get("beta1_marginal"), with_cov=c),
}


def fit_scenario(weighted: WeightedRecords, point: SensitivityPoint,
                 with_cov: bool = True) -> RiskEstimates:
    """Dispatch to the scenario fitter named by the sensitivity point."""
    return _FITTERS[point.scenario](weighted, point, with_cov)


# ---------------------------------------------------------------------------
# mean-shift alternative (Chiba and VanderWeele, 2011, adapted)


def mean_shift_cep(weighted: WeightedRecords, alpha0: float, alpha1: float,
                   scenario: Scenario = Scenario.B) -> CepResult:
    """Additive-contrast fit under mean-shift sensitivity parameters.

    alpha_k is the assumed difference between the counterfactual and the
    observed arm-specific mean within the marker-k always stratum, so
    CEP(k,k) is the naive stratum contrast minus alpha_k; the (1,0) stratum
    is recovered from the mixture identity. Only the additive contrast is
    supported; in scenario B the control marker never varies so alpha1 is
    unused.
    """
    if scenario not in (Scenario.A, Scenario.B):
        raise ConfigError("the mean-shift method applies to scenarios A and B")
    cells = weighted.cells
    f = _features(cells)
    st = _Stack(cells)
    risk1, risk0, p00 = _identified_block(st, f, cells)
    mu10 = _wmean(cells, f.z * f.m * f.neg, f.y, "active negative survivors")
    mu00 = _wmean(cells, (1 - f.z) * f.m * f.neg, f.y, "control negative survivors")
    mu11 = _wmean(cells, f.z * f.m * f.pos, f.y, "active positive survivors")
    st.add("mu10", mu10, lambda d: f.z * f.m * f.neg * (f.y - d["mu10"]))
    st.add("mu00", mu00, lambda d: (1 - f.z) * f.m * f.neg * (f.y - d["mu00"]))
    st.add("mu11", mu11, lambda d: f.z * f.m * f.pos * (f.y - d["mu11"]))
    st.add("risk1_00", mu10, lambda d: d["mu10"] - d["risk1_00"])
    st.add("risk0_00", mu00 + alpha0, lambda d: d["mu00"] + alpha0 - d["risk0_00"])

    if scenario is Scenario.A:
        mu01 = _wmean(cells, (1 - f.z) * f.m * f.pos, f.y,
                      "control positive survivors")
        p11 = _wmean(cells, (1 - f.z) * f.m, f.pos,
                     "measured arm-0 survivor markers")
        st.add("mu01", mu01, lambda d: (1 - f.z) * f.m * f.pos * (f.y - d["mu01"]))
        st.add("p11", p11, lambda d: (1 - f.z) * f.m * (f.pos - d["p11"]))
        st.add("risk1_11", mu11 - alpha1, lambda d: d["mu11"] - alpha1 - d["risk1_11"])
        st.add("risk0_11", mu01, lambda d: d["mu01"] - d["risk0_11"])
        p10 = 1.0 - p00 - p11
    else:
        p11, mu01 = 0.0, 0.0
        p10 = 1.0 - p00
    if p10 <= 0.0:
        raise EstimationError(f"estimated p(1,0) = {p10:.6g} is not positive")
    if scenario is Scenario.A:
        st.add("p10", p10, lambda d: 1.0 - d["p00"] - d["p11"] - d["p10"])
        r110 = (risk1 - p00 * mu10 - p11 * (mu11 - alpha1)) / p10
        r010 = (risk0 - p00 * (mu00 + alpha0) - p11 * mu01) / p10
        st.add("risk1_10", r110,
               lambda d: d["risk1"] - d["p00"] * d["risk1_00"]
               - d["p11"] * d["risk1_11"] - d["p10"] * d["risk1_10"])
        st.add("risk0_10", r010,
               lambda d: d["risk0"] - d["p00"] * d["risk0_00"]
               - d["p11"] * d["risk0_11"] - d["p10"] * d["risk0_10"])
    else:
        st.add("p10", p10, lambda d: 1.0 - d["p00"] - d["p10"])
        r110 = (risk1 - p00 * mu10) / p10
        r010 = (risk0 - p00 * (mu00 + alpha0)) / p10
        st.add("risk1_10", r110,
               lambda d: d["risk1"] - d["p00"] * d["risk1_00"]
               - d["p10"] * d["risk1_10"])
        st.add("risk0_10", r010,
               lambda d: d["risk0"] - d["p00"] * d["risk0_00"]
               - d["p10"] * d["risk0_10"])
    for nm, val in (("risk1_10", r110), ("risk0_10", r010)):
        _check_unit_interval(nm, val, "mean-shift mixture identity")

    theta, cov = st.sandwich()
    report = ["risk1", "risk0", "p00", "p10", "risk1_00", "risk1_10",
              "risk0_00", "risk0_10"]
    if scenario is Scenario.A:
        report += ["p11", "risk1_11", "risk0_11"]
    idx = [st.names.index(nm) for nm in report]
    est = RiskEstimates(scenario=scenario,
                        sensitivity=SensitivityPoint(scenario, {}),
                        names=tuple(report), theta=theta[idx],
                        cov=cov[np.ix_(idx, idx)], n=cells.n)
    return cep(est, Contrast.ADDITIVE)


# ---------------------------------------------------------------------------
# assumption diagnostics


@dataclass
class AssumptionReport:
    early_counts: dict[int, tuple[int, int]]     # arm -> (events, n)
    early_rates: dict[int, float]
    fisher_p: float
    a4_plausible: bool            # equal early clinical risk not rejected
    a4pp_ordering: bool           # active early rate strictly below control
    marker_pos_rates: dict[int, float | None]    # weighted, among survivors
    a5p_ordering: bool | None
    constant_control_marker: bool | None
    recommended: list[str]
    notes: list[str]

    def as_dict(self) -> dict:
        return {
            "early_counts": {str(k): list(v) for k, v in self.early_counts.items()},
            "early_rates": {str(k): v for k, v in self.early_rates.items()},
            "fisher_p": self.fisher_p,
            "a4_plausible": self.a4_plausible,
            "a4pp_ordering": self.a4pp_ordering,
            "marker_pos_rates": {str(k): v for k, v in self.marker_pos_rates.items()},
            "a5p_ordering": self.a5p_ordering,
            "constant_control_marker": self.constant_control_marker,
            "recommended": self.recommended,
            "notes": self.notes,
        }


def check_assumptions(records, weighted: WeightedRecords | None = None,
                      alpha: float = 0.05) -> AssumptionReport:
    """Testable-implication diagnostics and a scenario recommendation.

    Reports per-arm early-event rates with a two-sided Fisher exact test of
    equality (plausibility of equal early clinical risk), the early-rate
    ordering needed by scenario C_protect (A4''), and weighted marker-
    positive rates among survivors with the ordering (A5') needed by the
    always-survivor solves. Diagnostics are always computable; degenerate
    tables are reported as such.
    """
    if weighted is None:
        weighted = fit_missingness(records)
    cells = weighted.cells
    f = _features(cells)
    counts, rates = {}, {}
    for z in (0, 1):
        arm = f.z == z
        n_arm = cells.subset_count(arm)
        ev = cells.subset_count(arm & (cells.yt == 1))
        counts[z] = (int(ev), int(n_arm))
        rates[z] = ev / n_arm if n_arm > 0 else float("nan")
    a, n1 = counts[1]
    c, n0 = counts[0]
    fisher_p = fisher_exact_two_sided(a, n1 - a, c, n0 - c)
    a4pp = rates[1] < rates[0]

    pos_rates: dict[int, float | None] = {}
    for z in (0, 1):
        sel = (f.z == z) * f.m
        denom = float(np.sum(cells.count * sel))
        pos_rates[z] = (float(np.sum(cells.count * sel * f.pos) / denom)
                        if denom > 0 else None)
    if pos_rates[0] is None or pos_rates[1] is None:
        a5p = None
        cb = None if pos_rates[0] is None else pos_rates[0] == 0.0
    else:
        a5p = pos_rates[0] < pos_rates[1]
        cb = pos_rates[0] == 0.0

    a4_ok = fisher_p >= alpha
    recommended, notes = [], []
    if a4_ok:
        if cb is False:
            recommended.append(Scenario.A.value)
            notes.append("control-arm markers vary: scenario A applies if "
                         "marker monotonicity is defensible")
        else:
            recommended.append(Scenario.B.value)
            notes.append(f"equal early risk not rejected (p = {fisher_p:.2g})")
    else:
        notes.append(f"equal early risk questionable (p = {fisher_p:.2g})")
    if a4pp:
        recommended.append(Scenario.C_PROTECT.value)
        notes.append("early-rate ordering supports no-harm monotonicity")
    elif rates[1] > rates[0]:
        recommended.append(Scenario.C_HARM.value)
        notes.append("early rates are reversed; only the reversed-"
                     "monotonicity variant of scenario C is available")
    if a5p is False:
        notes.append("marker ordering (A5') fails; always-survivor solves "
                     "will reject")
    return AssumptionReport(early_counts=counts, early_rates=rates,
                            fisher_p=fisher_p, a4_plausible=a4_ok,
                            a4pp_ordering=a4pp, marker_pos_rates=pos_rates,
                            a5p_ordering=a5p, constant_control_marker=cb,
                            recommended=recommended, notes=notes)
