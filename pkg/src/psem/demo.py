"""Synthetic dataset shaped like a real HIV-1 vaccine efficacy trial.

Builds a record set matching the published summary counts of the HVTN 505
trial: 1251 vaccine / 1245 placebo participants, 14 / 10 infections by the
marker visit, and the T-cell polyfunctionality marker measured on 125
uninfected plus 25 infected vaccinees (70 and 5 marker-positive). Placebo
post-visit infections are set so the placebo survivor risk matches the
trial's 3.15% cumulative-incidence scale. Individual-level data are not
public, so this is a count-faithful reconstruction for demonstrations and
regression tests, not the trial data.

The implied two-phase design measures every case plus a fraction
nu = 125/1212 of uninfected survivors, which is the design-known weight
model to analyze it with.
"""

from __future__ import annotations

from .records import Marker, ObservedRecord
from .weights import WeightModel

VACCINE_N = 1251
PLACEBO_N = 1245
VACCINE_EARLY = 14
PLACEBO_EARLY = 10
VACCINE_CASES = 25          # post-visit vaccine infections, all marker-measured
VACCINE_CASES_POS = 5
VACCINE_CONTROLS_MEASURED = 125
VACCINE_CONTROLS_POS = 70
PLACEBO_SURVIVOR_RISK = 0.0315


def implied_subcohort_fraction() -> float:
    uninfected = VACCINE_N - VACCINE_EARLY - VACCINE_CASES
    return VACCINE_CONTROLS_MEASURED / uninfected


def implied_weight_model(eps: float = 0.01) -> WeightModel:
    return WeightModel.design_known(implied_subcohort_fraction(), eps=eps)


def synthetic_trial() -> list[ObservedRecord]:
    records: list[ObservedRecord] = []
    counter = iter(range(1, VACCINE_N + PLACEBO_N + 1))

    def emit(k, **kw):
        for _ in range(k):
            records.append(ObservedRecord(id=f"p{next(counter)}", **kw))

    # vaccine arm
    emit(VACCINE_EARLY, z=1, y_tau=1, marker=Marker.UNDEFINED, y=1, measured=1)
    emit(VACCINE_CASES_POS, z=1, y_tau=0, marker=Marker.POSITIVE, y=1, measured=1)
    emit(VACCINE_CASES - VACCINE_CASES_POS, z=1, y_tau=0,
         marker=Marker.NEGATIVE, y=1, measured=1)
    emit(VACCINE_CONTROLS_POS, z=1, y_tau=0, marker=Marker.POSITIVE, y=0, measured=1)
    emit(VACCINE_CONTROLS_MEASURED - VACCINE_CONTROLS_POS, z=1, y_tau=0,
         marker=Marker.NEGATIVE, y=0, measured=1)
    uninfected = VACCINE_N - VACCINE_EARLY - VACCINE_CASES
    emit(uninfected - VACCINE_CONTROLS_MEASURED, z=1, y_tau=0,
         marker=Marker.MISSING, y=0, measured=0)

    # placebo arm: the pathogen-specific assay is structurally negative
    survivors = PLACEBO_N - PLACEBO_EARLY
    cases = round(PLACEBO_SURVIVOR_RISK * survivors)
    controls_measured = round(implied_subcohort_fraction() * (survivors - cases))
    emit(PLACEBO_EARLY, z=0, y_tau=1, marker=Marker.UNDEFINED, y=1, measured=1)
    emit(cases, z=0, y_tau=0, marker=Marker.NEGATIVE, y=1, measured=1)
    emit(controls_measured, z=0, y_tau=0, marker=Marker.NEGATIVE, y=0, measured=1)
    emit(survivors - cases - controls_measured, z=0, y_tau=0,
         marker=Marker.MISSING, y=0, measured=0)
    return records
