"""Monoexponential depletion/recovery fits and oxidative-capacity markers.

Recovery model:  v(t) = asymptote - delta * exp(-(t - t0) / tau)
Exercise model:  v(t) = asymptote + delta * exp(-(t - t0) / tau)

t0 is the time of the fit's start frame, so tau is invariant to time
translation; the value axis enters only linearly, so tau and r2 are invariant
to affine rescaling of the values.  The fit is a Levenberg-Marquardt local
optimization from a log-linear initial guess; cv_tau_pct comes from the
Jacobian-based covariance (J'J)^-1 * SS_res/(n-3) at the optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateSeriesError, DomainError, FitFailure

PHASE_SIGNS = {"recovery": -1.0, "exercise": +1.0}


@dataclass
class KineticFit:
    metabolite: str
    phase: str
    tau_s: float
    delta: float          # span of the exponential (signed; see module docstring)
    asymptote: float
    start_index: int
    r2: float
    cv_tau_pct: float
    n_points: int
    se_tau_s: float
    residual_sd: float
    t0_s: float

    def predict(self, times: np.ndarray) -> np.ndarray:
        sign = PHASE_SIGNS[self.phase]
        return self.asymptote + sign * self.delta * np.exp(-(np.asarray(times) - self.t0_s) / self.tau_s)

    def to_dict(self) -> dict:
        return {
            "metabolite": self.metabolite,
            "phase": self.phase,
            "tau_s": self.tau_s,
            "delta": self.delta,
            "asymptote": self.asymptote,
            "start_index": self.start_index,
            "r2": self.r2,
            "cv_tau_pct": self.cv_tau_pct,
            "n_points": self.n_points,
            "se_tau_s": self.se_tau_s,
        }


@dataclass
class OxidativeMarkers:
    """Initial PCr resynthesis rate and ADP-controlled maximal oxidative rate."""

    vi_mM_s: float
    vmax_mM_s: float
    adp_end_uM: float
    km_uM: float


def _initial_guess(t: np.ndarray, v: np.ndarray, sign: float) -> tuple[float, float, float]:
    tail = v[-5:] if v.size >= 5 else v
    asymptote = float(np.mean(tail))
    gap = float(v[0] - asymptote)
    delta = sign * gap
    # log-linear regression of |v - asymptote| over the early, resolvable part
    dev = np.abs(v - asymptote)
    floor = max(abs(gap) * 0.05, 1e-12)
    usable = dev > floor
    tau = (t[-1] - t[0]) / 3.0 if t[-1] > t[0] else 1.0
    if usable.sum() >= 2:
        slope = np.polyfit(t[usable], np.log(dev[usable]), 1)[0]
        if slope < 0:
            tau = -1.0 / slope
    return asymptote, delta, max(tau, 1e-3)


def _fit_monoexp(times, values, start_index, phase, metabolite) -> KineticFit:
    t_all = np.asarray(times, dtype=float)
    v_all = np.asarray(values, dtype=float)
    if t_all.ndim != 1 or t_all.shape != v_all.shape:
        raise DomainError("times and values must be 1-d arrays of equal length")
    if np.any(np.diff(t_all) <= 0):
        raise DomainError("times must be strictly increasing")
    if not 0 <= start_index < t_all.size:
        raise DomainError(f"start_index {start_index} out of range")
    t0 = float(t_all[start_index])
    t = t_all[start_index:] - t0
    v = v_all[start_index:]
    n = t.size
    if n < 4:
        raise DomainError(f"need at least 4 points after start_index, got {n}")

    ss_tot = float(np.sum((v - v.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateSeriesError("constant series: no kinetics to fit")

    sign = PHASE_SIGNS[phase]

    # Transient tau < 0 trial steps make exp overflow to inf; the optimizer
    # rejects those steps, so silence the warning rather than the step.
    def residual(p):
        a, d, tau = p
        with np.errstate(over="ignore"):
            return a + sign * d * np.exp(-t / tau) - v

    def jac(p):
        a, d, tau = p
        with np.errstate(over="ignore"):
            e = np.exp(-t / tau)
            out = np.empty((n, 3))
            out[:, 0] = 1.0
            out[:, 1] = sign * e
            out[:, 2] = sign * d * e * t / tau**2
        return out

    p0 = _initial_guess(t, v, sign)
    result = least_squares(residual, p0, jac=jac, method="lm",
                           xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=2000)
    if not result.success or result.x[2] <= 0:
        # LM is unbounded in tau; retry with an explicit positivity constraint.
        result = least_squares(residual, (p0[0], p0[1], abs(p0[2])), jac=jac,
                               method="trf",
                               bounds=([-np.inf, -np.inf, 1e-6], [np.inf, np.inf, 1e6]),
                               xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=2000)
    if not result.success:
        raise FitFailure(
            f"{metabolite} {phase} fit did not converge",
            diagnostics={"status": result.status, "message": result.message,
                         "nfev": result.nfev, "x": list(result.x)})

    a, d, tau = result.x
    ss_res = float(result.fun @ result.fun)
    dof = max(n - 3, 1)
    s2 = ss_res / dof
    j = jac(result.x)
    jtj = j.T @ j
    try:
        cov = np.linalg.inv(jtj) * s2
        se_tau = math.sqrt(max(cov[2, 2], 0.0))
    except np.linalg.LinAlgError:
        se_tau = math.inf
    r2 = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return KineticFit(
        metabolite=metabolite,
        phase=phase,
        tau_s=float(tau),
        delta=float(d),
        asymptote=float(a),
        start_index=int(start_index),
        r2=r2,
        cv_tau_pct=100.0 * se_tau / abs(tau) if tau != 0 else math.inf,
        n_points=n,
        se_tau_s=se_tau,
        residual_sd=math.sqrt(s2),
        t0_s=t0,
    )


def fit_recovery(times, values, start_index: int = 0,
                 metabolite: str = "PCr") -> KineticFit:
    """Fit the post-exercise return to baseline from ``start_index`` onward."""
    return _fit_monoexp(times, values, start_index, "recovery", metabolite)


def fit_exercise(times, values, start_index: int = 0,
                 metabolite: str = "PCr") -> KineticFit:
    """Fit the exercise-phase depletion (PCr) or accumulation (Pi)."""
    return _fit_monoexp(times, values, start_index, "exercise", metabolite)


def initial_recovery_rate(delta_pcr_mM: float, tau_rec_s: float) -> float:
    """Initial PCr resynthesis rate: the exercise PCr drop over tau_rec."""
    if not tau_rec_s > 0:
        raise DomainError("tau_rec_s must be strictly positive")
    return delta_pcr_mM / tau_rec_s


def vmax_from_adp(vi_mM_s: float, adp_end_uM: float, km_uM: float) -> float:
    """Maximal oxidative rate under ADP Michaelis-Menten control.

    vmax = vi * (1 + Km / [ADP]) evaluated with the end-exercise ADP.
    """
    if not adp_end_uM > 0:
        raise DomainError("adp_end_uM must be strictly positive")
    if not km_uM > 0:
        raise DomainError("km_uM must be strictly positive")
    return vi_mM_s * (1.0 + km_uM / adp_end_uM)


def derive_markers(delta_pcr_mM: float, tau_rec_s: float,
                   adp_end_uM: float, km_uM: float) -> OxidativeMarkers:
    vi = initial_recovery_rate(delta_pcr_mM, tau_rec_s)
    return OxidativeMarkers(
        vi_mM_s=vi,
        vmax_mM_s=vmax_from_adp(vi, adp_end_uM, km_uM),
        adp_end_uM=adp_end_uM,
        km_uM=km_uM,
    )
