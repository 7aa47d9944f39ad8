"""Metabolite identities and default spectral parameters for the 31P basis."""

METABOLITES = ("PCr", "Pi", "gATP", "aATP", "bATP")

# Standard 31P positions relative to PCr at 0 ppm.  The Pi position is
# pH-dependent; 4.88 ppm corresponds to a resting muscle pH of ~7.05.
DEFAULT_SHIFTS_PPM = {
    "PCr": 0.0,
    "Pi": 4.88,
    "gATP": -2.5,
    "aATP": -7.5,
    "bATP": -16.1,
}

# Lorentzian damping rates (1/s); beta-ATP is the broadest resonance.
DEFAULT_DAMPINGS = {
    "PCr": 15.0,
    "Pi": 25.0,
    "gATP": 30.0,
    "aATP": 30.0,
    "bATP": 35.0,
}


def require_known(name):
    if name not in METABOLITES:
        raise KeyError(f"unknown metabolite {name!r}; expected one of {METABOLITES}")
    return name
