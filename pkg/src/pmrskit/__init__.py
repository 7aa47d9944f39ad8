"""Dynamic 31P-MRS muscle energetics toolkit.

Submodules mirror the analysis stages: ``synth`` (ground-truth simulation),
``quant`` (time-domain basis quantification), ``relax`` (T1 estimation and
saturation correction), ``metab`` (concentrations, pH, ADP), ``kinetics``
(monoexponential fits and oxidative markers), ``qc`` (quality-control scoring
and first-point reselection), ``stats`` (tests, power, sample size),
``pipeline`` (subject files, orchestration, cohort reports) and ``service``
(operator review API).
"""

__version__ = "0.1.0"
