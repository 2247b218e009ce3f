"""Shared synthetic fixtures for spectrum-fit tests: seven independent
ambient-isotope deposit templates (gamma lines on a falling continuum) and
a generator producing measured ADC spectra from known truth."""

import numpy as np

from radbudget.response import ResponseParams, Spectrum, fold
from radbudget.specfit import AMBIENT_ISOTOPES, FitProblem

# (energy_keV, relative intensity) per isotope; distinct line patterns keep
# the template matrix well conditioned
LINES = {
    "K-40": [(1460.8, 1.00)],
    "Pb-214": [(351.9, 1.00), (295.2, 0.52), (242.0, 0.20)],
    "Bi-214": [(609.3, 1.00), (1120.3, 0.33), (1764.5, 0.34)],
    "Ac-228": [(911.2, 1.00), (969.0, 0.62), (338.3, 0.43)],
    "Pb-212": [(238.6, 1.00), (300.1, 0.07)],
    "Bi-212": [(727.3, 1.00), (1620.5, 0.23)],
    "Tl-208": [(583.2, 1.00), (2614.5, 1.18), (860.6, 0.15)],
}

TRUE_PARAMS = ResponseParams(pedestal=12.0, gain=0.31, sigma0=10.0, sigma1=1.4)
TRUE_AMPLITUDES = {
    "K-40": 80.0, "Pb-214": 60.0, "Bi-214": 70.0, "Ac-228": 40.0,
    "Pb-212": 50.0, "Bi-212": 30.0, "Tl-208": 45.0,
}

ENERGY_EDGES = np.linspace(20.0, 3020.0, 257)
ADC_EDGES = np.linspace(0.0, 960.0, 257)


def make_templates(line_counts=5000.0, continuum=200.0, live_time_s=1.0):
    """Per-isotope energy-axis deposit spectra at unit amplitude."""
    templates = {}
    centers = 0.5 * (ENERGY_EDGES[:-1] + ENERGY_EDGES[1:])
    for name in AMBIENT_ISOTOPES:
        contents = continuum * np.exp(-centers / 600.0)
        for e_keV, rel in LINES[name]:
            j = np.searchsorted(ENERGY_EDGES, e_keV, side="right") - 1
            contents[j] += line_counts * rel
        templates[name] = Spectrum(ENERGY_EDGES, contents, live_time_s,
                                   "energy")
    return templates


def make_data(templates, params=TRUE_PARAMS, amplitudes=TRUE_AMPLITUDES,
              rng=None, live_time_s=1.0):
    """Fold truth onto the ADC axis; Poisson-fluctuate if an rng is given."""
    model = np.zeros(len(ADC_EDGES) - 1)
    for name, t in templates.items():
        folded = fold(t, params, adc_edges=ADC_EDGES)
        model += amplitudes[name] * folded.contents * (live_time_s
                                                       / t.live_time_s)
    contents = rng.poisson(model).astype(float) if rng is not None else model
    return Spectrum(ADC_EDGES, contents, live_time_s, "adc")


def make_problem(rng=None, window=(4, 256)):
    templates = make_templates()
    data = make_data(templates, rng=rng)
    return FitProblem(data=data, templates=templates, window=window)
