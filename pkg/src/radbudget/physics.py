"""Simplified photon and muon interaction physics.

Photon cross sections per atom, combined into per-material attenuation
coefficient tables on a log energy grid (10 keV - 10 MeV):

- Compton: exact Klein-Nishina cross section per electron times Z.
- Photoelectric: calibrated power law a*Z^4/E^3 at low energy with softened
  energy exponents above 200 keV and above the pair threshold, anchored on
  tabulated attenuation data for lead, copper, iron, and iodine.
- Pair production: Z^2 * log-power threshold form anchored on lead.

Muon energy loss is a continuous-slowing-down approximation at the
minimum-ionizing plateau, scaled by the material's electron fraction:
dE/dx = 4.0 * <Z/A> MeV cm^2/g (2.0 for <Z/A> = 0.5 materials such as
concrete and limestone). Neither radiative losses nor straggling are
modeled; absolute-rate fidelity is recovered by measurement-anchored
normalization factors downstream.
"""

import numpy as np

from .geometry import _load_materials

ELECTRON_MASS_KEV = 511.0
PAIR_THRESHOLD_KEV = 1022.0
AVOGADRO = 6.02214076e23
RE_CM = 2.8179403e-13       # classical electron radius
BARN = 1e-24                # cm^2

E_MIN_KEV = 10.0
E_MAX_KEV = 10_000.0
N_GRID = 256

#: Minimum-ionizing stopping-power scale: dE/dx = MIP_SCALE * <Z/A> MeV cm^2/g
MIP_SCALE = 4.0

# photoelectric power law: sigma = PE_A * Z^4 / E_keV^3 barn below 200 keV,
# with exponent softening to E^-2.3 on [200, 1022] keV and E^-1.3 above,
# continuous at the break points (exponents matched to tabulated lead
# cross sections at 0.5, 1, 2 and 2.6 MeV)
PE_A = 41.1
_PE_BREAK1 = 200.0
_PE_BREAK2 = PAIR_THRESHOLD_KEV
_PE_P_MID = 2.3
_PE_P_HIGH = 1.3

# pair production: sigma = PAIR_A * Z^2 * ln(E/1022 keV)^PAIR_P barn
PAIR_A = 4.47e-4
PAIR_P = 1.7


def klein_nishina_sigma(energy_keV):
    """Total Klein-Nishina cross section per electron, cm^2."""
    k = np.asarray(energy_keV, dtype=float) / ELECTRON_MASS_KEV
    t1 = (1 + k) / k ** 2 * (2 * (1 + k) / (1 + 2 * k) - np.log1p(2 * k) / k)
    t2 = np.log1p(2 * k) / (2 * k)
    t3 = (1 + 3 * k) / (1 + 2 * k) ** 2
    return 2 * np.pi * RE_CM ** 2 * (t1 + t2 - t3)


def compton_sigma(Z, energy_keV):
    """Compton cross section per atom, cm^2 (Z bound electrons)."""
    return Z * klein_nishina_sigma(energy_keV)


def photo_sigma(Z, energy_keV):
    """Photoelectric cross section per atom, cm^2 (calibrated power law)."""
    E = np.asarray(energy_keV, dtype=float)
    low = PE_A * Z ** 4 / E ** 3
    s1 = PE_A * Z ** 4 / _PE_BREAK1 ** 3
    with np.errstate(divide="ignore"):
        mid = s1 * (_PE_BREAK1 / E) ** _PE_P_MID
        s2 = s1 * (_PE_BREAK1 / _PE_BREAK2) ** _PE_P_MID
        high = s2 * (_PE_BREAK2 / E) ** _PE_P_HIGH
    sigma = np.where(E < _PE_BREAK1, low, np.where(E < _PE_BREAK2, mid, high))
    return sigma * BARN


def pair_sigma(Z, energy_keV):
    """Pair-production cross section per atom, cm^2; zero below threshold."""
    E = np.asarray(energy_keV, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = PAIR_A * Z ** 2 * np.log(np.maximum(E / PAIR_THRESHOLD_KEV, 1.0)) ** PAIR_P
    return val * BARN


def compton_scattered_energy(energy_keV, cos_theta):
    """Photon energy after Compton scatter through angle theta."""
    k = np.asarray(energy_keV, dtype=float) / ELECTRON_MASS_KEV
    return np.asarray(energy_keV) / (1 + k * (1 - cos_theta))


def sample_compton_cos(rng, energy_keV):
    """Sample Klein-Nishina scattering angle cosines (Kahn's method)."""
    E = np.atleast_1d(np.asarray(energy_keV, dtype=float))
    k = E / ELECTRON_MASS_KEV
    n = E.size
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        kk = k[todo]
        r1, r2, r3 = rng.uniform(size=(3, todo.size))
        branch = r1 <= (2 * kk + 1) / (2 * kk + 9)
        # branch A: x = 1 + 2 k r2
        x_a = 1 + 2 * kk * r2
        ok_a = branch & (r3 <= 4 * (1 / x_a - 1 / x_a ** 2))
        # branch B: x = (2k + 1) / (2 k r2 + 1)
        x_b = (2 * kk + 1) / (2 * kk * r2 + 1)
        mu_b = 1 - (x_b - 1) / kk
        ok_b = ~branch & (r3 <= 0.5 * (mu_b ** 2 + 1 / x_b))
        accept = ok_a | ok_b
        x = np.where(branch, x_a, x_b)
        mu = 1 - (x - 1) / np.where(kk > 0, kk, 1.0)
        out[todo[accept]] = mu[accept]
        todo = todo[~accept]
    return out if np.ndim(energy_keV) else float(out[0])


def stopping_power(composition, elements):
    """Minimum-ionizing muon dE/dx in MeV cm^2/g for a composition map."""
    z_over_a = sum(w * elements[sym]["Z"] / elements[sym]["A"]
                   for sym, w in composition.items())
    return MIP_SCALE * z_over_a


class PhysicsTables:
    """Per-material photon attenuation tables and muon stopping powers.

    Materials are indexed in a fixed order so transport can look up
    coefficients for whole photon batches with integer indexing.
    """

    PROCESSES = ("photoelectric", "compton", "pair")

    def __init__(self, materials=None):
        densities, compositions, elements = _load_materials()
        if materials is None:
            materials = sorted(compositions)
        self.materials = list(materials)
        self.index = {m: i for i, m in enumerate(self.materials)}
        self.density = np.array([densities[m] for m in self.materials])
        self.stopping = np.array([
            stopping_power(compositions[m], elements) for m in self.materials
        ])
        self.effective_z = np.array([
            sum(w * elements[sym]["Z"] for sym, w in compositions[m].items())
            for m in self.materials
        ])
        self.energies = np.geomspace(E_MIN_KEV, E_MAX_KEV, N_GRID)
        self._log_e = np.log(self.energies)

        n_mat = len(self.materials)
        mu = np.zeros((n_mat, 3, N_GRID))
        for i, mat in enumerate(self.materials):
            rho = densities[mat]
            for sym, w in compositions[mat].items():
                Z, A = elements[sym]["Z"], elements[sym]["A"]
                n_atoms = w * rho * AVOGADRO / A  # atoms per cm^3
                mu[i, 0] += n_atoms * photo_sigma(Z, self.energies)
                mu[i, 1] += n_atoms * compton_sigma(Z, self.energies)
                mu[i, 2] += n_atoms * pair_sigma(Z, self.energies)
        self.mu_table = mu  # cm^-1

    def mu(self, material, energy_keV, process=None):
        """Attenuation coefficient (cm^-1), log-energy interpolated."""
        idx = np.full(np.shape(np.atleast_1d(energy_keV)), self.index[material])
        out = self.mu_by_index(np.atleast_1d(np.asarray(energy_keV, float)), idx,
                               process=process)
        return out if np.ndim(energy_keV) else float(out[0])

    def mu_by_index(self, energy_keV, mat_idx, process=None):
        """Vectorized lookup for photon batches with per-photon material index."""
        E = np.clip(energy_keV, E_MIN_KEV, E_MAX_KEV)
        x = np.log(E)
        j = np.clip(np.searchsorted(self._log_e, x) - 1, 0, N_GRID - 2)
        f = (x - self._log_e[j]) / (self._log_e[j + 1] - self._log_e[j])
        if process is None:
            table = self.mu_table.sum(axis=1)
            return (1 - f) * table[mat_idx, j] + f * table[mat_idx, j + 1]
        p = self.PROCESSES.index(process)
        return (1 - f) * self.mu_table[mat_idx, p, j] + f * self.mu_table[mat_idx, p, j + 1]

    def process_fractions(self, energy_keV, mat_idx):
        """(photoelectric, compton, pair) probability fractions per photon."""
        E = np.clip(energy_keV, E_MIN_KEV, E_MAX_KEV)
        x = np.log(E)
        j = np.clip(np.searchsorted(self._log_e, x) - 1, 0, N_GRID - 2)
        f = (x - self._log_e[j]) / (self._log_e[j + 1] - self._log_e[j])
        parts = ((1 - f)[..., None] * self.mu_table[mat_idx, :, j]
                 + f[..., None] * self.mu_table[mat_idx, :, j + 1])
        total = parts.sum(axis=-1, keepdims=True)
        return np.divide(parts, total, out=np.full_like(parts, 1 / 3),
                         where=total > 0)

    def mass_attenuation(self, material, energy_keV):
        """mu/rho in cm^2/g."""
        return self.mu(material, energy_keV) / self.density[self.index[material]]
