"""Monte Carlo radiation-transport and radiation-budget toolkit.

Estimates ionizing-radiation interaction rates and dose in small silicon
substrates inside a modeled dilution refrigerator, from cosmic-ray muons,
ambient gammas, and internal radioactive contamination, and evaluates
lead-shield designs against those estimates.
"""

__version__ = "0.1.0"

from .nuclides import (
    AssayCatalog,
    DecayChain,
    Emission,
    MaterialAssay,
    Nuclide,
    chain_emissions,
    component_activity,
    specific_activity,
)

__all__ = [
    "AssayCatalog",
    "DecayChain",
    "Emission",
    "MaterialAssay",
    "Nuclide",
    "chain_emissions",
    "component_activity",
    "specific_activity",
    "__version__",
]
