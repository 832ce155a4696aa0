"""decaylab: desk-scale verification of weighted parabolic lower bounds.

Pipeline: classify a modulus of continuity -> generate/ingest a rough
time coefficient -> build the weight bundle -> verify the weighted
estimate machinery on grids and test fields -> evolve and classify decay.
"""

from .moduli import (Modulus, MalformedModulusError, OsgoodVerdict, WeightBreakdown,
                     linear_modulus, log_linear_modulus, log_log_modulus,
                     osgood_classify, osgood_integral, osgood_integral_inverse,
                     power_modulus, sampled_modulus, verify_modulus_axioms)

__version__ = "0.1.0"

__all__ = [
    "Modulus", "MalformedModulusError", "OsgoodVerdict", "WeightBreakdown",
    "linear_modulus", "log_linear_modulus", "log_log_modulus",
    "osgood_classify", "osgood_integral", "osgood_integral_inverse",
    "power_modulus", "sampled_modulus", "verify_modulus_axioms",
    "__version__",
]
