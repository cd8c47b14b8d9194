"""Steady-state manifolds of time-convolutionless master equations with commuting generators."""
from .dynamics import IntegrationError, evolve_exact, evolve_ode, verify_attraction
from .manifold import (VerificationError, cesaro_projector, steady_projector,
                       structure_decomposition)
from .models import (GeneratorModel, GeneratorTerm, ModelError, NonCommutingError,
                     check_commutativity, load_model, save_model)
from .rates import RateExpressionError, parse_rate_expression
from .spectral import attractiveness, damping_basis, propagator

__version__ = "0.1.0"
