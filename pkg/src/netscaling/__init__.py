"""Near-optimal hierarchical transport networks and their energy scaling.

The package builds the dyadic branching constructions for the urban planning
and branched transport functionals, evaluates their energies in closed form
and on explicit graphs, and checks the results against independent oracles
and lower-bound certificates.
"""

from .bounds import (AtomBoundInstance, ConvexProgramInstance, convex_program_dual,
                     convex_program_primal, dual_gap_scan, w1_atom_lower_bound)
from .constructions import (ConstructionPlan, Regime, excess_energy, instantiate, plan,
                            regime_envelope)
from .core import (CellKind, CellSpec, EnergyReport, FluxNetwork, MeasureSpec, Model, ModelParams,
                   bt_cost_rate, coalesce, elementary_cell_energy, extract_network, network_energy,
                   nondimensionalize, series, union, up_cost_rate, wasserstein_cell_energy)
from .errors import (AdmissibilityError, BudgetExceededError, ConservationError, GlueError,
                     InfeasiblePlanError, ModelError, NetscalingError)
from .oracle import SmallInstance, bt_bruteforce, cell_energy_quadrature, w1_segment_to_atoms_exact

__version__ = "0.1.0"
