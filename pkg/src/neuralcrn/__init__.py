"""Compile polynomial ODEs into chemical reaction networks and train Neural CRN circuits."""
from .compiler import (Circuit, CircuitConfig, ConfigError, NonKdeError, build_circuit, canonic_translate,
                       feedback_system, first_order_simplify, forward_system)
from .crn import (ContractViolation, Crn, DivergenceError, NegativeConcentrationError, Reaction,
                  SimulationError, SolverConfig, Species, Trajectory, apply_discrete_map, derive_mass_action,
                  simulate)
from .datasets import DatasetSpec, Sample, boundary_grid, generate
from .estimators import NeuralCRNClassifier, NeuralCRNRegressor
from .learning import (ClassSpec, IterationTrace, TrainReport, TrainingDiverged, classify, predict,
                       run_iteration, train)
from .ode_ir import (KdeVerdict, Monomial, PolyOdeSystem, StructuralError, Variable, classify_kde,
                     dual_rail_transform, time_reverse)

__version__ = "0.1.0"
