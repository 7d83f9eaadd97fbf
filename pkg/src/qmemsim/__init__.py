"""Simulation of EIT quantum memory in warm buffered vapour with single-photon noise bookkeeping."""
from .bloch import (EITScan, FieldRecord, auto_grid, check_resolution, cw_transmission, eit_scan,
                    group_delay, simulate, storage_efficiency)
from .core import ControlTiming, MediumSpec, ProbePulse, SimGrid, gaussian_pulse, mhz, square_pulse, to_mhz
from .dephasing import (DiffusionParams, GradientParams, SpinWaveDecayRegressor, combined_decay,
                        fit_decay_params, storage_time_1e)
from .exceptions import (AmbiguityError, DegenerateSeedError, DivergenceError, DomainError, FitError,
                         InvalidInputError, NumericalError, QMemError, RangeError, ResolutionError)
from .fidelity import NoiseModel, RailPair, measurement_fidelity, simulate_counts, window_tradeoff
from .filters import EtalonSpec, ThermalParams, ThermalStepRegressor, airy_transmission, cascade_suppression_db
from .harness import ExperimentConfig, ExperimentResult, MemoryResult, run_experiment, run_single_photon_protocol
from .shaping import PulseShaper, optimize_pulse

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
