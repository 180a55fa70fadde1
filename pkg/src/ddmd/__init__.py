"""Koopman operator learning: polynomial EDMD and deep DMD with a learned dictionary."""

__version__ = "0.1.0"

from .dictionaries import IdentityDictionary, PolyDictionary, PolyDictSpec, estimate_domain_box
from .edmd import EdmdConfig, KoopmanModel, build_snapshots, fit_edmd, fixed_dictionary_dmd, load_model, save_model, solve
from .errors import (
    DDMDError,
    DictionaryTooLarge,
    InvalidArgument,
    NotOscillatory,
    NumericalFailure,
    SimulationDiverged,
    ValidationGateError,
)
from .evaluation import basis_sweep, dominant_period, eigenfunction_eval, forecast, forecast_error_curve, spectrum
from .metrics import one_step_percent_error
from .neural import MlpParams, MlpSpec, NeuralDictionary
from .numerics import Rng
from .systems import Dataset, Trajectory, make_dataset
from .trainer import TrainConfig, train
