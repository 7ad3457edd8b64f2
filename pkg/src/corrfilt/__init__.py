"""Covariance-information filtering and fixed-point smoothing under
uncertain observations, Markov measurement noise and random deception attacks."""

__version__ = "0.1.0"

from .errors import (ConfigError, CorrfiltError, EvaluationError, ModelValidationError,  # noqa: E402
                     NonsingularityError, NumericalFailure, OracleFailure, SequencingError,
                     ShapeError)
from .model import (AttackNoiseModel, BernoulliSchedule, CovarianceFactorization,  # noqa: E402
                    MarkovNoiseModel, Model, ObservationFunction, carrier_observation,
                    latent_factorization, linear_observation)
from .estimator import (EkfPrediction, FixedLagDriver, FixedNominal, filter_step,  # noqa: E402
                        iter_filter, run_filter)
from .simulator import AR2Params, AR2Signal, RngStream, simulate_run  # noqa: E402

__all__ = [
    "__version__", "ConfigError", "CorrfiltError", "EvaluationError", "ModelValidationError",
    "NonsingularityError", "NumericalFailure", "OracleFailure", "SequencingError", "ShapeError",
    "AttackNoiseModel", "BernoulliSchedule", "CovarianceFactorization", "MarkovNoiseModel",
    "Model", "ObservationFunction", "carrier_observation", "latent_factorization",
    "linear_observation", "EkfPrediction", "FixedLagDriver", "FixedNominal", "filter_step",
    "iter_filter", "run_filter", "AR2Params", "AR2Signal", "RngStream", "simulate_run",
]
