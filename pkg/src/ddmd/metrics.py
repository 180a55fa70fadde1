"""Relative prediction error used for every method and report."""

import numpy as np

from .errors import InvalidArgument

EPS_DEN = 1e-12

METRIC_DEFINITION = "100 * mean_t ||yhat_{t+1} - y_{t+1}||_2 / (||y_{t+1}||_2 + 1e-12)"


def relative_errors(pred, truth) -> np.ndarray:
    """Row-wise ``||pred - truth|| / (||truth|| + EPS_DEN)``."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if pred.shape != truth.shape:
        raise InvalidArgument(f"shape mismatch {pred.shape} vs {truth.shape}")
    return np.linalg.norm(pred - truth, axis=1) / (np.linalg.norm(truth, axis=1) + EPS_DEN)


def one_step_pairs(trajectories):
    trajectories = list(trajectories)
    if not trajectories:
        raise InvalidArgument("empty trajectory slice")
    past = np.vstack([t.samples[:-1] for t in trajectories])
    future = np.vstack([t.samples[1:] for t in trajectories])
    return past, future


def one_step_percent_error(model, trajectories) -> float:
    """Mean relative one-step error, in percent, over every pair of every trajectory."""
    past, future = one_step_pairs(trajectories)
    return float(100.0 * relative_errors(model.predict_next(past), future).mean())
