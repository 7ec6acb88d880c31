"""Scikit-learn style estimator wrapping the federated TD loop.

``FedTD0Evaluator.fit`` takes a family of Markov reward processes (one per
agent), runs federated TD(0), and exposes the learned parameter and run
trace.  ``predict`` maps state indices to approximate values.  Parameters
follow the sklearn contract (``get_params``/``set_params``/``clone`` all
work), so the evaluator composes with the wider ecosystem for sweeps and
model selection.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .engine import FedConfig, run_fedtd
from .markov import Mrp
from .sampling import feature_stream
from .td import build_features, td_system, virtual_mrp
from .validation import check_features


class FedTD0Evaluator(BaseEstimator):
    """Federated TD(0) policy evaluation over a family of environments.

    Parameters
    ----------
    rounds, local_steps : int
        Communication rounds and local updates per round.
    local_step_size, global_step_size : float
        Step sizes; ``schedule="theory"`` derives both from the averaged
        process instead.
    sampling_mode : {"iid", "markov", "meanpath"}
    projection_radius : float, "auto" or None
        Server-side projection ball; "auto" sizes it from the solved fixed
        points.
    n_features : int
        Dimension of the feature map drawn when ``features`` is None.
    features : ndarray of shape (n_states, n_features), optional
        Explicit feature matrix; overrides ``n_features``.
    averaging_offset : float
        Offset in the tail-averaging weights.
    seed : int
        Master seed for feature construction and all agent streams.
    """

    def __init__(self, rounds=200, local_steps=10, local_step_size=0.1, global_step_size=1.0,
                 schedule="constant", sampling_mode="iid", projection_radius="auto",
                 n_features=4, features=None, averaging_offset=3.0, start_state=0, seed=0):
        self.rounds = rounds
        self.local_steps = local_steps
        self.local_step_size = local_step_size
        self.global_step_size = global_step_size
        self.schedule = schedule
        self.sampling_mode = sampling_mode
        self.projection_radius = projection_radius
        self.n_features = n_features
        self.features = features
        self.averaging_offset = averaging_offset
        self.start_state = start_state
        self.seed = seed

    def fit(self, X, y=None):
        """Fit the shared value-function parameter on a family of MRPs.

        ``X`` is a sequence of :class:`~fedtd.markov.Mrp` with shared state
        space and discount; ``y`` is ignored (present for API compatibility).
        """
        agents = list(X)
        if not agents or not all(isinstance(m, Mrp) for m in agents):
            raise ValueError("X must be a nonempty sequence of Mrp instances")
        n = agents[0].n
        if self.features is not None:
            phi = check_features(np.asarray(self.features, dtype=np.float64))
            if phi.shape[0] != n:
                raise ValueError("features row count must equal the state count")
        else:
            phi = build_features(n, self.n_features, feature_stream(self.seed))
        systems = [td_system(m, phi) for m in agents]
        virtual_sys = td_system(virtual_mrp(agents), phi)
        cfg = FedConfig(
            n_agents=len(agents),
            local_steps=self.local_steps,
            rounds=self.rounds,
            local_step_size=self.local_step_size,
            schedule=self.schedule,
            global_step_size=self.global_step_size,
            projection_radius=self.projection_radius,
            sampling_mode=self.sampling_mode,
            seed=self.seed,
            averaging_offset=self.averaging_offset,
            start_state=self.start_state,
        )
        trace = run_fedtd(agents, phi, systems, virtual_sys, cfg)
        self.features_ = phi
        self.systems_ = systems
        self.virtual_system_ = virtual_sys
        self.trace_ = trace
        self.theta_ = trace.global_iterates[-1]
        self.averaged_theta_ = trace.averaged_iterate
        self.n_states_ = n
        return self

    def predict(self, X):
        """Approximate values phi(s)^T theta for an array of state indices."""
        self._check_fitted()
        states = np.asarray(X, dtype=np.int64)
        if states.ndim != 1:
            raise ValueError("expected a 1-D array of state indices")
        if (states < 0).any() or (states >= self.n_states_).any():
            raise ValueError("state indices out of range")
        return self.features_[states] @ self.theta_

    def value_table(self) -> np.ndarray:
        """Approximate values of every state under the fitted parameter."""
        self._check_fitted()
        return self.features_ @ self.theta_

    def _check_fitted(self):
        if not hasattr(self, "theta_"):
            raise NotFittedError("this FedTD0Evaluator instance is not fitted yet; call fit first")
