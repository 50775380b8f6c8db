"""scikit-learn compatible wrapper around the policy gradient search."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted, validate_data

from .bench import BASE_OPERATORS
from .expression import Dataset, evaluate
from .library import Library
from .priors import LengthBounds, PriorConfig, SoftLengthConfig
from .trainer import PolicyGradientSearch, TrainConfig


class PolicyGradientRegressor(RegressorMixin, BaseEstimator):
    """Symbolic regressor trained with risk-seeking policy gradients.

    Parameters
    ----------
    operators : tuple of str
        Operator kinds available to expressions. Input variables are added
        automatically, one per feature.
    batch_size : int
        Expressions sampled per training step.
    max_steps : int
        Upper bound on training steps.
    entropy_mode : {"SE", "HE"}
        Plain or hierarchical (position-discounted) entropy bonus.
    entropy_decay : float
        Discount per position for ``entropy_mode="HE"``.
    soft_length : bool
        Add the soft length prior centred on ``length_loc``.
    reward_threshold : float
        Stop as soon as an expression scores at least this reward.

    Attributes
    ----------
    expression_ : str
        Best expression found, in infix form.
    program_ : list of str
        The same expression as prefix token names.
    reward_ : float
    n_steps_ : int
    history_ : list of dict
        One :class:`~pgsr.trainer.StepReport` per step.
    """

    def __init__(self, operators=BASE_OPERATORS, batch_size=500, max_steps=1000,
                 learning_rate=5e-4, risk_factor=0.05, entropy_weight=0.03,
                 entropy_decay=0.7, entropy_mode="HE", soft_length=True, length_loc=10,
                 length_scale2=5.0, min_length=4, max_length=30, hidden_size=32,
                 constraints=(), reward_threshold=1.0 - 1e-12, random_state=None):
        self.operators = operators
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.learning_rate = learning_rate
        self.risk_factor = risk_factor
        self.entropy_weight = entropy_weight
        self.entropy_decay = entropy_decay
        self.entropy_mode = entropy_mode
        self.soft_length = soft_length
        self.length_loc = length_loc
        self.length_scale2 = length_scale2
        self.min_length = min_length
        self.max_length = max_length
        self.hidden_size = hidden_size
        self.constraints = constraints
        self.reward_threshold = reward_threshold
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        seed = int(check_random_state(self.random_state).randint(2 ** 31 - 1))
        config = TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            risk_factor=self.risk_factor, entropy_weight=self.entropy_weight,
            entropy_decay=self.entropy_decay, entropy_mode=self.entropy_mode,
            slp_enabled=self.soft_length, max_steps=self.max_steps, seed=seed,
            hidden_size=self.hidden_size,
        )
        priors = PriorConfig(
            equal_type=True,
            soft_length=SoftLengthConfig(self.length_loc, self.length_scale2) if self.soft_length else None,
            bounds=LengthBounds(self.min_length, self.max_length),
            constraints=tuple(self.constraints),
        )
        self.library_ = Library.from_names(self.operators, X.shape[1])
        search = PolicyGradientSearch(self.library_, Dataset(X, y), config, priors)
        history = []
        for _ in range(self.max_steps):
            history.append(search.step().to_dict())
            if search.best_reward >= self.reward_threshold:
                break
        self.history_ = history
        self.n_steps_ = len(history)
        self.policy_ = search.params
        self.reward_ = float(search.best_reward) if history else 0.0
        self.tokens_ = search.best_tokens
        self.program_ = self.library_.decode(self.tokens_) if self.tokens_ else None
        self.expression_ = history[-1]["best_expression"] if history else None
        return self

    def predict(self, X):
        check_is_fitted(self, "tokens_")
        X = validate_data(self, X, reset=False)
        if self.tokens_ is None:
            raise ValueError("fit ran zero steps; no expression to predict with")
        y_hat, finite = evaluate(self.tokens_, X, self.library_)
        return np.where(finite, y_hat, np.nan)
