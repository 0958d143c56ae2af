"""scikit-learn estimators that train a model by simulated federated learning.

``fit`` splits the training set across clients, runs the chosen selection
strategy, and keeps the final global parameters::

    clf = FederatedClassifier(strategy="longfed", n_clients=20, subset_size=5)
    clf.fit(X, y).score(X_test, y_test)
"""

from __future__ import annotations

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from fedsel.federation import FederationConfig, run
from fedsel.objectives import build_model, dataset_objectives
from fedsel.partition import PartitionSpec, partition
from fedsel.selector import StrategyConfig


class _FederatedBase(BaseEstimator):
    _model_kind = "linear"

    def __init__(self, model="logistic", strategy="longfed", n_clients=20, subset_size=5,
                 rounds=50, local_epochs=1, batch_size=32, lr=0.05, V=0.8, epsilon=0.3,
                 delta=0.01, partition="iid", alpha=0.8, random_state=0):
        self.model = model
        self.strategy = strategy
        self.n_clients = n_clients
        self.subset_size = subset_size
        self.rounds = rounds
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.V = V
        self.epsilon = epsilon
        self.delta = delta
        self.partition = partition
        self.alpha = alpha
        self.random_state = random_state

    def _federate(self, X, y, n_classes):
        seed = 0 if self.random_state is None else int(self.random_state)
        clients = partition(X, y, PartitionSpec(self.partition, self.n_clients, self.alpha, seed))
        model = build_model(self.model if n_classes else "linear", X.shape[1], n_classes or 1)
        config = FederationConfig(
            n_clients=self.n_clients, subset_size=self.subset_size, rounds=self.rounds,
            local_epochs=self.local_epochs, batch_size=self.batch_size, lr=self.lr, V=self.V,
            epsilon=self.epsilon, delta=self.delta, strategy=StrategyConfig.parse(self.strategy),
            seed=seed)
        result = run(config, dataset_objectives(model, clients), model=model)
        self.model_ = model
        self.coef_ = result.params.flat
        self.history_ = result.records
        self.selection_counts_ = result.state.counts
        self.n_features_in_ = X.shape[1]
        return self


class FederatedClassifier(ClassifierMixin, _FederatedBase):
    """Softmax-regression or MLP classifier trained across simulated clients."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        y_enc = self.label_encoder_.transform(y)
        return self._federate(X, y_enc, max(len(self.classes_), 2))

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return self.model_.scores(self.coef_, X)

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)[:, :len(self.classes_)]

    def predict(self, X):
        idx = np.argmax(self.decision_function(X)[:, :len(self.classes_)], axis=1)
        return self.classes_[idx]


class FederatedRegressor(RegressorMixin, _FederatedBase):
    """Least-squares linear regression trained across simulated clients."""

    def __init__(self, strategy="longfed", n_clients=20, subset_size=5, rounds=50,
                 local_epochs=1, batch_size=32, lr=0.05, V=0.8, epsilon=0.3, delta=0.01,
                 partition="iid", alpha=0.8, random_state=0):
        super().__init__("linear", strategy, n_clients, subset_size, rounds, local_epochs,
                         batch_size, lr, V, epsilon, delta, partition, alpha, random_state)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        return self._federate(X, y, 0)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return self.model_.predict(self.coef_, X)
