"""scikit-learn style wrappers around the library functions.

The estimators hold tolerances as constructor parameters (so ``get_params`` /
``set_params`` / ``clone`` work) and store fitted results in trailing
underscore attributes.  Inputs are systems (``SystemSpec``, a document dict,
or JSON text) or stacks of square matrices.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .formal import formal_data, formal_residual
from .monodromy import monodromy
from .numkernel import MAX_DIM, is_exact, to_float
from .report import Tolerances, analyze
from .system import SystemSpec, classify, parse_system, singular_points, spec_from_dict
from .triangularize import block_form, simultaneous_triangularize

DECISIONS = np.array(["INCONCLUSIVE", "NOT_SOLVABLE", "SOLVABLE"])


# ------------------------------------------------------------ validation

def check_system(X) -> SystemSpec:
    if isinstance(X, SystemSpec):
        return X
    if isinstance(X, dict):
        return spec_from_dict(X)
    if isinstance(X, (str, bytes)):
        return parse_system(X.decode() if isinstance(X, bytes) else X)
    raise TypeError(f"expected a SystemSpec, a document dict or JSON text, got {type(X).__name__}")


def check_systems(X) -> list:
    if isinstance(X, (SystemSpec, dict, str, bytes)):
        X = [X]
    return [check_system(x) for x in X]


def check_matrix_stack(X):
    """A list of equally sized square matrices; exact object arrays pass through."""
    if isinstance(X, SystemSpec):
        return X.coefficient_matrices()
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    mats = []
    for m in X:
        a = np.asarray(m)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected square matrices, got shape {a.shape}")
        if a.shape[0] > MAX_DIM:
            raise ValueError(f"dimension {a.shape[0]} exceeds {MAX_DIM}")
        if a.dtype != object:
            a = a.astype(complex)
            if not np.all(np.isfinite(a)):
                raise ValueError("matrices must be finite")
        mats.append(a)
    if not mats:
        raise ValueError("need at least one matrix")
    if len({m.shape for m in mats}) != 1:
        raise ValueError("matrices differ in size")
    return mats


# ------------------------------------------------------------ estimators

class SimultaneousTriangularizer(TransformerMixin, BaseEstimator):
    """Learn one unitary ``C`` that makes every matrix of the stack upper triangular.

    With ``k`` set, only the leading k x k block is triangularized and the
    block below it cleared.  ``transform`` returns ``C X C^-1`` for each matrix.
    """

    def __init__(self, tol=1e-9, rank_tol=1e-10, k=None):
        self.tol = tol
        self.rank_tol = rank_tol
        self.k = k

    def fit(self, X, y=None):
        mats = check_matrix_stack(X)
        if self.k is None:
            res = simultaneous_triangularize(mats, self.tol, self.rank_tol)
        else:
            res = block_form(mats, self.k, self.tol, self.rank_tol)
        self.result_ = res
        self.success_ = res.success
        self.C_ = res.C
        self.n_features_in_ = mats[0].shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "result_")
        if not self.success_:
            raise ValueError(f"no common flag (failed at stage {self.result_.failure_stage})")
        mats = check_matrix_stack(X)
        if mats[0].shape[0] != self.n_features_in_:
            raise ValueError("matrix size differs from the fitted one")
        Ci = self.C_.conj().T
        return np.stack([self.C_ @ to_float(m) @ Ci for m in mats])

    def inverse_transform(self, X):
        check_is_fitted(self, "result_")
        Ci = self.C_.conj().T
        return np.stack([Ci @ to_float(m) @ self.C_ for m in check_matrix_stack(X)])


class SolvabilityClassifier(ClassifierMixin, BaseEstimator):
    """Predict SOLVABLE / NOT_SOLVABLE / INCONCLUSIVE for systems.

    The decision is a deterministic function of each system, so ``fit`` only
    records the label set; unsupported systems are predicted INCONCLUSIVE
    and flagged in ``reports_`` of the last ``predict`` call.
    """

    def __init__(self, tol_eig=1e-9, tol_rank=1e-10, rtol_ode=1e-11,
                 rat_denominator_bound=10**6, truncation_order=8):
        self.tol_eig = tol_eig
        self.tol_rank = tol_rank
        self.rtol_ode = rtol_ode
        self.rat_denominator_bound = rat_denominator_bound
        self.truncation_order = truncation_order

    def _tolerances(self):
        return Tolerances(self.tol_eig, self.tol_rank, self.rtol_ode,
                          int(self.rat_denominator_bound), self.truncation_order)

    def fit(self, X=None, y=None):
        self.classes_ = DECISIONS.copy()
        return self

    def report(self, X) -> list:
        return [analyze(s, self._tolerances()) for s in check_systems(X)]

    def predict(self, X):
        check_is_fitted(self, "classes_")
        self.reports_ = self.report(X)
        return np.array([r.decision or "INCONCLUSIVE" for r in self.reports_])


class MonodromyEstimator(BaseEstimator):
    """Numerical monodromy matrices around every finite pole of one system."""

    def __init__(self, rtol=1e-11, radius_factor=1.0):
        self.rtol = rtol
        self.radius_factor = radius_factor

    def fit(self, X, y=None):
        spec = check_system(X)
        res = monodromy(spec, self.rtol, self.radius_factor)
        self.result_ = res
        self.matrices_ = np.stack([res.matrices[i] for i in res.order])
        self.order_ = list(res.order)
        self.base_point_ = res.plan.base
        self.product_residual_ = res.product_residual
        return self

    def transform(self, X=None):
        check_is_fitted(self, "result_")
        return self.matrices_


class FormalSolutionEstimator(BaseEstimator):
    """Formal fundamental matrices at the irregular points of one system."""

    def __init__(self, truncation_order=8, tol=1e-9):
        self.truncation_order = truncation_order
        self.tol = tol

    def fit(self, X, y=None):
        spec = check_system(X)
        refs = [r for r in singular_points(spec) if classify(spec, r, self.tol).rank > 0]
        if not refs:
            raise ValueError("system has no irregular singular point")
        self.formal_ = {}
        self.residuals_ = {}
        for r in refs:
            K = max(self.truncation_order, classify(spec, r, self.tol).rank)
            fd = formal_data(spec, r, K, self.tol)
            self.formal_[r] = fd
            self.residuals_[r] = formal_residual(spec, r, fd)
        self.exact_ = all(is_exact(fd.T) for fd in self.formal_.values())
        return self

    def transform(self, X=None):
        """Formal exponents per point, as a dict point -> list."""
        check_is_fitted(self, "formal_")
        return {r: list(fd.Lambda) for r, fd in self.formal_.items()}
