"""scikit-learn style front end: Bayesian variable selection as an estimator."""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .bench import gibbs_replicate, pdmp_replicate
from .dynamics import Dynamics
from .subsampling import ControlVariate
from .targets import Dataset, LogisticTarget, RobustTarget, SpikeSlabPrior

__all__ = ["SpikeSlabSelector"]


class SpikeSlabSelector(SelectorMixin, BaseEstimator):
    """Posterior variable selection under a spike-and-slab prior.

    Fits a reversible-jump PDMP (or, for logistic data, a Polya-Gamma Gibbs
    sampler) and keeps the features whose posterior inclusion probability
    exceeds ``threshold``.  Usable as a feature selector in a pipeline and as
    a predictor through the posterior mean coefficients.

    Parameters
    ----------
    likelihood : {"logistic", "robust"}, default="logistic"
    sampler : {"zigzag", "bps_gauss", "bps_sphere", "gibbs"}, default="zigzag"
    w : float, optional
        Prior inclusion probability; defaults to ``min(10 / p, 0.5)``.
    sigma2 : float, default=10.0
        Slab variance.
    p_jump : float, default=0.6
    lambda_refresh : float, default=0.1
    T : float, optional
        Trajectory length of PDMP samplers.
    max_events : int, default=20000
        Event budget of PDMP samplers; the run stops at ``T`` or here.
    n_iter : int, default=2000
        Gibbs sweeps.
    burn_in : float, default=0.1
        Discarded fraction of the run.
    subsample : {"none", "global", "cv"}, default="none"
        Rate estimator for PDMP samplers.  ``"cv"`` centres the control
        variate at the mode of the full model.
    threshold : float, default=0.5
    random_state : int, optional

    Attributes
    ----------
    ppi_ : ndarray of shape (n_features,)
        Posterior inclusion probabilities.
    coef_ : ndarray of shape (n_features,)
        Posterior mean coefficients (zero where excluded).
    n_iter_ : int
        Accepted events (PDMP) or sweeps (Gibbs).
    n_features_in_ : int

    Examples
    --------
    >>> import numpy as np
    >>> rng = np.random.default_rng(0)
    >>> X = rng.normal(size=(200, 4))
    >>> y = (rng.random(200) < 1 / (1 + np.exp(-2 * X[:, 0]))).astype(int)
    >>> sel = SpikeSlabSelector(max_events=5000, random_state=0).fit(X, y)
    >>> sel.get_support()[0]
    True
    """

    def __init__(
        self,
        likelihood="logistic",
        sampler="zigzag",
        w=None,
        sigma2=10.0,
        p_jump=0.6,
        lambda_refresh=0.1,
        T=None,
        max_events=20000,
        n_iter=2000,
        burn_in=0.1,
        subsample="none",
        threshold=0.5,
        random_state=None,
    ):
        self.likelihood = likelihood
        self.sampler = sampler
        self.w = w
        self.sigma2 = sigma2
        self.p_jump = p_jump
        self.lambda_refresh = lambda_refresh
        self.T = T
        self.max_events = max_events
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.subsample = subsample
        self.threshold = threshold
        self.random_state = random_state

    def _check_params(self):
        if self.likelihood not in ("logistic", "robust"):
            raise ValueError(f"likelihood must be 'logistic' or 'robust', got {self.likelihood!r}")
        if self.sampler not in ("zigzag", "bps_gauss", "bps_sphere", "gibbs"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.sampler == "gibbs" and self.likelihood != "logistic":
            raise ValueError("the Gibbs sampler supports the logistic likelihood only")
        if self.subsample not in ("none", "global", "cv"):
            raise ValueError(f"unknown subsample mode {self.subsample!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")

    def fit(self, X, y):
        """Sample the posterior given ``X`` and ``y``.

        Parameters
        ----------
        X : array-like of shape (n_samples, n_features)
        y : array-like of shape (n_samples,)
            Binary labels for the logistic likelihood, real responses otherwise.

        Returns
        -------
        self : SpikeSlabSelector
        """
        self._check_params()
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True)
        p = X.shape[1]
        data = Dataset(X, np.asarray(y, dtype=float))
        w = min(10.0 / p, 0.5) if self.w is None else self.w
        prior = SpikeSlabPrior(w, self.sigma2)
        seed = 0 if self.random_state is None else self.random_state
        if self.sampler == "gibbs":
            rep, _ = gibbs_replicate(data, prior, seed, n_iter=self.n_iter, burn_in=self.burn_in)
        else:
            target = (LogisticTarget if self.likelihood == "logistic" else RobustTarget)(data, prior)
            full = np.ones(p, dtype=bool)
            cv = ControlVariate.build(target, full) if self.subsample == "cv" else None
            variant = "full" if self.subsample == "none" else self.subsample
            rep, _ = pdmp_replicate(
                Dynamics(self.sampler, self.p_jump, self.lambda_refresh), target, seed,
                T=self.T, max_events=self.max_events, burn_in=self.burn_in, variant=variant, cv=cv,
            )
        self.ppi_ = np.asarray(rep.summary.ppi)
        self.coef_ = np.asarray(rep.summary.mean)
        self.n_iter_ = int(rep.n_iter)
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "ppi_")
        return self.ppi_ > self.threshold

    def decision_function(self, X):
        """Linear predictor ``X @ coef_``."""
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return X @ self.coef_

    def predict_proba(self, X):
        """Class probabilities at the posterior mean coefficients (logistic only)."""
        if self.likelihood != "logistic":
            raise AttributeError("predict_proba is only available for the logistic likelihood")
        p1 = expit(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        """Labels (logistic) or fitted responses (robust)."""
        eta = self.decision_function(X)
        if self.likelihood == "logistic":
            return (eta > 0).astype(int)
        return eta
