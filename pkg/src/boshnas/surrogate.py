"""Uncertainty-aware performance surrogate over embedded architectures.

Three small nets share the work.  A two-headed net predicts the score and
its input-dependent noise (trained under the Gaussian likelihood).  A
dropout net is trained as a stochastic teacher; the spread of its
Monte-Carlo passes measures how unfamiliar a region is.  A third net is
distilled against that spread so query-time uncertainty needs no sampling
and stays differentiable, which the gradient-ascent search relies on.
"""

from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import DivergenceError
from .nets import MLP, Adam, Dual, concat, sigmoid, softplus

SIGMA_FLOOR = 1e-3


def _check_xy(x, y=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    if not np.isfinite(x).all():
        raise ValueError("X contains non-finite values")
    if y is None:
        return x
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != len(x):
        raise ValueError("X and y lengths differ")
    if not np.isfinite(y).all():
        raise ValueError("y contains non-finite values")
    return x, y


def _guard(loss: float) -> float:
    if not np.isfinite(loss):
        raise DivergenceError(f"training loss became {loss}")
    return loss


class PerformanceSurrogate(BaseEstimator):
    """Score surrogate with split aleatoric and epistemic uncertainty.

    ``predict`` gives the mean score, ``uncertainties`` the noise level and
    the unfamiliarity estimate, and ``ucb`` their weighted optimistic sum.
    All training and sampling randomness derives from ``seed``.
    """

    def __init__(
        self,
        hidden=(64, 64),
        epochs: int = 300,
        learning_rate: float = 5e-3,
        dropout_p: float = 0.2,
        n_mc: int = 20,
        k_sigma: float = 0.5,
        k_xi: float = 0.5,
        score_scale: float = 1.0,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.dropout_p = dropout_p
        self.n_mc = n_mc
        self.k_sigma = k_sigma
        self.k_xi = k_xi
        self.score_scale = score_scale
        self.seed = seed

    # -- training ----------------------------------------------------------

    def fit(self, x, y) -> "PerformanceSurrogate":
        x, y = _check_xy(x, y)
        if len(x) == 0:
            raise ValueError("cannot fit on zero points")
        if self.score_scale <= 0:
            raise ValueError("score_scale must be positive")
        self.n_features_in_ = x.shape[1]
        self.score_scale_ = float(self.score_scale)
        seeds = np.random.SeedSequence(self.seed).generate_state(6)
        y2 = y[:, None] / self.score_scale_

        # mean + noise head under the Gaussian likelihood
        f = MLP([x.shape[1], *self.hidden, 2], seed=int(seeds[0]))
        opt = Adam(f.params, lr=self.learning_rate)
        n = len(x)
        for _ in range(self.epochs):
            out, cache = f.forward(x)
            mu = out[:, 0:1]
            sig = softplus(out[:, 1:2]) + SIGMA_FLOOR
            resid = mu - y2
            loss = _guard(float((resid**2 / (2 * sig**2) + np.log(sig)).mean()))
            dmu = resid / sig**2 / n
            dsig = (1.0 / sig - resid**2 / sig**3) / n
            dout = np.concatenate([dmu, dsig * sigmoid(out[:, 1:2])], axis=1)
            grads, _ = f.backward(cache, dout)
            opt.step(grads)
        self.f_ = f
        self.f_loss_ = loss

        # stochastic teacher, dropout active during training
        g = MLP([x.shape[1], *self.hidden, 1], seed=int(seeds[1]))
        opt = Adam(g.params, lr=self.learning_rate)
        drop_rng = np.random.default_rng(int(seeds[2]))
        for _ in range(self.epochs):
            out, cache = g.forward(x, dropout_p=self.dropout_p, rng=drop_rng)
            err = out - y2
            loss = _guard(float((err**2).mean()))
            grads, _ = g.backward(cache, 2 * err / err.size)
            opt.step(grads)
        self.g_ = g
        self.g_loss_ = loss

        # spread of the teacher's sampled passes at the training points;
        # one mask per pass, so every pass is a single coherent subnetwork
        self._mc_seed = int(seeds[3])
        xi = self._teacher_spread(x, self.n_mc)
        self.xi_targets_ = xi * self.score_scale_

        # distilled, always-nonnegative unfamiliarity net
        h = MLP([x.shape[1], *self.hidden, 1], seed=int(seeds[4]))
        opt = Adam(h.params, lr=self.learning_rate)
        t2 = xi[:, None]
        for _ in range(self.epochs):
            out, cache = h.forward(x)
            pred = softplus(out)
            err = pred - t2
            loss = _guard(float((err**2).mean()))
            grads, _ = h.backward(cache, 2 * err / err.size * sigmoid(out))
            opt.step(grads)
        self.h_ = h
        self.h_loss_ = loss

        self._hutch_seed = int(seeds[5])
        return self

    def _teacher_spread(self, x, n_mc: int) -> np.ndarray:
        """Population std of sampled teacher passes, in normalized units."""
        if self.dropout_p <= 0.0:
            return np.zeros(len(x))
        rng = np.random.default_rng(self._mc_seed)
        draws = np.stack(
            [
                self.g_.forward(x, dropout_p=self.dropout_p, rng=rng, shared_mask=True)[0][:, 0]
                for _ in range(n_mc)
            ]
        )
        return draws.std(axis=0)

    # -- inference ---------------------------------------------------------

    def _validate(self, x):
        check_is_fitted(self, "f_")
        x = _check_xy(x)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {x.shape[1]}"
            )
        return x

    def predict(self, x) -> np.ndarray:
        """Mean score estimate, in the units ``y`` was given in."""
        x = self._validate(x)
        out, _ = self.f_.forward(x)
        return out[:, 0] * self.score_scale_

    def uncertainties(self, x):
        """(noise level, unfamiliarity) per row, both nonnegative."""
        x = self._validate(x)
        out, _ = self.f_.forward(x)
        sig = softplus(out[:, 1]) + SIGMA_FLOOR
        hout, _ = self.h_.forward(x)
        xi = softplus(hout[:, 0])
        return sig * self.score_scale_, xi * self.score_scale_

    def epistemic(self, x, n_mc=None) -> np.ndarray:
        """Monte-Carlo unfamiliarity: spread of sampled teacher passes.

        Slower than the distilled estimate from :meth:`uncertainties` but
        makes no approximation; with dropout off it is exactly zero, and with
        two samples it is half the gap between the two passes.
        """
        x = self._validate(x)
        n = self.n_mc if n_mc is None else int(n_mc)
        if n < 2:
            raise ValueError("need at least two samples for a spread")
        return self._teacher_spread(x, n) * self.score_scale_

    def ucb(self, x) -> np.ndarray:
        """Optimistic score: mean plus weighted uncertainties."""
        x = self._validate(x)
        mu = self.predict(x)
        sig, xi = self.uncertainties(x)
        return mu + self.k_sigma * sig + self.k_xi * xi

    def ucb_gradient(self, x, n_probes: int = 8):
        """Optimistic score with its input gradient and a curvature estimate.

        The diagonal of the Hessian is estimated from ``n_probes`` Rademacher
        probes pushed through the exact Hessian-vector product; the result is
        deterministic for a fitted surrogate.
        """
        x = self._validate(x)
        rng = np.random.default_rng(self._hutch_seed)
        value = self.ucb(x)
        grad = None
        diag = np.zeros_like(x)
        for _ in range(n_probes):
            z = rng.choice([-1.0, 1.0], size=x.shape)
            dx = self._ucb_input_derivative(Dual(x, z))
            if grad is None:
                grad = dx.a
            diag += z * dx.b
        scale = self.score_scale_
        return value, grad * scale, diag * scale / n_probes

    def _ucb_input_derivative(self, x):
        """d ucb / d input; accepts duals and then returns the HVP too."""
        fout, fcache = self.f_.forward(x)
        ones = np.ones((_rows(x), 1))
        dout_f = concat([ones, self.k_sigma * sigmoid(fout[:, 1:2])], axis=1)
        dx = self.f_.backward_input(fcache, dout_f)
        hout, hcache = self.h_.forward(x)
        dout_h = self.k_xi * sigmoid(hout)
        return dx + self.h_.backward_input(hcache, dout_h)

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        """Checkpoint to JSON: layer shapes, flat weights, seed, scaling."""
        check_is_fitted(self, "f_")
        blob = {
            "seed": self.seed,
            "score_scale": self.score_scale_,
            "params": {k: v for k, v in self.get_params().items() if k != "seed"},
            "n_features_in": self.n_features_in_,
            "nets": {name: _pack_net(getattr(self, name + "_")) for name in ("f", "g", "h")},
        }
        blob["params"]["hidden"] = list(blob["params"]["hidden"])
        with open(path, "w") as fh:
            json.dump(blob, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PerformanceSurrogate":
        """Rebuild a query-ready surrogate from a :meth:`save` checkpoint."""
        with open(path) as fh:
            blob = json.load(fh)
        params = dict(blob["params"])
        params["hidden"] = tuple(params["hidden"])
        est = cls(seed=int(blob["seed"]), **params)
        est.n_features_in_ = int(blob["n_features_in"])
        est.score_scale_ = float(blob["score_scale"])
        for name in ("f", "g", "h"):
            setattr(est, name + "_", _unpack_net(blob["nets"][name]))
        seeds = np.random.SeedSequence(est.seed).generate_state(6)
        est._mc_seed = int(seeds[3])
        est._hutch_seed = int(seeds[5])
        return est


def _pack_net(net: MLP) -> dict:
    flat = np.concatenate([p.ravel() for p in net.params])
    return {"sizes": list(net.sizes), "flat": flat.tolist()}


def _unpack_net(blob: dict) -> MLP:
    net = MLP(blob["sizes"], seed=0)
    flat = np.asarray(blob["flat"], dtype=float)
    want = sum(p.size for p in net.params)
    if flat.size != want:
        raise ValueError(f"checkpoint holds {flat.size} weights, nets of this shape need {want}")
    offset = 0
    for p in net.params:
        p[...] = flat[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    return net


def _rows(x) -> int:
    return x.a.shape[0] if isinstance(x, Dual) else x.shape[0]
