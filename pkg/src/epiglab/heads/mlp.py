"""Fully connected prediction heads trained by full-batch gradient descent.

Three stochastic flavours share one network: Monte Carlo dropout (members are
seeded dropout masks, active at prediction), deep ensembles (members are
independently initialized networks), and a Laplace approximation around the
optimum (members are draws from a diagonal Gaussian posterior whose precision
is 1, from a standard-normal prior, plus a tempered diagonal empirical
Fisher).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError, StateError, TrainingError

Weights = list[tuple[np.ndarray, np.ndarray]]


def _init_weights(rng: np.random.Generator, dims: list[int]) -> Weights:
    """He-scaled Gaussian weights, zero biases."""
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(size=(fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        weights.append((w, np.zeros(fan_out)))
    return weights


def _copy(weights: Weights) -> Weights:
    return [(w.copy(), b.copy()) for w, b in weights]


def _flatten(weights: Weights) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in weights])


def _unflatten(flat: np.ndarray, dims: list[int]) -> Weights:
    weights = []
    pos = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos:pos + fan_out]
        pos += fan_out
        weights.append((w, b))
    return weights


def _param_count(dims: list[int]) -> int:
    return sum((i + 1) * o for i, o in zip(dims[:-1], dims[1:]))


def _forward(weights: Weights, x: np.ndarray, dropout_rate: float = 0.0,
             masks: list[np.ndarray] | None = None):
    """Return (logits, per-layer activations, pre-activations).

    Inverted dropout: a kept unit is scaled by 1/(1-rate), so the same masks
    convention serves training and dropout-active prediction.
    """
    activations = [x]
    pre = []
    h = x
    for li, (w, b) in enumerate(weights[:-1]):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        if masks is not None:
            h = h * masks[li] / (1.0 - dropout_rate)
        activations.append(h)
    w, b = weights[-1]
    logits = h @ w + b
    return logits, activations, pre


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def _mean_nll(weights: Weights, x: np.ndarray, y: np.ndarray) -> float:
    logits, _, _ = _forward(weights, x)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(y.shape[0]), y].mean())


def loss_and_grads(weights: Weights, x: np.ndarray, y: np.ndarray,
                   l2_weight: float, dropout_rate: float = 0.0,
                   masks: list[np.ndarray] | None = None):
    """Mean NLL plus 0.5 * l2 * ||params||^2, with analytic gradients."""
    n = x.shape[0]
    logits, activations, pre = _forward(weights, x, dropout_rate, masks)
    logp = _log_softmax(logits)
    nll = -logp[np.arange(n), y].mean()
    l2 = 0.5 * l2_weight * sum(
        float((w**2).sum() + (b**2).sum()) for w, b in weights
    )
    loss = float(nll + l2)

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads = [None] * len(weights)
    for li in range(len(weights) - 1, -1, -1):
        w, b = weights[li]
        gw = activations[li].T @ delta + l2_weight * w
        gb = delta.sum(axis=0) + l2_weight * b
        grads[li] = (gw, gb)
        if li > 0:
            delta = delta @ w.T
            if masks is not None:
                delta = delta * masks[li - 1] / (1.0 - dropout_rate)
            delta = delta * (pre[li - 1] > 0.0)
    return loss, grads


def _train(dims: list[int], x: np.ndarray, y: np.ndarray,
           x_val: np.ndarray, y_val: np.ndarray,
           learning_rate: float, max_steps: int, patience_steps: int,
           l2_weight: float, dropout_rate: float,
           seed) -> tuple[Weights, float]:
    """Gradient descent with early stopping on validation NLL.

    Parameters are restored to the best-validation state before returning.
    """
    rng = np.random.default_rng(seed)
    weights = _init_weights(rng, dims)
    hidden = dims[1:-1]
    n = x.shape[0]

    best_nll = _mean_nll(weights, x_val, y_val)
    best = _copy(weights)
    since_best = 0

    for step in range(1, max_steps + 1):
        if dropout_rate > 0.0:
            masks = [
                (rng.random((n, width)) >= dropout_rate).astype(np.float64)
                for width in hidden
            ]
        else:
            masks = None
        loss, grads = loss_and_grads(weights, x, y, l2_weight, dropout_rate, masks)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite training loss at step {step}")
        for (w, b), (gw, gb) in zip(weights, grads):
            w -= learning_rate * gw
            b -= learning_rate * gb

        val_nll = _mean_nll(weights, x_val, y_val)
        if val_nll < best_nll:
            best_nll = val_nll
            best = _copy(weights)
            since_best = 0
        else:
            since_best += 1
            if since_best > patience_steps:
                break

    return best, best_nll


@dataclass(frozen=True, eq=False)
class DropoutMLPHead:
    """Network with dropout kept active at prediction; one mask per member."""

    classes: int
    dim: int
    dropout_rate: float
    weights: Weights
    default_members: int
    validation_nll: float

    @property
    def member_count(self) -> int:
        return self.default_members

    def predict_members(self, features: np.ndarray, k_requested: int | None = None,
                        seed: int = 0) -> np.ndarray:
        features = _check_features(features, self.dim)
        k = self.default_members if k_requested is None else int(k_requested)
        hidden = [w.shape[1] for w, _ in self.weights[:-1]]
        out = np.empty((k, features.shape[0], self.classes))
        seeds = np.random.SeedSequence(seed).spawn(k)
        for j in range(k):
            rng = np.random.default_rng(seeds[j])
            if self.dropout_rate > 0.0:
                # one mask per hidden layer, shared across inputs: a member is
                # a single thinned network, not per-input noise
                masks = [
                    (rng.random(width) >= self.dropout_rate).astype(np.float64)
                    for width in hidden
                ]
            else:
                masks = None
            logits, _, _ = _forward(self.weights, features, self.dropout_rate, masks)
            out[j] = softmax(logits)
        return out


@dataclass(frozen=True, eq=False)
class EnsembleMLPHead:
    """Independently seeded networks; the members are the networks."""

    classes: int
    dim: int
    member_weights: list[Weights]
    validation_nll: float

    @property
    def member_count(self) -> int:
        return len(self.member_weights)

    def predict_members(self, features: np.ndarray, k_requested: int | None = None,
                        seed: int = 0) -> np.ndarray:
        features = _check_features(features, self.dim)
        out = np.empty((len(self.member_weights), features.shape[0], self.classes))
        for j, weights in enumerate(self.member_weights):
            logits, _, _ = _forward(weights, features)
            out[j] = softmax(logits)
        return out


@dataclass(frozen=True, eq=False)
class LaplaceMLPHead:
    """MAP network plus a diagonal Gaussian posterior over its parameters."""

    classes: int
    dim: int
    dims: list[int]
    map_flat: np.ndarray
    posterior_var: np.ndarray
    default_members: int
    validation_nll: float

    @property
    def member_count(self) -> int:
        return self.default_members

    def predict_members(self, features: np.ndarray, k_requested: int | None = None,
                        seed: int = 0) -> np.ndarray:
        features = _check_features(features, self.dim)
        k = self.default_members if k_requested is None else int(k_requested)
        rng = np.random.default_rng(seed)
        eps = rng.standard_normal((k, self.map_flat.shape[0]))
        out = np.empty((k, features.shape[0], self.classes))
        std = np.sqrt(self.posterior_var)
        for j in range(k):
            weights = _unflatten(self.map_flat + std * eps[j], self.dims)
            logits, _, _ = _forward(weights, features)
            out[j] = softmax(logits)
        return out


def _check_features(features: np.ndarray, dim: int) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != dim:
        raise ShapeError(f"expected (n, {dim}) features, got {features.shape}")
    return features


def _diag_empirical_fisher(weights: Weights, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sum over examples of squared per-example NLL gradients, flattened.

    Per-example weight gradients are outer products outer(a, delta), so their
    squares reduce to (a^2)^T @ (delta^2) without materializing anything.
    """
    n = x.shape[0]
    logits, activations, pre = _forward(weights, x)
    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0

    pieces = [None] * len(weights)
    for li in range(len(weights) - 1, -1, -1):
        fw = (activations[li] ** 2).T @ (delta**2)
        fb = (delta**2).sum(axis=0)
        pieces[li] = (fw, fb)
        if li > 0:
            w, _ = weights[li]
            delta = (delta @ w.T) * (pre[li - 1] > 0.0)
    return np.concatenate([np.concatenate([fw.ravel(), fb]) for fw, fb in pieces])


def fit_laplace_posterior(weights: Weights, x: np.ndarray, y: np.ndarray,
                          dims: list[int]) -> np.ndarray:
    """Diagonal posterior variance: 1 / (1 + T * Fisher), T = parameter count."""
    fisher = _diag_empirical_fisher(weights, x, y)
    temperature = float(_param_count(dims))
    return 1.0 / (1.0 + temperature * fisher)


def fit_mlp(kind: str, hidden_layers: tuple[int, ...], dropout_rate: float,
            members: int, ensemble_size: int,
            learning_rate: float, max_steps: int, patience_steps: int,
            l2_weight: float,
            features: np.ndarray, labels: np.ndarray, classes: int,
            val_features: np.ndarray, val_labels: np.ndarray, seed: int):
    """Train one of the neural heads; deterministic given the seed."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise StateError("cannot fit a neural head on an empty training set")
    if val_features is None or np.asarray(val_features).shape[0] == 0:
        raise StateError("neural heads need a non-empty validation set for early stopping")
    xv = np.asarray(val_features, dtype=np.float64)
    yv = np.asarray(val_labels, dtype=np.int64)
    dims = [x.shape[1], *hidden_layers, classes]

    if kind == "dropout_mlp":
        weights, val_nll = _train(dims, x, y, xv, yv, learning_rate, max_steps,
                                  patience_steps, l2_weight, dropout_rate, seed)
        return DropoutMLPHead(classes=classes, dim=x.shape[1],
                              dropout_rate=dropout_rate, weights=weights,
                              default_members=members, validation_nll=val_nll)

    if kind == "ensemble_mlp":
        seeds = np.random.SeedSequence(seed).spawn(ensemble_size)
        nets = []
        nlls = []
        for member_seed in seeds:
            weights, val_nll = _train(dims, x, y, xv, yv, learning_rate, max_steps,
                                      patience_steps, l2_weight, dropout_rate,
                                      member_seed)
            nets.append(weights)
            nlls.append(val_nll)
        return EnsembleMLPHead(classes=classes, dim=x.shape[1],
                               member_weights=nets,
                               validation_nll=float(np.mean(nlls)))

    if kind == "laplace_mlp":
        # the Laplace head is a deterministic MAP network; dropout is not part of it
        weights, val_nll = _train(dims, x, y, xv, yv, learning_rate, max_steps,
                                  patience_steps, l2_weight, 0.0, seed)
        var = fit_laplace_posterior(weights, x, y, dims)
        return LaplaceMLPHead(classes=classes, dim=x.shape[1], dims=dims,
                              map_flat=_flatten(weights), posterior_var=var,
                              default_members=members, validation_nll=val_nll)

    raise ConfigError(f"unknown mlp head kind: {kind}")


def gradient_check(hidden_layers: tuple[int, ...], dropout_rate: float,
                   l2_weight: float, features: np.ndarray, labels: np.ndarray,
                   seed: int, step: float = 1e-4) -> float:
    """Compare analytic loss gradients with central finite differences.

    Returns the largest absolute gradient deviation relative to the largest
    gradient entry. Only small heads (at most 200 parameters) are accepted.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    classes = int(y.max()) + 1 if y.size else 2
    dims = [x.shape[1], *hidden_layers, max(classes, 2)]
    if _param_count(dims) > 200:
        raise ConfigError(f"gradient check limited to 200 parameters, got {_param_count(dims)}")

    rng = np.random.default_rng(seed)
    weights = _init_weights(rng, dims)
    if dropout_rate > 0.0:
        masks = [
            (rng.random((x.shape[0], width)) >= dropout_rate).astype(np.float64)
            for width in dims[1:-1]
        ]
    else:
        masks = None

    _, grads = loss_and_grads(weights, x, y, l2_weight, dropout_rate, masks)
    analytic = _flatten(grads)

    flat = _flatten(weights)
    numeric = np.empty_like(flat)
    for i in range(flat.shape[0]):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        up, _ = loss_and_grads(_unflatten(bumped, dims), x, y, l2_weight,
                               dropout_rate, masks)
        bumped[i] = flat[i] - step
        down, _ = loss_and_grads(_unflatten(bumped, dims), x, y, l2_weight,
                                 dropout_rate, masks)
        numeric[i] = (up - down) / (2.0 * step)

    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)
