"""
Shared per-node MLP decision rule.

Every DER node runs the same network on its own feature vector:

    broadcast features (d0 = 5): [p_gen_n, p_load_n, q_load_n, Σp_load - Σp_gen, Σq_load]
    local features     (d0 = 3): [p_gen_n, p_load_n, q_load_n]

Hidden layers use ReLU (derivative taken as 0 at exactly 0), the output layer
is the identity. Features are standardized with statistics frozen from the
training split.

Flat parameter layout (used by the optimizer and gradient checks): for each
layer in order, W.ravel() (row-major, out x in) followed by b.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from voltrisk.exceptions import VoltRiskError
from voltrisk.feeder.models import FeederModel
from voltrisk.opf.models import OperatingCondition
from voltrisk.utils.io import atomic_write

logger = logging.getLogger(__name__)

POLICY_KIND = "voltrisk-policy"
DEFAULT_HIDDEN = (32, 32)


class PolicyError(VoltRiskError):
    """Base exception for the neural decision rule."""

    pass


class ShapeMismatchError(PolicyError):
    """Weights, features or batches have inconsistent shapes."""

    pass


class InvalidModeError(PolicyError):
    """Unknown loss mode or feature set."""

    pass


class EmptyBatchError(PolicyError):
    """A loss was evaluated on zero samples."""

    pass


class FeatureSet(str, Enum):
    BROADCAST = "broadcast"
    LOCAL = "local"

    @property
    def width(self) -> int:
        return 5 if self is FeatureSet.BROADCAST else 3

    @classmethod
    def parse(cls, value: Union[str, "FeatureSet"]) -> "FeatureSet":
        try:
            return cls(value)
        except ValueError as e:
            raise InvalidModeError(f"Unknown feature set '{value}'") from e


@dataclass(eq=False)
class PolicyParams:
    """
    MLP weights φ, CVaR auxiliaries β and feature statistics.

    beta_q and beta_v stay None until training initializes them.
    """

    widths: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    feat_mean: np.ndarray
    feat_std: np.ndarray
    beta_q: Optional[float] = None
    beta_v: Optional[float] = None
    feature_set: FeatureSet = FeatureSet.BROADCAST
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.feature_set = FeatureSet.parse(self.feature_set)
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or widths[-1] != 1:
            raise ShapeMismatchError(f"Layer widths must end in 1, got {widths}")
        if widths[0] != self.feature_set.width:
            raise ShapeMismatchError(
                f"Input width {widths[0]} does not match the {self.feature_set.value} "
                f"feature set ({self.feature_set.width})"
            )
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ShapeMismatchError("Need one weight matrix and bias per layer")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for t, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[t + 1], widths[t]) or b.shape != (widths[t + 1],):
                raise ShapeMismatchError(
                    f"Layer {t}: weight {w.shape} / bias {b.shape} do not match "
                    f"widths {widths[t]} -> {widths[t + 1]}"
                )
        self.feat_mean = np.asarray(self.feat_mean, dtype=float)
        self.feat_std = np.asarray(self.feat_std, dtype=float)
        if self.feat_mean.shape != (widths[0],) or self.feat_std.shape != (widths[0],):
            raise ShapeMismatchError("Feature statistics must have length d0")
        if np.any(self.feat_std <= 0.0):
            raise ShapeMismatchError("Feature standard deviations must be positive")
        self.widths = widths

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def to_vector(self) -> np.ndarray:
        """Flatten φ in layer order (W then b)."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_vector(self, phi: np.ndarray) -> "PolicyParams":
        """Copy with φ replaced by a flat vector."""
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.n_params,):
            raise ShapeMismatchError(
                f"Parameter vector has shape {phi.shape}, expected ({self.n_params},)"
            )
        weights, biases = [], []
        offset = 0
        for w, b in zip(self.weights, self.biases):
            weights.append(phi[offset : offset + w.size].reshape(w.shape).copy())
            offset += w.size
            biases.append(phi[offset : offset + b.size].copy())
            offset += b.size
        return replace(self, weights=weights, biases=biases)

    def with_betas(self, beta_q: Optional[float], beta_v: Optional[float]) -> "PolicyParams":
        return replace(self, beta_q=beta_q, beta_v=beta_v)


def init_policy(
    feature_set: Union[str, FeatureSet] = FeatureSet.BROADCAST,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    seed: int = 0,
    feat_mean: Optional[np.ndarray] = None,
    feat_std: Optional[np.ndarray] = None,
) -> PolicyParams:
    """
    Initialize a policy with seeded Glorot-uniform weights and zero biases.

    Args:
        feature_set: Which feature vector the net consumes
        hidden: Hidden layer widths
        seed: Seed for the weight draw
        feat_mean: Feature means (defaults to 0)
        feat_std: Feature standard deviations (defaults to 1)

    Returns:
        PolicyParams with beta_q = beta_v = None
    """
    feature_set = FeatureSet.parse(feature_set)
    widths = (feature_set.width, *[int(h) for h in hidden], 1)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    d0 = feature_set.width
    return PolicyParams(
        widths=widths,
        weights=weights,
        biases=biases,
        feat_mean=np.zeros(d0) if feat_mean is None else feat_mean,
        feat_std=np.ones(d0) if feat_std is None else feat_std,
        feature_set=feature_set,
    )


def build_features(
    p_gen: np.ndarray,
    p_load: np.ndarray,
    q_load: np.ndarray,
    der: np.ndarray,
    feature_set: Union[str, FeatureSet] = FeatureSet.BROADCAST,
) -> np.ndarray:
    """
    Per-DER feature vectors for one or many samples.

    Args:
        p_gen, p_load, q_load: (N,) or (K, N) arrays
        der: DER bus positions
        feature_set: broadcast or local

    Returns:
        (m, d0) or (K, m, d0) array
    """
    feature_set = FeatureSet.parse(feature_set)
    single = np.ndim(p_gen) == 1
    pg = np.atleast_2d(np.asarray(p_gen, dtype=float))
    pc = np.atleast_2d(np.asarray(p_load, dtype=float))
    qc = np.atleast_2d(np.asarray(q_load, dtype=float))
    columns = [pg[:, der], pc[:, der], qc[:, der]]
    if feature_set is FeatureSet.BROADCAST:
        m = len(der)
        net_p = (pc.sum(axis=1) - pg.sum(axis=1))[:, None]
        total_q = qc.sum(axis=1)[:, None]
        columns += [np.repeat(net_p, m, axis=1), np.repeat(total_q, m, axis=1)]
    features = np.stack(columns, axis=-1)
    return features[0] if single else features


def condition_features(
    oc: OperatingCondition, model: FeederModel, feature_set: Union[str, FeatureSet]
) -> np.ndarray:
    """(m, d0) features of one operating condition."""
    return build_features(oc.p_gen, oc.p_load, oc.q_load, model.der_indices, feature_set)


def feature_stats(features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean and standard deviation over all (sample, node) rows.

    Features with zero variance get standard deviation 1.
    """
    rows = np.asarray(features, dtype=float).reshape(-1, features.shape[-1])
    if rows.shape[0] == 0:
        raise EmptyBatchError("Cannot compute feature statistics of no samples")
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return mean, std


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations kept for backpropagation."""

    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    lead_shape: Tuple[int, ...]


def _check_features(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.shape[-1:] != (params.widths[0],):
        raise ShapeMismatchError(
            f"Features have trailing dimension {features.shape[-1:]}, "
            f"expected {params.widths[0]}"
        )
    return features


def forward_trace(params: PolicyParams, features: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """
    Forward pass that keeps what backward() needs.

    Args:
        params: Policy
        features: Raw features of shape (..., d0)

    Returns:
        (outputs of shape (...), cache)
    """
    features = _check_features(params, features)
    lead_shape = features.shape[:-1]
    a = ((features - params.feat_mean) / params.feat_std).reshape(-1, params.widths[0])
    inputs, pre_activations = [], []
    for t, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w.T + b
        pre_activations.append(z)
        a = np.maximum(z, 0.0) if t < params.n_layers - 1 else z
    return a[:, 0].reshape(lead_shape), ForwardCache(inputs, pre_activations, lead_shape)


def forward(
    params: PolicyParams, features: np.ndarray, q_limit: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Evaluate the shared net.

    Args:
        params: Policy
        features: Raw features of shape (..., d0)
        q_limit: If given, clamp outputs to [-q_limit, q_limit] (inference only)

    Returns:
        Predicted reactive setpoints of shape (...)
    """
    outputs, _ = forward_trace(params, features)
    if q_limit is not None:
        limit = np.asarray(q_limit, dtype=float)
        outputs = np.clip(outputs, -limit, limit)
    return outputs


def backward(params: PolicyParams, cache: ForwardCache, d_outputs: np.ndarray) -> np.ndarray:
    """
    Backpropagate output sensitivities to a flat φ gradient.

    Args:
        params: Policy used in the forward pass
        cache: Cache returned by forward_trace
        d_outputs: ∂loss/∂output, same shape as the outputs

    Returns:
        Flat gradient in the to_vector() layout, summed over all rows
    """
    delta = np.asarray(d_outputs, dtype=float).reshape(-1, 1)
    grads_w: List[np.ndarray] = [np.empty(0)] * params.n_layers
    grads_b: List[np.ndarray] = [np.empty(0)] * params.n_layers
    for t in range(params.n_layers - 1, -1, -1):
        grads_w[t] = delta.T @ cache.inputs[t]
        grads_b[t] = delta.sum(axis=0)
        if t > 0:
            delta = (delta @ params.weights[t]) * (cache.pre_activations[t - 1] > 0.0)
    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.ravel())
        parts.append(gb)
    return np.concatenate(parts)


def predict_all(
    params: PolicyParams, oc: OperatingCondition, model: FeederModel, clamp: bool = False
) -> np.ndarray:
    """
    Full-length dispatch: the shared net at every DER bus, zero elsewhere.

    Args:
        params: Policy
        oc: Operating condition
        model: Feeder
        clamp: Clamp to the reactive limits of this condition

    Returns:
        N-vector of predicted q_gen
    """
    q_gen = np.zeros(model.n_buses)
    der = model.der_indices
    if der.size == 0:
        return q_gen
    limit = model.reactive_limits(oc.p_gen)[der] if clamp else None
    q_gen[der] = forward(params, condition_features(oc, model, params.feature_set), limit)
    return q_gen


def policy_to_dict(params: PolicyParams) -> Dict[str, Any]:
    return {
        "kind": POLICY_KIND,
        "widths": list(params.widths),
        "feature_set": params.feature_set.value,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "beta_q": params.beta_q,
        "beta_v": params.beta_v,
        "feat_mean": params.feat_mean.tolist(),
        "feat_std": params.feat_std.tolist(),
        **params.metadata,
    }


def save_policy(params: PolicyParams, path: Union[str, Path]) -> Path:
    """
    Write a model file (JSON), atomically.

    metadata entries (feeder_hash, train_config, ...) are stored at top level.
    """
    with atomic_write(path) as handle:
        json.dump(policy_to_dict(params), handle, indent=2)
    return Path(path)


def load_policy(path: Union[str, Path]) -> PolicyParams:
    """
    Read a model file.

    Raises:
        PolicyError: If the file is missing or not a voltrisk model
    """
    path = Path(path)
    if not path.is_file():
        raise PolicyError(f"Model file not found: {path}")
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise PolicyError(f"Invalid JSON in model file {path}: {e}") from e
    if data.get("kind") != POLICY_KIND:
        raise PolicyError(f"{path} is not a voltrisk model file")

    known = {
        "kind", "widths", "feature_set", "weights", "biases",
        "beta_q", "beta_v", "feat_mean", "feat_std",
    }
    return PolicyParams(
        widths=tuple(data["widths"]),
        weights=[np.array(w, dtype=float) for w in data["weights"]],
        biases=[np.array(b, dtype=float) for b in data["biases"]],
        feat_mean=np.array(data["feat_mean"], dtype=float),
        feat_std=np.array(data["feat_std"], dtype=float),
        beta_q=data.get("beta_q"),
        beta_v=data.get("beta_v"),
        feature_set=FeatureSet.parse(data.get("feature_set", "broadcast")),
        metadata={key: value for key, value in data.items() if key not in known},
    )
