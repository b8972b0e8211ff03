"""Echo State Network engine.

A sparse random reservoir with leaky tanh dynamics, a ridge-regression
readout, and the NRMSE metric. The reservoir update is

    x(t) = (1 - alpha) * x(t-1) + alpha * tanh(W_res x(t-1) + W_in u(t) + b)

with the classic non-leaky form recovered at alpha = 1. Only the readout
is trained; W_in, W_res and b are drawn once from a seeded generator and
frozen.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import (ConfigError, ConstantTargetError, ConvergenceError,
                     FormatError, IllConditionedError, InitializationError)

_MODEL_MAGIC = b"EARC"
_INIT_ATTEMPTS = 10


@dataclass
class EsnConfig:
    """Reservoir hyperparameters.

    ``connection_prob`` of 0.2 means 80% of W_res entries are zero. The
    echo-state prerequisite requires spectral_radius_target < 1.
    """

    n_nodes: int
    input_dim: int
    connection_prob: float = 0.2
    spectral_radius_target: float = 0.95
    leak_rate: float = 0.3
    input_scale: float = 0.5
    bias_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 1 or self.input_dim < 1:
            raise ConfigError("n_nodes and input_dim must be positive")
        if not 0.0 < self.connection_prob <= 1.0:
            raise ConfigError("connection_prob must lie in (0, 1]")
        if not 0.0 < self.spectral_radius_target < 1.0:
            raise ConfigError("spectral_radius_target must lie in (0, 1)")
        if not 0.0 < self.leak_rate <= 1.0:
            raise ConfigError("leak_rate must lie in (0, 1]")
        if self.input_scale < 0 or self.bias_scale < 0:
            raise ConfigError("scales must be non-negative")

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "input_dim": self.input_dim,
            "connection_prob": self.connection_prob,
            "spectral_radius_target": self.spectral_radius_target,
            "leak_rate": self.leak_rate,
            "input_scale": self.input_scale,
            "bias_scale": self.bias_scale,
            "seed": self.seed,
        }


@dataclass
class Esn:
    """Frozen reservoir: dense input weights, sparse recurrent weights, bias."""

    w_in: np.ndarray
    w_res: scipy.sparse.csr_matrix
    bias: np.ndarray
    config: EsnConfig


@dataclass
class Readout:
    """Trained linear map from reservoir state to outputs.

    When ``has_intercept`` is set, w_out has one extra trailing column that
    multiplies a constant 1. ``input_normalization`` optionally stores the
    per-dimension (mean, std) used to z-score the reservoir's *inputs*, so
    a saved model can reproduce its training-time scaling.
    """

    w_out: np.ndarray
    ridge_lambda: float
    has_intercept: bool = True
    input_normalization: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        if not np.all(np.isfinite(self.w_out)):
            raise ValueError("readout weights must be finite")


@dataclass
class StateTrajectory:
    """All post-update states of one run, plus the washout bookkeeping."""

    states: np.ndarray  # (n_nodes, T)
    washout_len: int

    def __post_init__(self):
        if self.states.ndim != 2:
            raise ValueError("states must be 2-D")
        if not 0 <= self.washout_len < self.states.shape[1]:
            raise ValueError("washout_len must be < run length")
        if np.max(np.abs(self.states), initial=0.0) >= 1.0:
            raise ValueError("reservoir states must stay strictly inside (-1, 1)")

    @property
    def usable(self) -> np.ndarray:
        """States with the washout columns dropped."""
        return self.states[:, self.washout_len:]


# ---------------------------------------------------------------------------
# spectral radius

def spectral_radius(matrix, tol: float = 1e-6, max_iters: Optional[int] = None) -> float:
    """Largest |eigenvalue| by block power iteration with Rayleigh-Ritz.

    A single real iteration vector cannot converge when the dominant
    eigenvalues are a complex-conjugate pair (the generic case for random
    reservoirs), so the iteration keeps a small orthonormal block and reads
    the radius off the projected Rayleigh-Ritz matrix, stopping when the
    dominant Ritz pair's residual ||A v - theta v|| drops below tol*|theta|.
    """
    n = matrix.shape[0]
    if matrix.shape != (n, n) or n < 1:
        raise ValueError("matrix must be square and non-empty")
    if n == 1:
        return float(abs(matrix[0, 0] if not scipy.sparse.issparse(matrix)
                         else matrix.toarray()[0, 0]))
    if max_iters is None:
        max_iters = 10 * n
    block = min(8, n)
    rng = np.random.default_rng(0x5EED)
    q, _ = np.linalg.qr(rng.normal(size=(n, block)))
    estimate = 0.0
    for _ in range(max_iters):
        z = matrix @ q
        h = q.T @ z  # Rayleigh-Ritz projection
        evals, evecs = np.linalg.eig(h)
        k = int(np.argmax(np.abs(evals)))
        theta, y = evals[k], evecs[:, k]
        estimate = float(abs(theta))
        residual = float(np.linalg.norm(z @ y - theta * (q @ y)))
        if residual <= tol * max(estimate, 1e-30):
            return estimate
        q, _ = np.linalg.qr(z)
    raise ConvergenceError(
        f"spectral radius did not converge in {max_iters} iterations",
        estimate=estimate)


# ---------------------------------------------------------------------------
# construction

def init_reservoir(cfg: EsnConfig) -> Esn:
    """Draw a reservoir deterministically from cfg.seed.

    Draw order is fixed: w_in (row-major), then the w_res sparsity mask,
    then the nonzero values (row-major), then the bias. A degenerate draw
    (empty or effectively nilpotent w_res) retries with a derived sub-seed.
    """
    for attempt in range(_INIT_ATTEMPTS):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((cfg.seed, attempt))))
        w_in = rng.uniform(-cfg.input_scale, cfg.input_scale,
                           size=(cfg.n_nodes, cfg.input_dim))
        mask = rng.random(size=(cfg.n_nodes, cfg.n_nodes)) < cfg.connection_prob
        rows, cols = np.nonzero(mask)
        values = rng.uniform(-1.0, 1.0, size=rows.size)
        bias = rng.uniform(-cfg.bias_scale, cfg.bias_scale, size=cfg.n_nodes)
        if rows.size == 0:
            continue
        w_res = scipy.sparse.coo_matrix(
            (values, (rows, cols)), shape=(cfg.n_nodes, cfg.n_nodes)).tocsr()
        try:
            rho = spectral_radius(w_res)
        except ConvergenceError:
            continue
        if rho < 1e-12:
            continue  # nilpotent-like draw cannot be scaled to the target
        w_res = w_res * (cfg.spectral_radius_target / rho)
        return Esn(w_in=w_in, w_res=w_res, bias=bias, config=cfg)
    raise InitializationError(
        f"reservoir draw failed {_INIT_ATTEMPTS} times for seed {cfg.seed}")


# ---------------------------------------------------------------------------
# dynamics

def step(esn: Esn, state: np.ndarray, input_vec: np.ndarray) -> np.ndarray:
    """One leaky update of the reservoir state."""
    alpha = esn.config.leak_rate
    pre = esn.w_res @ state + esn.w_in @ np.atleast_1d(input_vec) + esn.bias
    return (1.0 - alpha) * state + alpha * np.tanh(pre)


def run(esn: Esn, inputs: np.ndarray, initial_state: Optional[np.ndarray] = None,
        washout: int = 0) -> StateTrajectory:
    """Drive the reservoir with an input_dim x T sequence from a fixed start."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    m, t_len = inputs.shape
    if m != esn.config.input_dim:
        raise ValueError(f"inputs have {m} rows, expected {esn.config.input_dim}")
    if t_len <= washout:
        raise ValueError(f"run length {t_len} must exceed washout {washout}")
    state = (np.zeros(esn.config.n_nodes) if initial_state is None
             else np.asarray(initial_state, dtype=np.float64).copy())
    states = np.empty((esn.config.n_nodes, t_len))
    for t in range(t_len):
        state = step(esn, state, inputs[:, t])
        states[:, t] = state
    return StateTrajectory(states=states, washout_len=washout)


def iterate_batch(esn: Esn, inputs: np.ndarray) -> Iterator[tuple[int, np.ndarray]]:
    """Evolve many sequences in lockstep, yielding (t, states) per step.

    ``inputs`` is (batch, input_dim, T) — zero-pad ragged clips and ignore
    the columns past each clip's true length downstream. The yielded state
    matrix is n_nodes x batch and is reused between steps; copy if kept.
    """
    batch, m, t_len = inputs.shape
    if m != esn.config.input_dim:
        raise ValueError(f"inputs have {m} rows, expected {esn.config.input_dim}")
    alpha = esn.config.leak_rate
    states = np.zeros((esn.config.n_nodes, batch))
    bias = esn.bias[:, None]
    for t in range(t_len):
        pre = esn.w_res @ states + esn.w_in @ inputs[:, :, t].T + bias
        states *= (1.0 - alpha)
        states += alpha * np.tanh(pre)
        yield t, states


# ---------------------------------------------------------------------------
# readout

def _augment(states: np.ndarray) -> np.ndarray:
    return np.vstack([states, np.ones((1, states.shape[1]))])


def solve_ridge(sxx: np.ndarray, sxt: np.ndarray, ridge_lambda: float) -> np.ndarray:
    """Solve W (SS^T + lambda I) = T S^T from precomputed Gram blocks.

    ``sxx`` is S S^T (D x D), ``sxt`` is S T^T (D x P); returns W (P x D).
    """
    a = sxx + ridge_lambda * np.eye(sxx.shape[0])
    try:
        w_t = scipy.linalg.solve(a, sxt, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(
            f"ridge system is singular ({exc}); use ridge_lambda > 0") from None
    if not np.all(np.isfinite(w_t)):
        raise IllConditionedError(
            "ridge solve produced non-finite weights; use ridge_lambda > 0")
    return w_t.T


def train_readout(states: np.ndarray, targets: np.ndarray, ridge_lambda: float,
                  add_intercept: bool = True,
                  input_normalization=None) -> Readout:
    """Ridge-regress targets (P x K) onto states (N x K), washout removed.

    A constant-1 row is appended to the states by default so the readout
    carries an intercept; targets here are generally not zero-mean.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if states.shape[1] != targets.shape[1]:
        raise ValueError("states and targets must cover the same timesteps")
    if states.shape[1] < 1:
        raise ValueError("need at least one training column")
    design = _augment(states) if add_intercept else states
    w_out = solve_ridge(design @ design.T, design @ targets.T, ridge_lambda)
    return Readout(w_out=w_out, ridge_lambda=ridge_lambda,
                   has_intercept=add_intercept,
                   input_normalization=input_normalization)


def apply_readout(readout: Readout, states: np.ndarray) -> np.ndarray:
    """y = W_out x for a single state vector or an N x T matrix."""
    states = np.asarray(states, dtype=np.float64)
    single = states.ndim == 1
    if single:
        states = states[:, None]
    expected = readout.w_out.shape[1] - (1 if readout.has_intercept else 0)
    if states.shape[0] != expected:
        raise ValueError(
            f"states have {states.shape[0]} rows, readout expects {expected}")
    design = _augment(states) if readout.has_intercept else states
    out = readout.w_out @ design
    return out[:, 0] if single else out


# ---------------------------------------------------------------------------
# metric

def nrmse(prediction: np.ndarray, target: np.ndarray) -> float:
    """Root-mean-square error normalized by the target's population std."""
    prediction = np.asarray(prediction, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if prediction.shape != target.shape or target.size < 2:
        raise ValueError("prediction and target must share a length >= 2")
    std = float(np.std(target))
    if std == 0.0:
        raise ConstantTargetError("NRMSE undefined for a constant target")
    return float(np.sqrt(np.mean((prediction - target) ** 2)) / std)


# ---------------------------------------------------------------------------
# persistence

def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return struct.pack("<I", len(arr.shape)) + \
        struct.pack(f"<{len(arr.shape)}I", *arr.shape) + arr.tobytes()


def _unpack_array(blob: bytes, offset: int) -> tuple[np.ndarray, int]:
    (ndim,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    shape = struct.unpack_from(f"<{ndim}I", blob, offset)
    offset += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return arr.reshape(shape).copy(), offset + count * 8


def model_to_bytes(esn: Esn, readout: Optional[Readout] = None) -> bytes:
    """Serialize reservoir (+ optional readout) into the EARC layout."""
    coo = esn.w_res.tocoo()
    cfg_blob = json.dumps(esn.config.to_dict(), sort_keys=True).encode()
    parts = [struct.pack("<4sI", _MODEL_MAGIC, 1),
             struct.pack("<I", len(cfg_blob)), cfg_blob,
             _pack_array(esn.w_in),
             struct.pack("<IQ", esn.config.n_nodes, coo.nnz),
             np.ascontiguousarray(coo.row, dtype="<u4").tobytes(),
             np.ascontiguousarray(coo.col, dtype="<u4").tobytes(),
             np.ascontiguousarray(coo.data, dtype="<f8").tobytes(),
             _pack_array(esn.bias)]
    if readout is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<dB", readout.ridge_lambda,
                                 1 if readout.has_intercept else 0))
        parts.append(_pack_array(readout.w_out))
        if readout.input_normalization is None:
            parts.append(struct.pack("<B", 0))
        else:
            means, stds = readout.input_normalization
            parts.append(struct.pack("<B", 1))
            parts.append(_pack_array(np.asarray(means)))
            parts.append(_pack_array(np.asarray(stds)))
    return b"".join(parts)


def model_from_bytes(blob: bytes) -> tuple[Esn, Optional[Readout], int]:
    """Parse an EARC blob; returns the byte offset just past the model so
    container formats can append their own trailing blocks."""
    if blob[:4] != _MODEL_MAGIC:
        raise FormatError("not an EARC model blob")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != 1:
        raise FormatError(f"unsupported EARC version {version}")
    (cfg_len,) = struct.unpack_from("<I", blob, 8)
    cfg = EsnConfig(**json.loads(blob[12:12 + cfg_len].decode()))
    offset = 12 + cfg_len
    w_in, offset = _unpack_array(blob, offset)
    n, nnz = struct.unpack_from("<IQ", blob, offset)
    offset += 12
    rows = np.frombuffer(blob, dtype="<u4", count=nnz, offset=offset)
    offset += 4 * nnz
    cols = np.frombuffer(blob, dtype="<u4", count=nnz, offset=offset)
    offset += 4 * nnz
    data = np.frombuffer(blob, dtype="<f8", count=nnz, offset=offset)
    offset += 8 * nnz
    w_res = scipy.sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    bias, offset = _unpack_array(blob, offset)
    esn = Esn(w_in=w_in, w_res=w_res, bias=bias, config=cfg)
    (has_readout,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    if not has_readout:
        return esn, None, offset
    lam, intercept = struct.unpack_from("<dB", blob, offset)
    offset += 9
    w_out, offset = _unpack_array(blob, offset)
    (has_norm,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    norm = None
    if has_norm:
        means, offset = _unpack_array(blob, offset)
        stds, offset = _unpack_array(blob, offset)
        norm = (means, stds)
    readout = Readout(w_out=w_out, ridge_lambda=lam,
                      has_intercept=bool(intercept), input_normalization=norm)
    return esn, readout, offset


def save_esn(path, esn: Esn, readout: Optional[Readout] = None) -> None:
    """Write the EARC container plus a JSON sidecar of the config."""
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(esn, readout))
    with open(path + ".json", "w") as fh:
        json.dump(esn.config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_esn(path) -> tuple[Esn, Optional[Readout]]:
    with open(str(path), "rb") as fh:
        esn, readout, _ = model_from_bytes(fh.read())
    return esn, readout
