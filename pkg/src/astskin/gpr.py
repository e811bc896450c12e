"""Exponential-kernel Gaussian process regression with exact inference.

One GP per tactile feature, kernel k(x, x') = sf^2 exp(-||x - x'|| / ell)
plus observation noise sn^2, all hyperparameters kept in log space.
Inputs and targets are z-scored before inference; hyperparameters are
chosen by multi-start gradient ascent on the log marginal likelihood
with an analytic gradient and backtracking line search.

Training at calibration scale (a few thousand samples) is exact O(n^3)
Cholesky.  To keep the hyperparameter search affordable it runs on a
seeded subsample of the training set by default (``opt_subsample``);
the final factorization always uses every training sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .errors import ConditioningError, InputError, ProvenanceError
from .signal import ToneSet
from .skinsim import SkinSpec

#: the four regression targets of a tactile bundle, in canonical order
BUNDLE_TARGETS = ("force", "diameter", "loc_x", "loc_y")

#: training-set size above which the hyperparameter search subsamples
DEFAULT_OPT_SUBSAMPLE = 512

#: ascent iterations granted to each restart before only the best one
#: continues to the full iteration budget
PROBE_ITERS = 25

_LOG_2PI = math.log(2.0 * math.pi)

# Jitter escalation relative to the mean kernel diagonal.
_JITTER_LEVELS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class GPHyperParams:
    """Log-space kernel hyperparameters: signal sd, lengthscale, noise sd."""

    log_signal: float
    log_lengthscale: float
    log_noise: float

    def __post_init__(self) -> None:
        for v in (self.log_signal, self.log_lengthscale, self.log_noise):
            if not math.isfinite(v):
                raise InputError(f"hyperparameters must be finite, got {self}")

    @property
    def signal(self) -> float:
        return math.exp(self.log_signal)

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_lengthscale)

    @property
    def noise(self) -> float:
        return math.exp(self.log_noise)

    def as_array(self) -> npt.NDArray[np.float64]:
        return np.array([self.log_signal, self.log_lengthscale, self.log_noise])

    @classmethod
    def from_array(cls, theta: npt.ArrayLike) -> "GPHyperParams":
        t = np.asarray(theta, dtype=np.float64)
        return cls(float(t[0]), float(t[1]), float(t[2]))


def kernel(x1: npt.ArrayLike, x2: npt.ArrayLike, hyper: GPHyperParams) -> float:
    """Covariance between two points: sf^2 exp(-||x1 - x2|| / ell)."""
    a = np.asarray(x1, dtype=np.float64)
    b = np.asarray(x2, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"kernel inputs differ in shape: {a.shape} vs {b.shape}")
    r = float(np.linalg.norm(a - b))
    return hyper.signal**2 * math.exp(-r / hyper.lengthscale)


def _chol_with_jitter(k_matrix: npt.NDArray[np.float64]) -> tuple[npt.NDArray[np.float64], float]:
    """Lower Cholesky factor, escalating diagonal jitter until it succeeds."""
    mean_diag = float(np.mean(np.diag(k_matrix)))
    tried = []
    for level in _JITTER_LEVELS:
        jitter = level * mean_diag
        tried.append(jitter)
        try:
            shifted = k_matrix if jitter == 0.0 else k_matrix + jitter * np.eye(k_matrix.shape[0])
            return cholesky(shifted, lower=True), jitter
        except np.linalg.LinAlgError:
            continue
    raise ConditioningError(
        f"kernel matrix stayed indefinite after jitter attempts {tried}"
    )


def _lml_core(
    dist: npt.NDArray[np.float64], y: npt.NDArray[np.float64], theta: npt.NDArray[np.float64]
):
    """Value-level pieces of the evidence at log-hyperparameters ``theta``.

    Returns (value, corr, L, alpha) where corr = exp(-dist/ell) so the
    gradient pass can reuse it.
    """
    sf2 = math.exp(2.0 * theta[0])
    ell = math.exp(theta[1])
    sn2 = math.exp(2.0 * theta[2])
    n = y.size
    with np.errstate(over="raise", invalid="raise"):
        corr = np.exp(-dist / ell)
        k_matrix = sf2 * corr
        k_matrix[np.diag_indices_from(k_matrix)] += sn2
    chol_l, _ = _chol_with_jitter(k_matrix)
    alpha = cho_solve((chol_l, True), y)
    value = (
        -0.5 * float(y @ alpha)
        - float(np.sum(np.log(np.diag(chol_l))))
        - 0.5 * n * _LOG_2PI
    )
    return value, corr, chol_l, alpha


def _lml_grad(
    dist: npt.NDArray[np.float64],
    theta: npt.NDArray[np.float64],
    corr: npt.NDArray[np.float64],
    chol_l: npt.NDArray[np.float64],
    alpha: npt.NDArray[np.float64],
) -> npt.NDArray[np.float64]:
    """Gradient of the evidence w.r.t. the three log-hyperparameters."""
    sf2 = math.exp(2.0 * theta[0])
    ell = math.exp(theta[1])
    sn2 = math.exp(2.0 * theta[2])
    n = alpha.size
    k_inv = cho_solve((chol_l, True), np.eye(n))
    outer_diff = np.outer(alpha, alpha) - k_inv
    noisefree = sf2 * corr
    g_signal = float(np.sum(outer_diff * noisefree))
    g_length = 0.5 * float(np.sum(outer_diff * noisefree * dist)) / ell
    g_noise = sn2 * (float(alpha @ alpha) - float(np.trace(k_inv)))
    return np.array([g_signal, g_length, g_noise])


def log_marginal_likelihood(
    X: npt.ArrayLike, y: npt.ArrayLike, hyper: GPHyperParams
) -> tuple[float, npt.NDArray[np.float64]]:
    """Evidence of the data under the kernel, with its analytic gradient.

    value = -1/2 y^T alpha - sum_i log L_ii - n/2 log 2pi; the gradient is
    w.r.t. (log sf, log ell, log sn) via the usual trace identities.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.size:
        raise InputError(f"{X.shape[0]} inputs vs {y.size} targets")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise InputError("inputs and targets must be finite")
    dist = cdist(X, X)
    theta = hyper.as_array()
    value, corr, chol_l, alpha = _lml_core(dist, y, theta)
    grad = _lml_grad(dist, theta, corr, chol_l, alpha)
    return value, grad


def _ascend(
    dist: npt.NDArray[np.float64],
    y: npt.NDArray[np.float64],
    theta0: npt.NDArray[np.float64],
    max_iters: int,
    gtol: float,
    armijo: float = 1e-4,
    max_halvings: int = 40,
) -> tuple[npt.NDArray[np.float64], float]:
    """Maximize the evidence by gradient ascent with backtracking line search.

    Step sizes adapt across iterations (doubling after acceptance); a step
    is accepted when it gains at least ``armijo * t * ||g||^2``.  Evaluations
    that overflow or stay indefinite count as -inf and shrink the step.
    """

    def safe_value(theta):
        try:
            value, corr, chol_l, alpha = _lml_core(dist, y, theta)
            return value, (corr, chol_l, alpha)
        except (ConditioningError, FloatingPointError, OverflowError):
            return -math.inf, None

    theta = theta0.copy()
    value, parts = safe_value(theta)
    if parts is None:
        return theta, -math.inf
    grad = _lml_grad(dist, theta, *parts)
    step = 1.0 / (1.0 + float(np.max(np.abs(grad))))
    for _ in range(max_iters):
        gnorm = float(np.max(np.abs(grad)))
        if gnorm <= gtol:
            break
        gsq = float(grad @ grad)
        t = min(2.0 * step, 2.0 / gnorm)
        accepted = False
        for _ in range(max_halvings):
            cand = theta + t * grad
            cand_value, cand_parts = safe_value(cand)
            if cand_value >= value + armijo * t * gsq and cand_parts is not None:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        improvement = cand_value - value
        theta, value, parts, step = cand, cand_value, cand_parts, t
        grad = _lml_grad(dist, theta, *parts)
        if improvement <= 1e-10 * (1.0 + abs(value)):
            break
    return theta, value


@dataclass(frozen=True)
class GPModel:
    """A fitted GP: hyperparameters, normalized data and its factorization."""

    hyper: GPHyperParams
    x_raw: npt.NDArray[np.float64]
    y_raw: npt.NDArray[np.float64]
    X: npt.NDArray[np.float64]
    y: npt.NDArray[np.float64]
    chol: npt.NDArray[np.float64]
    alpha: npt.NDArray[np.float64]
    x_mean: npt.NDArray[np.float64]
    x_sd: npt.NDArray[np.float64]
    y_mean: float
    y_sd: float
    target_name: str
    jitter: float

    @property
    def n_train(self) -> int:
        return int(self.y.size)

    @property
    def dim(self) -> int:
        return int(self.X.shape[1])


def _normalization(X: npt.NDArray[np.float64], y: npt.NDArray[np.float64]):
    x_mean = X.mean(axis=0)
    x_sd = X.std(axis=0)
    for col in np.nonzero(x_sd == 0)[0]:
        raise InputError(f"input column {col} has zero variance; drop it before fitting")
    y_mean = float(y.mean())
    y_sd = float(y.std())
    if y_sd == 0.0:
        y_sd = 1.0
    return x_mean, x_sd, y_mean, y_sd


def build_model(
    X_raw: npt.ArrayLike,
    y_raw: npt.ArrayLike,
    hyper: GPHyperParams,
    target_name: str = "",
    stats: tuple | None = None,
) -> GPModel:
    """Factorize a GP at fixed hyperparameters (used by fit and bundle load)."""
    X = np.atleast_2d(np.asarray(X_raw, dtype=np.float64))
    y = np.asarray(y_raw, dtype=np.float64)
    if X.shape[0] != y.size:
        raise InputError(f"{X.shape[0]} inputs vs {y.size} targets")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise InputError("inputs and targets must be finite")
    if y.size < 1:
        raise InputError("need at least one training sample")
    x_mean, x_sd, y_mean, y_sd = stats if stats is not None else _normalization(X, y)
    x_mean = np.asarray(x_mean, dtype=np.float64)
    x_sd = np.asarray(x_sd, dtype=np.float64)
    xn = (X - x_mean) / x_sd
    yn = (y - y_mean) / y_sd
    k_matrix = hyper.signal**2 * np.exp(-cdist(xn, xn) / hyper.lengthscale)
    k_matrix[np.diag_indices_from(k_matrix)] += hyper.noise**2
    chol_l, jitter = _chol_with_jitter(k_matrix)
    alpha = cho_solve((chol_l, True), yn)
    return GPModel(
        hyper=hyper,
        x_raw=X,
        y_raw=y,
        X=xn,
        y=yn,
        chol=chol_l,
        alpha=alpha,
        x_mean=x_mean,
        x_sd=x_sd,
        y_mean=y_mean,
        y_sd=y_sd,
        target_name=target_name,
        jitter=jitter,
    )


def fit(
    X_raw: npt.ArrayLike,
    y_raw: npt.ArrayLike,
    restarts: int = 8,
    max_iters: int = 200,
    seed=0,
    opt_subsample: int | None = DEFAULT_OPT_SUBSAMPLE,
    target_name: str = "",
) -> GPModel:
    """Fit hyperparameters by multi-start gradient ascent and factorize.

    Inputs are z-scored per dimension and targets z-scored before the
    search.  Restart initializations draw log sf from U(-2, 2), log ell
    from U(log 0.1 sqrt(d), log 10 sqrt(d)) and log sn from U(-6, 0); the
    best optimum wins, ties broken by the earliest restart.  Deterministic
    given ``seed``.  When the training set exceeds ``opt_subsample`` the
    search runs on that many seeded samples (pass None to disable); the
    returned model is always factorized on the full data.
    """
    X = np.atleast_2d(np.asarray(X_raw, dtype=np.float64))
    y = np.asarray(y_raw, dtype=np.float64)
    if X.shape[0] != y.size:
        raise InputError(f"{X.shape[0]} inputs vs {y.size} targets")
    if y.size < 2:
        raise InputError(f"need at least 2 samples to fit, got {y.size}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise InputError("inputs and targets must be finite")
    if restarts < 1:
        raise InputError(f"restarts must be >= 1, got {restarts}")

    n, d = X.shape
    x_mean, x_sd, y_mean, y_sd = _normalization(X, y)
    xn = (X - x_mean) / x_sd
    yn = (y - y_mean) / y_sd

    rng = np.random.default_rng(seed)
    # Draw order is fixed: first the optimization subsample, then one
    # (log sf, log ell, log sn) triple per restart.
    if opt_subsample is not None and n > opt_subsample:
        idx = np.sort(rng.choice(n, size=opt_subsample, replace=False))
        x_opt, y_opt = xn[idx], yn[idx]
    else:
        x_opt, y_opt = xn, yn
    root_d = math.sqrt(d)
    inits = np.column_stack(
        [
            rng.uniform(-2.0, 2.0, size=restarts),
            rng.uniform(math.log(0.1 * root_d), math.log(10.0 * root_d), size=restarts),
            rng.uniform(-6.0, 0.0, size=restarts),
        ]
    )

    dist = cdist(x_opt, x_opt)
    gtol = 1e-5 * max(1.0, float(y_opt.size))
    # Budgeted multi-start: every restart ascends briefly to rank its basin,
    # then only the leader continues to the full iteration budget.
    probe = min(PROBE_ITERS, max_iters)
    best_theta, best_value = None, -math.inf
    for r in range(restarts):
        theta, value = _ascend(dist, y_opt, inits[r], max_iters=probe, gtol=gtol)
        if value > best_value:
            best_theta, best_value = theta, value
    if best_theta is None or not math.isfinite(best_value):
        raise ConditioningError("every restart failed to evaluate the evidence")
    if max_iters > probe:
        theta, value = _ascend(dist, y_opt, best_theta, max_iters=max_iters - probe, gtol=gtol)
        if value >= best_value:
            best_theta, best_value = theta, value

    hyper = GPHyperParams.from_array(best_theta)
    return build_model(X, y, hyper, target_name=target_name, stats=(x_mean, x_sd, y_mean, y_sd))


def _predict_normalized(
    model: GPModel, xn: npt.NDArray[np.float64], want_sd: bool = True
):
    k_star = model.hyper.signal**2 * np.exp(
        -cdist(model.X, xn) / model.hyper.lengthscale
    )
    mean_n = k_star.T @ model.alpha
    if not want_sd:
        return mean_n, None
    v = solve_triangular(model.chol, k_star, lower=True)
    var_prior = model.hyper.signal**2 - np.sum(v * v, axis=0)
    var_n = np.maximum(var_prior, 0.0)
    return mean_n, var_n


def predict(model: GPModel, x_raw: npt.ArrayLike):
    """Predictive mean and standard deviation in raw units.

    Accepts a single d-vector (returns two floats) or an (m, d) batch
    (returns two (m,) arrays).  The variance includes the fitted
    observation noise, matching how an external reading is compared.
    """
    x = np.asarray(x_raw, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != model.dim:
        raise InputError(f"expected {model.dim}-dimensional inputs, got {x2.shape[1]}")
    xn = (x2 - model.x_mean) / model.x_sd
    mean_n, var_n = _predict_normalized(model, xn)
    mean = model.y_mean + model.y_sd * mean_n
    var = model.y_sd**2 * var_n + (model.hyper.noise * model.y_sd) ** 2
    sd = np.sqrt(var)
    if single:
        return float(mean[0]), float(sd[0])
    return mean, sd


def predict_mean(model: GPModel, x_raw: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Batch predictive means only (skips the variance solve)."""
    x2 = np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
    xn = (x2 - model.x_mean) / model.x_sd
    mean_n, _ = _predict_normalized(model, xn, want_sd=False)
    return model.y_mean + model.y_sd * mean_n


def validate(model: GPModel, X_raw: npt.ArrayLike, y_raw: npt.ArrayLike) -> float:
    """Root-mean-square error of predictive means in raw units."""
    y = np.asarray(y_raw, dtype=np.float64)
    if y.size == 0:
        raise InputError("validation set is empty")
    pred = predict_mean(model, X_raw)
    return float(np.sqrt(np.mean((pred - y) ** 2)))


@dataclass(frozen=True)
class ModelBundle:
    """The four per-feature GPs plus the provenance needed to use them."""

    models: dict[str, GPModel]
    skin: SkinSpec
    tones: ToneSet
    skin_fingerprint: str
    dataset_fingerprint: str
    dataset_path: str
    noise_sd: float
    split_seed: int
    train_seed: int
    validation_rmse: dict[str, float]

    def __post_init__(self) -> None:
        if tuple(self.models) != BUNDLE_TARGETS:
            raise InputError(f"bundle must hold models {BUNDLE_TARGETS}, got {tuple(self.models)}")
        dims = {m.dim for m in self.models.values()}
        if len(dims) != 1:
            raise InputError(f"bundle models disagree on input dimensionality: {dims}")


def save_bundle(bundle: ModelBundle, path: str | Path) -> None:
    """Serialize a bundle as one self-describing JSON document."""
    doc = {
        "format": "astskin-bundle-v1",
        "skin": bundle.skin.to_dict(),
        "skin_fingerprint": bundle.skin_fingerprint,
        "tones": bundle.tones.to_dict(),
        "dataset": {
            "path": bundle.dataset_path,
            "fingerprint": bundle.dataset_fingerprint,
            "noise_sd": bundle.noise_sd,
            "split_seed": bundle.split_seed,
            "train_seed": bundle.train_seed,
        },
        "models": {
            name: {
                "target_name": model.target_name,
                "log_signal": model.hyper.log_signal,
                "log_lengthscale": model.hyper.log_lengthscale,
                "log_noise": model.hyper.log_noise,
                "x_mean": model.x_mean.tolist(),
                "x_sd": model.x_sd.tolist(),
                "y_mean": model.y_mean,
                "y_sd": model.y_sd,
                "inputs": model.x_raw.tolist(),
                "targets": model.y_raw.tolist(),
                "validation_rmse": bundle.validation_rmse[name],
            }
            for name, model in bundle.models.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_bundle(path: str | Path) -> ModelBundle:
    """Load a bundle, re-factorizing every model from its stored raw data."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a valid bundle file: {exc}") from exc
    if doc.get("format") != "astskin-bundle-v1":
        raise InputError(f"{path}: unrecognized bundle format {doc.get('format')!r}")
    models = {}
    rmse = {}
    for name in BUNDLE_TARGETS:
        entry = doc["models"][name]
        hyper = GPHyperParams(
            entry["log_signal"], entry["log_lengthscale"], entry["log_noise"]
        )
        models[name] = build_model(
            np.array(entry["inputs"], dtype=np.float64),
            np.array(entry["targets"], dtype=np.float64),
            hyper,
            target_name=entry["target_name"],
            stats=(
                np.array(entry["x_mean"]),
                np.array(entry["x_sd"]),
                float(entry["y_mean"]),
                float(entry["y_sd"]),
            ),
        )
        rmse[name] = float(entry["validation_rmse"])
    ds = doc["dataset"]
    return ModelBundle(
        models=models,
        skin=SkinSpec.from_dict(doc["skin"]),
        tones=ToneSet.from_dict(doc["tones"]),
        skin_fingerprint=doc["skin_fingerprint"],
        dataset_fingerprint=ds["fingerprint"],
        dataset_path=ds["path"],
        noise_sd=float(ds["noise_sd"]),
        split_seed=int(ds["split_seed"]),
        train_seed=int(ds["train_seed"]),
        validation_rmse=rmse,
    )
