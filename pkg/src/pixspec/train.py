"""Joint optimisation of filter passbands, their layout and the linear reconstructor.

The model is the chain ``scene -> filters/detector -> noise -> R``.  Filter
and layout parameters live in the scaled [-1, 1] space; gradients are chained
through the affine unscale map by hand, there is no autodiff dependency.

One engine serves both estimators.  The spectral-only estimator is the
degenerate layout in which ``N`` detector pixels (one per filter) all look at
the same single-pixel scene in one step.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datacube import PatchBatch, WavelengthGrid, train_val_split
from .layout import LayoutPattern
from .measurement import measure, measure_grad_t, pushbroom_plan
from .reconstruct import LinearReconstructor
from .spectral import Domain, FilterSet, regular_filters, transmission_matrix

log = logging.getLogger(__name__)

PARAM_NAMES = ("filters", "layout", "reconstructor")


class TrainingAborted(RuntimeError):
    def __init__(self, epoch, batch, what="non-finite loss"):
        super().__init__(f"{what} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class Trainability:
    filters: bool = False
    layout: bool = False
    reconstructor: bool = True

    def names(self):
        return [n for n in PARAM_NAMES if getattr(self, n)]


@dataclass
class LorentzianConfig:
    enabled: bool = False
    alpha_reg: float = 1e-3
    A: float = 0.05
    # alpha_reg is multiplied by mean(x^2) of the training data (the data loss of R = 0)
    relative_alpha: bool = True
    targets: FilterSet | None = None


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    l2_weight: float = 0.0
    lorentzian: LorentzianConfig = field(default_factory=LorentzianConfig)
    epochs: int = 200
    patience: int = 20
    batch_size: int = 32
    seed: int = 0
    trainability: Trainability = field(default_factory=Trainability)
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be >= 0")
        if self.lorentzian.alpha_reg < 0 or not self.lorentzian.A > 0:
            raise ValueError("need alpha_reg >= 0 and A > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class LossReport:
    total: float
    data_mse: float
    l2_term: float
    lorentzian_term: float
    epoch: int = 0
    split: str = "train"


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state: AdamState, params: dict, grads: dict, lr: float):
    """In-place bias-corrected Adam update of every array in ``grads``."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"{name}: parameter {p.shape} vs gradient {g.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        # in place with one scratch array; the reconstructor has millions of weights
        buf = np.multiply(g, 1.0 - state.beta1)
        m *= state.beta1
        m += buf
        np.multiply(g, g, out=buf)
        buf *= 1.0 - state.beta2
        v *= state.beta2
        v += buf
        np.multiply(v, 1.0 / bc2, out=buf)
        np.sqrt(buf, out=buf)
        buf += state.eps
        np.divide(m, buf, out=buf)
        buf *= lr / bc1
        p -= buf
    return params, state


# ---------------------------------------------------------------------------
# model


@dataclass
class Model:
    """Trainable instrument + reconstructor.

    Exactly one of ``filters_u`` (indexed layout, with ``index``) or
    ``pixels_u`` (free per-pixel layout) is set.
    """

    grid: WavelengthGrid
    domain: Domain
    scene_dims: tuple[int, int]
    layout_dims: tuple[int, int]
    steps: int
    lp: np.ndarray
    sp: np.ndarray
    weights: np.ndarray
    snr: float = 100.0
    index: np.ndarray | None = None
    filters_u: np.ndarray | None = None
    pixels_u: np.ndarray | None = None

    @classmethod
    def pushbroom(cls, layout: LayoutPattern, grid: WavelengthGrid, steps: int,
                  snr: float = 100.0, domain: Domain | None = None,
                  weights: np.ndarray | None = None) -> "Model":
        domain = domain or Domain.for_grid(grid)
        rows, cols = layout.dims
        lp, sp = pushbroom_plan(rows, cols, steps)
        m = rows * cols
        if weights is None:
            weights = np.zeros((m * grid.band_count, steps * m))
        model = cls(grid, domain, (rows, cols), (rows, cols), steps, lp, sp,
                    np.array(weights, dtype=np.float64), snr)
        if layout.mode == "indexed":
            model.index = layout.index.ravel().copy()
            model.filters_u = domain.scale_array(layout.filters.params)
        else:
            model.pixels_u = domain.scale_array(layout.params.reshape(-1, 2))
        return model

    @classmethod
    def spectral(cls, filters: FilterSet, grid: WavelengthGrid, snr: float = 100.0,
                 domain: Domain | None = None) -> "Model":
        """Degenerate layout: N virtual pixels viewing one spectrum, one step."""
        domain = domain or Domain.for_grid(grid)
        n = len(filters)
        return cls(grid, domain, (1, 1), (1, n), 1,
                   np.arange(n), np.zeros(n, dtype=np.int64),
                   np.zeros((grid.band_count, n)), snr,
                   index=np.arange(n), filters_u=domain.scale_array(filters.params))

    @property
    def n_scene_pixels(self):
        return self.scene_dims[0] * self.scene_dims[1]

    @property
    def n_layout_pixels(self):
        return self.layout_dims[0] * self.layout_dims[1]

    def pixel_u(self) -> np.ndarray:
        if self.filters_u is not None:
            return self.filters_u[self.index]
        return self.pixels_u

    def params(self) -> dict:
        out = {"reconstructor": self.weights}
        if self.filters_u is not None:
            out["filters"] = self.filters_u
        if self.pixels_u is not None:
            out["layout"] = self.pixels_u
        return out

    def set_params(self, params: dict):
        for name, value in params.items():
            attr = {"filters": "filters_u", "layout": "pixels_u", "reconstructor": "weights"}[name]
            setattr(self, attr, value.copy())

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def filter_set(self) -> FilterSet | None:
        if self.filters_u is None:
            return None
        return FilterSet(self.domain.unscale_array(self.filters_u))

    def layout(self) -> LayoutPattern:
        if self.filters_u is not None:
            return LayoutPattern(self.layout_dims, "indexed",
                                 index=self.index.reshape(self.layout_dims),
                                 filters=self.filter_set())
        return LayoutPattern(self.layout_dims, "continuous",
                             params=self.domain.unscale_array(self.pixels_u).reshape(
                                 *self.layout_dims, 2))

    def reconstructor(self) -> LinearReconstructor:
        if self.layout_dims != self.scene_dims:
            raise ValueError("the spectral-only model has no push-broom reconstructor")
        rows, cols = self.scene_dims
        return LinearReconstructor(self.weights.copy(), rows, cols, self.grid.band_count,
                                   self.steps)

    def transmissions(self):
        phys = self.domain.unscale_array(self.pixel_u())
        return transmission_matrix(phys, self.grid.bands)

    def measure(self, x):
        """Noise-free detector values for samples ``x`` of shape (K, M, bands)."""
        t, _, _ = self.transmissions()
        return measure(t, x, self.lp, self.sp)

    def project(self, names=("filters", "layout")):
        """Keep the named scaled parameters inside [-1, 1]."""
        for name, arr in (("filters", self.filters_u), ("layout", self.pixels_u)):
            if arr is not None and name in names:
                np.clip(arr, -1.0, 1.0, out=arr)


def as_samples(data, model: Model) -> np.ndarray:
    """Coerce patches or spectra to a float64 ``(K, M, bands)`` array."""
    if isinstance(data, PatchBatch):
        data = data.patches
    x = np.asarray(data, dtype=np.float64)
    b = model.grid.band_count
    if x.ndim == 4:
        x = x.reshape(x.shape[0], -1, x.shape[-1])
    elif x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3 or x.shape[1] != model.n_scene_pixels or x.shape[2] != b:
        raise ValueError(f"samples of shape {np.shape(data)} do not fit the model")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return x


# ---------------------------------------------------------------------------
# losses and gradients


def l2_penalty(weights, l2_weight: float) -> float:
    if l2_weight < 0:
        raise ValueError("l2_weight must be >= 0")
    return float(l2_weight * np.sum(np.asarray(weights) ** 2))


def lorentzian_terms(u, targets_u, A):
    """Per-parameter-pair Lorentzian losses and their gradient w.r.t. ``u``.

    ``u`` is (P, 2), ``targets_u`` is (T, 2); returns (P,) values and (P, 2) grads.
    """
    diff = u[:, None, :] - targets_u[None, :, :]
    d2 = np.sum(diff**2, axis=-1)
    denom = d2 + A * A
    value = np.sum(1.0 - A * A / denom, axis=1)
    grad = np.sum((2.0 * A * A / denom**2)[:, :, None] * diff, axis=1)
    return value, grad


def lorentzian_penalty(layout: LayoutPattern, targets: FilterSet, A: float,
                       alpha_reg: float, domain: Domain) -> float:
    """Snapping regulariser summed over all pixels of a layout (scaled-space distances)."""
    if not A > 0 or len(targets) == 0:
        raise ValueError("need A > 0 and at least one target")
    u = np.clip(domain.scale_array(layout.pixel_params().reshape(-1, 2)), -1, 1)
    t = domain.scale_array(targets.params)
    value, _ = lorentzian_terms(u, t, A)
    return float(alpha_reg * value.sum())


@dataclass
class _Lor:
    alpha: float
    A: float
    targets_u: np.ndarray


def _lor_setup(model: Model, config: TrainConfig, x_train) -> _Lor | None:
    lc = config.lorentzian
    if not lc.enabled or lc.targets is None or lc.alpha_reg == 0:
        return None
    alpha = lc.alpha_reg * (float(np.mean(x_train**2)) if lc.relative_alpha else 1.0)
    return _Lor(alpha, lc.A, model.domain.scale_array(lc.targets.params))


def _lor_owner(model: Model) -> str:
    return "filters" if model.filters_u is not None else "layout"


def loss_and_grads(model: Model, x: np.ndarray, rng, l2_weight: float = 0.0,
                   lor: _Lor | None = None, wrt=("reconstructor",)):
    """Loss components on samples ``x`` and exact gradients for parameters in ``wrt``.

    Noise is drawn from ``rng`` as ``sigma * z`` with ``sigma = mean|y| / snr``;
    the dependence of ``sigma`` on ``y`` is differentiated too.
    """
    k, m, b = x.shape
    u_pix = model.pixel_u()
    phys = model.domain.unscale_array(u_pix)
    t, dt_dc, dt_dw = transmission_matrix(phys, model.grid.bands)
    y = measure(t, x, model.lp, model.sp)
    if math.isinf(model.snr):
        z = None
        yn = y
    else:
        z = rng.standard_normal(y.shape)
        yn = y + (np.mean(np.abs(y)) / model.snr) * z
    w = model.weights
    xflat = x.reshape(k, m * b)
    err = yn @ w.T - xflat
    n_entries = k * m * b
    data = float(np.sum(err**2) / n_entries)
    l2 = l2_penalty(w, l2_weight)
    lor_value = 0.0
    owner_u = None
    if lor is not None:
        owner_u = np.clip(model.params()[_lor_owner(model)], -1.0, 1.0)
        vals, lor_grad = lorentzian_terms(owner_u, lor.targets_u, lor.A)
        lor_value = float(lor.alpha * vals.sum())
    report = LossReport(data + l2 + lor_value, data, l2, lor_value)

    grads = {}
    if not wrt:
        return report, grads
    g_xhat = (2.0 / n_entries) * err
    if "reconstructor" in wrt:
        grads["reconstructor"] = g_xhat.T @ yn + (2.0 * l2_weight) * w
    upstream = [n for n in ("filters", "layout") if n in wrt]
    if upstream:
        g_yn = g_xhat @ w
        g_y = g_yn
        if z is not None:
            g_sigma = float(np.sum(g_yn * z))
            g_y = g_yn + g_sigma * np.sign(y) / (y.size * model.snr)
        g_t = measure_grad_t(g_y, x, model.lp, model.sp, model.n_layout_pixels)
        g_phys = np.stack([np.sum(g_t * dt_dc, axis=1), np.sum(g_t * dt_dw, axis=1)], axis=1)
        g_u = g_phys * model.domain.half_width
        if model.filters_u is not None:
            g_f = np.zeros_like(model.filters_u)
            np.add.at(g_f, model.index, g_u)
            owned = {"filters": g_f}
        else:
            owned = {"layout": g_u}
        for name in upstream:
            if name in owned:
                grads[name] = owned[name]
    if lor is not None and _lor_owner(model) in wrt:
        name = _lor_owner(model)
        g = lor.alpha * lor_grad
        grads[name] = grads.get(name, np.zeros_like(g)) + g
    for name in ("filters", "layout"):
        if name in grads:
            _clamp_mask(model.params()[name], grads[name])
    for name in wrt:
        if name not in grads and name in model.params():
            grads[name] = np.zeros_like(model.params()[name])
    return report, grads


def _clamp_mask(u, g):
    """Chain through the unscale clamp: no gradient beyond the box or pushing outward at it."""
    g[(u > 1.0) | (u < -1.0)] = 0.0
    g[(u >= 1.0) & (g < 0)] = 0.0
    g[(u <= -1.0) & (g > 0)] = 0.0
    return g


def data_loss(model: Model, batch, noise_seed) -> float:
    """Mean over the batch of per-sample MSE after measuring, noising and reconstructing."""
    x = as_samples(batch, model)
    report, _ = loss_and_grads(model, x, np.random.default_rng(noise_seed), wrt=())
    return report.data_mse


def total_loss(model: Model, batch, noise_seed, config: TrainConfig | None = None) -> LossReport:
    """The objective ``backward`` differentiates, with the same noise draw."""
    config = config or TrainConfig()
    x = as_samples(batch, model)
    report, _ = loss_and_grads(model, x, np.random.default_rng(noise_seed), config.l2_weight,
                               _lor_setup(model, config, x), wrt=())
    return report


def backward(model: Model, batch, noise_seed, config: TrainConfig | None = None,
             wrt=None):
    """Gradients of the total loss for the trainable (or requested) parameters."""
    config = config or TrainConfig()
    x = as_samples(batch, model)
    wrt = tuple(wrt) if wrt is not None else tuple(
        n for n in config.trainability.names() if n in model.params())
    lor = _lor_setup(model, config, x)
    _, grads = loss_and_grads(model, x, np.random.default_rng(noise_seed),
                              config.l2_weight, lor, wrt)
    return grads


# ---------------------------------------------------------------------------
# training loop


def _run_pass(model, x, rngs, l2, lor, batch_size, order=None):
    """Loss over ``x`` in batches without updates; returns a sample-weighted report."""
    order = np.arange(x.shape[0]) if order is None else order
    acc = np.zeros(4)
    for b, start in enumerate(range(0, len(order), batch_size)):
        idx = order[start:start + batch_size]
        rep, _ = loss_and_grads(model, x[idx], rngs(b), l2, lor, wrt=())
        acc += len(idx) * np.array([rep.total, rep.data_mse, rep.l2_term, rep.lorentzian_term])
    acc /= len(order)
    return acc


def _report(vec, epoch, split):
    data, l2, lor = float(vec[1]), float(vec[2]), float(vec[3])
    return LossReport(data + l2 + lor, data, l2, lor, epoch, split)


def evaluate(model: Model, batch, noise_seed=0, batch_size: int = 64):
    """Mean per-sample MSE on ``batch`` with one fixed noise draw per sub-batch."""
    x = as_samples(batch, model)
    vec = _run_pass(model, x, lambda b: np.random.default_rng([noise_seed, 23, b]),
                    0.0, None, batch_size)
    return float(vec[1])


def train(model: Model, data, config: TrainConfig, val_data=None):
    """Optimise the trainable parts of ``model``; returns (best model, history).

    ``data`` is split ``1 - val_fraction`` / ``val_fraction`` unless ``val_data``
    is given.  The returned model holds the parameters with the lowest
    validation total loss.
    """
    model = model.copy()
    if val_data is None:
        train_part, val_part = train_val_split(data, config.val_fraction, config.seed)
    else:
        train_part, val_part = data, val_data
    x_tr = as_samples(train_part, model)
    x_va = as_samples(val_part, model)
    wrt = tuple(n for n in config.trainability.names() if n in model.params())
    lor = _lor_setup(model, config, x_tr)
    state = AdamState(beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    seed = config.seed
    history = []

    def val_rng(b):
        return np.random.default_rng([seed, 17, b])

    best = _run_pass(model, x_va, val_rng, config.l2_weight, lor, config.batch_size)
    history.append(_report(best, 0, "val"))
    best_params = {k: v.copy() for k, v in model.params().items()}
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([seed, 11, epoch]).permutation(x_tr.shape[0])
        acc = np.zeros(4)
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            rep, grads = loss_and_grads(model, x_tr[idx], np.random.default_rng([seed, 13, epoch, b]),
                                        config.l2_weight, lor, wrt)
            if not np.isfinite(rep.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingAborted(epoch, b)
            if wrt:
                adam_step(state, model.params(), grads, config.learning_rate)
                model.project(wrt)
            acc += len(idx) * np.array([rep.total, rep.data_mse, rep.l2_term, rep.lorentzian_term])
        history.append(_report(acc / len(order), epoch, "train"))
        val = _run_pass(model, x_va, val_rng, config.l2_weight, lor, config.batch_size)
        if not np.isfinite(val[0]):
            raise TrainingAborted(epoch, -1, "non-finite validation loss")
        history.append(_report(val, epoch, "val"))
        if val[0] < best[0]:
            best = val
            best_params = {k: v.copy() for k, v in model.params().items()}
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                log.info("early stop at epoch %d", epoch)
                break
    model.set_params(best_params)
    return model, history


def best_val_loss(history) -> float:
    return min(r.total for r in history if r.split == "val")


def optimal_filters(spectra, n_filters: int, grid: WavelengthGrid, config: TrainConfig,
                    snr: float = 100.0, domain: Domain | None = None, init: FilterSet | None = None):
    """Spectral-only estimator: best ``n_filters`` passbands for a set of spectra."""
    domain = domain or Domain.for_grid(grid)
    init = init or regular_filters(n_filters, domain.wl_min, domain.wl_max)
    model = Model.spectral(init, grid, snr, domain)
    cfg = replace(config, trainability=Trainability(filters=True, layout=False, reconstructor=True))
    model, history = train(model, np.asarray(spectra, dtype=np.float64), cfg)
    return model, history


def history_rows(history):
    return [(r.epoch, r.split, r.total, r.data_mse, r.l2_term, r.lorentzian_term) for r in history]
