"""Finite-state channel kinetics: rates, generators, quasi-stationary laws.

A channel lives on a finite state space ``E`` partitioned into classes
``E_1, ..., E_l``.  Transitions inside a class are fast (scaled by 1/eps in
the two-timescale process), transitions between classes are slow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np

V_RANGE = (-120.0, 60.0)


class IrreducibilityError(ValueError):
    """Generator does not have a one-dimensional stationary space."""


# -- rate forms ----------------------------------------------------------

RATE_FORMS = {
    "constant": 0,  # p0
    "ml_open": 1,  # p2 * cosh((y-p0)/(2 p1)) * (1 + tanh((y-p0)/p1)) / 2
    "ml_close": 2,  # p2 * cosh((y-p0)/(2 p1)) * (1 - tanh((y-p0)/p1)) / 2
    "exponential": 3,  # p0 * exp((y - p2) / p1)
    "sigmoid": 4,  # p0 / (1 + exp(-(y - p2) / p1))
}
_FORM_ARITY = {"constant": 1, "ml_open": 3, "ml_close": 3, "exponential": 3, "sigmoid": 3}
_FORM_ARGS = {
    "constant": ("value",),
    "ml_open": ("v3", "v4", "lam"),
    "ml_close": ("v3", "v4", "lam"),
    "exponential": ("scale", "width", "center"),
    "sigmoid": ("scale", "width", "center"),
}


@numba.njit(cache=True)
def eval_rate(code, params, y):
    """Scalar rate evaluation; ``params = (p0, p1, p2, floor, vlo, vhi)``."""
    if code < 0:
        return 0.0
    if y < params[4]:
        y = params[4]
    elif y > params[5]:
        y = params[5]
    if code == 0:
        r = params[0]
    elif code == 1 or code == 2:
        x = (y - params[0]) / params[1]
        t = np.tanh(x)
        if code == 2:
            t = -t
        r = params[2] * np.cosh(0.5 * x) * 0.5 * (1.0 + t)
    elif code == 3:
        r = params[0] * np.exp((y - params[2]) / params[1])
    else:
        r = params[0] / (1.0 + np.exp(-(y - params[2]) / params[1]))
    if r < params[3]:
        r = params[3]
    return r


@numba.njit(cache=True)
def _eval_rate_array(code, params, y):
    out = np.empty(y.size)
    flat = y.ravel()
    for i in range(flat.size):
        out[i] = eval_rate(code, params, flat[i])
    return out


@dataclass(frozen=True)
class RateForm:
    """Closed-form voltage-dependent rate, clamped to an operating range.

    The voltage is clipped to ``v_range`` before evaluation and the result
    is floored at ``floor``, which keeps every nonzero rate inside
    ``[alpha_-, alpha_+]`` as the model assumes.
    """

    kind: str
    args: tuple[float, ...]
    floor: float = 0.0
    v_range: tuple[float, float] = V_RANGE

    def __post_init__(self):
        if self.kind not in RATE_FORMS:
            raise ValueError(f"unknown rate form {self.kind!r}; known: {sorted(RATE_FORMS)}")
        if len(self.args) != _FORM_ARITY[self.kind]:
            raise ValueError(f"rate form {self.kind!r} takes {_FORM_ARGS[self.kind]}")
        object.__setattr__(self, "args", tuple(float(a) for a in self.args))
        p = list(self.args) + [0.0] * (3 - len(self.args))
        params = np.array(p + [self.floor, self.v_range[0], self.v_range[1]], dtype=float)
        params.flags.writeable = False
        object.__setattr__(self, "_params", params)

    @classmethod
    def constant(cls, value: float) -> "RateForm":
        return cls("constant", (value,))

    @property
    def code(self) -> int:
        return RATE_FORMS[self.kind]

    @property
    def params(self) -> np.ndarray:
        return self._params

    def __call__(self, y):
        ya = np.asarray(y, dtype=float)
        vals = _eval_rate_array(self.code, self.params, np.ascontiguousarray(ya.ravel()))
        if ya.ndim == 0:
            return float(vals[0])
        return vals.reshape(ya.shape)

    def sup(self, step: float = 0.01) -> float:
        grid = np.arange(self.v_range[0], self.v_range[1] + step, step)
        grid = np.append(grid, self.v_range[1])
        return float(np.max(self(grid)))

    def inf(self, step: float = 0.01) -> float:
        grid = np.arange(self.v_range[0], self.v_range[1] + step, step)
        return float(np.min(self(grid)))


# -- channel model -------------------------------------------------------


@dataclass(frozen=True)
class ChannelModel:
    states: tuple[str, ...]
    classes: tuple[int, ...]
    conductances: np.ndarray
    reversals: np.ndarray
    rates: Mapping[tuple[int, int], RateForm]
    name: str = "channel"
    v_range: tuple[float, float] = V_RANGE
    alpha_max: float = field(default=0.0)
    alpha_min: float = field(default=0.0)

    def __post_init__(self):
        n = len(self.states)
        if len(self.classes) != n:
            raise ValueError("one class label per state required")
        labels = sorted(set(self.classes))
        if labels != list(range(len(labels))):
            raise ValueError("class labels must be 0..l-1, each used")
        c = np.asarray(self.conductances, dtype=float)
        v = np.asarray(self.reversals, dtype=float)
        if c.shape != (n,) or v.shape != (n,):
            raise ValueError("conductances and reversals need one entry per state")
        if np.any(c < 0):
            raise ValueError("conductances must be nonnegative")
        rates = {}
        for (a, b), form in self.rates.items():
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ValueError(f"bad transition {(a, b)}")
            rates[(int(a), int(b))] = form
        c.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "conductances", c)
        object.__setattr__(self, "reversals", v)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "classes", tuple(int(k) for k in self.classes))
        cls = np.asarray(self.classes)
        members = tuple(np.flatnonzero(cls == j) for j in range(len(labels)))
        for m in members:
            m.flags.writeable = False
        object.__setattr__(self, "_members", members)
        if self.alpha_max <= 0:
            sups = [f.sup() for f in rates.values()]
            # grid sup plus a small margin so the thinning majorant is never beaten
            object.__setattr__(self, "alpha_max", max(sups) * (1 + 1e-6) if sups else 1.0)
        if self.alpha_min <= 0:
            infs = [f.inf() for f in rates.values()]
            object.__setattr__(self, "alpha_min", min(infs) if infs else 0.0)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_classes(self) -> int:
        return max(self.classes) + 1

    def members(self, j: int) -> np.ndarray:
        if not 0 <= j < self.n_classes:
            raise IndexError(f"class index {j} outside 0..{self.n_classes - 1}")
        return self._members[j]

    def is_fast(self, a: int, b: int) -> bool:
        return self.classes[a] == self.classes[b]

    def state_index(self, name: str) -> int:
        return self.states.index(name)

    def rate_matrix(self, y) -> np.ndarray:
        """Off-diagonal rates at voltages ``y``; shape ``y.shape + (S, S)``."""
        ya = np.asarray(y, dtype=float)
        out = np.zeros(ya.shape + (self.n_states, self.n_states))
        for (a, b), form in self.rates.items():
            out[..., a, b] = form(ya)
        return out

    def check_bounds(self, step: float = 0.5) -> list[str]:
        """Rates identically zero or inside [alpha_min, alpha_max] on the grid."""
        grid = np.arange(self.v_range[0], self.v_range[1] + step, step)
        problems = []
        for key, form in self.rates.items():
            vals = form(grid)
            if np.all(vals == 0):
                continue
            if vals.min() <= 0 or vals.min() < self.alpha_min - 1e-12 or vals.max() > self.alpha_max:
                problems.append(f"rate {key} leaves [{self.alpha_min}, {self.alpha_max}]")
        return problems

    def lipschitz_constants(self, step: float = 0.5) -> dict:
        """Finite-difference Lipschitz estimates of each rate and its derivative."""
        grid = np.arange(self.v_range[0], self.v_range[1] + step, step)
        out = {}
        for key, form in self.rates.items():
            d1 = np.diff(form(grid)) / step
            d2 = np.diff(d1) / step
            out[key] = (float(np.max(np.abs(d1))), float(np.max(np.abs(d2))) if d2.size else 0.0)
        return out


# -- generators ----------------------------------------------------------


@dataclass(frozen=True)
class GeneratorMatrix:
    matrix: np.ndarray
    y: float
    states: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("generator must be square")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class QuasiStationary:
    probs: np.ndarray
    states: np.ndarray
    residual: float


def _fill_diagonal(q: np.ndarray) -> np.ndarray:
    idx = np.arange(q.shape[-1])
    q[..., idx, idx] = 0.0
    q[..., idx, idx] = -q.sum(axis=-1)
    return q


def generator_matrix(model: ChannelModel, y: float, j: int | None = None) -> GeneratorMatrix:
    """Generator of the channel at frozen voltage ``y``.

    With a class index ``j`` only the transitions inside ``E_j`` are kept;
    with ``j=None`` all transitions over ``E`` are included.
    """
    q = model.rate_matrix(float(y))
    states = np.arange(model.n_states) if j is None else model.members(j)
    q = q[np.ix_(states, states)].copy()
    return GeneratorMatrix(_fill_diagonal(q), float(y), states)


def two_scale_generator(model: ChannelModel, y: float, eps: float) -> np.ndarray:
    """Full generator ``(1/eps) B_fast + B_slow`` over ``E``."""
    q = model.rate_matrix(float(y))
    fast = np.equal.outer(np.asarray(model.classes), np.asarray(model.classes))
    q = np.where(fast, q / eps, q)
    return _fill_diagonal(q)


def stationary_vector(q: np.ndarray, check_rank: bool = True) -> np.ndarray:
    """Probability row vector ``mu`` with ``mu q = 0`` (batched over leading axes).

    One balance equation is replaced by the normalisation row and the square
    system is solved directly.
    """
    q = np.asarray(q, dtype=float)
    m = q.shape[-1]
    if check_rank and q.ndim == 2 and m > 1 and np.linalg.matrix_rank(q) != m - 1:
        raise IrreducibilityError("generator null space is not one-dimensional")
    if m == 1:
        return np.ones(q.shape[:-1])
    if m == 2 and not check_rank:
        # exact solution of the 2x2 balance system
        up, down = q[..., 0, 1], q[..., 1, 0]
        tot = up + down
        if np.any(tot <= 0):
            raise IrreducibilityError("two-state generator with no transitions")
        return np.stack([down / tot, up / tot], axis=-1)
    a = np.swapaxes(q, -1, -2).copy()
    a[..., -1, :] = 1.0
    b = np.zeros(q.shape[:-1])
    b[..., -1] = 1.0
    try:
        mu = np.linalg.solve(a, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise IrreducibilityError("singular stationary system") from exc
    return mu


def quasi_stationary(gen: GeneratorMatrix) -> QuasiStationary:
    q = gen.matrix
    mu = stationary_vector(q)
    if np.any(mu < -1e-12):
        raise IrreducibilityError("stationary vector has negative entries")
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    residual = float(np.max(np.abs(mu @ q))) if q.size else 0.0
    return QuasiStationary(mu, gen.states, residual)


def class_stationary(model: ChannelModel, y, j: int) -> np.ndarray:
    """``mu_j(y)`` for an array of voltages; shape ``y.shape + (|E_j|,)``."""
    ya = np.asarray(y, dtype=float)
    members = model.members(j)
    q = model.rate_matrix(ya)[..., members[:, None], members[None, :]].copy()
    return stationary_vector(_fill_diagonal(q), check_rank=False)


def averaged_rate(model: ChannelModel, y, j: int, k: int):
    """``sum_{zeta in E_j} sum_{xi in E_k} alpha_{zeta,xi}(y) mu_j(y)(zeta)``."""
    if j == k:
        raise ValueError("averaged rate needs distinct classes")
    ya = np.asarray(y, dtype=float)
    mj = model.members(j)
    mk = model.members(k)
    mu = class_stationary(model, ya, j)
    q = model.rate_matrix(ya)[..., mj[:, None], mk[None, :]]
    out = np.einsum("...a,...ab->...", mu, q)
    return float(out) if ya.ndim == 0 else out


def aggregated_generator(model: ChannelModel, y: float) -> GeneratorMatrix:
    l = model.n_classes
    q = np.zeros((l, l))
    for j in range(l):
        for k in range(l):
            if j != k:
                q[j, k] = averaged_rate(model, float(y), j, k)
    return GeneratorMatrix(_fill_diagonal(q), float(y), np.arange(l))


def class_current(model: ChannelModel, y, j: int):
    """``sum_{zeta in E_j} c_zeta mu_j(y)(zeta) (v_zeta - y)``."""
    ya = np.asarray(y, dtype=float)
    members = model.members(j)
    mu = class_stationary(model, ya, j)
    c = model.conductances[members]
    v = model.reversals[members]
    return np.sum(mu * c * (v - ya[..., None]), axis=-1)


def two_state_model(
    alpha: RateForm | float,
    beta: RateForm | float,
    conductance: float,
    reversal: float,
    fast: bool = True,
    name: str = "channel",
    v_range: tuple[float, float] = V_RANGE,
) -> ChannelModel:
    """Closed/open channel: ``alpha`` opens, ``beta`` closes, current only when open."""
    a = alpha if isinstance(alpha, RateForm) else RateForm.constant(alpha)
    b = beta if isinstance(beta, RateForm) else RateForm.constant(beta)
    classes = (0, 0) if fast else (0, 1)
    return ChannelModel(
        states=("closed", "open"),
        classes=classes,
        conductances=np.array([0.0, conductance]),
        reversals=np.array([reversal, reversal]),
        rates={(0, 1): a, (1, 0): b},
        name=name,
        v_range=v_range,
    )


def random_generator(rng: np.random.Generator, m: int, low: float = 0.2, high: float = 5.0) -> np.ndarray:
    """Dense irreducible generator with off-diagonal rates uniform in [low, high]."""
    q = rng.uniform(low, high, size=(m, m))
    return _fill_diagonal(q)


def constant_model(q: np.ndarray, classes: Sequence[int], conductances, reversals, name="random") -> ChannelModel:
    """Channel model with voltage-independent rates taken from ``q``."""
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    rates = {(a, b): RateForm.constant(q[a, b]) for a in range(n) for b in range(n) if a != b and q[a, b] > 0}
    return ChannelModel(
        states=tuple(f"s{i}" for i in range(n)),
        classes=tuple(classes),
        conductances=np.asarray(conductances, dtype=float),
        reversals=np.asarray(reversals, dtype=float),
        rates=rates,
        name=name,
    )
