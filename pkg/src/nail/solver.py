"""Block-coordinate descent for the joint embedding objective.

One outer iteration: freeze kernel bandwidths, update F and every U^v
(labels last), then refresh the view weights alpha from the per-view
reconstruction errors and the pair weights beta from the pairwise HSIC
values.

Two block updates are available. ``method="mm"`` (default) majorizes each
block by a reweighted quadratic and solves the resulting small nonnegative
QPs exactly; ``method="pg"`` takes projected-gradient steps with a
Barzilai-Borwein step size and Armijo backtracking. Both are monotone.
"""

from __future__ import annotations

import logging
from functools import lru_cache
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import _backend, _fallback, losses
from .kernels import KernelSpec, center, gram, weighted_hsic_sum
from .losses import LossConfig, ObjectiveBreakdown

log = logging.getLogger(__name__)

VARIANTS = ("NAIL", "NAIL-L", "NAIL-1", "NAIL-2", "NAIL-3")

_EPS_DECAY = 0.9  # per-iteration decay of the L2,1 smoothing constant
_CURV_FLOOR = 1e-6  # lower clip on the local label curvature, relative to its bound


class SolverDivergence(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 1.0
    mu: float = 1.0
    r_k: float = 0.5
    kernel: KernelSpec = KernelSpec("gaussian", "auto")
    variant: str = "NAIL"
    label_weights_signed: bool = True
    max_outer: int = 500
    tol: float = 1e-5
    inner_steps: int = 5
    armijo_shrink: float = 0.5
    armijo_slope: float = 1e-4
    armijo_max: int = 30
    seed: int = 0
    loss: LossConfig = LossConfig()
    continuation: bool = True
    method: str = "mm"

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("lambda and mu must be nonnegative")
        if not 0.0 < self.r_k <= 1.0:
            raise ValueError("r_k must lie in (0, 1]")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.method not in ("pg", "mm"):
            raise ValueError("method must be 'pg' or 'mm'")
        if self.max_outer < 1 or self.inner_steps < 1 or self.armijo_max < 1 or self.tol <= 0:
            raise ValueError("iteration bounds and tolerance must be positive")
        if not 0.0 < self.armijo_shrink < 1.0 or not 0.0 < self.armijo_slope < 1.0:
            raise ValueError("line-search constants must lie in (0, 1)")

    def latent_dim(self, dims) -> int:
        return max(1, int(np.floor(self.r_k * min(dims))))

    # variant switches -------------------------------------------------
    @property
    def effective_kernel(self) -> KernelSpec:
        # the ablations are built on the linear-kernel model
        return self.kernel if self.variant == "NAIL" else KernelSpec("linear")

    @property
    def effective_mu(self) -> float:
        return 0.0 if self.variant == "NAIL-2" else self.mu

    @property
    def frobenius(self) -> bool:
        return self.variant == "NAIL-1"

    @property
    def adaptive_weights(self) -> bool:
        return self.variant != "NAIL-3"


@dataclass(frozen=True, eq=False)
class ModelState:
    F: np.ndarray
    U: list
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def k(self) -> int:
        return self.F.shape[1]


@dataclass
class FitTrace:
    initial: ObjectiveBreakdown = None
    objectives: list = field(default_factory=list)
    substeps: list = field(default_factory=list)
    alpha_history: list = field(default_factory=list)
    beta_history: list = field(default_factory=list)
    line_search_failures: int = 0
    smoothing: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def totals(self) -> list:
        return [o.total for o in self.objectives]


# ---------------------------------------------------------------- weights


def update_alpha(e, s: float = 0.5) -> np.ndarray:
    """View weights ``alpha_v ~ e_v^(1/(s-1))`` normalised to the simplex.

    This is the minimiser of ``sum_v e_v alpha_v^(2-s)`` over the simplex, so
    views with larger reconstruction error get smaller weight.
    """
    e = np.maximum(np.asarray(e, dtype=float), 1e-12)
    logw = np.log(e) / (s - 1.0)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def update_beta(h) -> np.ndarray:
    """Row-wise L2 normalisation of the pairwise HSIC matrix with zero diagonal.

    Rows whose off-diagonal norm is below 1e-12 fall back to 1/sqrt(V-1).
    """
    h = np.array(h, dtype=float)
    V = h.shape[0]
    np.fill_diagonal(h, 0.0)
    beta = np.zeros_like(h)
    off = ~np.eye(V, dtype=bool)
    for v in range(V):
        nrm = np.linalg.norm(h[v][off[v]])
        if nrm < 1e-12:
            beta[v][off[v]] = 1.0 / np.sqrt(V - 1)
        else:
            beta[v][off[v]] = h[v][off[v]] / nrm
    return beta


def uniform_beta(V: int) -> np.ndarray:
    return update_beta(np.zeros((V, V)))


# ------------------------------------------------------------ initial state


def init_state(ds, cfg: SolverConfig) -> ModelState:
    rng = np.random.default_rng(cfg.seed)
    k = cfg.latent_dim(ds.dims)
    means = [np.abs(x[o]).mean() if o.any() else 1.0 for x, o in zip(ds.views, ds.feature_masks)]
    pooled = np.concatenate([np.abs(x[o]) for x, o in zip(ds.views, ds.feature_masks)])
    c_f = np.sqrt(max(pooled.mean(), 1e-12) / k)
    F = rng.uniform(0.0, c_f, size=(ds.n, k))
    U = [rng.uniform(0.0, np.sqrt(max(mv, 1e-12) / k), size=(k, d)) for mv, d in zip(means, ds.dims)]
    U.append(rng.uniform(0.0, np.sqrt(0.5 / k), size=(k, ds.l)))
    return ModelState(F=F, U=U, alpha=np.full(ds.m, 1.0 / ds.m), beta=uniform_beta(ds.m + 1))


# ------------------------------------------------------------ block steps


@lru_cache(maxsize=None)
def _logit_curvature(gamma: float, a: float, squared: bool) -> float:
    """Upper bound on the second derivative of one label-loss entry wrt its logit."""
    z = np.linspace(-40.0, 40.0, 160001)
    ones = np.ones((1, z.size), bool)
    best = 0.0
    for y in (0.0, 1.0):
        if squared:
            p = expit(z)
            d1 = 2.0 * (p - y) * p * (1.0 - p)
        else:
            d1 = _fallback.focal_terms(z[None, :], np.full((1, z.size), y), ones, gamma, a, 1e-12)[1][0]
        best = max(best, float(np.max(np.diff(d1) / np.diff(z))))
    return 1.05 * best + 1e-12


def _weighted_outer(W, A):
    """``out[i] = sum_j W[i, j] A[j] A[j]^T`` as one matrix product."""
    k = A.shape[1]
    return (W @ (A[:, :, None] * A[:, None, :]).reshape(A.shape[0], k * k)).reshape(W.shape[0], k, k)


class _Blocks:
    """Objective slices and gradients for one outer iteration (weights and bandwidths frozen)."""

    def __init__(self, ds, cfg: SolverConfig, kernels):
        self.ds, self.cfg, self.kernels = ds, cfg, kernels
        self.lam, self.mu = cfg.lam, cfg.effective_mu
        self.lc = cfg.loss
        self._centered = {}
        # rounding scale of X - F U, per view and row
        self._xnorm = [np.sqrt(np.einsum("ij,ij->i", X, X)) for X in ds.views]

    def rounding(self, state, v=None):
        """Absolute objective noise from forming residuals: per row for F, a scalar for U[v]."""
        if v is None:
            return 1e-14 * sum(state.alpha[w] ** self.lc.s * self._xnorm[w] for w in range(self.ds.m))
        if v < self.ds.m:
            return 1e-14 * state.alpha[v] ** self.lc.s * float(self._xnorm[v].sum())
        return 0.0

    def _recon(self, v, F, Uv, weight, want_grad):
        """Per-row weighted reconstruction values and the gradient wrt ``F @ Uv``."""
        X, O = self.ds.views[v], self.ds.feature_masks[v]
        R = X - F @ Uv
        if self.cfg.frobenius:
            RO = np.where(O, R, 0.0)
            rows = np.einsum("ij,ij->i", RO, RO)
            G = 2.0 * RO
        else:
            _, rows, G = _backend.l21_rows(R, O, self.lc.eps_21)
        return weight * rows, (-weight * G if want_grad else None)

    def _label(self, F, Ul, want_grad):
        if not self.lam:
            return 0.0, None, None
        Y, O = self.ds.labels, self.ds.label_mask
        if self.cfg.frobenius:
            rows = losses.label_sq_rows(F, Ul, Y, O)
            g = losses.label_sq_grads(F, Ul, Y, O) if want_grad else (None, None)
        else:
            rows = losses.label_term_rows(F, Ul, Y, O, self.lc)
            g = losses.label_term_grads(F, Ul, Y, O, self.lc) if want_grad else (None, None)
        gF = None if g[0] is None else self.lam * g[0]
        gU = None if g[1] is None else self.lam * g[1]
        return self.lam * rows, gF, gU

    def _hsic_slice(self, state, v, Uv, want_grad):
        if not self.mu or Uv.shape[0] < 2:
            return 0.0, (np.zeros_like(Uv) if want_grad else None)
        if v not in self._centered:
            S = np.zeros((Uv.shape[0], Uv.shape[0]))
            for w, Uw in enumerate(state.U):
                c = self.mu * (state.beta[v, w] + state.beta[w, v])
                if w != v and c != 0.0:
                    S += c * center(gram(Uw, self.kernels[w]))
            self._centered[v] = S
        return weighted_hsic_sum(Uv, self.kernels[v], self._centered[v], want_grad)

    def hsic_curvature(self, state, v, Uv) -> float:
        """Upper bound on the Hessian norm of the HSIC slice of ``U[v]``.

        With S the weighted sum of the other centered Grams and c = (k-1)^-2:
        2c max_i sum_j |S_ij| for the linear kernel, twice that over sigma^2
        for the gaussian one (|d^2/dx^2 exp(-x^2 / 2 sigma^2)| <= 1/sigma^2).
        """
        if not self.mu or Uv.shape[0] < 2:
            return 0.0
        self._hsic_slice(state, v, Uv, False)
        k = Uv.shape[0]
        bound = 2.0 * float(np.abs(self._centered[v]).sum(axis=1).max()) / (k - 1) ** 2
        spec = self.kernels[v]
        if spec.kind == "gaussian":
            bound *= 2.0 / spec.frozen_for(Uv).bandwidth ** 2
        return bound

    def f_slice(self, state, F, want_grad=True):
        """Per-row objective values for F (the F objective separates over rows)."""
        m = self.ds.m
        val, grad = np.zeros(F.shape[0]), np.zeros_like(F) if want_grad else None
        for v in range(m):
            wv = state.alpha[v] ** self.lc.s
            r, G = self._recon(v, F, state.U[v], wv, want_grad)
            val += r
            if want_grad:
                grad += G @ state.U[v].T
        lv, gF, _ = self._label(F, state.U[m], want_grad)
        val += lv
        if want_grad and gF is not None:
            grad += gF
        return val, grad

    def u_slice(self, state, v, Uv, want_grad=True):
        m = self.ds.m
        if v < m:
            wv = state.alpha[v] ** self.lc.s
            rows, G = self._recon(v, state.F, Uv, wv, want_grad)
            grad = state.F.T @ G if want_grad else None
        else:
            rows, _, grad = self._label(state.F, Uv, want_grad)
            if want_grad and grad is None:
                grad = np.zeros_like(Uv)
        hv, hg = self._hsic_slice(state, v, Uv, want_grad)
        if want_grad:
            grad = grad + hg
        return float(np.sum(rows)) + hv, grad

    # quadratic majorizers ------------------------------------------------
    def _recon_weights(self, state, v, F, Uv):
        """Per-row curvature of the reconstruction majorizer for view ``v``."""
        wv = state.alpha[v] ** self.lc.s
        if self.cfg.frobenius:
            return np.full(F.shape[0], 2.0 * wv)
        R = self.ds.views[v] - F @ Uv
        _, den, _ = _backend.l21_rows(R, self.ds.feature_masks[v], self.lc.eps_21)
        return wv / den

    def _label_dz(self, Z):
        Y, O = self.ds.labels, self.ds.label_mask
        if self.cfg.frobenius:
            p = expit(Z)
            return np.where(O, 2.0 * (p - Y) * p * (1.0 - p), 0.0)
        return _backend.focal_terms(Z, Y, O, self.lc.gamma, self.lc.a, self.lc.eps_p)[1]

    def _label_model(self, F, Ul):
        """``(W, T)`` so the label model's quadratic part is sum W*(z^2/2) - T*z.

        W is the local logit curvature, clipped to [1e-6 L, L] where L bounds
        it globally; the Armijo test on the true slice guards the step.
        """
        O = self.ds.label_mask
        Z = F @ Ul
        dZ = self._label_dz(Z)
        L = _logit_curvature(self.lc.gamma, self.lc.a, self.cfg.frobenius)
        h = 1e-4
        curv = (self._label_dz(Z + h) - self._label_dz(Z - h)) / (2.0 * h)
        W = self.lam * O * np.clip(curv, _CURV_FLOOR * L, L)
        return W, np.where(O, W * Z - self.lam * dZ, 0.0)

    def f_quadratic(self, state, F):
        """Row-wise (G_i, h_i) of the majorizer ``0.5 f'G f - h'f`` at the current F."""
        n, k = F.shape
        G = np.zeros((n, k, k))
        h = np.zeros((n, k))
        for v in range(self.ds.m):
            Uv = state.U[v]
            W = self._recon_weights(state, v, F, Uv)[:, None] * self.ds.feature_masks[v]
            G += _weighted_outer(W, Uv.T)
            h += (W * self.ds.views[v]) @ Uv.T
        if self.lam:
            Ul = state.U[self.ds.m]
            W, T = self._label_model(F, Ul)
            G += _weighted_outer(W, Ul.T)
            h += T @ Ul.T
        return G, h

    def u_quadratic(self, state, v, Uv, grad):
        """Column-wise (G_j, h_j) for U[v]; the HSIC part enters through its gradient."""
        F = state.F
        k, d = Uv.shape
        if v < self.ds.m:
            W = self._recon_weights(state, v, F, Uv)[:, None] * self.ds.feature_masks[v]
            G = _weighted_outer(W.T, F)
            h = (W * self.ds.views[v]).T @ F
        elif self.lam:
            W, T = self._label_model(F, Uv)
            G = _weighted_outer(W.T, F)
            h = T.T @ F
        else:
            G, h = np.zeros((d, k, k)), np.zeros((d, k))
        if self.mu and k >= 2:
            # grad = model gradient + HSIC gradient; the model part is G u - h at u = Uv
            model = np.einsum("jab,bj->ja", G, Uv) - h
            h = h - (grad.T - model)
        return G, h

    def full(self, state) -> float:
        return losses.objective(state, self.ds, self.lc, self.lam, self.mu, self.kernels,
                                smooth=True, frobenius=self.cfg.frobenius).total


def _prox_solve(G, h, x0, rho, nonneg):
    """Minimise each quadratic plus ``(rho/2)||x - x0||^2`` (and a tiny relative ridge)."""
    k = G.shape[-1]
    scale = np.einsum("bii->b", G) / k
    r = np.broadcast_to(rho, scale.shape) + 1e-10 * scale + 1e-300
    Gp = G + r[:, None, None] * np.eye(k)
    return _backend.nnqp_batch(Gp, h + r[:, None] * x0, nonneg)


def _ok(fn, fx, gd, slope):
    return (fn <= fx + slope * gd) | (fn <= fx)


def _stalled(fn, fx, atol=0.0):
    # no decrease beyond rounding: keep the old iterate, not a line-search failure
    return fn <= fx + 1e-13 * np.abs(fx) + atol + 1e-300


def _mm_update_F(state, ds, cfg, blocks, rho=None, _stats=None) -> ModelState:
    """``cfg.inner_steps`` majorize-minimize steps on F, one small QP per row.

    Rows are independent, so each row keeps its own proximal weight and its
    own Armijo test; rows that exhaust the backtracks keep their old value.
    """
    F = state.F
    n = F.shape[0]
    rho = np.zeros(n) if rho is None else np.broadcast_to(rho, (n,)).copy()
    fails = 0
    atol = blocks.rounding(state)
    for _ in range(cfg.inner_steps):
        fx, g = blocks.f_slice(state, F, True)
        G, h = blocks.f_quadratic(state, F)
        base = np.maximum(1e-6 * np.einsum("bii->b", G) / F.shape[1], 1e-12)
        Fn = F.copy()
        pending = np.ones(n, bool)
        for _ in range(cfg.armijo_max):
            idx = np.flatnonzero(pending)
            Fn[idx] = _prox_solve(G[idx], h[idx], F[idx], rho[idx], True)
            fn, _ = blocks.f_slice(state, Fn, False)
            ok = _ok(fn, fx, np.einsum("ij,ij->i", g, Fn - F), cfg.armijo_slope)
            stalled = pending & ~ok & _stalled(fn, fx, atol)
            Fn[stalled] = F[stalled]
            pending &= ~(ok | stalled)
            if not pending.any():
                break
            Fn[pending] = F[pending]
            rho[pending] = np.maximum(rho[pending], base[pending]) / cfg.armijo_shrink
        else:
            fails += int(pending.sum())
            Fn[pending] = F[pending]
            rho[pending] = 0.0
        rho[~pending] *= cfg.armijo_shrink
        F = Fn
    if _stats is not None:
        _stats["F"] = rho
        _stats["fails"] = _stats.get("fails", 0) + fails
    return replace(state, F=F)


def _mm_update_U(state, ds, cfg, blocks, v, rho=None, _stats=None) -> ModelState:
    """Majorize-minimize steps on ``U[v]`` (0-based; ``v == ds.m`` is the label block).

    Reconstruction and label terms are majorized by quadratics; the HSIC slice
    is linearized with a proximal weight of at least its curvature bound, so
    rows the reconstruction does not pin down (a zero column of F) cannot be
    thrown off by the HSIC gradient. Backtracking on the true slice covers the
    rest.
    """
    rho = 0.0 if rho is None else rho
    floor = blocks.hsic_curvature(state, v, state.U[v])
    nonneg = not (v == ds.m and cfg.label_weights_signed)
    Uv = state.U[v]
    fails = 0
    atol = blocks.rounding(state, v)
    for _ in range(cfg.inner_steps):
        fx, g = blocks.u_slice(state, v, Uv, True)
        G, h = blocks.u_quadratic(state, v, Uv, g)
        diag = float(np.einsum("bii->", G)) / (G.shape[0] * G.shape[1])
        base = max(1e-6 * diag, 1e-3 * np.linalg.norm(g) / (np.linalg.norm(Uv) + 1e-12), 1e-12)
        accepted = False
        for _ in range(cfg.armijo_max):
            Un = _prox_solve(G, h, Uv.T, max(rho, floor), nonneg).T
            fn, _ = blocks.u_slice(state, v, Un, False)
            if _ok(fn, fx, float(np.sum(g * (Un - Uv))), cfg.armijo_slope):
                accepted = True
                break
            if _stalled(fn, fx, atol):
                Un = Uv
                accepted = True
                break
            rho = max(rho, base) / cfg.armijo_shrink
        if not accepted:
            fails += 1
            rho = 0.0
            break
        rho *= cfg.armijo_shrink
        Uv = Un
    if _stats is not None:
        _stats[v] = rho
        _stats["fails"] = _stats.get("fails", 0) + fails
    U = list(state.U)
    U[v] = Uv
    return replace(state, U=U)


def _projected_descent(x, fun, project, cfg: SolverConfig, step: float, steps: int):
    """Projected gradient with Barzilai-Borwein trial steps and Armijo backtracking.

    Returns ``(x, step to try next time, number of exhausted line searches)``.
    """
    fails = 0
    fx, g = fun(x, True)
    for _ in range(steps):
        t, accepted, moved = step, False, False
        for _ in range(cfg.armijo_max):
            xn = project(x - t * g)
            d = xn - x
            if not np.any(d):
                break
            moved = True
            fn, _ = fun(xn, False)
            if fn <= fx + cfg.armijo_slope * float(np.sum(g * d)):
                accepted = True
                break
            t *= cfg.armijo_shrink
        if not accepted:
            if moved:
                fails += 1
                step = t
            break
        fx, gn = fun(xn, True)
        y = gn - g
        sy = float(np.sum(d * y))
        step = float(np.sum(d * d)) / sy if sy > 0 else t / cfg.armijo_shrink
        step = min(max(step, 1e-12), 1e12)
        x, g = xn, gn
    return x, step, fails


def _rowwise_descent(x, fun, project, cfg: SolverConfig, step, steps: int):
    """Row-separable :func:`_projected_descent`: each row has its own step and Armijo test."""
    n = x.shape[0]
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,)).copy()
    fails = 0
    fx, g = fun(x, True)
    for _ in range(steps):
        t = step.copy()
        pending = np.ones(n, bool)
        accepted = np.zeros(n, bool)
        xn = x.copy()
        for _ in range(cfg.armijo_max):
            trial = project(x - t[:, None] * g)
            pending &= np.any(trial != x, axis=1)
            if not pending.any():
                break
            xn[pending] = trial[pending]
            fn, _ = fun(xn, False)
            ok = pending & (fn <= fx + cfg.armijo_slope * np.einsum("ij,ij->i", g, xn - x))
            accepted |= ok
            pending &= ~ok
            xn[pending] = x[pending]
            if not pending.any():
                break
            t[pending] *= cfg.armijo_shrink
        fails += int(pending.sum())
        step[pending] = t[pending]
        if not accepted.any():
            break
        fx, gn = fun(xn, True)
        d = xn - x
        sy = np.einsum("ij,ij->i", d, gn - g)
        bb = np.divide(np.einsum("ij,ij->i", d, d), sy, out=t / cfg.armijo_shrink, where=sy > 0)
        step[accepted] = np.clip(bb[accepted], 1e-12, 1e12)
        x, g = xn, gn
    return x, step, fails


def _nonneg(a):
    return np.maximum(a, 0.0)


def _pg_update_F(state, ds, cfg, blocks, step=None, _stats=None) -> ModelState:
    F, step, fails = _rowwise_descent(
        state.F, lambda F, g: blocks.f_slice(state, F, g), _nonneg, cfg,
        1.0 if step is None else step, cfg.inner_steps)
    if _stats is not None:
        _stats["F"] = step
        _stats["fails"] = _stats.get("fails", 0) + fails
    return replace(state, F=F)


def _pg_update_U(state, ds, cfg, blocks, v, step=None, _stats=None) -> ModelState:
    project = (lambda a: a) if v == ds.m and cfg.label_weights_signed else _nonneg
    Uv, step, fails = _projected_descent(
        state.U[v], lambda U, g: blocks.u_slice(state, v, U, g), project, cfg,
        1.0 if step is None else step, cfg.inner_steps)
    if _stats is not None:
        _stats[v] = step
        _stats["fails"] = _stats.get("fails", 0) + fails
    U = list(state.U)
    U[v] = Uv
    return replace(state, U=U)


def update_F(state, ds, cfg: SolverConfig, kernels=None, step=None, _stats=None) -> ModelState:
    """``cfg.inner_steps`` descent steps on F with every U, alpha and beta fixed.

    ``method="pg"`` takes projected-gradient steps; ``method="mm"`` minimises a
    quadratic majorizer per row. Either way each row passes its own Armijo test,
    so the smoothed objective never increases. ``step`` carries the step size
    (pg) or proximal weight (mm) between calls.
    """
    blocks = _Blocks(ds, cfg, kernels or _resolve_kernels(state, cfg))
    fn = _mm_update_F if cfg.method == "mm" else _pg_update_F
    return fn(state, ds, cfg, blocks, step, _stats)


def update_U(state, ds, cfg: SolverConfig, v: int, kernels=None, step=None, _stats=None) -> ModelState:
    """Descent steps on ``U[v]`` (0-based; ``v == ds.m`` is the label block).

    The label block is left unconstrained when ``cfg.label_weights_signed``;
    every other block is projected onto the nonnegative orthant. With
    ``lam == 0`` the label block is not updated.
    """
    if not 0 <= v <= ds.m:
        raise IndexError(f"block index {v} out of range 0..{ds.m}")
    blocks = _Blocks(ds, cfg, kernels or _resolve_kernels(state, cfg))
    if v == ds.m and not blocks.lam:
        # without a label term the block only sees HSIC, which it can drive
        # to zero by spreading its rows without bound; keep it fixed instead
        return state
    fn = _mm_update_U if cfg.method == "mm" else _pg_update_U
    return fn(state, ds, cfg, blocks, v, step, _stats)


def _resolve_kernels(state, cfg: SolverConfig):
    spec = cfg.effective_kernel
    if state.k < 2:
        return [spec] * len(state.U)
    return [spec.frozen_for(U) for U in state.U]


def reconstruction_errors(state, ds, cfg: SolverConfig) -> np.ndarray:
    err = losses.masked_sq if cfg.frobenius else losses.masked_l21
    return np.array([err(x - state.F @ u, o) for x, u, o in zip(ds.views, state.U, ds.feature_masks)])


# --------------------------------------------------------------------- fit


def _smoothing(state, ds, cfg: SolverConfig, previous: float) -> float:
    """L2,1 smoothing constant for the next outer iteration.

    Starts at the median residual row norm and decays geometrically to the
    floor ``cfg.loss.eps_21``. Without continuation it is the floor.
    """
    floor = cfg.loss.eps_21
    if not cfg.continuation or cfg.frobenius:
        return floor
    if np.isfinite(previous):
        return max(floor, _EPS_DECAY * previous)
    norms = []
    for x, u, o in zip(ds.views, state.U, ds.feature_masks):
        rows = o.any(axis=1)
        norms.append(_backend.l21_rows(x - state.F @ u, o, 0.0)[0][rows])
    return max(floor, float(np.median(np.concatenate(norms))))


def fit(ds, cfg: SolverConfig, state: ModelState | None = None, record_substeps: bool = True):
    """Run block-coordinate descent until the relative objective change drops below ``cfg.tol``.

    Returns ``(state, FitTrace)``. Raises :class:`SolverDivergence` on a
    non-finite objective.
    """
    state = init_state(ds, cfg) if state is None else state
    mu = cfg.effective_mu
    trace = FitTrace()
    kernels = _resolve_kernels(state, cfg)
    trace.initial = losses.objective(state, ds, cfg.loss, cfg.lam, mu, kernels, frobenius=cfg.frobenius)
    prev = trace.initial.total
    steps = {}
    eps = np.inf
    for it in range(cfg.max_outer):
        kernels = _resolve_kernels(state, cfg)
        eps = _smoothing(state, ds, cfg, eps)
        icfg = replace(cfg, loss=replace(cfg.loss, eps_21=eps))
        trace.smoothing.append(eps)
        blocks = _Blocks(ds, icfg, kernels)
        sub = [blocks.full(state)] if record_substeps else []
        state = update_F(state, ds, icfg, kernels, steps.get("F"), steps)
        if record_substeps:
            sub.append(blocks.full(state))
        for v in range(ds.m + 1):
            state = update_U(state, ds, icfg, v, kernels, steps.get(v), steps)
            if record_substeps:
                sub.append(blocks.full(state))
        if cfg.adaptive_weights:
            alpha = update_alpha(reconstruction_errors(state, ds, cfg), cfg.loss.s)
            beta = update_beta(losses.pairwise_hsic(state.U, kernels)) if mu else state.beta
            state = replace(state, alpha=alpha, beta=beta)
        obj = losses.objective(state, ds, cfg.loss, cfg.lam, mu, kernels, frobenius=cfg.frobenius)
        trace.objectives.append(obj)
        trace.substeps.append(sub)
        trace.alpha_history.append(state.alpha.copy())
        trace.beta_history.append(state.beta.copy())
        trace.iterations = it + 1
        if not np.isfinite(obj.total):
            trace.line_search_failures = steps.get("fails", 0)
            raise SolverDivergence(f"objective became non-finite at iteration {it + 1}", trace)
        # the floor keeps exact fits (objective ~ 0) from chasing rounding noise
        if abs(obj.total - prev) < cfg.tol * max(prev, 1e-9 * trace.initial.total, 1e-300):
            trace.converged = True
            break
        prev = obj.total
    trace.line_search_failures = steps.get("fails", 0)
    log.debug("fit: %d iterations, converged=%s, objective=%.6g",
              trace.iterations, trace.converged, trace.objectives[-1].total)
    return state, trace


def predict(state: ModelState, threshold: float = 0.5):
    """Return ``(scores, labels)`` with ``scores = sigmoid(F U_label)`` and labels ``scores > threshold``."""
    scores = expit(state.F @ state.U[-1])
    return scores, (scores > threshold).astype(np.int8)
