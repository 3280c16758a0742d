"""Solver families built from kernels and half-space geometry.

Four drivers share one pattern: produce a graph point of the target
operator through a warped resolvent, cut with its half-space, project.

* ``solve_weak``      -- relaxed single-cut projections (weak convergence).
* ``solve_strong``    -- Haugazeau two-cut projections (strong convergence
                         to the projection of the starting point).
* ``solve_fbf_memory``-- perturbed forward-backward-forward with memory.
* ``solve_tseng``     -- Tseng's forward-backward-forward method.
* ``solve_coupled``   -- primal-dual solver for coupled inclusion systems,
                         delegated to ``solve_weak`` over the stacked
                         Kuhn-Tucker space (a literal per-block
                         transcription is kept for equivalence checks).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    InfeasibleCutsError,
    SolverCorruptionError,
    StallError,
)
from .fejer import haugazeau_Q
from .kernels import (
    Kernel,
    MDecomposition,
    coupled_kernel,
    solve_base_inclusion,
)
from .operators import (
    BlockDiagonalOperator,
    SetValuedOperator,
    SingleValuedOperator,
    constant_operator,
    identity_map,
    zero_map,
)
from .space import BlockLayout, LinearMap, ProductVector, check_dim, inner, norm, vector


# ---------------------------------------------------------------------------
# Configuration, schedules, policies
# ---------------------------------------------------------------------------

def as_schedule(value, name="schedule"):
    """Normalize a constant or callable n -> value into a callable."""
    if value is None:
        raise ConfigurationError(f"{name} is required")
    if callable(value):
        return value
    v = float(value)
    return lambda n: v


@dataclass
class SolverConfig:
    """Run parameters shared by all solvers.

    ``relaxation`` is the lambda schedule: a constant, a callable
    ``n -> float``, or a callable ``(n, ctx) -> float`` receiving the
    iteration context (used by the Tseng-implied relaxation).
    ``step_size`` is the gamma schedule; None selects a solver-specific
    default safely interior to the admissible range.
    """

    epsilon: float = 0.05
    relaxation: object = 1.0
    step_size: object = None
    max_iter: int = 1000
    tol_residual: float = 1e-8
    tol_step: float = 1e-8
    stall_limit: int = 50

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ConfigurationError(f"epsilon must lie in ]0, 1[, got {self.epsilon}")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.tol_residual > 0 or not self.tol_step > 0:
            raise ConfigurationError("tolerances must be positive")
        if self.stall_limit < 1:
            raise ConfigurationError("stall_limit must be >= 1")


@dataclass(frozen=True)
class IterationContext:
    """Quantities of the current iteration handed to relaxation schedules."""

    n: int
    gamma: float
    epsilon: float
    x: np.ndarray
    x_tilde: np.ndarray
    y: np.ndarray
    y_star: np.ndarray
    theta: float
    sigma: float


def _relaxation_value(relaxation, n, ctx, epsilon):
    if callable(relaxation):
        try:
            lam = relaxation(n, ctx)
        except TypeError:
            lam = relaxation(n)
    else:
        lam = float(relaxation)
    slack = 1e-9 * max(1.0, 2.0 - epsilon)
    if not (epsilon - slack <= lam <= 2.0 - epsilon + slack):
        raise ConfigurationError(
            f"relaxation lambda_{n} = {lam} outside [epsilon, 2 - epsilon] "
            f"= [{epsilon}, {2.0 - epsilon}]")
    return float(lam)


def tseng_relaxation(n, ctx: IterationContext) -> float:
    """The relaxation implied by Tseng's update: gamma |y*|^2 / <x - y, y*>.

    Falls back to epsilon when the denominator is not strictly positive
    (then y* = 0 and the step is idle anyway).  The value provably lies in
    [epsilon, 2 - epsilon]; the clamp only acts when the ratio of two
    noise-floor quantities loses that property to roundoff.
    """
    denom = -ctx.theta
    if denom > 0:
        lam = ctx.gamma * ctx.sigma / denom
        return min(max(lam, ctx.epsilon), 2.0 - ctx.epsilon)
    return ctx.epsilon


class PerturbationPolicy:
    """Choice of the evaluation point x~_n fed to the warped resolvent.

    Variants: ``none`` (x~ = x_n), ``additive`` (x_n + e_n with |e_n| -> 0),
    ``inertial`` (x_n + a_n (x_n - x_{n-1})), and ``memory`` (a sliding
    window of weighted past iterates, rows summing to 1, optionally plus an
    additive error).
    """

    def __init__(self, kind, *, errors=None, alpha=None, weights=None, depth=None):
        self.kind = kind
        self.errors = errors
        self.alpha = alpha
        self.weights = weights
        self.depth = depth

    @classmethod
    def none(cls):
        return cls("none", depth=1)

    @classmethod
    def additive(cls, errors):
        """errors: callable n -> perturbation vector, with |e_n| -> 0."""
        if not callable(errors):
            raise ConfigurationError("additive policy needs a callable error schedule")
        return cls("additive", errors=errors, depth=1)

    @classmethod
    def inertial(cls, alpha):
        """alpha: bounded extrapolation coefficient (constant or callable n -> float)."""
        return cls("inertial", alpha=as_schedule(alpha, "inertial alpha"), depth=2)

    @classmethod
    def memory(cls, weights, errors=None):
        """weights: row (mu_{n,n-m}, ..., mu_{n,n}) or callable n -> row; rows sum to 1."""
        if callable(weights):
            probe = np.asarray(weights(0), dtype=float)
        else:
            probe = np.asarray(weights, dtype=float)
            if probe.ndim != 1 or probe.size == 0:
                raise ConfigurationError("memory weights must be a nonempty row")
        depth = int(probe.size)
        return cls("memory", weights=weights, errors=errors, depth=depth)

    @property
    def history_depth(self):
        return self.depth if self.depth else 1


def apply_policy(policy: PerturbationPolicy, history, n) -> np.ndarray:
    """Evaluate x~_n from the iterate history (oldest to newest, x_n last).

    Entries before iterate 0 are taken as x_0, matching the inertial
    convention x_{-1} := x_0.
    """
    if not len(history):
        raise ConfigurationError("apply_policy needs a nonempty history")
    x = history[-1]
    if policy is None or policy.kind == "none":
        return np.asarray(x, dtype=float).copy()
    if policy.kind == "additive":
        e = vector(policy.errors(n))
        check_dim(e, x.shape[0], "additive perturbation")
        return x + e
    if policy.kind == "inertial":
        prev = history[-2] if len(history) >= 2 else history[0]
        a = float(policy.alpha(n))
        return x + a * (x - prev)
    if policy.kind == "memory":
        row = policy.weights(n) if callable(policy.weights) else policy.weights
        row = np.asarray(row, dtype=float)
        if row.ndim != 1 or row.size == 0:
            raise ConfigurationError("memory weight row must be a nonempty vector")
        if abs(float(row.sum()) - 1.0) > 1e-12:
            raise ConfigurationError(
                f"memory weight row at n = {n} sums to {row.sum()!r}, must be 1 within 1e-12")
        out = np.zeros_like(np.asarray(x, dtype=float))
        m = row.size - 1
        for k, w in enumerate(row):
            idx = len(history) - 1 - (m - k)
            past = history[idx] if idx >= 0 else history[0]
            out = out + w * past
        if policy.errors is not None:
            e = vector(policy.errors(n))
            check_dim(e, x.shape[0], "memory additive perturbation")
            out = out + e
        return out
    raise ConfigurationError(f"unknown perturbation policy kind {policy.kind!r}")


# ---------------------------------------------------------------------------
# Traces and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationRecord:
    """Observable quantities of one iteration."""

    n: int
    x: np.ndarray
    x_tilde: np.ndarray
    y: np.ndarray
    y_star: np.ndarray
    step_norm: float
    residual: float
    theta: float
    sigma: float
    rho: float
    lam: float
    gamma: float
    fejer_gaps: tuple = None

    def __post_init__(self):
        if not (np.isfinite(self.step_norm) and self.step_norm >= 0):
            raise SolverCorruptionError(f"step norm {self.step_norm} is not finite nonnegative")
        if not (np.isfinite(self.residual) and self.residual >= 0):
            raise SolverCorruptionError(f"residual {self.residual} is not finite nonnegative")


@dataclass
class SolveResult:
    """Final point, full trace and an explicit status (never a silent success)."""

    x: object
    trace: list
    status: str
    stop_reason: str
    iterations: int
    kt_residuals: tuple = None

    @property
    def converged(self):
        return self.status == "converged"


def _gaps(x, zeros):
    if not zeros:
        return None
    return tuple(float(np.linalg.norm(x - z)) for z in zeros)


def _history_for(policy):
    depth = policy.history_depth if policy is not None else 1
    return deque(maxlen=max(depth, 1))


def _validate_gamma(gamma, epsilon, n):
    if gamma < epsilon - 1e-12 * max(1.0, epsilon):
        raise ConfigurationError(
            f"gamma_{n} = {gamma} below the floor epsilon = {epsilon}")
    return float(gamma)


def _stall_floor(cfg, x):
    # "Non-small" residual for the stall diagnostic: above the requested
    # tolerance and above the float noise floor of the iterate scale.
    return max(cfg.tol_residual, 1e-12 * (1.0 + float(np.linalg.norm(x))))


# ---------------------------------------------------------------------------
# Weak and strong warped proximal iterations
# ---------------------------------------------------------------------------

def _as_kernel_schedule(kernel_schedule):
    if isinstance(kernel_schedule, Kernel):
        k = kernel_schedule
        return lambda n: k
    if callable(kernel_schedule):
        return kernel_schedule
    raise ConfigurationError("kernel schedule must be a Kernel or a callable n -> Kernel")


def _default_gamma_schedule(cfg, kernel_fn):
    if cfg.step_size is not None:
        return as_schedule(cfg.step_size, "gamma schedule")

    def gamma_of(n):
        k = kernel_fn(n)
        return k.fold[0] if k.fold is not None else 1.0

    return gamma_of


def solve_weak(m: MDecomposition, kernel_schedule, policy, cfg: SolverConfig,
               x0, zeros=()) -> SolveResult:
    """Relaxed warped proximal iteration, weakly convergent to a zero of M.

    Each step evaluates the warped resolvent at the policy point x~_n,
    certifies the graph point (y_n, y_n*), and applies the relaxed
    projection onto its half-space.  Stops when |y*| <= tol_residual and
    |x~ - y| <= tol_step; reaching max_iter returns a warning status.
    """
    policy = policy if policy is not None else PerturbationPolicy.none()
    kernel_fn = _as_kernel_schedule(kernel_schedule)
    gamma_fn = _default_gamma_schedule(cfg, kernel_fn)
    x = vector(x0)
    check_dim(x, m.dim, "starting point")
    history = _history_for(policy)
    history.append(x)
    trace = []
    stall = 0
    status, reason = "max_iter", f"max_iter = {cfg.max_iter} reached without tolerance"
    for n in range(cfg.max_iter):
        gamma = _validate_gamma(gamma_fn(n), cfg.epsilon, n)
        kern = kernel_fn(n)
        x_tilde = apply_policy(policy, history, n)
        w = kern.eval(x_tilde)
        y = kern.backward_solve(gamma, _paired_set_part(m, kern, gamma), w)
        y_star = (w - kern.eval(y)) / gamma
        theta = inner(y - x, y_star)
        sigma = inner(y_star, y_star)
        residual = float(np.sqrt(sigma))
        ctx = IterationContext(n, gamma, cfg.epsilon, x, x_tilde, y, y_star, theta, sigma)
        lam = _relaxation_value(cfg.relaxation, n, ctx, cfg.epsilon)
        if theta < 0:
            rho = lam * theta / sigma
            x_next = x + rho * y_star
        else:
            rho = 0.0
            x_next = x
        trace.append(IterationRecord(
            n=n, x=x, x_tilde=x_tilde, y=y, y_star=y_star,
            step_norm=float(np.linalg.norm(x_next - x)), residual=residual,
            theta=theta, sigma=sigma, rho=rho, lam=lam, gamma=gamma,
            fejer_gaps=_gaps(x, zeros)))
        if residual <= cfg.tol_residual and norm(x_tilde - y) <= cfg.tol_step:
            x = x_next
            status, reason = "converged", f"residual and step tolerances met at n = {n}"
            break
        if theta >= 0 and residual > _stall_floor(cfg, x_tilde):
            stall += 1
            if stall >= cfg.stall_limit:
                raise StallError(
                    f"{stall} consecutive idle cuts with residual {residual:.3e} at "
                    f"n = {n}; check kernel constants and schedules")
        else:
            stall = 0
        x = x_next
        history.append(x)
    return SolveResult(x=x, trace=trace, status=status, stop_reason=reason,
                       iterations=len(trace))


def _paired_set_part(m: MDecomposition, kern: Kernel, gamma):
    # Reuse the kernels-module pairing check, then hand back the set part.
    from .kernels import _check_pairing
    _check_pairing(m, kern, gamma)
    return m.set_part


def solve_strong(m: MDecomposition, kernel_schedule, policy, cfg: SolverConfig,
                 x0, zeros=()) -> SolveResult:
    """Haugazeau-style warped iteration, strongly convergent to proj_Z x0.

    The candidate x_{n+1/2} is the unrelaxed cut projection; the next
    iterate is the closed-form projection of x0 onto the intersection of
    the two bookkeeping half-spaces.  An infeasible intersection aborts
    with the typed error (it cannot occur when zeros exist).
    """
    policy = policy if policy is not None else PerturbationPolicy.none()
    kernel_fn = _as_kernel_schedule(kernel_schedule)
    gamma_fn = _default_gamma_schedule(cfg, kernel_fn)
    x0 = vector(x0)
    check_dim(x0, m.dim, "starting point")
    x = x0
    history = _history_for(policy)
    history.append(x)
    trace = []
    stall = 0
    status, reason = "max_iter", f"max_iter = {cfg.max_iter} reached without tolerance"
    for n in range(cfg.max_iter):
        gamma = _validate_gamma(gamma_fn(n), cfg.epsilon, n)
        kern = kernel_fn(n)
        x_tilde = apply_policy(policy, history, n)
        w = kern.eval(x_tilde)
        y = kern.backward_solve(gamma, _paired_set_part(m, kern, gamma), w)
        y_star = (w - kern.eval(y)) / gamma
        theta = inner(y - x, y_star)
        sigma = inner(y_star, y_star)
        residual = float(np.sqrt(sigma))
        if residual <= cfg.tol_residual and norm(x_tilde - y) <= cfg.tol_step:
            # Certified before the two-cut projection: a noise-scale
            # candidate would make the cut geometry meaningless.
            trace.append(IterationRecord(
                n=n, x=x, x_tilde=x_tilde, y=y, y_star=y_star,
                step_norm=0.0, residual=residual, theta=theta, sigma=sigma,
                rho=0.0, lam=1.0, gamma=gamma, fejer_gaps=_gaps(x, zeros)))
            status, reason = "converged", f"residual and step tolerances met at n = {n}"
            break
        if theta < 0:
            rho = theta / sigma
            x_half = x + rho * y_star
        else:
            rho = 0.0
            x_half = x
        try:
            x_next = haugazeau_Q(x0, x, x_half)
        except InfeasibleCutsError as exc:
            raise InfeasibleCutsError(f"iteration {n}: {exc}") from exc
        trace.append(IterationRecord(
            n=n, x=x, x_tilde=x_tilde, y=y, y_star=y_star,
            step_norm=float(np.linalg.norm(x_next - x)), residual=residual,
            theta=theta, sigma=sigma, rho=rho, lam=1.0, gamma=gamma,
            fejer_gaps=_gaps(x, zeros)))
        if theta >= 0 and residual > _stall_floor(cfg, x_tilde):
            stall += 1
            if stall >= cfg.stall_limit:
                raise StallError(
                    f"{stall} consecutive idle cuts with residual {residual:.3e} at "
                    f"n = {n}; check kernel constants and schedules")
        else:
            stall = 0
        x = x_next
        history.append(x)
    return SolveResult(x=x, trace=trace, status=status, stop_reason=reason,
                       iterations=len(trace))


# ---------------------------------------------------------------------------
# Forward-backward-forward solvers
# ---------------------------------------------------------------------------

def _fbf_regime(alpha, beta, epsilon):
    bound = alpha / (beta + 1.0)
    if not 0 < epsilon < bound:
        raise ConfigurationError(
            f"epsilon = {epsilon} outside ]0, alpha/(beta + 1)[ = ]0, {bound}[")


def _fbf_gamma(gamma, alpha, beta, epsilon, n):
    hi = (alpha - epsilon) / beta if beta > 0 else np.inf
    if not (epsilon - 1e-12 <= gamma <= hi + 1e-12 * max(1.0, hi if np.isfinite(hi) else 1.0)):
        raise ConfigurationError(
            f"gamma_{n} = {gamma} outside [epsilon, (alpha - epsilon)/beta] = "
            f"[{epsilon}, {hi}]")
    return float(gamma)


def solve_fbf_memory(A: SetValuedOperator, B, W_schedule, gamma_schedule,
                     policy, cfg: SolverConfig, x0, zeros=()) -> SolveResult:
    """Perturbed forward-backward-forward iteration with memory.

    Literal transcription: x~ from the policy, one forward evaluation at
    x~, one backward solve through (W_n + gamma_n A)^{-1}, one forward
    correction at y, then the relaxed cut projection.  Equals the weak
    solver run with the matching forward-backward kernels.
    """
    policy = policy if policy is not None else PerturbationPolicy.none()
    if W_schedule is None or isinstance(W_schedule, SingleValuedOperator):
        W_const = W_schedule if W_schedule is not None else identity_map(A.dim)
        W_fn = lambda n: W_const
    else:
        W_fn = W_schedule
    W0 = W_fn(0)
    alpha = W0.strong_monotonicity
    if alpha is None:
        raise ConfigurationError("solve_fbf_memory needs W with declared strong monotonicity")
    beta = B.lipschitz if B is not None else 0.0
    _fbf_regime(alpha, beta, cfg.epsilon)
    if cfg.step_size is not None or gamma_schedule is not None:
        gamma_fn = as_schedule(gamma_schedule if gamma_schedule is not None else cfg.step_size,
                               "gamma schedule")
    else:
        g = max(cfg.epsilon, 0.9 * (alpha - cfg.epsilon) / beta) if beta > 0 else 1.0
        gamma_fn = lambda n: g
    x = vector(x0)
    check_dim(x, A.dim, "starting point")
    history = _history_for(policy)
    history.append(x)
    trace = []
    stall = 0
    status, reason = "max_iter", f"max_iter = {cfg.max_iter} reached without tolerance"
    for n in range(cfg.max_iter):
        W = W_fn(n)
        if W.strong_monotonicity is None:
            raise ConfigurationError(f"W_{n} lacks a declared strong monotonicity")
        gamma = _fbf_gamma(gamma_fn(n), W.strong_monotonicity, beta, cfg.epsilon, n)
        x_tilde = apply_policy(policy, history, n)
        v_star = W(x_tilde) - gamma * B(x_tilde) if B is not None else W(x_tilde)
        y = solve_base_inclusion(W, gamma, A, v_star)
        y_star = (v_star - W(y)) / gamma
        if B is not None:
            y_star = y_star + B(y)
        theta = inner(y - x, y_star)
        sigma = inner(y_star, y_star)
        residual = float(np.sqrt(sigma))
        ctx = IterationContext(n, gamma, cfg.epsilon, x, x_tilde, y, y_star, theta, sigma)
        lam = _relaxation_value(cfg.relaxation, n, ctx, cfg.epsilon)
        if theta < 0:
            rho = lam * theta / sigma
            x_next = x + rho * y_star
        else:
            rho = 0.0
            x_next = x
        trace.append(IterationRecord(
            n=n, x=x, x_tilde=x_tilde, y=y, y_star=y_star,
            step_norm=float(np.linalg.norm(x_next - x)), residual=residual,
            theta=theta, sigma=sigma, rho=rho, lam=lam, gamma=gamma,
            fejer_gaps=_gaps(x, zeros)))
        if residual <= cfg.tol_residual and norm(x_tilde - y) <= cfg.tol_step:
            x = x_next
            status, reason = "converged", f"residual and step tolerances met at n = {n}"
            break
        if theta >= 0 and residual > _stall_floor(cfg, x_tilde):
            stall += 1
            if stall >= cfg.stall_limit:
                raise StallError(
                    f"{stall} consecutive idle cuts with residual {residual:.3e} at n = {n}")
        else:
            stall = 0
        x = x_next
        history.append(x)
    return SolveResult(x=x, trace=trace, status=status, stop_reason=reason,
                       iterations=len(trace))


def solve_tseng(A: SetValuedOperator, B: SingleValuedOperator, gamma_schedule,
                cfg: SolverConfig, x0, zeros=()) -> SolveResult:
    """Tseng's forward-backward-forward iteration, transcribed literally.

    v* = gamma B x; y = J_{gamma A}(x - v*); x+ = y - gamma B y + v*.  The
    trace also exposes the implied relaxation gamma |y*|^2 / <x - y, y*>.
    """
    beta = B.lipschitz
    bound = 1.0 / (beta + 1.0)
    if not 0 < cfg.epsilon < bound:
        raise ConfigurationError(
            f"epsilon = {cfg.epsilon} outside ]0, 1/(beta + 1)[ = ]0, {bound}[")
    if gamma_schedule is not None or cfg.step_size is not None:
        gamma_fn = as_schedule(gamma_schedule if gamma_schedule is not None else cfg.step_size,
                               "gamma schedule")
    else:
        g = max(cfg.epsilon, 0.9 * (1.0 - cfg.epsilon) / beta)
        gamma_fn = lambda n: g
    x = vector(x0)
    check_dim(x, A.dim, "starting point")
    trace = []
    status, reason = "max_iter", f"max_iter = {cfg.max_iter} reached without tolerance"
    for n in range(cfg.max_iter):
        gamma = _fbf_gamma(gamma_fn(n), 1.0, beta, cfg.epsilon, n)
        v_star = gamma * B(x)
        y = A.resolvent(gamma, x - v_star)
        x_next = y - gamma * B(y) + v_star
        y_star = (x - v_star - y) / gamma + B(y)
        theta = inner(y - x, y_star)
        sigma = inner(y_star, y_star)
        residual = float(np.sqrt(sigma))
        ctx = IterationContext(n, gamma, cfg.epsilon, x, x, y, y_star, theta, sigma)
        lam = tseng_relaxation(n, ctx)
        trace.append(IterationRecord(
            n=n, x=x, x_tilde=x, y=y, y_star=y_star,
            step_norm=float(np.linalg.norm(x_next - x)), residual=residual,
            theta=theta, sigma=sigma,
            rho=(lam * theta / sigma) if sigma > 0 else 0.0,
            lam=lam, gamma=gamma, fejer_gaps=_gaps(x, zeros)))
        if residual <= cfg.tol_residual and norm(x - y) <= cfg.tol_step:
            x = x_next
            status, reason = "converged", f"residual and step tolerances met at n = {n}"
            break
        x = x_next
    return SolveResult(x=x, trace=trace, status=status, stop_reason=reason,
                       iterations=len(trace))


# ---------------------------------------------------------------------------
# Coupled systems: Kuhn-Tucker operator and primal-dual solver
# ---------------------------------------------------------------------------

@dataclass
class PrimalBlock:
    """One primal inclusion block: set part A, Lipschitz part C, offset s*.

    ``alpha``/``chi`` are the declared constants of the stage operators
    F_{i,n} (identity by default), ``mu`` the declared Lipschitz constant of
    C, and ``epsilon`` the stage floor with epsilon < alpha/(mu + 1).
    """

    A: SetValuedOperator
    C: SingleValuedOperator = None
    s_star: np.ndarray = None
    alpha: float = 1.0
    chi: float = 1.0
    epsilon: float = None
    mu: float = None

    def __post_init__(self):
        dim = self.A.dim
        if self.C is None:
            self.C = zero_map(dim)
        if self.C.dim != dim:
            raise DimensionMismatchError(f"C has dim {self.C.dim}, A has dim {dim}")
        self.s_star = np.zeros(dim) if self.s_star is None else vector(self.s_star)
        check_dim(self.s_star, dim, "s_star")
        if self.mu is None:
            self.mu = self.C.lipschitz
        if not self.mu > 0:
            raise ConfigurationError("declared mu must be > 0")
        bound = self.alpha / (self.mu + 1.0)
        if self.epsilon is None:
            self.epsilon = 0.5 * bound
        if not 0 < self.epsilon < bound:
            raise ConfigurationError(
                f"primal epsilon = {self.epsilon} outside ]0, alpha/(mu + 1)[ = ]0, {bound}[")

    @property
    def dim(self):
        return self.A.dim


@dataclass
class DualBlock:
    """One dual inclusion block: set part B, Lipschitz part D, offset r."""

    B: SetValuedOperator
    D: SingleValuedOperator = None
    r: np.ndarray = None
    beta: float = 1.0
    kappa: float = 1.0
    delta: float = None
    nu: float = None

    def __post_init__(self):
        dim = self.B.dim
        if self.D is None:
            self.D = zero_map(dim)
        if self.D.dim != dim:
            raise DimensionMismatchError(f"D has dim {self.D.dim}, B has dim {dim}")
        self.r = np.zeros(dim) if self.r is None else vector(self.r)
        check_dim(self.r, dim, "r")
        if self.nu is None:
            self.nu = self.D.lipschitz
        if not self.nu > 0:
            raise ConfigurationError("declared nu must be > 0")
        bound = self.beta / (self.nu + 1.0)
        if self.delta is None:
            self.delta = 0.5 * bound
        if not 0 < self.delta < bound:
            raise ConfigurationError(
                f"dual delta = {self.delta} outside ]0, beta/(nu + 1)[ = ]0, {bound}[")

    @property
    def dim(self):
        return self.B.dim


class CoupledProblem:
    """A system of coupled monotone inclusions with linear couplings.

    ``couplings`` maps (dual index j, primal index i) to the matrix of
    L_{ji}; missing pairs are zero.  The stacked Kuhn-Tucker operator, its
    forward part and the skew norm are built once and cached, so kernels
    and decompositions assembled from the same problem instance share the
    same forward object.
    """

    def __init__(self, primal, dual, couplings):
        self.primal = list(primal)
        self.dual = list(dual)
        if not self.primal or not self.dual:
            raise ConfigurationError("a coupled problem needs at least one primal and one dual block")
        self._L = {}
        for (j, i), mat in dict(couplings).items():
            if not (0 <= i < len(self.primal) and 0 <= j < len(self.dual)):
                raise ConfigurationError(f"coupling index ({j}, {i}) out of range")
            L = mat if isinstance(mat, LinearMap) else LinearMap(mat)
            if L.domain_dim != self.primal[i].dim or L.codomain_dim != self.dual[j].dim:
                raise DimensionMismatchError(
                    f"coupling ({j}, {i}) has shape {L.matrix.shape}, expected "
                    f"({self.dual[j].dim}, {self.primal[i].dim})")
            self._L[(j, i)] = L
        self.primal_layout = BlockLayout(tuple(b.dim for b in self.primal))
        self.dual_layout = BlockLayout(tuple(b.dim for b in self.dual))
        self.layout = BlockLayout(
            self.primal_layout.dims + self.dual_layout.dims + self.dual_layout.dims)
        self._forward = None
        self._set_part = None
        self._skew_norm = None

    def L(self, j, i):
        return self._L.get((j, i))

    def apply_L(self, xs):
        """Per-dual-block sums sum_i L_{ji} x_i."""
        out = []
        for j, blk in enumerate(self.dual):
            acc = np.zeros(blk.dim)
            for i in range(len(self.primal)):
                L = self.L(j, i)
                if L is not None:
                    acc = acc + L(xs[i])
            out.append(acc)
        return out

    def apply_L_adjoint(self, vs):
        """Per-primal-block sums sum_j L_{ji}* v_j."""
        out = []
        for i, blk in enumerate(self.primal):
            acc = np.zeros(blk.dim)
            for j in range(len(self.dual)):
                L = self.L(j, i)
                if L is not None:
                    acc = acc + L.adjoint_apply(vs[j])
            out.append(acc)
        return out

    def split(self, p):
        """Split a stacked point into (xs, ys, vs) block lists."""
        parts = self.layout.split(p)
        nI, nJ = len(self.primal), len(self.dual)
        return parts[:nI], parts[nI:nI + nJ], parts[nI + nJ:]

    def skew_norm(self) -> float:
        """Operator norm of the skew coupling (x,y,v*) -> (L*v*, -v*, -Lx+y)."""
        if self._skew_norm is None:
            ny, nz = self.primal_layout.total, self.dual_layout.total
            S = np.zeros((ny + 2 * nz, ny + 2 * nz))
            yoff = self.primal_layout.offsets
            zoff = self.dual_layout.offsets
            for (j, i), L in self._L.items():
                r0, c0 = yoff[i], ny + nz + zoff[j]
                S[r0:r0 + L.domain_dim, c0:c0 + L.codomain_dim] = L.matrix.T
                r1, c1 = ny + nz + zoff[j], yoff[i]
                S[r1:r1 + L.codomain_dim, c1:c1 + L.domain_dim] = -L.matrix
            for j in range(len(self.dual)):
                d = self.dual[j].dim
                a = ny + zoff[j]
                b = ny + nz + zoff[j]
                S[a:a + d, b:b + d] = -np.eye(d)
                S[b:b + d, a:a + d] = np.eye(d)
            self._skew_norm = float(np.linalg.norm(S, 2)) if S.size else 0.0
        return self._skew_norm

    def kt_forward(self) -> SingleValuedOperator:
        """Forward part of the stacked Kuhn-Tucker operator (cached instance).

        (x, y, v*) -> ((C_i x_i)_i + L* v*, (D_j y_j)_j - v*, -L x + y).
        """
        if self._forward is None:
            problem = self

            def fn(u):
                xs, ys, vs = problem.split(u)
                lt = problem.apply_L_adjoint(vs)
                lx = problem.apply_L(xs)
                out = [blk.C(x) + lt_i for blk, x, lt_i in zip(problem.primal, xs, lt)]
                out += [blk.D(y) - v for blk, y, v in zip(problem.dual, ys, vs)]
                out += [-lx_j + y for lx_j, y in zip(lx, ys)]
                return problem.layout.join(out)

            diag = max(
                max(blk.mu for blk in self.primal),
                max(blk.nu for blk in self.dual),
            )
            self._forward = SingleValuedOperator(
                self.layout.total, fn, lipschitz=diag + self.skew_norm(),
                monotone=True, name="kt_forward")
        return self._forward

    def kt_set_part(self) -> BlockDiagonalOperator:
        """Diagonal set part: (A_i - s*_i)_i x (B_j)_j x ({r_j})_j (cached)."""
        if self._set_part is None:
            blocks = [blk.A.add_constant(-blk.s_star) for blk in self.primal]
            blocks += [blk.B for blk in self.dual]
            blocks += [constant_operator(blk.r) for blk in self.dual]
            self._set_part = BlockDiagonalOperator(blocks, self.layout, name="kt_diag")
        return self._set_part

    def decomposition(self) -> MDecomposition:
        """The stacked Kuhn-Tucker operator as an M-decomposition."""
        m = MDecomposition(self.kt_set_part(), self.kt_forward())
        m.problem = self
        return m


@dataclass(frozen=True)
class KuhnTuckerPoint:
    """A point of the stacked primal-dual space: (x blocks, y blocks, v* blocks)."""

    x: ProductVector
    y: ProductVector
    v_star: ProductVector

    @classmethod
    def from_flat(cls, p, problem: CoupledProblem) -> "KuhnTuckerPoint":
        xs, ys, vs = problem.split(np.asarray(p, dtype=float))
        return cls(x=ProductVector(xs), y=ProductVector(ys), v_star=ProductVector(vs))

    @classmethod
    def lift(cls, problem: CoupledProblem, x_blocks, v_blocks) -> "KuhnTuckerPoint":
        """Lift a primal-dual pair to (x, Lx - r, v*)."""
        xs = [vector(x) for x in x_blocks]
        vs = [vector(v) for v in v_blocks]
        lx = problem.apply_L(xs)
        ys = [lx_j - blk.r for lx_j, blk in zip(lx, problem.dual)]
        return cls(x=ProductVector(xs), y=ProductVector(ys), v_star=ProductVector(vs))

    @classmethod
    def zero(cls, problem: CoupledProblem) -> "KuhnTuckerPoint":
        return cls.from_flat(np.zeros(problem.layout.total), problem)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.x.flatten(), self.y.flatten(), self.v_star.flatten()])


def build_kt_operator(A: SetValuedOperator, B: SetValuedOperator, L,
                      s_star=None, r=None) -> MDecomposition:
    """The Kuhn-Tucker operator of a single coupled pair, as M = diag + skew.

    M(x, y, v*) = (-s* + A x + L* v*) x (B y - v*) x {r - L x + y}; its zeros
    (x, y, v*) give Kuhn-Tucker pairs (x, v*) of the primal problem
    ``s* in A x + L*(B(L x - r))``.  The returned decomposition carries the
    synthesized one-block problem as ``.problem`` for kernel pairing.
    """
    L = L if isinstance(L, LinearMap) else LinearMap(L)
    problem = CoupledProblem(
        [PrimalBlock(A=A, s_star=s_star)],
        [DualBlock(B=B, r=r)],
        {(0, 0): L})
    return problem.decomposition()


def kt_residuals(problem: CoupledProblem, point: KuhnTuckerPoint):
    """Blockwise resolvent certificates of the Kuhn-Tucker inclusions.

    Primal i: |x_i - J_{A_i}(x_i + s*_i - sum_j L_{ji}* v_j - C_i x_i)|.
    Dual j, at u_j = sum_i L_{ji} x_i - r_j:
    |u_j - J_{B_j}(u_j + v*_j - D_j u_j)|.
    """
    xs = list(point.x.blocks)
    vs = list(point.v_star.blocks)
    lt = problem.apply_L_adjoint(vs)
    lx = problem.apply_L(xs)
    out = []
    for blk, x, lt_i in zip(problem.primal, xs, lt):
        w = x + (blk.s_star - lt_i - blk.C(x))
        out.append(float(np.linalg.norm(x - blk.A.resolvent(1.0, w))))
    for blk, lx_j, v in zip(problem.dual, lx, vs):
        u = lx_j - blk.r
        w = u + v - blk.D(u)
        out.append(float(np.linalg.norm(u - blk.B.resolvent(1.0, w))))
    return tuple(out)


def _coupled_schedules(problem, F_schedule, W_schedule, gamma_schedules, tau_schedules):
    if F_schedule is None:
        for i, blk in enumerate(problem.primal):
            if blk.alpha != 1.0 or blk.chi != 1.0:
                raise ConfigurationError(
                    f"primal block {i} declares (alpha, chi) = ({blk.alpha}, {blk.chi}) "
                    "but no stage operators F were supplied")
        F_fn = lambda n, ops=[identity_map(blk.dim) for blk in problem.primal]: ops
    else:
        F_fn = F_schedule if callable(F_schedule) else (lambda n, ops=list(F_schedule): ops)
    if W_schedule is None:
        for j, blk in enumerate(problem.dual):
            if blk.beta != 1.0 or blk.kappa != 1.0:
                raise ConfigurationError(
                    f"dual block {j} declares (beta, kappa) = ({blk.beta}, {blk.kappa}) "
                    "but no stage operators W were supplied")
        W_fn = lambda n, ops=[identity_map(blk.dim) for blk in problem.dual]: ops
    else:
        W_fn = W_schedule if callable(W_schedule) else (lambda n, ops=list(W_schedule): ops)

    def norm_stage(schedules, blocks, kind):
        if schedules is None:
            vals = []
            for blk in blocks:
                if kind == "gamma":
                    hi = (blk.alpha - blk.epsilon) / blk.mu
                    vals.append(max(blk.epsilon, 0.9 * hi))
                else:
                    hi = (blk.beta - blk.delta) / blk.nu
                    vals.append(max(blk.delta, 0.9 * hi))
            return lambda n: vals
        if callable(schedules):
            return schedules
        fixed = [float(s) for s in np.atleast_1d(np.asarray(schedules, dtype=float))]
        if len(fixed) == 1:
            fixed = fixed * len(blocks)
        if len(fixed) != len(blocks):
            raise ConfigurationError(f"need one {kind} per block, got {len(fixed)}")
        return lambda n: fixed

    gamma_fn = norm_stage(gamma_schedules, problem.primal, "gamma")
    tau_fn = norm_stage(tau_schedules, problem.dual, "tau")
    return F_fn, W_fn, gamma_fn, tau_fn


def solve_coupled(problem: CoupledProblem, cfg: SolverConfig, start=None,
                  policy=None, F_schedule=None, W_schedule=None,
                  gamma_schedules=None, tau_schedules=None,
                  mode="delegated", zeros=()) -> SolveResult:
    """Primal-dual solver for a coupled inclusion system.

    The shipping path ("delegated") runs the generic weak solver over the
    stacked Kuhn-Tucker space with the coupled kernels; "literal" is the
    per-block transcription kept for the equivalence check.  The result
    carries blockwise Kuhn-Tucker residual certificates of the final point.
    """
    F_fn, W_fn, gamma_fn, tau_fn = _coupled_schedules(
        problem, F_schedule, W_schedule, gamma_schedules, tau_schedules)
    start = KuhnTuckerPoint.zero(problem) if start is None else start
    p0 = start.flatten()
    flat_zeros = [z.flatten() if isinstance(z, KuhnTuckerPoint) else np.asarray(z, dtype=float)
                  for z in zeros]
    if mode == "delegated":
        m = problem.decomposition()

        def kernel_fn(n):
            return coupled_kernel(problem, F_fn(n), W_fn(n), gamma_fn(n), tau_fn(n))

        inner_cfg = SolverConfig(
            epsilon=cfg.epsilon, relaxation=cfg.relaxation, step_size=1.0,
            max_iter=cfg.max_iter, tol_residual=cfg.tol_residual,
            tol_step=cfg.tol_step, stall_limit=cfg.stall_limit)
        res = solve_weak(m, kernel_fn, policy, inner_cfg, p0, zeros=flat_zeros)
        point = KuhnTuckerPoint.from_flat(res.x, problem)
        return SolveResult(
            x=point, trace=res.trace, status=res.status, stop_reason=res.stop_reason,
            iterations=res.iterations, kt_residuals=kt_residuals(problem, point))
    if mode != "literal":
        raise ConfigurationError(f"unknown solve_coupled mode {mode!r}")
    return _solve_coupled_literal(problem, cfg, p0, policy, F_fn, W_fn, gamma_fn,
                                  tau_fn, flat_zeros)


def _solve_coupled_literal(problem, cfg, p0, policy, F_fn, W_fn, gamma_fn,
                           tau_fn, zeros):
    policy = policy if policy is not None else PerturbationPolicy.none()
    p = vector(p0)
    check_dim(p, problem.layout.total, "starting point")
    history = _history_for(policy)
    history.append(p)
    trace = []
    stall = 0
    status, reason = "max_iter", f"max_iter = {cfg.max_iter} reached without tolerance"
    for n in range(cfg.max_iter):
        F_ops, W_ops = F_fn(n), W_fn(n)
        gammas = [float(g) for g in gamma_fn(n)]
        taus = [float(t) for t in tau_fn(n)]
        for i, (blk, g) in enumerate(zip(problem.primal, gammas)):
            hi = (blk.alpha - blk.epsilon) / blk.mu
            if not (blk.epsilon - 1e-12 <= g <= hi + 1e-12):
                raise ConfigurationError(
                    f"primal block {i}: gamma_{n} = {g} outside [{blk.epsilon}, {hi}]")
        for j, (blk, t) in enumerate(zip(problem.dual, taus)):
            hi = (blk.beta - blk.delta) / blk.nu
            if not (blk.delta - 1e-12 <= t <= hi + 1e-12):
                raise ConfigurationError(
                    f"dual block {j}: tau_{n} = {t} outside [{blk.delta}, {hi}]")
        p_tilde = apply_policy(policy, history, n)
        xs, ys, vs = problem.split(p)
        txs, tys, tvs = problem.split(p_tilde)
        lt_tilde = problem.apply_L_adjoint(tvs)
        a_blocks, o_star = [], []
        for blk, F, g, tx, lt_i in zip(problem.primal, F_ops, gammas, txs, lt_tilde):
            l_star = F(tx) - g * blk.C(tx) - g * lt_i
            a = solve_base_inclusion(F, g, blk.A, l_star + g * blk.s_star)
            o_star.append((l_star - F(a)) / g + blk.C(a))
            a_blocks.append(a)
        b_blocks, f_star, c_blocks = [], [], []
        lx_tilde = problem.apply_L(txs)
        for blk, W, t, ty, tv, lx_j in zip(problem.dual, W_ops, taus, tys, tvs, lx_tilde):
            t_star = W(ty) - t * blk.D(ty) + t * tv
            b = solve_base_inclusion(W, t, blk.B, t_star)
            f_star.append((t_star - W(b)) / t + blk.D(b))
            b_blocks.append(b)
            c_blocks.append(lx_j - ty + tv - blk.r)
        lt_c = problem.apply_L_adjoint(c_blocks)
        a_star = [o + lt for o, lt in zip(o_star, lt_c)]
        la = problem.apply_L(a_blocks)
        b_star = [f - c for f, c in zip(f_star, c_blocks)]
        c_star = [blk.r + b - la_j for blk, b, la_j in zip(problem.dual, b_blocks, la)]
        sigma = sum(inner(a, a) for a in a_star)
        sigma += sum(inner(b, b) for b in b_star)
        sigma += sum(inner(c, c) for c in c_star)
        theta = sum(inner(a - x, a_s) for a, x, a_s in zip(a_blocks, xs, a_star))
        theta += sum(inner(b - y, b_s) for b, y, b_s in zip(b_blocks, ys, b_star))
        theta += sum(inner(c - v, c_s) for c, v, c_s in zip(c_blocks, vs, c_star))
        q = problem.layout.join(a_blocks + b_blocks + c_blocks)
        q_star = problem.layout.join(a_star + b_star + c_star)
        residual = float(np.sqrt(sigma))
        ctx = IterationContext(n, 1.0, cfg.epsilon, p, p_tilde, q, q_star, theta, sigma)
        lam = _relaxation_value(cfg.relaxation, n, ctx, cfg.epsilon)
        if theta < 0:
            if sigma == 0.0:
                raise SolverCorruptionError(
                    f"sigma = 0 with theta = {theta} < 0 at n = {n}; impossible by construction")
            rho = lam * theta / sigma
            p_next = problem.layout.join(
                [x + rho * a_s for x, a_s in zip(xs, a_star)]
                + [y + rho * b_s for y, b_s in zip(ys, b_star)]
                + [v + rho * c_s for v, c_s in zip(vs, c_star)])
        else:
            rho = 0.0
            p_next = p
        trace.append(IterationRecord(
            n=n, x=p, x_tilde=p_tilde, y=q, y_star=q_star,
            step_norm=float(np.linalg.norm(p_next - p)), residual=residual,
            theta=theta, sigma=sigma, rho=rho, lam=lam, gamma=1.0,
            fejer_gaps=_gaps(p, zeros)))
        if residual <= cfg.tol_residual and norm(p_tilde - q) <= cfg.tol_step:
            p = p_next
            status, reason = "converged", f"residual and step tolerances met at n = {n}"
            break
        if theta >= 0 and residual > _stall_floor(cfg, p_tilde):
            stall += 1
            if stall >= cfg.stall_limit:
                raise StallError(
                    f"{stall} consecutive idle cuts with residual {residual:.3e} at n = {n}")
        else:
            stall = 0
        p = p_next
        history.append(p)
    point = KuhnTuckerPoint.from_flat(p, problem)
    return SolveResult(x=point, trace=trace, status=status, stop_reason=reason,
                       iterations=len(trace), kt_residuals=kt_residuals(problem, point))
