"""Kernels and warped resolvents.

A kernel K warps the classical resolvent into ``(K + gamma M)^{-1} o K``.
Every kernel here is structured: it designates a backward part ``K_base``
for which ``(K_base + gamma A)^{-1}`` is realizable (closed form when the
base is a scaled identity, a contraction inner loop for general strongly
monotone Lipschitz bases), and the forward part B of ``M = A + B`` plus any
skew coupling is folded into the kernel evaluation, so that

    K + gamma * M  =  K_base + gamma * A

holds by construction.  No generic nonlinear inclusion solver is attempted;
the warped resolvent always reduces to classical resolvents plus forward
evaluations.
"""

from __future__ import annotations

import numpy as np

from .errors import BackwardSolveError, ConfigurationError, DimensionMismatchError
from .operators import (
    BlockDiagonalOperator,
    GraphPoint,
    SetValuedOperator,
    SingleValuedOperator,
    saddle_skew_map,
)
from .space import BlockLayout, LinearMap, check_dim, check_finite

INNER_TOL_SCALE = 1e-12
INNER_MAX_ITER = 200


class MDecomposition:
    """A maximally monotone operator split as M = A + B.

    ``set_part`` is the resolvent-backed set-valued part A; ``forward_part``
    is the optional monotone Lipschitz single-valued part B.
    """

    def __init__(self, set_part: SetValuedOperator, forward_part=None):
        if forward_part is not None and forward_part.dim != set_part.dim:
            raise DimensionMismatchError(
                f"forward part dim {forward_part.dim} != set part dim {set_part.dim}")
        if forward_part is not None and not forward_part.monotone:
            raise ConfigurationError("forward part of an M-decomposition must be monotone")
        self.set_part = set_part
        self.forward_part = forward_part
        self.dim = set_part.dim

    def __repr__(self):
        fwd = "none" if self.forward_part is None else self.forward_part.name
        return f"MDecomposition(A={self.set_part.name}, B={fwd})"


def _forward_matches(fold_op, forward_part):
    if forward_part is fold_op:
        return True
    if fold_op is None or forward_part is None:
        return False
    return fold_op.tag is not None and fold_op.tag == forward_part.tag


def solve_base_inclusion(W, gamma, A, v):
    """Solve v in W(p) + gamma * A(p) for the unique p.

    W is a strongly monotone Lipschitz map (None means the identity).  The
    scaled-identity case is closed form; otherwise a contraction inner loop
    with ratio sqrt(1 - (alpha/beta)^2) runs to residual
    ``1e-12 * (1 + |v|)`` within 200 iterations, else raises.
    """
    if W is None:
        return A.resolvent(gamma, v)
    c = W.scale_of_identity
    if c is not None:
        return A.resolvent(gamma / c, v / c)
    if W.strong_monotonicity is None:
        raise ConfigurationError(
            f"backward solve with base {W.name!r} needs a declared strong-monotonicity constant")
    c = W.lipschitz ** 2 / W.strong_monotonicity
    tol = INNER_TOL_SCALE * (1.0 + float(np.linalg.norm(v)))
    u = v / c
    p = A.resolvent(gamma / c, u)
    residual = np.inf
    for _ in range(INNER_MAX_ITER):
        u = (v - W(p) + c * p) / c
        p = A.resolvent(gamma / c, u)
        # u - p in (gamma/c) A p, so c*(u - p) is gamma * (a point of A p)
        residual = float(np.linalg.norm(W(p) + c * (u - p) - v))
        if residual <= tol:
            return p
    raise BackwardSolveError(
        f"backward solve did not reach tolerance {tol:.3e} within "
        f"{INNER_MAX_ITER} iterations (residual {residual:.3e})",
        residual=residual)


class Kernel:
    """Structured kernel: blockwise base ``c_b * W_b`` minus a folded forward part.

    Parameters
    ----------
    dim : int
        Dimension of the kernel's space.
    base : list of (W, c) pairs or None
        Per-block base maps with positive coefficients; W = None means the
        identity.  None disables the backward solve (evaluation-only kernel).
    layout : BlockLayout or None
        Block structure; None means a single whole-space block.
    fold : (gamma, SingleValuedOperator) or None
        Forward part folded into the evaluation: K = K_base - gamma * B.
    alpha, beta : float
        Declared strong-monotonicity and Lipschitz constants of K.
    """

    def __init__(self, dim, base, layout, fold, alpha, beta, name="kernel",
                 eval_override=None):
        if not alpha > 0:
            raise ConfigurationError(f"kernel strong monotonicity must be > 0, got {alpha}")
        if not beta > 0:
            raise ConfigurationError(f"kernel Lipschitz constant must be > 0, got {beta}")
        if layout is not None and layout.total != dim:
            raise DimensionMismatchError("kernel layout does not cover the space")
        if base is not None:
            n_blocks = 1 if layout is None else len(layout.dims)
            if len(base) != n_blocks:
                raise DimensionMismatchError("kernel base must have one (W, c) pair per block")
            for W, c in base:
                if not c > 0:
                    raise ConfigurationError(f"kernel base coefficient must be > 0, got {c}")
        self.dim = int(dim)
        self.base = None if base is None else [(W, float(c)) for W, c in base]
        self.layout = layout
        self.fold = None if fold is None else (float(fold[0]), fold[1])
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.name = name
        self._eval_override = eval_override

    # -- evaluation ---------------------------------------------------------

    def base_eval(self, x):
        if self.base is None:
            raise ConfigurationError(f"kernel {self.name!r} has no structured base")
        if self.layout is None:
            W, c = self.base[0]
            return c * x if W is None else c * W(x)
        parts = self.layout.split(x)
        out = [c * p if W is None else c * W(p)
               for (W, c), p in zip(self.base, parts)]
        return self.layout.join(out)

    def eval(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        check_dim(x, self.dim, f"kernel {self.name} argument")
        if self._eval_override is not None:
            y = np.asarray(self._eval_override(x), dtype=float)
        else:
            y = self.base_eval(x)
            if self.fold is not None:
                g, B = self.fold
                y = y - g * B(x)
        check_finite(y, f"kernel {self.name} output")
        return y

    # -- warped backward solve ----------------------------------------------

    def backward_solve(self, gamma, set_part: SetValuedOperator, v) -> np.ndarray:
        """Solve v in K_base(p) + gamma * A(p)."""
        if self.base is None:
            raise ConfigurationError(
                f"kernel {self.name!r} has no backward solve; it is evaluation-only")
        if not gamma > 0:
            raise ConfigurationError(f"backward solve needs gamma > 0, got {gamma}")
        v = np.asarray(v, dtype=float)
        check_dim(v, self.dim, "backward solve right-hand side")
        if set_part.dim != self.dim:
            raise DimensionMismatchError(
                f"set part dim {set_part.dim} != kernel dim {self.dim}")
        if self.layout is None:
            W, c = self.base[0]
            # c*W(p) + gamma*A(p) = v  <=>  W(p) + (gamma/c)*A(p) = v/c
            return solve_base_inclusion(W, gamma / c, set_part, v / c)
        if not isinstance(set_part, BlockDiagonalOperator) or \
                set_part.layout.dims != self.layout.dims:
            raise ConfigurationError(
                f"kernel {self.name!r} needs a block-diagonal set part matching "
                f"its layout {self.layout.dims}")
        vparts = self.layout.split(v)
        out = []
        for (W, c), A_b, v_b in zip(self.base, set_part.blocks, vparts):
            out.append(solve_base_inclusion(W, gamma / c, A_b, v_b / c))
        return self.layout.join(out)

    def __repr__(self):
        return f"Kernel({self.name}, dim={self.dim}, alpha={self.alpha}, beta={self.beta})"


def _check_pairing(m: MDecomposition, kernel: Kernel, gamma):
    if m.dim != kernel.dim:
        raise DimensionMismatchError(
            f"M has dim {m.dim}, kernel {kernel.name!r} has dim {kernel.dim}")
    if kernel.fold is None:
        if m.forward_part is not None:
            raise ConfigurationError(
                f"kernel {kernel.name!r} folds no forward part but M = A + B has "
                f"B = {m.forward_part.name!r}; build the kernel with that forward "
                "part (e.g. fbf_kernel) so K + gamma*M stays backward-solvable")
        return
    g_fold, B_fold = kernel.fold
    if not _forward_matches(B_fold, m.forward_part):
        got = "none" if m.forward_part is None else repr(m.forward_part.name)
        raise ConfigurationError(
            f"kernel {kernel.name!r} was folded with forward part "
            f"{B_fold.name!r}, but M carries {got}; the pairing must use the "
            "same forward operator")
    if abs(gamma - g_fold) > 1e-12 * max(1.0, abs(g_fold)):
        raise ConfigurationError(
            f"kernel {kernel.name!r} was folded with gamma = {g_fold}, called "
            f"with gamma = {gamma}")


def _warped_pair(m: MDecomposition, kernel: Kernel, gamma, x):
    _check_pairing(m, kernel, gamma)
    w = kernel.eval(x)
    y = kernel.backward_solve(gamma, m.set_part, w)
    y_star = (w - kernel.eval(y)) / gamma
    return y, y_star


def warped_resolvent(m: MDecomposition, kernel: Kernel, gamma, x) -> np.ndarray:
    """Evaluate (K + gamma M)^{-1} (K x).

    Fixed points of this map are exactly the zeros of M; the output y also
    satisfies ``K x - K y  in  gamma * M y``.
    """
    if not gamma > 0:
        raise ConfigurationError(f"warped resolvent needs gamma > 0, got {gamma}")
    x = np.asarray(x, dtype=float)
    _check_pairing(m, kernel, gamma)
    w = kernel.eval(x)
    return kernel.backward_solve(gamma, m.set_part, w)


def graph_point(m: MDecomposition, kernel: Kernel, gamma, x_tilde) -> GraphPoint:
    """Return (y, y*) with y the warped resolvent at x_tilde and y* in M y.

    y* = (K x_tilde - K y) / gamma, which lies in M y by the graph
    characterization of warped resolvents; the pair certifies a half-space
    containing every zero of M.
    """
    if not gamma > 0:
        raise ConfigurationError(f"graph_point needs gamma > 0, got {gamma}")
    x_tilde = np.asarray(x_tilde, dtype=float)
    y, y_star = _warped_pair(m, kernel, gamma, x_tilde)
    return GraphPoint(y=y, y_star=y_star)


# ---------------------------------------------------------------------------
# Kernel constructors
# ---------------------------------------------------------------------------

def identity_kernel(dim) -> Kernel:
    """K = Id: the warped resolvent reduces to the classical resolvent."""
    return Kernel(dim, base=[(None, 1.0)], layout=None, fold=None,
                  alpha=1.0, beta=1.0, name="identity")


def map_kernel(W: SingleValuedOperator) -> Kernel:
    """K = W for a strongly monotone Lipschitz map W (no forward fold)."""
    if W.strong_monotonicity is None:
        raise ConfigurationError(
            f"map_kernel needs a declared strong-monotonicity constant on {W.name!r}")
    return Kernel(W.dim, base=[(W, 1.0)], layout=None, fold=None,
                  alpha=W.strong_monotonicity, beta=W.lipschitz,
                  name=f"map({W.name})")


def fbf_kernel(W: SingleValuedOperator, B, gamma, epsilon) -> Kernel:
    """Forward-backward-forward kernel K = W - gamma * B.

    W must be alpha-strongly monotone, B monotone beta-Lipschitz, and the
    step must satisfy ``gamma * beta <= alpha - epsilon`` for the configured
    ``epsilon in ]0, alpha[``; the kernel is then epsilon-strongly monotone
    and its backward solve realizes ``(W + gamma A)^{-1}``.
    """
    alpha = W.strong_monotonicity
    if alpha is None:
        raise ConfigurationError(
            f"fbf_kernel needs a declared strong-monotonicity constant on W = {W.name!r}")
    if not 0 < epsilon < alpha:
        raise ConfigurationError(
            f"fbf_kernel needs epsilon in ]0, alpha[ = ]0, {alpha}[, got {epsilon}")
    if not gamma > 0:
        raise ConfigurationError(f"fbf_kernel needs gamma > 0, got {gamma}")
    if B is None:
        return Kernel(W.dim, base=[(W, 1.0)], layout=None, fold=None,
                      alpha=epsilon, beta=W.lipschitz, name=f"fbf({W.name})")
    if B.dim != W.dim:
        raise DimensionMismatchError(f"W dim {W.dim} != B dim {B.dim}")
    if not B.monotone:
        raise ConfigurationError("fbf_kernel needs a monotone forward operator B")
    slack = 1e-12 * max(1.0, alpha)
    if gamma * B.lipschitz > alpha - epsilon + slack:
        raise ConfigurationError(
            f"gamma = {gamma} exceeds (alpha - epsilon)/beta = "
            f"{(alpha - epsilon) / B.lipschitz}; the kernel would lose its "
            f"{epsilon}-strong monotonicity")
    return Kernel(W.dim, base=[(W, 1.0)], layout=None, fold=(float(gamma), B),
                  alpha=epsilon, beta=W.lipschitz + gamma * B.lipschitz,
                  name=f"fbf({W.name}-{gamma}*{B.name})")


def primal_dual_kernel(L: LinearMap, gamma, mu) -> Kernel:
    """Kernel (x, v*) -> (x/gamma - L* v*, L x + mu v*) on the stacked space.

    Paired with the saddle operator M(x, v*) = (A x + L* v*) x (-L x + B^{-1} v*),
    the skew parts cancel and the backward solve decouples into the two
    classical resolvents.
    """
    if not gamma > 0 or not mu > 0:
        raise ConfigurationError(f"primal_dual_kernel needs gamma, mu > 0, got {gamma}, {mu}")
    dy, dz = L.domain_dim, L.codomain_dim
    layout = BlockLayout((dy, dz))
    skew = saddle_skew_map(L)
    mat = np.block([
        [np.eye(dy) / gamma, -L.matrix.T],
        [L.matrix, mu * np.eye(dz)],
    ])
    beta = float(np.linalg.norm(mat, 2))
    return Kernel(dy + dz,
                  base=[(None, 1.0 / gamma), (None, float(mu))],
                  layout=layout,
                  fold=(1.0, skew),
                  alpha=min(1.0 / gamma, float(mu)),
                  beta=beta,
                  name="primal_dual")


def saddle_decomposition(A: SetValuedOperator, B: SetValuedOperator,
                         L: LinearMap) -> MDecomposition:
    """M(x, v*) = (A x + L* v*) x (-L x + B^{-1} v*) as an M-decomposition.

    Zeros are the primal-dual pairs of ``0 in A x + L*(B(L x))``; pair with
    ``primal_dual_kernel`` built from the same L.
    """
    dy, dz = L.domain_dim, L.codomain_dim
    if A.dim != dy or B.dim != dz:
        raise DimensionMismatchError(
            f"saddle operator dims: A is {A.dim} (need {dy}), B is {B.dim} (need {dz})")
    layout = BlockLayout((dy, dz))
    set_part = BlockDiagonalOperator([A, B.inverse()], layout, name="saddle_diag")
    return MDecomposition(set_part, saddle_skew_map(L))


def coupled_kernel(problem, F_ops, W_ops, gammas, taus) -> Kernel:
    """Stage-n kernel for the coupled-system solver.

    Maps (x, y, v*) to ``((F_i x_i / gamma_i - C_i x_i)_i - L* v*,
    (W_j y_j / tau_j - D_j y_j)_j + v*, L x - y + v*)``.  Stage constants
    must lie in the admissible ranges; the declared strong-monotonicity
    constant is the instance's vartheta.
    """
    primal, dual = problem.primal, problem.dual
    if len(F_ops) != len(primal) or len(W_ops) != len(dual):
        raise DimensionMismatchError("one stage operator per block is required")
    gammas = [float(g) for g in gammas]
    taus = [float(t) for t in taus]
    if len(gammas) != len(primal) or len(taus) != len(dual):
        raise DimensionMismatchError("one stage constant per block is required")
    for i, (blk, g) in enumerate(zip(primal, gammas)):
        hi = (blk.alpha - blk.epsilon) / blk.mu
        if not (blk.epsilon - 1e-12 <= g <= hi + 1e-12):
            raise ConfigurationError(
                f"primal block {i}: gamma = {g} outside [epsilon_i, (alpha_i - epsilon_i)/mu_i] "
                f"= [{blk.epsilon}, {hi}]")
    for j, (blk, t) in enumerate(zip(dual, taus)):
        hi = (blk.beta - blk.delta) / blk.nu
        if not (blk.delta - 1e-12 <= t <= hi + 1e-12):
            raise ConfigurationError(
                f"dual block {j}: tau = {t} outside [delta_j, (beta_j - delta_j)/nu_j] "
                f"= [{blk.delta}, {hi}]")
    for i, (blk, F) in enumerate(zip(primal, F_ops)):
        if F.dim != blk.dim:
            raise DimensionMismatchError(f"stage operator F_{i} has wrong dimension")
        if F.strong_monotonicity is None:
            raise ConfigurationError(f"stage operator F_{i} needs a declared strong monotonicity")
    for j, (blk, W) in enumerate(zip(dual, W_ops)):
        if W.dim != blk.dim:
            raise DimensionMismatchError(f"stage operator W_{j} has wrong dimension")
        if W.strong_monotonicity is None:
            raise ConfigurationError(f"stage operator W_{j} needs a declared strong monotonicity")

    base = [(F, 1.0 / g) for F, g in zip(F_ops, gammas)]
    base += [(W, 1.0 / t) for W, t in zip(W_ops, taus)]
    base += [(None, 1.0) for _ in dual]

    theta_parts = [blk.epsilon * blk.mu / (blk.alpha - blk.epsilon) for blk in primal]
    theta_parts += [blk.delta * blk.nu / (blk.beta - blk.delta) for blk in dual]
    vartheta = min(min(theta_parts), 1.0)
    eta = max(
        max(blk.chi / blk.epsilon + blk.mu for blk in primal),
        max(blk.kappa / blk.delta + blk.nu for blk in dual),
        1.0,
    )
    beta = eta + problem.skew_norm()
    return Kernel(problem.layout.total,
                  base=base,
                  layout=problem.layout,
                  fold=(1.0, problem.kt_forward()),
                  alpha=vartheta,
                  beta=beta,
                  name="coupled")


def nongradient_cubic_kernel() -> Kernel:
    """Planar non-gradient test kernel (x1, x2) -> (x1^3/2 + x1/5 - x2, x1 + x2).

    Strictly monotone (symmetric Jacobian part >= diag(1/5, 1)) but not a
    gradient and not globally Lipschitz; ships evaluation-only, for warped
    projection experiments driven by an external variational-inequality
    oracle.
    """

    def k2(u):
        x1, x2 = u
        return np.array([0.5 * x1 ** 3 + 0.2 * x1 - x2, x1 + x2])

    return Kernel(2, base=None, layout=None, fold=None,
                  alpha=0.2, beta=np.finfo(float).max,
                  name="nongradient_cubic", eval_override=k2)
