"""Batch front end: problem files in, iteration traces and summaries out.

Problem file grammar (line oriented; ``#`` starts a comment):

    file       := line*
    line       := 'begin' NAME | 'end' | KEY '=' VALUE | blank
    VALUE      := integer | float | word | vector | matrix
    vector     := '[' number (',' number)* ']'
    matrix     := '[' vector (',' vector)* ']'

Blocks nest; repeated block names are allowed (``primal``, ``dual``,
``coupling``, ``solution``).  See the README for the full key reference.

Exit codes: 0 tolerance met, 1 usage/parse/validation error, 2 max-iter
reached without tolerance, 3 infeasible half-space cuts, 4 numerical
failure (inner solve, stall, corruption, non-finite state).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import algorithms as alg
from . import kernels as kern
from . import operators as ops
from .errors import (
    BackwardSolveError,
    ConfigurationError,
    InfeasibleCutsError,
    NonFiniteEntryError,
    ProblemFormatError,
    SolverCorruptionError,
    StallError,
    UnknownOperatorError,
    WarpsplitError,
)
from .space import LinearMap

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MAX_ITER = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


# ---------------------------------------------------------------------------
# Problem file parsing
# ---------------------------------------------------------------------------

class Section:
    """One block of a problem file: ordered entries plus ordered child blocks."""

    def __init__(self, name="root"):
        self.name = name
        self.entries = {}
        self.children = []

    def child(self, name):
        found = [s for n, s in self.children if n == name]
        return found[0] if found else None

    def all_children(self, name):
        return [s for n, s in self.children if n == name]

    def get(self, key, default=None):
        return self.entries.get(key, default)

    def require(self, key):
        if key not in self.entries:
            raise ProblemFormatError(f"block {self.name!r} is missing required key {key!r}")
        return self.entries[key]

    def canonical(self):
        return (
            self.name,
            tuple((k, _canon_value(v)) for k, v in self.entries.items()),
            tuple(c.canonical() for _, c in self.children),
        )


def _canon_value(v):
    if isinstance(v, list):
        return tuple(_canon_value(x) for x in v)
    return v


_WORD_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-+")


def _parse_value(text, lineno, col0):
    s = text.strip()
    offset = col0 + (len(text) - len(text.lstrip()))
    if not s:
        raise ProblemFormatError("empty value", lineno, offset)
    if s.startswith("["):
        value, end = _parse_bracket(s, 0, lineno, offset)
        if s[end:].strip():
            raise ProblemFormatError(
                f"trailing text after value: {s[end:].strip()!r}", lineno, offset + end)
        return value
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    if all(c in _WORD_CHARS for c in s):
        return s
    raise ProblemFormatError(f"cannot parse value {s!r}", lineno, offset)


def _parse_bracket(s, i, lineno, col0):
    """Parse a [...] list starting at index i; returns (value, index past ']')."""
    assert s[i] == "["
    items = []
    i += 1
    while True:
        while i < len(s) and s[i] in " \t":
            i += 1
        if i >= len(s):
            raise ProblemFormatError("unterminated '['", lineno, col0 + i)
        if s[i] == "]":
            return items, i + 1
        if s[i] == "[":
            sub, i = _parse_bracket(s, i, lineno, col0)
        else:
            j = i
            while j < len(s) and s[j] not in ",]":
                j += 1
            tok = s[i:j].strip()
            try:
                sub = int(tok)
            except ValueError:
                try:
                    sub = float(tok)
                except ValueError:
                    raise ProblemFormatError(
                        f"expected a number, got {tok!r}", lineno, col0 + i) from None
            i = j
        items.append(sub)
        while i < len(s) and s[i] in " \t":
            i += 1
        if i < len(s) and s[i] == ",":
            i += 1
        elif i < len(s) and s[i] == "]":
            return items, i + 1
        elif i >= len(s):
            raise ProblemFormatError("unterminated '['", lineno, col0 + i)


def parse_text(text) -> Section:
    """Parse problem-file text into the root section (syntax only)."""
    root = Section("root")
    stack = [root]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0]
        s = line.strip()
        if not s:
            continue
        indent = len(line) - len(line.lstrip())
        if s == "end":
            if len(stack) == 1:
                raise ProblemFormatError("'end' without matching 'begin'", lineno, indent + 1)
            stack.pop()
            continue
        if s.startswith("begin"):
            parts = s.split()
            if len(parts) != 2 or not parts[1].replace("_", "").isalnum():
                raise ProblemFormatError(
                    "expected 'begin <name>'", lineno, indent + 1)
            child = Section(parts[1])
            stack[-1].children.append((parts[1], child))
            stack.append(child)
            continue
        if "=" not in s:
            raise ProblemFormatError(
                f"expected 'key = value', 'begin <name>' or 'end', got {s!r}",
                lineno, indent + 1)
        key, _, val = line.partition("=")
        k = key.strip()
        if not k or not all(c in _WORD_CHARS for c in k):
            raise ProblemFormatError(f"bad key {key.strip()!r}", lineno, indent + 1)
        if k in stack[-1].entries:
            raise ProblemFormatError(f"duplicate key {k!r} in block {stack[-1].name!r}", lineno, indent + 1)
        stack[-1].entries[k] = _parse_value(val, lineno, len(key) + 2)
    if len(stack) != 1:
        raise ProblemFormatError(f"unclosed block {stack[-1].name!r} at end of file")
    return root


def _fmt_value(v):
    if isinstance(v, list):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_section(section: Section, depth=0) -> str:
    pad = "  " * depth
    out = []
    for k, v in section.entries.items():
        out.append(f"{pad}{k} = {_fmt_value(v)}")
    for name, child in section.children:
        out.append(f"{pad}begin {name}")
        out.append(serialize_section(child, depth + 1))
        out.append(f"{pad}end")
    return "\n".join(x for x in out if x != "")


class ProblemFile:
    """A fully validated in-memory problem (operators built, regimes checked)."""

    def __init__(self, root: Section, path="<memory>"):
        self.root = root
        self.path = path
        self.kind = root.get("kind")
        if self.kind not in ("inclusion", "coupled"):
            raise ProblemFormatError(
                f"kind must be 'inclusion' or 'coupled', got {self.kind!r}")
        if self.kind == "inclusion":
            self._assemble_inclusion()
        else:
            self._assemble_coupled()

    # -- shared helpers ------------------------------------------------------

    def _solver_section(self):
        return self.root.child("solver") or Section("solver")

    def _config(self, solver, overrides):
        def pick(key, default):
            ov = overrides.get(key)
            if ov is not None:
                return ov
            v = solver.get(key)
            return default if v is None else v

        lam = pick("relax", solver.get("lambda", 1.0))
        lam_block = solver.child("lambda")
        if lam_block is not None and overrides.get("relax") is None:
            lam = _schedule_from_block(lam_block)
        gamma = overrides.get("gamma", solver.get("gamma"))
        gamma_block = solver.child("gamma")
        if gamma_block is not None and overrides.get("gamma") is None:
            gamma = _schedule_from_block(gamma_block)
        cfg = alg.SolverConfig(
            epsilon=float(solver.get("epsilon", 0.05)),
            relaxation=lam,
            step_size=gamma,
            max_iter=int(pick("max_iter", 1000)),
            tol_residual=float(pick("tol_residual", 1e-8)),
            tol_step=float(pick("tol_step", 1e-8)),
        )
        return cfg

    def _policy(self):
        sec = self.root.child("policy")
        if sec is None:
            return alg.PerturbationPolicy.none()
        kind = sec.get("kind", "none")
        if kind == "none":
            return alg.PerturbationPolicy.none()
        if kind == "inertial":
            return alg.PerturbationPolicy.inertial(float(sec.require("alpha")))
        if kind == "memory":
            weights = [float(w) for w in sec.require("weights")]
            return alg.PerturbationPolicy.memory(weights)
        if kind == "additive":
            scale = float(sec.require("scale"))
            rate = float(sec.require("rate"))
            if not 0 <= rate < 1:
                raise ConfigurationError(
                    f"additive policy rate must lie in [0, 1[ so that |e_n| -> 0, got {rate}")
            dim = self.dim
            e = np.ones(dim) / np.sqrt(dim)

            def errors(n):
                return scale * (rate ** n) * e

            return alg.PerturbationPolicy.additive(errors)
        raise ConfigurationError(f"unknown policy kind {kind!r}")

    # -- inclusion problems ---------------------------------------------------

    def _assemble_inclusion(self):
        root = self.root
        x0 = root.get("x0")
        dim = root.get("dim")
        if x0 is None and dim is None:
            raise ProblemFormatError("inclusion problem needs 'x0' or 'dim'")
        self.dim = int(dim) if dim is not None else len(x0)
        self.x0 = np.zeros(self.dim) if x0 is None else np.asarray(
            [float(v) for v in x0], dtype=float)
        if self.x0.shape != (self.dim,):
            raise ProblemFormatError(
                f"x0 has length {self.x0.shape[0]}, dim says {self.dim}")
        a_sec = root.child("A")
        if a_sec is None:
            raise ProblemFormatError("inclusion problem needs a 'begin A' block")
        self.A = ops.make_set_valued(a_sec.require("name"), _op_params(a_sec), self.dim)
        b_sec = root.child("B")
        self.B = None
        if b_sec is not None:
            self.B = ops.make_single_valued(b_sec.require("name"), _op_params(b_sec), self.dim)
        k_sec = root.child("kernel")
        self.kernel_name = k_sec.get("name", "identity") if k_sec is not None else "identity"
        if self.kernel_name not in ("identity", "fbf"):
            raise ConfigurationError(
                f"unknown kernel {self.kernel_name!r}; known: identity, fbf")
        self.kernel_epsilon = float(k_sec.get("epsilon", 0.0)) if k_sec is not None else 0.0
        solver = self._solver_section()
        self.variant = solver.get("variant", "weak")
        if self.variant not in ("weak", "strong", "fbf", "tseng"):
            raise ConfigurationError(
                f"unknown solver variant {self.variant!r}; known: weak, strong, fbf, tseng")
        self.zeros = []
        for sol in root.all_children("solution"):
            z = sol.require("x")
            self.zeros.append(np.asarray([float(v) for v in z], dtype=float))
        # Validate constants and regimes now, before any iteration runs.
        self._validate_inclusion(self._config(solver, {}))

    def _inclusion_gamma(self, cfg):
        if cfg.step_size is not None:
            return alg.as_schedule(cfg.step_size, "gamma schedule")
        if self.B is not None and self.kernel_name == "fbf" or self.variant in ("fbf", "tseng"):
            beta = self.B.lipschitz if self.B is not None else 0.0
            if beta > 0:
                g = max(cfg.epsilon, 0.9 * (1.0 - cfg.epsilon) / beta)
            else:
                g = 1.0
            return lambda n: g
        return lambda n: 1.0

    def _kernel_schedule(self, cfg):
        if self.kernel_name == "identity":
            if self.B is not None and self.variant in ("weak", "strong"):
                raise ConfigurationError(
                    "an identity kernel cannot absorb the forward part B; "
                    "use 'kernel fbf' so that K = Id - gamma B stays backward-solvable")
            k = kern.identity_kernel(self.dim)
            return lambda n: k
        eps = self.kernel_epsilon if self.kernel_epsilon > 0 else cfg.epsilon
        gamma_fn = self._inclusion_gamma(cfg)
        W = ops.identity_map(self.dim)

        def schedule(n):
            return kern.fbf_kernel(W, self.B, gamma_fn(n), eps)

        return schedule

    def _validate_inclusion(self, cfg):
        gamma_fn = self._inclusion_gamma(cfg)
        g0 = float(gamma_fn(0))
        if self.variant in ("weak", "strong"):
            schedule = self._kernel_schedule(cfg)
            schedule(0)  # constructs the kernel; regime violations raise here
            if g0 < cfg.epsilon:
                raise ConfigurationError(
                    f"gamma = {g0} below the floor epsilon = {cfg.epsilon}")
        elif self.variant == "tseng":
            if self.B is None:
                raise ConfigurationError("variant tseng needs a forward operator B")
            beta = self.B.lipschitz
            if not 0 < cfg.epsilon < 1.0 / (beta + 1.0):
                raise ConfigurationError(
                    f"epsilon = {cfg.epsilon} outside ]0, 1/(beta + 1)[ = "
                    f"]0, {1.0 / (beta + 1.0)}[")
            hi = (1.0 - cfg.epsilon) / beta
            if not (cfg.epsilon - 1e-12 <= g0 <= hi + 1e-12):
                raise ConfigurationError(
                    f"gamma = {g0} exceeds (1 - epsilon)/beta = {hi}")
        elif self.variant == "fbf":
            beta = self.B.lipschitz if self.B is not None else 0.0
            if not 0 < cfg.epsilon < 1.0 / (beta + 1.0):
                raise ConfigurationError(
                    f"epsilon = {cfg.epsilon} outside ]0, alpha/(beta + 1)[ = "
                    f"]0, {1.0 / (beta + 1.0)}[ (W = Id so alpha = 1)")
            if beta > 0:
                hi = (1.0 - cfg.epsilon) / beta
                if not (cfg.epsilon - 1e-12 <= g0 <= hi + 1e-12):
                    raise ConfigurationError(
                        f"gamma = {g0} exceeds (alpha - epsilon)/beta = {hi}")

    def _run_inclusion(self, overrides):
        solver = self._solver_section()
        cfg = self._config(solver, overrides)
        variant = overrides.get("algo") or self.variant
        policy = self._policy()
        gamma_fn = self._inclusion_gamma(cfg)
        zeros = self.zeros
        if variant in ("weak", "strong"):
            m = kern.MDecomposition(self.A, self.B if self.kernel_name == "fbf" else None)
            schedule = self._kernel_schedule(cfg)
            run_cfg = _cfg_with(cfg, step_size=gamma_fn)
            fn = alg.solve_weak if variant == "weak" else alg.solve_strong
            return fn(m, schedule, policy, run_cfg, self.x0, zeros=zeros)
        if variant == "tseng":
            return alg.solve_tseng(self.A, self.B, gamma_fn, cfg, self.x0, zeros=zeros)
        if variant == "fbf":
            return alg.solve_fbf_memory(
                self.A, self.B, None, gamma_fn, policy, cfg, self.x0, zeros=zeros)
        raise ConfigurationError(f"unknown algorithm {variant!r}")

    # -- coupled problems ------------------------------------------------------

    def _assemble_coupled(self):
        root = self.root
        primal, dual = [], []
        for sec in root.all_children("primal"):
            dim = int(sec.require("dim"))
            a_sec = sec.child("A")
            if a_sec is None:
                raise ProblemFormatError("primal block needs a 'begin A' block")
            A = ops.make_set_valued(a_sec.require("name"), _op_params(a_sec), dim)
            C = None
            c_sec = sec.child("C")
            if c_sec is not None:
                C = ops.make_single_valued(c_sec.require("name"), _op_params(c_sec), dim)
            primal.append(alg.PrimalBlock(
                A=A, C=C,
                s_star=_vec_or_none(sec.get("s_star")),
                alpha=float(sec.get("alpha", 1.0)),
                chi=float(sec.get("chi", 1.0)),
                epsilon=_float_or_none(sec.get("epsilon")),
                mu=_float_or_none(sec.get("mu"))))
        for sec in root.all_children("dual"):
            dim = int(sec.require("dim"))
            b_sec = sec.child("B")
            if b_sec is None:
                raise ProblemFormatError("dual block needs a 'begin B' block")
            B = ops.make_set_valued(b_sec.require("name"), _op_params(b_sec), dim)
            D = None
            d_sec = sec.child("D")
            if d_sec is not None:
                D = ops.make_single_valued(d_sec.require("name"), _op_params(d_sec), dim)
            dual.append(alg.DualBlock(
                B=B, D=D,
                r=_vec_or_none(sec.get("r")),
                beta=float(sec.get("beta", 1.0)),
                kappa=float(sec.get("kappa", 1.0)),
                delta=_float_or_none(sec.get("delta")),
                nu=_float_or_none(sec.get("nu"))))
        if not primal or not dual:
            raise ProblemFormatError("coupled problem needs 'primal' and 'dual' blocks")
        couplings = {}
        for sec in root.all_children("coupling"):
            i = int(sec.require("primal")) - 1
            j = int(sec.require("dual")) - 1
            couplings[(j, i)] = LinearMap(_matrix(sec.require("matrix")))
        self.problem = alg.CoupledProblem(primal, dual, couplings)
        self.gamma_stage = [
            _float_or_none(sec.get("gamma")) for sec in root.all_children("primal")]
        self.tau_stage = [
            _float_or_none(sec.get("tau")) for sec in root.all_children("dual")]
        self.dim = self.problem.layout.total
        start = root.child("start")
        if start is None:
            self.start = alg.KuhnTuckerPoint.zero(self.problem)
        else:
            sx = _stacked(start.require("x"), self.problem.primal_layout)
            sv = _stacked(start.require("v_star"), self.problem.dual_layout)
            if start.get("y") is not None:
                sy = _stacked(start.require("y"), self.problem.dual_layout)
                self.start = alg.KuhnTuckerPoint.from_flat(
                    np.concatenate([np.concatenate(sx), np.concatenate(sy),
                                    np.concatenate(sv)]), self.problem)
            else:
                self.start = alg.KuhnTuckerPoint.lift(self.problem, sx, sv)
        self.zeros = []
        for sol in root.all_children("solution"):
            zx = _stacked(sol.require("x"), self.problem.primal_layout)
            zv = _stacked(sol.require("v_star"), self.problem.dual_layout)
            self.zeros.append(alg.KuhnTuckerPoint.lift(self.problem, zx, zv))
        solver = self._solver_section()
        self.variant = solver.get("variant", "coupled")
        if self.variant != "coupled":
            raise ConfigurationError("a coupled problem runs with variant 'coupled'")
        # Stage-constant regime checks happen now, via one kernel construction.
        kern.coupled_kernel(
            self.problem,
            [ops.identity_map(b.dim) for b in self.problem.primal],
            [ops.identity_map(b.dim) for b in self.problem.dual],
            self._stage_gammas(), self._stage_taus())

    def _stage_gammas(self):
        out = []
        for blk, g in zip(self.problem.primal, self.gamma_stage):
            hi = (blk.alpha - blk.epsilon) / blk.mu
            out.append(float(g) if g is not None else max(blk.epsilon, 0.9 * hi))
        return out

    def _stage_taus(self):
        out = []
        for blk, t in zip(self.problem.dual, self.tau_stage):
            hi = (blk.beta - blk.delta) / blk.nu
            out.append(float(t) if t is not None else max(blk.delta, 0.9 * hi))
        return out

    def _run_coupled(self, overrides):
        algo = overrides.get("algo")
        if algo not in (None, "coupled"):
            raise ConfigurationError(f"coupled problems only run --algo coupled, got {algo!r}")
        cfg = self._config(self._solver_section(), overrides)
        return alg.solve_coupled(
            self.problem, cfg, start=self.start, policy=self._policy(),
            gamma_schedules=self._stage_gammas(), tau_schedules=self._stage_taus(),
            zeros=self.zeros)

    # -- public API -----------------------------------------------------------

    def run(self, overrides=None) -> alg.SolveResult:
        overrides = overrides or {}
        if self.kind == "inclusion":
            return self._run_inclusion(overrides)
        return self._run_coupled(overrides)

    def serialize(self) -> str:
        return serialize_section(self.root) + "\n"

    def __eq__(self, other):
        return isinstance(other, ProblemFile) and self.root.canonical() == other.root.canonical()


def _cfg_with(cfg, **kw):
    return alg.SolverConfig(
        epsilon=kw.get("epsilon", cfg.epsilon),
        relaxation=kw.get("relaxation", cfg.relaxation),
        step_size=kw.get("step_size", cfg.step_size),
        max_iter=kw.get("max_iter", cfg.max_iter),
        tol_residual=kw.get("tol_residual", cfg.tol_residual),
        tol_step=kw.get("tol_step", cfg.tol_step),
        stall_limit=kw.get("stall_limit", cfg.stall_limit))


def _op_params(section: Section):
    out = {}
    for k, v in section.entries.items():
        if k == "name":
            continue
        if isinstance(v, list):
            if v and isinstance(v[0], list):
                out[k] = _matrix(v)
            else:
                out[k] = np.asarray([float(f) for f in v], dtype=float)
        else:
            out[k] = v
    return out


def _matrix(rows):
    return np.asarray([[float(v) for v in row] for row in rows], dtype=float)


def _vec_or_none(v):
    return None if v is None else np.asarray([float(x) for x in v], dtype=float)


def _float_or_none(v):
    return None if v is None else float(v)


def _stacked(flat, layout):
    v = np.asarray([float(x) for x in flat], dtype=float)
    if v.shape != (layout.total,):
        raise ProblemFormatError(
            f"expected a stacked vector of length {layout.total}, got {v.shape[0]}")
    return layout.split(v)


def _schedule_from_block(block: Section):
    rule = block.get("rule", "constant")
    if rule == "constant":
        return float(block.require("value"))
    if rule == "geometric":
        start = float(block.require("start"))
        factor = float(block.require("factor"))
        floor = float(block.require("floor"))
        if not 0 < factor <= 1:
            raise ConfigurationError(f"geometric factor must lie in ]0, 1], got {factor}")
        return lambda n: max(floor, start * factor ** n)
    raise ConfigurationError(f"unknown schedule rule {rule!r}; known: constant, geometric")


def parse_problem(path) -> ProblemFile:
    """Parse and fully validate a problem file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return ProblemFile(parse_text(text), path=str(path))


# ---------------------------------------------------------------------------
# Trace and summary output
# ---------------------------------------------------------------------------

def _g17(v):
    return f"{float(v):.17g}"


def write_trace(result: alg.SolveResult, path):
    """CSV trace: n, residual, step_norm, theta, sigma, rho, then Fejer gaps."""
    n_gaps = 0
    for rec in result.trace:
        if rec.fejer_gaps is not None:
            n_gaps = max(n_gaps, len(rec.fejer_gaps))
    header = ["n", "residual", "step_norm", "theta", "sigma", "rho"]
    header += [f"gap_{k + 1}" for k in range(n_gaps)]
    lines = [",".join(header)]
    for rec in result.trace:
        row = [str(rec.n), _g17(rec.residual), _g17(rec.step_norm),
               _g17(rec.theta), _g17(rec.sigma), _g17(rec.rho)]
        gaps = rec.fejer_gaps or ()
        row += [_g17(g) for g in gaps]
        row += [""] * (n_gaps - len(gaps))
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _final_point_list(result: alg.SolveResult):
    x = result.x
    if isinstance(x, alg.KuhnTuckerPoint):
        return {
            "x": [b.tolist() for b in x.x.blocks],
            "y": [b.tolist() for b in x.y.blocks],
            "v_star": [b.tolist() for b in x.v_star.blocks],
        }
    return list(np.asarray(x, dtype=float))


def write_summary(result: alg.SolveResult, exit_code, algo, path):
    record = {
        "algo": algo,
        "status": result.status,
        "stop_reason": result.stop_reason,
        "iterations": result.iterations,
        "exit_code": exit_code,
        "final_point": _final_point_list(result),
        "final_residual": result.trace[-1].residual if result.trace else None,
        "final_step_norm": result.trace[-1].step_norm if result.trace else None,
    }
    if result.kt_residuals is not None:
        record["kt_residuals"] = list(result.kt_residuals)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return record


def run_problem(pf: ProblemFile, overrides, trace_path, summary_path):
    """Execute one problem and emit artifacts; returns the exit code."""
    algo = overrides.get("algo") or getattr(pf, "variant", "weak")
    try:
        result = pf.run(overrides)
    except InfeasibleCutsError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (BackwardSolveError, StallError, SolverCorruptionError,
            NonFiniteEntryError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    exit_code = EXIT_OK if result.converged else EXIT_MAX_ITER
    if trace_path:
        write_trace(result, trace_path)
    if summary_path:
        write_summary(result, exit_code, algo, summary_path)
    print(f"{algo}: {result.status} after {result.iterations} iterations "
          f"({result.stop_reason})")
    return exit_code


# ---------------------------------------------------------------------------
# Random test-problem generation
# ---------------------------------------------------------------------------

def generate_problem(kind, dim, seed) -> str:
    """Emit a random problem file with an analytically known solution."""
    rng = np.random.default_rng(seed)
    if kind == "inclusion":
        lo = -np.round(rng.uniform(0.8, 2.0, dim), 6)
        hi = np.round(rng.uniform(0.8, 2.0, dim), 6)
        z = np.round(lo + (hi - lo) * rng.uniform(0.25, 0.75, dim), 6)
        G = rng.normal(size=(dim, dim))
        S = rng.normal(size=(dim, dim))
        M = G @ G.T / dim + 0.2 * np.eye(dim) + 0.5 * (S - S.T)
        M = np.round(M, 6)
        b = -M @ z
        beta = float(np.linalg.norm(M, 2))
        eps = 0.45 / (beta + 1.0)
        x0 = np.round(z + rng.uniform(1.0, 2.0, dim), 6)
        root = Section("root")
        root.entries["kind"] = "inclusion"
        root.entries["x0"] = [float(v) for v in x0]
        a_sec = Section("A")
        a_sec.entries["name"] = "box"
        a_sec.entries["lo"] = [float(v) for v in lo]
        a_sec.entries["hi"] = [float(v) for v in hi]
        root.children.append(("A", a_sec))
        b_sec = Section("B")
        b_sec.entries["name"] = "affine_map"
        b_sec.entries["matrix"] = [[float(v) for v in row] for row in M]
        b_sec.entries["offset"] = [float(v) for v in b]
        root.children.append(("B", b_sec))
        k_sec = Section("kernel")
        k_sec.entries["name"] = "fbf"
        k_sec.entries["epsilon"] = float(eps)
        root.children.append(("kernel", k_sec))
        s_sec = Section("solver")
        s_sec.entries["variant"] = "weak"
        s_sec.entries["epsilon"] = float(eps)
        s_sec.entries["lambda"] = 1.0
        s_sec.entries["max_iter"] = 10000
        s_sec.entries["tol_residual"] = 1e-08
        s_sec.entries["tol_step"] = 1e-08
        root.children.append(("solver", s_sec))
        sol = Section("solution")
        sol.entries["x"] = [float(v) for v in z]
        root.children.append(("solution", sol))
        return serialize_section(root) + "\n"
    if kind == "coupled":
        d1, d2, dz = 2, 2, 2
        P = []
        for d in (d1, d2):
            g = rng.normal(size=(d, d))
            P.append(np.round(g @ g.T / d + 0.5 * np.eye(d), 6))
        gB = rng.normal(size=(dz, dz))
        R = np.round(gB @ gB.T / dz + 0.5 * np.eye(dz), 6)
        L1 = np.round(rng.normal(size=(dz, d1)), 6)
        L2 = np.round(rng.normal(size=(dz, d2)), 6)
        s1 = np.round(rng.normal(size=d1), 6)
        s2 = np.round(rng.normal(size=d2), 6)
        r = np.round(rng.normal(size=dz), 6)
        root = Section("root")
        root.entries["kind"] = "coupled"
        for i, (P_i, s_i, d) in enumerate(zip(P, (s1, s2), (d1, d2))):
            sec = Section("primal")
            sec.entries["dim"] = d
            sec.entries["s_star"] = [float(v) for v in s_i]
            a_sec = Section("A")
            a_sec.entries["name"] = "affine"
            a_sec.entries["matrix"] = [[float(v) for v in row] for row in P_i]
            sec.children.append(("A", a_sec))
            root.children.append(("primal", sec))
        sec = Section("dual")
        sec.entries["dim"] = dz
        sec.entries["r"] = [float(v) for v in r]
        b_sec = Section("B")
        b_sec.entries["name"] = "affine"
        b_sec.entries["matrix"] = [[float(v) for v in row] for row in R]
        sec.children.append(("B", b_sec))
        root.children.append(("dual", sec))
        for i, L in enumerate((L1, L2)):
            c_sec = Section("coupling")
            c_sec.entries["primal"] = i + 1
            c_sec.entries["dual"] = 1
            c_sec.entries["matrix"] = [[float(v) for v in row] for row in L]
            root.children.append(("coupling", c_sec))
        s_sec = Section("solver")
        s_sec.entries["variant"] = "coupled"
        s_sec.entries["lambda"] = 1.0
        s_sec.entries["max_iter"] = 20000
        s_sec.entries["tol_residual"] = 1e-08
        s_sec.entries["tol_step"] = 1e-08
        root.children.append(("solver", s_sec))
        # Analytic solution through the dense stacked linear system.
        n = d1 + d2 + dz + dz
        A = np.zeros((n, n))
        rhs = np.zeros(n)
        xo = [0, d1, d1 + d2, d1 + d2 + dz]
        A[xo[0]:xo[1], xo[0]:xo[1]] = P[0]
        A[xo[1]:xo[2], xo[1]:xo[2]] = P[1]
        A[xo[0]:xo[1], xo[3]:] = L1.T
        A[xo[1]:xo[2], xo[3]:] = L2.T
        rhs[xo[0]:xo[1]] = s1
        rhs[xo[1]:xo[2]] = s2
        A[xo[2]:xo[3], xo[2]:xo[3]] = R
        A[xo[2]:xo[3], xo[3]:] = -np.eye(dz)
        A[xo[3]:, xo[0]:xo[1]] = -L1
        A[xo[3]:, xo[1]:xo[2]] = -L2
        A[xo[3]:, xo[2]:xo[3]] = np.eye(dz)
        rhs[xo[3]:] = -r
        sol_vec = np.linalg.solve(A, rhs)
        sol = Section("solution")
        sol.entries["x"] = [float(v) for v in sol_vec[:d1 + d2]]
        sol.entries["v_star"] = [float(v) for v in sol_vec[d1 + d2 + dz:]]
        root.children.append(("solution", sol))
        return serialize_section(root) + "\n"
    raise ConfigurationError(f"unknown problem kind {kind!r}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # Bad usage must map to the usage exit code, not argparse's default 2,
    # which is reserved for max-iter termination.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    p = _Parser(
        prog="warpsplit",
        description="Monotone inclusion solvers built on warped resolvents.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="parse a problem file, solve it, write artifacts")
    run.add_argument("--problem", required=True, help="problem file path")
    run.add_argument("--algo", choices=["weak", "strong", "fbf", "tseng", "coupled"],
                     help="override the solver variant")
    run.add_argument("--max-iter", type=int, dest="max_iter")
    run.add_argument("--tol-residual", type=float, dest="tol_residual")
    run.add_argument("--tol-step", type=float, dest="tol_step")
    run.add_argument("--relax", type=float, help="override the relaxation lambda")
    run.add_argument("--trace", help="CSV trace output path (default: <problem>.trace.csv)")
    run.add_argument("--summary", help="JSON summary output path (default: <problem>.summary.json)")
    gen = sub.add_parser("generate", help="emit a random test problem with known solution")
    gen.add_argument("--kind", choices=["inclusion", "coupled"], default="inclusion")
    gen.add_argument("--dim", type=int, default=4)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", help="output path (default: stdout)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "generate":
        try:
            text = generate_problem(args.kind, args.dim, args.seed)
        except WarpsplitError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if args.out:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    try:
        pf = parse_problem(args.problem)
    except (WarpsplitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    overrides = {
        "algo": args.algo,
        "max_iter": args.max_iter,
        "tol_residual": args.tol_residual,
        "tol_step": args.tol_step,
        "relax": args.relax,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    trace_path = args.trace or f"{args.problem}.trace.csv"
    summary_path = args.summary or f"{args.problem}.summary.json"
    try:
        return run_problem(pf, overrides, trace_path, summary_path)
    except (UnknownOperatorError, ConfigurationError, ProblemFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
