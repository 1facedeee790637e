"""Outer iteration: source iteration plus residual minimization.

Each outer step performs the preconditioned half step, builds a small
candidate subspace (optionally from the diffusion-flavored correction and
odd-parity enrichments), and minimizes the weighted residual norm over it.
Plain source iteration is the "none" configuration of the same loop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .minimizer import minimize
from .operators import BlockVector, TransportSystem
from .subspace import (Column, CorrectionSolver, build_space, eigen_theta,
                       enrich_odd_scatter, enrich_odd_sweep,
                       galerkin_correction)

__all__ = ["IterationConfig", "ConvergenceHistory", "run", "dense_oracle"]


@dataclass
class IterationConfig:
    """Knobs for one solver run.

    space: "none", "wc", "tw1" or "tw1m".
    K: number of angular eigenvectors spanning the correction space
       (ignored for "none").
    m: history depth for "tw1m" (the last m+1 iterates are offered).
    inner_tol: tolerance for auxiliary inner solves made during basis
       construction; the transport factorization's own verification
       threshold is fixed when the system is assembled.
    skip_half_solve: reuse the updated residual as the next half step
       instead of spending a transport solve on it.
    debug_residual_check: recompute the residual from scratch each step
       and compare against the tracked one (costly; testing only).
    """

    space: str = "none"
    K: int = 0
    m: int = 0
    tol: float = 1e-6
    max_iters: int = 5000
    inner_tol: float = 1e-10
    skip_half_solve: bool = True
    debug_residual_check: bool = False
    cutoff: float = 1e-12

    def __post_init__(self):
        if self.space not in ("none", "wc", "tw1", "tw1m"):
            raise ValueError(f"unknown space {self.space!r}")
        if self.space != "none" and self.K < 1:
            raise ValueError(f"space {self.space!r} needs K >= 1")
        if self.m < 0:
            raise ValueError("history depth m must be >= 0")


@dataclass
class ConvergenceHistory:
    """Per-step record of one run; rows are indexed from k = 1."""

    residuals: list = field(default_factory=list)
    factors: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    solves: list = field(default_factory=list)
    r0_norm: float = 0.0
    rho: float = 0.0
    converged: bool = False
    termination: str = ""
    solution: BlockVector | None = None

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    @property
    def max_contraction(self) -> float:
        return max(self.factors) if self.factors else 0.0

    @property
    def total_solves(self) -> int:
        return int(sum(self.solves))

    def to_csv(self, include_timings: bool = True) -> str:
        lines = ["k,residual,factor,seconds,solves"]
        for k, (r, f, s, n) in enumerate(zip(self.residuals, self.factors,
                                             self.seconds, self.solves), 1):
            sec = s if include_timings else 0.0
            lines.append(f"{k},{r:.12e},{f:.12e},{sec:.12e},{n}")
        return "\n".join(lines) + "\n"


def run(system: TransportSystem, config: IterationConfig,
        u0: BlockVector | None = None) -> ConvergenceHistory:
    """Iterate until the weighted residual norm drops below config.tol."""
    hist = ConvergenceHistory(rho=system.rho)
    u = system.zeros() if u0 is None else u0.copy()
    u0_is_zero = not (np.any(u.even) or np.any(u.odd))

    corr = None
    if config.space != "none":
        basis_ang = eigen_theta(system.matrices.angular, config.K)
        corr = CorrectionSolver(system, basis_ang)

    u_half = system.half_step(u)
    r_k = u_half - u
    hist.r0_norm = system.weighted_norm(r_k)
    if hist.r0_norm < config.tol:
        hist.converged = True
        hist.termination = "initial-guess"
        hist.solution = u
        return hist

    base_residual = None
    history_cols: list[Column] = []
    if config.space == "tw1m":
        # the affine offset of the residual map, needed to price history
        # columns without fresh solves
        base_residual = r_k.copy() if u0_is_zero else system.residual_precond(
            system.zeros())
        history_cols = [Column(u.copy(), "history",
                               r0_image=r_k - base_residual)]

    prev_norm = hist.r0_norm
    # per-step windows: the half-step solve spent at the end of step k (when
    # the shortcut is off) is charged to step k+1, which consumes it
    window_start = system.solve_count
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()

        r_half = system.residual_precond(u_half)
        if config.space == "none":
            basis = build_space("none")
        else:
            u_c = galerkin_correction(corr, r_k)
            if config.space == "wc":
                basis = build_space("wc", u_c=u_c)
            else:
                u1 = enrich_odd_sweep(system, u_half, u_c)
                u2 = enrich_odd_scatter(system, u_half, u_c,
                                        rtol=config.inner_tol)
                basis = build_space(config.space, u_c=u_c, odd_sweep=u1,
                                    odd_scatter=u2, history=history_cols)

        result = minimize(system, u_half, r_half, basis, cutoff=config.cutoff)
        u_next, r_next = result.iterate, result.residual

        if config.debug_residual_check:
            fresh = system.residual_precond(u_next)
            drift = system.weighted_norm(fresh - r_next)
            scale = max(system.weighted_norm(fresh), 1.0)
            if drift > 1e-9 * scale:
                raise RuntimeError(f"tracked residual drifted by {drift:.3e}")

        norm = system.weighted_norm(r_next)
        hist.residuals.append(norm)
        hist.factors.append(norm / prev_norm)
        hist.solves.append(system.solve_count - window_start)
        hist.seconds.append(time.perf_counter() - t0)

        if config.space == "tw1m":
            history_cols.append(Column(u_next.copy(), "history",
                                       r0_image=r_next - base_residual))
            if len(history_cols) > config.m + 1:
                history_cols = history_cols[-(config.m + 1):]

        if norm < config.tol:
            hist.converged = True
            hist.termination = "tolerance"
            hist.solution = u_next
            return hist

        u = u_next
        prev_norm = norm
        window_start = system.solve_count
        if config.skip_half_solve:
            u_half = u_next + r_next
            r_k = r_next
        else:
            u_half = system.half_step(u_next)
            r_k = u_half - u_next

    hist.converged = False
    hist.termination = "max-iterations"
    hist.solution = u
    return hist


def dense_oracle(system: TransportSystem, limit: int = 5000) -> BlockVector:
    """Direct sparse solve of the full coupled system, for cross-checks.

    Only sensible on small instances; refuses anything above ``limit``
    degrees of freedom.
    """
    T, S, _ = system.materialize(limit=limit)
    rhs = system.to_flat(system.load)
    x = spla.spsolve((T - S).tocsc(), rhs)
    return system.from_flat(x)
