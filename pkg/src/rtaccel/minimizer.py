"""Weighted least-squares residual minimization over a candidate basis.

Given the half-step iterate and its preconditioned residual, find the
combination of candidate columns that minimizes the weighted residual norm
of the updated iterate.  The residual map is affine, so the update changes
the residual by the linearized images of the columns and the problem is a
small positive semidefinite least-squares system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import BlockVector, TransportSystem
from .subspace import SubspaceBasis

__all__ = ["MinimizeResult", "minimize"]


@dataclass
class MinimizeResult:
    iterate: BlockVector
    residual: BlockVector
    weights: np.ndarray
    rank: int
    fresh_solves: int


def minimize(system: TransportSystem, u_half: BlockVector,
             r_half: BlockVector, basis: SubspaceBasis,
             cutoff: float = 1e-12) -> MinimizeResult:
    """Minimize the weighted norm of the residual over u_half + span(basis).

    Columns with precomputed residual images cost nothing; each remaining
    column costs one transport solve.  The normal equations are solved by
    eigendecomposition with relative cutoff, which makes the result
    invariant under duplicated or linearly dependent columns.
    """
    n = basis.n
    if n == 0:
        return MinimizeResult(u_half, r_half, np.zeros(0), 0, 0)

    images = []
    fresh = 0
    for col in basis.columns:
        if col.r0_image is not None:
            images.append(col.r0_image)
        else:
            images.append(system.apply_R0(col.vector))
            fresh += 1

    m_images = [system.apply_M(img) for img in images]
    gram = np.empty((n, n))
    rhs = np.empty(n)
    for i in range(n):
        rhs[i] = -(m_images[i].even @ r_half.even
                   + m_images[i].odd @ r_half.odd)
        for j in range(i, n):
            gij = (m_images[i].even @ images[j].even
                   + m_images[i].odd @ images[j].odd)
            gram[i, j] = gij
            gram[j, i] = gij

    vals, vecs = np.linalg.eigh(gram)
    vmax = vals[-1]
    if vmax <= 0.0:
        weights = np.zeros(n)
        rank = 0
    else:
        keep = vals > cutoff * vmax
        rank = int(np.count_nonzero(keep))
        proj = vecs[:, keep].T @ rhs
        weights = vecs[:, keep] @ (proj / vals[keep])

    u_next = u_half.copy()
    r_next = r_half.copy()
    for w, col, img in zip(weights, basis.columns, images):
        if w == 0.0:
            continue
        u_next.even += w * col.vector.even
        u_next.odd += w * col.vector.odd
        r_next.even += w * img.even
        r_next.odd += w * img.odd
    return MinimizeResult(u_next, r_next, weights, rank, fresh)
