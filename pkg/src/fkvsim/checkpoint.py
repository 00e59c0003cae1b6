"""Versioned binary checkpoint of the stepping recurrence.

Layout (all little-endian):

    bytes 0..7    magic ``b"FKVCKPT1"``
    byte  8       format version (1)
    byte  9       endianness flag (1 = little)
    uint32        n (configured step count)
    uint32        n_dofs
    uint32        j (last completed step)
    float64       tau
    float64 x (j + 2) * n_dofs
                  state columns u_{-1} .. u_j, column-major

The stored columns are the full displacement history, which is exactly the
strain history the exact O(n^2) convolution needs; a restored run therefore
continues bit-identically.
"""

from __future__ import annotations

import struct

import numpy as np

from .stepper import StepContext, StepState

MAGIC = b"FKVCKPT1"
VERSION = 1
_LITTLE = 1


def save_checkpoint(path, ctx: StepContext) -> None:
    state = ctx.state
    j = state.j
    cols = state.U[:, :j + 2]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", VERSION, _LITTLE))
        fh.write(struct.pack("<III", ctx.n, state.U.shape[0], j))
        fh.write(struct.pack("<d", ctx.tau))
        fh.write(np.asfortranarray(cols, dtype="<f8").tobytes(order="F"))


def load_checkpoint(path, ctx: StepContext) -> None:
    """Restore a context's recurrence state in place; grids must match."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        version, endian = struct.unpack("<BB", fh.read(2))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if endian != _LITTLE:
            raise ValueError("checkpoint declares non-little-endian data")
        n, n_dofs, j = struct.unpack("<III", fh.read(12))
        (tau,) = struct.unpack("<d", fh.read(8))
        if n != ctx.n or n_dofs != ctx.mesh.n_dofs:
            raise ValueError(
                f"checkpoint grid (n={n}, dofs={n_dofs}) does not match the "
                f"context (n={ctx.n}, dofs={ctx.mesh.n_dofs})")
        if abs(tau - ctx.tau) > 1e-15 * max(1.0, ctx.tau):
            raise ValueError("checkpoint step size does not match the context")
        raw = fh.read((j + 2) * n_dofs * 8)
        cols = np.frombuffer(raw, dtype="<f8").reshape((n_dofs, j + 2), order="F")
    U = np.zeros((n_dofs, n + 2))
    U[:, :j + 2] = cols
    ctx.state = StepState(j=j, U=U)
    ctx.step_spaces = [ctx.space_for_step(i) for i in range(1, j + 1)]
