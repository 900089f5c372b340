"""Block-sparse matrices with square d x d blocks.

Used to materialize coboundary and Laplacian operators for the oracle and
spectral-analysis paths. The training path applies the same operators
through gather/scatter tape primitives instead of materializing them.
"""

import numpy as np

from .errors import ShapeError


class BlockSparse:
    """Sparse matrix of (block_rows x block_cols) blocks, each d x d,
    at most one block per (row, col) position."""

    def __init__(self, block_rows, block_cols, d, blocks=None):
        self.block_rows = int(block_rows)
        self.block_cols = int(block_cols)
        self.d = int(d)
        self.blocks = {}
        if blocks:
            for (i, j), b in blocks.items():
                self.add_block(i, j, b)

    def add_block(self, i, j, block):
        block = np.asarray(block, dtype=np.float64)
        if block.shape != (self.d, self.d):
            raise ShapeError(f"block at ({i},{j}) has shape {block.shape}, want ({self.d},{self.d})")
        if not (0 <= i < self.block_rows and 0 <= j < self.block_cols):
            raise ShapeError(f"block position ({i},{j}) out of range")
        if (i, j) in self.blocks:
            self.blocks[(i, j)] = self.blocks[(i, j)] + block
        else:
            self.blocks[(i, j)] = block

    @property
    def shape(self):
        return (self.block_rows * self.d, self.block_cols * self.d)

    def apply(self, x):
        """Multiply against a dense (block_cols*d) x f matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.apply(x[:, None])[:, 0]
        if x.shape[0] != self.block_cols * self.d:
            raise ShapeError(f"operand has {x.shape[0]} rows, operator wants {self.block_cols * self.d}")
        d = self.d
        out = np.zeros((self.block_rows * d, x.shape[1]))
        for (i, j), b in self.blocks.items():
            out[i * d:(i + 1) * d] += b @ x[j * d:(j + 1) * d]
        return out

    def transpose(self):
        out = BlockSparse(self.block_cols, self.block_rows, self.d)
        for (i, j), b in self.blocks.items():
            out.add_block(j, i, b.T)
        return out

    def matmul(self, other):
        if self.block_cols != other.block_rows or self.d != other.d:
            raise ShapeError("block dimensions do not match")
        out = BlockSparse(self.block_rows, other.block_cols, self.d)
        by_row = {}
        for (j, k), b in other.blocks.items():
            by_row.setdefault(j, []).append((k, b))
        for (i, j), a in self.blocks.items():
            for k, b in by_row.get(j, []):
                out.add_block(i, k, a @ b)
        return out

    def densify(self):
        d = self.d
        out = np.zeros(self.shape)
        for (i, j), b in self.blocks.items():
            out[i * d:(i + 1) * d, j * d:(j + 1) * d] = b
        return out

    @staticmethod
    def block_diagonal(blocks):
        """Build a block-diagonal operator from an (n, d, d) array."""
        blocks = np.asarray(blocks, dtype=np.float64)
        n, d, _ = blocks.shape
        out = BlockSparse(n, n, d)
        for i in range(n):
            out.add_block(i, i, blocks[i])
        return out

    @staticmethod
    def identity(n, d):
        return BlockSparse.block_diagonal(np.broadcast_to(np.eye(d), (n, d, d)).copy())
