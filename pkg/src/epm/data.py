"""Binary-matrix ingestion, synthetic block data, and holdout splitting.

File formats (all UTF-8 text):
  edge list : optional header line "# I J", then one "i j" pair per line
              (zero-based, whitespace separated);
  ratings   : one "user item rating" triple per line.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import RngHandle


@dataclass(frozen=True)
class SparseBinaryMatrix:
    """An I x J binary relation stored as its set of one-entries."""

    n_rows: int
    n_cols: int
    ones: frozenset

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("matrix dimensions must be positive")
        object.__setattr__(self, "ones", frozenset(self.ones))
        for (i, j) in self.ones:
            if not (0 <= i < self.n_rows and 0 <= j < self.n_cols):
                raise ValueError(f"index ({i},{j}) out of range for "
                                 f"{self.n_rows}x{self.n_cols} matrix")

    @property
    def density(self) -> float:
        return len(self.ones) / (self.n_rows * self.n_cols)

    def ones_array(self) -> np.ndarray:
        """(E, 2) int array of one-entry coordinates in row-major order."""
        if not self.ones:
            return np.zeros((0, 2), dtype=np.int64)
        arr = np.array(sorted(self.ones), dtype=np.int64)
        return arr

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_rows, self.n_cols), dtype=np.int8)
        for (i, j) in self.ones:
            dense[i, j] = 1
        return dense

    @classmethod
    def from_dense(cls, dense) -> "SparseBinaryMatrix":
        dense = np.asarray(dense)
        ii, jj = np.nonzero(dense)
        return cls(dense.shape[0], dense.shape[1],
                   frozenset(zip(ii.tolist(), jj.tolist())))

    def __contains__(self, pair):
        return pair in self.ones


@dataclass(frozen=True)
class HoldoutSplit:
    """A train view plus the held-out cells (with their true values).

    The train view equals the source matrix with the one-valued test cells
    forced to zero; zero-valued test cells are listed too so the metrics see
    both classes.
    """

    train_view: SparseBinaryMatrix
    test_entries: tuple  # of (i, j, value in {0,1})

    def __post_init__(self):
        seen = set()
        for (i, j, v) in self.test_entries:
            if (i, j) in seen:
                raise ValueError(f"duplicate test position ({i},{j})")
            seen.add((i, j))
            if v not in (0, 1):
                raise ValueError("test values must be 0 or 1")
            if (i, j) in self.train_view.ones and v == 1:
                raise ValueError(f"one-valued test cell ({i},{j}) not removed "
                                 "from train view")


def _iter_lines(source):
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            yield from enumerate(fh.read().decode("utf-8").splitlines(), 1)
        return
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    yield from enumerate(data.splitlines(), 1)


def load_edge_list(source) -> SparseBinaryMatrix:
    """Read an edge-list stream (path, file object, or byte stream)."""
    ones = set()
    n_rows = n_cols = None
    max_i = max_j = -1
    for lineno, raw in _iter_lines(source):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if lineno == 1 and len(parts) == 2:
                try:
                    n_rows, n_cols = int(parts[0]), int(parts[1])
                except ValueError:
                    raise ValueError(f"line {lineno}: malformed header {line!r}")
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'i j', got {line!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer index in {line!r}")
        if i < 0 or j < 0:
            raise ValueError(f"line {lineno}: negative index in {line!r}")
        if n_rows is not None and (i >= n_rows or j >= n_cols):
            raise ValueError(f"line {lineno}: index ({i},{j}) outside declared "
                             f"{n_rows}x{n_cols}")
        if (i, j) in ones:
            warnings.warn(f"duplicate edge ({i},{j}) at line {lineno}; kept once")
        ones.add((i, j))
        max_i, max_j = max(max_i, i), max(max_j, j)
    if n_rows is None:
        if not ones:
            raise ValueError("empty edge list without a '# I J' header")
        n_rows, n_cols = max_i + 1, max_j + 1
    return SparseBinaryMatrix(n_rows, n_cols, frozenset(ones))


def save_edge_list(m: SparseBinaryMatrix, target) -> None:
    """Write a matrix in edge-list form with a '# I J' header."""
    text = io.StringIO()
    text.write(f"# {m.n_rows} {m.n_cols}\n")
    for (i, j) in sorted(m.ones):
        text.write(f"{i} {j}\n")
    payload = text.getvalue()
    if isinstance(target, (str, Path)):
        Path(target).write_text(payload, encoding="utf-8")
    else:
        try:
            target.write(payload)
        except TypeError:
            target.write(payload.encode("utf-8"))


def load_ratings(source, threshold: float = 3.0) -> SparseBinaryMatrix:
    """Read 'user item rating' lines; entry is one iff rating > threshold (strict)."""
    ones = set()
    max_u = max_v = -1
    for lineno, raw in _iter_lines(source):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'user item rating', got {line!r}")
        try:
            u, v, r = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ValueError(f"line {lineno}: malformed triple {line!r}")
        if u < 0 or v < 0:
            raise ValueError(f"line {lineno}: negative index in {line!r}")
        max_u, max_v = max(max_u, u), max(max_v, v)
        if r > threshold:
            ones.add((u, v))
    if max_u < 0:
        raise ValueError("empty ratings stream")
    return SparseBinaryMatrix(max_u + 1, max_v + 1, frozenset(ones))


@dataclass(frozen=True)
class Block:
    """A rectangular latent class: half-open row/col extents, on-probability."""

    row_start: int
    row_stop: int
    col_start: int
    col_stop: int
    on_prob: float = 1.0

    def covers(self, i, j):
        return self.row_start <= i < self.row_stop and self.col_start <= j < self.col_stop


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for overlapping-block synthetic data."""

    n_rows: int
    n_cols: int
    blocks: tuple = ()
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.noise < 1.0):
            raise ValueError("noise must be in [0, 1)")
        for b in self.blocks:
            if not (0 <= b.row_start < b.row_stop <= self.n_rows
                    and 0 <= b.col_start < b.col_stop <= self.n_cols):
                raise ValueError(f"block {b} outside {self.n_rows}x{self.n_cols}")

    @property
    def n_classes(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class SyntheticGroundTruth:
    """Side-channel metadata emitted with a generated matrix."""

    n_classes: int
    blocks: tuple
    covered_cells: int
    density: float


def five_block_layout(n_rows: int = 90, n_cols: int = 90, seed: int = 0,
                      noise: float = 0.0, on_prob: float = 1.0) -> SyntheticSpec:
    """Five overlapping diagonal blocks on a square matrix (the 90x90 regime).

    ``on_prob=1`` gives the solid block-union picture; experiment runs use
    on_prob < 1 so the within-block zeros anchor the Poisson intensity scale
    (solid noise-free blocks leave the count scale a flat direction of the
    posterior and freeze the samplers).
    """
    rstep, cstep = n_rows // 6, n_cols // 6
    rsize, csize = 2 * rstep, 2 * cstep
    blocks = tuple(
        Block(k * rstep, min(k * rstep + rsize, n_rows),
              k * cstep, min(k * cstep + csize, n_cols), on_prob=on_prob)
        for k in range(5)
    )
    return SyntheticSpec(n_rows, n_cols, blocks, noise=noise, seed=seed)


def make_synthetic_blocks(spec: SyntheticSpec, rng: RngHandle | None = None):
    """Generate a matrix from overlapping blocks (noisy-OR) plus background noise.

    Returns (matrix, ground_truth). Deterministic given the spec's seed when no
    rng is passed.
    """
    if rng is None:
        rng = RngHandle(spec.seed)
    dense = np.zeros((spec.n_rows, spec.n_cols), dtype=bool)
    covered = np.zeros_like(dense)
    for b in spec.blocks:
        sub = (slice(b.row_start, b.row_stop), slice(b.col_start, b.col_stop))
        covered[sub] = True
        if b.on_prob >= 1.0:
            dense[sub] = True
        else:
            shape = (b.row_stop - b.row_start, b.col_stop - b.col_start)
            dense[sub] |= rng.gen.random(shape) < b.on_prob
    if spec.noise > 0.0:
        background = ~covered
        dense |= background & (rng.gen.random(dense.shape) < spec.noise)
    matrix = SparseBinaryMatrix.from_dense(dense)
    truth = SyntheticGroundTruth(
        n_classes=spec.n_classes,
        blocks=spec.blocks,
        covered_cells=int(covered.sum()),
        density=matrix.density,
    )
    return matrix, truth


def make_cv_folds(m: SparseBinaryMatrix, n_folds: int, rng: RngHandle) -> list:
    """Partition all I*J cells into `n_folds` test sets (one split per fold).

    Every cell (zeros included) is a test entry in exactly one fold; each
    fold's train view equals `m` with that fold's one-valued cells removed.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    total = m.n_rows * m.n_cols
    if total < n_folds:
        raise ValueError("fewer cells than folds")
    perm = rng.gen.permutation(total)
    splits = []
    for chunk in np.array_split(perm, n_folds):
        test = []
        removed = set()
        for flat in chunk.tolist():
            i, j = divmod(flat, m.n_cols)
            v = 1 if (i, j) in m.ones else 0
            if v:
                removed.add((i, j))
            test.append((i, j, v))
        train = SparseBinaryMatrix(m.n_rows, m.n_cols, m.ones - removed)
        splits.append(HoldoutSplit(train_view=train, test_entries=tuple(test)))
    return splits
