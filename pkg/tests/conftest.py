"""Shared builders: hand-made partitions and synthetic linear flow systems."""

import numpy as np
import pytest

from flowshap.geometry import Projection, rect_ring
from flowshap.partition import ClusterPartition, GridSpec
from flowshap.trajdata import FlowTensor


def strip_partition(grid: GridSpec, n_strips: int) -> ClusterPartition:
    """Vertical-strip clusters (one per column band); strip i neighbors i-1 and i+1."""
    assert grid.cols % n_strips == 0
    proj = Projection.for_bbox(grid.bbox)
    xmin, ymin, xmax, ymax = proj.bbox_xy(grid.bbox)
    width = (xmax - xmin) / n_strips
    regions = {
        i: [rect_ring(xmin + i * width, ymin, xmin + (i + 1) * width, ymax)]
        for i in range(n_strips)
    }
    cols_per = grid.cols // n_strips
    assignment = np.zeros((grid.rows, grid.cols), dtype=int)
    for col in range(grid.cols):
        assignment[:, col] = col // cols_per
    adjacency = {
        i: set(j for j in (i - 1, i + 1) if 0 <= j < n_strips) for i in range(n_strips)
    }
    centroids = np.array(
        [[xmin + (i + 0.5) * width, 0.5 * (ymin + ymax)] for i in range(n_strips)]
    )
    return ClusterPartition(
        k=n_strips,
        site_ids=[f"s{i}" for i in range(n_strips)],
        sites_xy=centroids.copy(),
        labels=np.arange(n_strips),
        centroids=centroids,
        regions=regions,
        grid_assignment=assignment,
        adjacency=adjacency,
        grid=grid,
        projection=proj,
    )


def single_cluster_partition(grid: GridSpec) -> ClusterPartition:
    return strip_partition(grid, 1)


def tensor_from_arrays(grid: GridSpec, inflow, outflow, interval_seconds=600, t0=0) -> FlowTensor:
    return FlowTensor(
        grid=grid,
        interval_seconds=interval_seconds,
        t0=t0,
        inflow=np.asarray(inflow, dtype=np.uint32),
        outflow=np.asarray(outflow, dtype=np.uint32),
    )


def linear_flow_system(grid: GridSpec, n_blocks: int, seed: int, terms: int = 2):
    """Integer tensor driven by a planted linear rule on gapped 6-frame blocks.

    Within each 7-frame block, frames 0-4 are iid random integers, frame 5 is
    the rule applied to the flattened window, and frame 6 is an unused spacer.
    Returns (tensor, A, train_indices, block_ends) where A maps the flattened
    window (frame-major, inflow then outflow, cells row-major) to the next
    frame's flattened values, and every entry of A is 0 or 1 with `terms`
    ones per row, so all tensor values stay integral.
    """
    rng = np.random.default_rng(seed)
    cells = grid.rows * grid.cols
    in_dim = 5 * 2 * cells
    out_dim = 2 * cells
    a = np.zeros((out_dim, in_dim))
    for r in range(out_dim):
        for j in rng.choice(in_dim, size=terms, replace=False):
            a[r, j] = 1.0

    n_frames = 7 * n_blocks
    inflow = np.zeros((n_frames, grid.rows, grid.cols), dtype=np.uint32)
    outflow = np.zeros_like(inflow)
    train_indices = []
    block_ends = []
    for b in range(n_blocks):
        base = 7 * b
        for j in range(5):
            inflow[base + j] = rng.integers(1, 10, size=(grid.rows, grid.cols))
            outflow[base + j] = rng.integers(1, 10, size=(grid.rows, grid.cols))
        window = np.concatenate(
            [
                np.concatenate([inflow[base + j].ravel(), outflow[base + j].ravel()])
                for j in range(5)
            ]
        ).astype(float)
        y = a @ window
        inflow[base + 5] = y[:cells].reshape(grid.rows, grid.cols).astype(np.uint32)
        outflow[base + 5] = y[cells:].reshape(grid.rows, grid.cols).astype(np.uint32)
        inflow[base + 6] = rng.integers(1, 10, size=(grid.rows, grid.cols))
        outflow[base + 6] = rng.integers(1, 10, size=(grid.rows, grid.cols))
        train_indices.extend(range(base, base + 6))
        block_ends.append(base + 4)
    tensor = tensor_from_arrays(grid, inflow, outflow)
    return tensor, a, train_indices, block_ends


def apply_rule(a: np.ndarray, window_frames, grid: GridSpec):
    """The planted rule applied outside the package, for oracle iteration."""
    flat = np.concatenate(
        [np.concatenate([f.inflow.ravel(), f.outflow.ravel()]) for f in window_frames]
    )
    y = a @ flat
    cells = grid.rows * grid.cols
    return y[:cells].reshape(grid.rows, grid.cols), y[cells:].reshape(grid.rows, grid.cols)


@pytest.fixture
def grid2x2():
    return GridSpec(bbox=(0.0, 0.0, 0.02, 0.02), rows=2, cols=2)


@pytest.fixture
def grid1x3():
    return GridSpec(bbox=(0.0, 0.0, 0.03, 0.01), rows=1, cols=3)
