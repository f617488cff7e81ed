"""Shared fixture builders for the test suite."""

import numpy as np

from qpcomm.geometry import PointCloud, VoxelGridSpec, assemble_grid
from qpcomm.quantizer import QuantizerConfig, train_codebook


def desk_spec(dims=(8, 8, 2)):
    return VoxelGridSpec((0.0, 0.0, 0.0), (0.5, 0.5, 0.25), dims)


def representable_scene(spec, patch, n_patterns=6, seed=0, intensity=0.5):
    """A scene whose occupancy patch vectors take only ``n_patterns`` distinct
    binary values (the all-zero pattern included), with one point per occupied
    voxel at the voxel centroid and constant intensity.

    Returns (cloud, occ_vectors, int_vectors) where the vector grids are the
    exact patch decomposition of the scene's grids.
    """
    rng = np.random.default_rng(seed)
    h, w = patch.latent_shape(spec)
    dim = patch.vector_dim(spec)
    patterns = [np.zeros(dim)]
    seen = {patterns[0].tobytes()}
    while len(patterns) < n_patterns:
        cand = (rng.random(dim) < 0.45).astype(np.float64)
        if cand.tobytes() not in seen:
            seen.add(cand.tobytes())
            patterns.append(cand)
    patterns = np.asarray(patterns)
    choice = rng.integers(len(patterns), size=(h, w))
    occ_vec = patterns[choice]
    int_vec = occ_vec * intensity
    occ_data = assemble_grid(occ_vec, patch, spec)
    idx = np.argwhere(occ_data > 0.5)
    pts = np.column_stack([spec.centroids(idx), np.full(idx.shape[0], intensity)])
    return PointCloud(pts), occ_vec, int_vec


def build_straddle_fixture():
    """Find a wire configuration where the final latent cell's intensity
    field straddles the last packet boundary and the final packet contains no
    other cell's bits (so dropping it loses exactly that cell)."""
    from qpcomm.wire import HEADER_LEN

    mtu = 64
    bits = 11  # K = 2048
    for w in range(2, 4000):
        total_bits = 2 * w * bits
        payload_len = (total_bits + 7) // 8
        total_len = HEADER_LEN + payload_len
        last_start = ((total_len - 1) // mtu) * mtu  # first byte of last packet
        field_first_byte = ((2 * w - 1) * bits) // 8
        if (
            last_start >= HEADER_LEN + field_first_byte + 1
            and last_start < HEADER_LEN + payload_len
            and last_start >= 3 * mtu
        ):
            return w, bits, mtu
    raise AssertionError("no straddle configuration found")


def trained_codebooks_for(occ_vec, int_vec, k=16, seed=0, dead_limit=0):
    # dead_limit=0 disables the refresh machinery: these fixtures are far too
    # small for a meaningful usage floor
    dim = occ_vec.shape[-1]
    cb_occ = train_codebook(
        occ_vec.reshape(-1, dim),
        QuantizerConfig(k=k, dim=dim, seed=seed, dead_limit=dead_limit),
        kind="occ",
    )
    cb_int = train_codebook(
        int_vec.reshape(-1, dim),
        QuantizerConfig(k=k, dim=dim, seed=seed + 1, dead_limit=dead_limit),
        kind="int",
    )
    return cb_occ, cb_int
