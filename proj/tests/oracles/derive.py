"""Independent reference values for the C++ tests.

Computed with numpy/scipy and frozen into derived.json; rerun only when a
reference case changes:  python3 tests/oracles/derive.py
"""
import json
import math
import pathlib

import numpy as np
from scipy import ndimage

rng = np.random.default_rng(20240611)
out = {}

# Intensity window: (40 + 60) / 200.
out["window_mid"] = float((40 - (-60)) / (140 - (-60)))

# 4^3 crop centred at voxel (0,0,0) of an 8^3 volume holding 1 + flat index.
src = np.arange(1, 513, dtype=np.float64).reshape(8, 8, 8)
padded = np.pad(src, 2)
crop = padded[0:4, 0:4, 0:4]
out["corner_crop"] = {"nonzero": int(np.count_nonzero(crop)), "sum": float(crop.sum())}

# Trilinear blend at the centre of a cell whose corners hold 0..7.
corners = np.arange(8, dtype=np.float64).reshape(2, 2, 2)
out["cell_center"] = float(ndimage.map_coordinates(corners, [[0.5], [0.5], [0.5]], order=1)[0])

# Nearest label after clamping: 5^3 random mask, points outside [-1, 1].
mask5 = (rng.random((5, 5, 5)) < 0.5).astype(np.uint8)
pts = rng.uniform(-1.6, 1.6, size=(40, 3))
labels = []
for p in pts:
    idx = [int(math.floor((min(max(c, -1.0), 1.0) + 1) * 0.5 * 4 + 0.5)) for c in p]
    labels.append(int(mask5[tuple(idx)]))
out["nearest_clamped"] = {"mask": mask5.ravel().tolist(), "points": pts.tolist(), "labels": labels}

out["meshgrid64_spacing"] = 2.0 / 63.0

# Jitter statistics are Monte-Carlo; only the target is frozen.
out["jitter_sigma"] = 0.01

# Radius-1 dilation of one voxel.
one = np.zeros((5, 5, 5), bool)
one[2, 2, 2] = True
cross = ndimage.generate_binary_structure(3, 1)
out["dilate_single"] = int(ndimage.binary_dilation(one, cross).sum())

# Closing a 6^3 cube (inside a 10^3 grid) with one interior hole.
cube = np.zeros((10, 10, 10), bool)
cube[2:8, 2:8, 2:8] = True
holed = cube.copy()
holed[4, 4, 4] = False
closed = ndimage.binary_erosion(ndimage.binary_dilation(np.pad(holed, 1), cross), cross)[1:-1, 1:-1, 1:-1]
out["close_hole"] = {"filled": bool(closed[4, 4, 4]), "count": int(closed.sum())}

# Two blobs of 100 and 3 voxels.
blobs = np.zeros((12, 12, 12), bool)
blobs[1:6, 1:5, 1:6] = True  # 5*4*5 = 100
blobs[9, 9, 8:11] = True
lab, n = ndimage.label(blobs, cross)
sizes = ndimage.sum(blobs, lab, range(1, n + 1))
out["two_blobs"] = {"components": int(n), "largest": int(max(sizes))}

# EDT: single voxel, (1,1,1) neighbour.
out["edt_diagonal"] = math.sqrt(3.0)

# EDT on random 8^3 masks with anisotropic spacing (distance to foreground).
edt_cases = []
for spacing in ([1.0, 1.0, 1.0], [1.0, 0.7, 1.3]):
    for density in (0.05, 0.3):
        m = rng.random((8, 8, 8)) < density
        m[rng.integers(8), rng.integers(8), rng.integers(8)] = True
        d = ndimage.distance_transform_edt(~m, sampling=spacing)
        edt_cases.append({"spacing": spacing, "mask": m.astype(int).ravel().tolist(), "distance": d.ravel().tolist()})
out["edt_cases"] = edt_cases

# Metrics.
a = np.zeros(8, bool); a[:4] = True
b = np.zeros(8, bool); b[2:6] = True
out["dsc_half"] = float(2 * (a & b).sum() / (a.sum() + b.sum()))


def boundary(m):
    p = np.pad(m, 1)
    eroded = ndimage.binary_erosion(p, cross, border_value=0)[1:-1, 1:-1, 1:-1]
    return m & ~eroded


def nsd_bruteforce(x, y, tau, spacing):
    bx = np.argwhere(boundary(x))
    by = np.argwhere(boundary(y))
    if len(bx) == 0 and len(by) == 0:
        return 1.0
    if len(bx) == 0 or len(by) == 0:
        return 0.0
    # index differences first, so single-axis ties at tau stay exact
    d = np.sqrt((((bx[:, None, :] - by[None, :, :]) * spacing) ** 2).sum(-1))
    hit = (d.min(1) <= tau).sum() + (d.min(0) <= tau).sum()
    return float(hit / (len(bx) + len(by)))


plates_a = np.zeros((6, 6, 6), bool); plates_a[2] = True
plates_b = np.zeros((6, 6, 6), bool); plates_b[3] = True
one_mm = np.array([1.0, 1.0, 1.0])
out["plates"] = {"tau1": nsd_bruteforce(plates_a, plates_b, 1.0, one_mm),
                 "tau05": nsd_bruteforce(plates_a, plates_b, 0.5, one_mm)}

pairs = []
for spacing in ([1.0, 1.0, 1.0], [1.2, 0.8, 1.0]):
    for _ in range(3):
        x = ndimage.binary_opening(rng.random((8, 8, 8)) < 0.55)
        y = ndimage.binary_opening(rng.random((8, 8, 8)) < 0.55)
        inter = (x & y).sum()
        total = x.sum() + y.sum()
        pairs.append({
            "spacing": spacing,
            "a": x.astype(int).ravel().tolist(),
            "b": y.astype(int).ravel().tolist(),
            "dsc": 1.0 if total == 0 else float(2 * inter / total),
            "nsd": {str(t): nsd_bruteforce(x, y, t, np.array(spacing)) for t in (0.0, 0.8, 1.0, 1.5, 2.5)},
        })
out["metric_pairs"] = pairs

# Salt-and-pepper on a 64^3 box at density 0.001: binomial mean and 4 sigma.
n_box, p = 64 ** 3, 0.001
out["salt_pepper_64"] = {"mean": n_box * p, "four_sigma": 4 * math.sqrt(n_box * p * (1 - p))}

# Cut cube of side 4 centred on the flat top face of a slab: half of the cube overlaps.
slab = np.zeros((16, 16, 16), bool)
slab[:8] = True
centre = (7, 8, 8)
lo = [c - 2 for c in centre]
cut = slab.copy()
cut[lo[0]:lo[0] + 4, lo[1]:lo[1] + 4, lo[2]:lo[2] + 4] = False
out["slab_cut"] = {"removed": int(slab.sum() - cut.sum())}

# Losses.
out["bce_half"] = math.log(2.0)
out["latent_penalty_norm2"] = 0.01 * 2.0

# Adam first step with a constant gradient: m_hat = g, v_hat = g^2.
g = np.array([0.3, -2.0, 1e-3])
lr = 1e-3
step = lr * g / (np.abs(g) + 1e-8)
out["adam_first_step"] = {"grad": g.tolist(), "lr": lr, "delta": (-step).tolist()}

# Aggregate.
vals = np.array([0.70, 0.72])
out["aggregate_pair"] = {"mean": float(vals.mean()), "std": float(vals.std())}

path = pathlib.Path(__file__).with_name("derived.json")
path.write_text(json.dumps(out, indent=1) + "\n")
print("wrote", path)
