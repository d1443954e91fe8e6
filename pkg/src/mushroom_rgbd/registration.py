"""Cap pose from model-to-sample point-cloud registration.

Pipeline: voxel downsampling, PCA normals, FPFH descriptors, feature-matched
global registration with a Geman-McClure objective under graduated
non-convexity, then point-to-point ICP on the full clouds.  The upright
model is the source and the observed sample the target, so the recovered
rotation maps the model's up vector onto the cap axis.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateNeighborhood,
    EmptyCloud,
    InsufficientCorrespondences,
    NoCorrespondences,
    NotARotation,
    PerceptionError,
    StageError,
    ZeroVector,
)


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if self.normals.shape != self.points.shape:
                raise ValueError("normals must match points in length")

    def __len__(self):
        return len(self.points)

    def transformed(self, T):
        normals = None if self.normals is None else self.normals @ T.rotation.T
        return PointCloud(T.apply(self.points), normals)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, pts):
        return np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other):
        """``self * other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def inverse(self):
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M


@dataclass(frozen=True)
class Quaternion:
    qx: float
    qy: float
    qz: float
    qw: float

    def as_xyzw(self):
        return [self.qx, self.qy, self.qz, self.qw]


@dataclass
class RegistrationResult:
    transform: RigidTransform
    fitness: float
    inlier_rmse: float
    iterations: int
    objective_history: list = field(default_factory=list)
    init: str = "given"


# ---------------------------------------------------------------------------
# rotations


def axis_angle_matrix(axis, angle):
    """Rodrigues rotation about ``axis`` (need not be unit) by ``angle`` radians."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        return np.eye(3)
    k = axis / n
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * Kx + (1 - math.cos(angle)) * (Kx @ Kx)


def _rotvec_matrix(w):
    return axis_angle_matrix(w, float(np.linalg.norm(w)))


def orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def check_rotation(R, tol=1e-6):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise NotARotation("expected a finite 3x3 matrix")
    if np.linalg.norm(R.T @ R - np.eye(3)) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise NotARotation("matrix is not orthonormal with determinant +1")
    return R


def rotation_to_quaternion(R):
    """Hamilton unit quaternion ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
    R = check_rotation(R)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s])
    q /= np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return Quaternion(*(float(c) for c in q))


def quaternion_to_rotation(q):
    x, y, z, w = q.as_xyzw() if isinstance(q, Quaternion) else q
    n = math.sqrt(x * x + y * y + z * z + w * w)
    if n == 0:
        raise ZeroVector("zero quaternion")
    x, y, z, w = x / n, y / n, z / n, w / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def cap_normal(R, model_up=(0.0, 0.0, 1.0)):
    """Rotate the model's calibrated up vector; spin about the cap axis drops out."""
    up = np.asarray(model_up, dtype=np.float64)
    v = np.asarray(R, dtype=np.float64) @ up
    return v / np.linalg.norm(v)


def angle_between(v_gt, v_est):
    """Angle in degrees between two non-zero vectors."""
    a = np.asarray(v_gt, dtype=np.float64)
    b = np.asarray(v_est, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("angle undefined for a zero vector")
    c = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return math.degrees(math.acos(c))


# ---------------------------------------------------------------------------
# cloud processing


def voxel_downsample(cloud, voxel):
    """One centroid per occupied voxel, ordered by voxel key."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(cloud) == 0:
        raise EmptyCloud("cannot downsample an empty cloud")
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    n = len(counts)
    pts = np.zeros((n, 3))
    np.add.at(pts, inverse, cloud.points)
    pts /= counts[:, None]
    normals = None
    if cloud.normals is not None:
        normals = np.zeros((n, 3))
        np.add.at(normals, inverse, cloud.normals)
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.divide(normals, norm, out=np.zeros_like(normals), where=norm > 0)
    return PointCloud(pts, normals)


def estimate_normals(cloud, knn=30, viewpoint=(0.0, 0.0, 0.0)):
    """PCA normals from ``knn`` neighbours, flipped to face ``viewpoint``."""
    n = len(cloud)
    if knn < 3:
        raise ValueError("need at least 3 neighbours")
    if n < knn:
        raise DegenerateNeighborhood(f"cloud has {n} points, fewer than knn={knn}")
    pts = cloud.points
    _, idx = cKDTree(pts).query(pts, k=knn)
    nb = pts[idx]
    centred = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / knn
    evals, evecs = np.linalg.eigh(cov)
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    if np.any(evals[:, 1] <= 1e-12 * scale):
        raise DegenerateNeighborhood("neighbourhood covariance has rank < 2")
    normals = evecs[:, :, 0]
    towards = np.asarray(viewpoint, dtype=np.float64) - pts
    flip = np.einsum("ij,ij->i", normals, towards) < 0
    normals[flip] *= -1.0
    return PointCloud(pts.copy(), normals)


def orient_normals_away_from(cloud, point):
    """Flip normals so they point away from ``point`` (e.g. the cloud centroid)."""
    away = cloud.points - np.asarray(point, dtype=np.float64)
    normals = cloud.normals.copy()
    flip = np.einsum("ij,ij->i", normals, away) < 0
    normals[flip] *= -1.0
    return PointCloud(cloud.points.copy(), normals)


# ---------------------------------------------------------------------------
# FPFH


def pair_features(p1, n1, p2, n2):
    """Darboux-frame angle triple ``(alpha, phi, theta)`` and distance for point pairs.

    Vectorised over leading dimensions.  The frame is anchored at the
    point whose normal makes the smaller angle with the connecting line.
    """
    dp = p2 - p1
    dist = np.linalg.norm(dp, axis=-1)
    safe = np.where(dist > 0, dist, 1.0)
    a1 = np.einsum("...i,...i->...", n1, dp) / safe
    a2 = np.einsum("...i,...i->...", n2, dp) / safe
    swap = np.arccos(np.clip(np.abs(a1), 0, 1)) > np.arccos(np.clip(np.abs(a2), 0, 1))
    u = np.where(swap[..., None], n2, n1)
    other = np.where(swap[..., None], n1, n2)
    dp = np.where(swap[..., None], -dp, dp)
    theta = np.where(swap, -a2, a1)
    v = np.cross(dp, u)
    vn = np.linalg.norm(v, axis=-1)
    v = v / np.where(vn > 0, vn, 1.0)[..., None]
    w = np.cross(u, v)
    phi = np.einsum("...i,...i->...", v, other)
    alpha = np.arctan2(np.einsum("...i,...i->...", w, other), np.einsum("...i,...i->...", u, other))
    degenerate = (dist == 0) | (vn == 0)
    alpha = np.where(degenerate, 0.0, alpha)
    phi = np.where(degenerate, 0.0, phi)
    theta = np.where(degenerate, 0.0, theta)
    return alpha, phi, theta, dist


def _bins(alpha, phi, theta):
    b0 = np.clip(np.floor(11 * (alpha + np.pi) / (2 * np.pi)), 0, 10).astype(np.int64)
    b1 = np.clip(np.floor(11 * (phi + 1.0) * 0.5), 0, 10).astype(np.int64)
    b2 = np.clip(np.floor(11 * (theta + 1.0) * 0.5), 0, 10).astype(np.int64)
    return b0, b1 + 11, b2 + 22


def _normalise_subhistograms(hist):
    out = hist.copy()
    for k in range(3):
        block = out[:, 11 * k: 11 * (k + 1)]
        s = block.sum(axis=1, keepdims=True)
        out[:, 11 * k: 11 * (k + 1)] = np.divide(block * 100.0, s, out=np.zeros_like(block), where=s > 0)
    return out


def compute_fpfh(cloud, radius):
    """33-bin FPFH per point.

    Returns ``(features, isolated)``: an ``(n, 33)`` array whose three
    11-bin blocks each sum to 100, and a bool array marking points with no
    neighbour inside ``radius`` (their descriptor is all zeros).
    """
    if cloud.normals is None:
        raise ValueError("FPFH needs normals")
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts, nrm = cloud.points, cloud.normals
    n = len(pts)
    tree = cKDTree(pts)
    neighbours = tree.query_ball_point(pts, radius)
    src = np.concatenate([np.full(len(nb), i) for i, nb in enumerate(neighbours)]).astype(np.int64)
    dst = np.concatenate([np.asarray(nb, dtype=np.int64) for nb in neighbours])
    keep = src != dst
    src, dst = src[keep], dst[keep]
    counts = np.bincount(src, minlength=n)
    isolated = counts == 0

    alpha, phi, theta, dist = pair_features(pts[src], nrm[src], pts[dst], nrm[dst])
    incr = 100.0 / np.maximum(counts[src], 1)
    spfh = np.zeros((n, 33))
    for b in _bins(alpha, phi, theta):
        np.add.at(spfh, (src, b), incr)

    weighted = np.zeros((n, 33))
    np.add.at(weighted, src, spfh[dst] / dist[:, None])
    weighted /= np.maximum(counts, 1)[:, None]
    fpfh = _normalise_subhistograms(spfh + weighted)
    fpfh[isolated] = 0.0
    return fpfh, isolated


# ---------------------------------------------------------------------------
# global registration


@dataclass(frozen=True)
class GlobalParams:
    voxel: float = 0.002
    tuple_scale: float = 0.9
    max_tuples: int = 1000
    iterations: int = 64
    halve_every: int = 4
    seed: int = 0


def match_features(src_feat, tgt_feat):
    """Mutual nearest neighbours in feature space, as an ``(m, 2)`` index array."""
    _, s2t = cKDTree(tgt_feat).query(src_feat, k=1)
    _, t2s = cKDTree(src_feat).query(tgt_feat, k=1)
    i = np.arange(len(src_feat))
    mutual = t2s[s2t] == i
    return np.stack([i[mutual], s2t[mutual]], axis=1)


def tuple_filter(src_pts, tgt_pts, corr, scale=0.9, max_tuples=1000, seed=0):
    """Keep correspondence triples whose pairwise distances agree within ``scale``."""
    m = len(corr)
    if m < 3:
        return corr[:0]
    rng = np.random.default_rng(seed)
    trials = rng.integers(0, m, size=(100 * m, 3))
    distinct = (trials[:, 0] != trials[:, 1]) & (trials[:, 1] != trials[:, 2]) & (trials[:, 0] != trials[:, 2])
    trials = trials[distinct]
    ps = src_pts[corr[trials, 0]]
    pt = tgt_pts[corr[trials, 1]]
    ok = np.ones(len(trials), dtype=bool)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        ds = np.linalg.norm(ps[:, a] - ps[:, b], axis=1)
        dt = np.linalg.norm(pt[:, a] - pt[:, b], axis=1)
        ok &= (ds * scale < dt) & (dt < ds / scale)
    # trials are drawn up front; keep the first max_tuples that pass, in draw order
    passed = trials[ok][:max_tuples]
    return corr[passed.ravel()]


def _skew(v):
    z = np.zeros(len(v))
    return np.stack([
        np.stack([z, -v[:, 2], v[:, 1]], axis=1),
        np.stack([v[:, 2], z, -v[:, 0]], axis=1),
        np.stack([-v[:, 1], v[:, 0], z], axis=1),
    ], axis=1)


def gnc_align(src_pts, tgt_pts, corr, mu_start, mu_end, iterations=64, halve_every=4):
    """Minimise sum of scaled Geman-McClure residuals over fixed correspondences.

    The line-process weight ``(mu / (mu + r^2))^2`` is re-solved each
    iteration with a linearised rigid update; ``mu`` halves every
    ``halve_every`` iterations until it reaches ``mu_end``.
    """
    q0 = src_pts[corr[:, 0]]
    p = tgt_pts[corr[:, 1]]
    R, t = np.eye(3), np.zeros(3)
    mu = mu_start
    for it in range(iterations):
        if it > 0 and it % halve_every == 0 and mu > mu_end:
            mu = max(mu / 2.0, mu_end)
        q = q0 @ R.T + t
        r = p - q
        w = (mu / (mu + np.einsum("ij,ij->i", r, r))) ** 2
        # r(xi) ~ r - (omega x q + dt)  =>  J = [skew(q), -I]
        J = np.concatenate([_skew(q), -np.broadcast_to(np.eye(3), (len(q), 3, 3))], axis=2)
        JtJ = np.einsum("n,nki,nkj->ij", w, J, J)
        Jtr = np.einsum("n,nki,nk->i", w, J, r)
        try:
            xi = np.linalg.solve(JtJ, -Jtr)
        except np.linalg.LinAlgError:
            xi = np.linalg.lstsq(JtJ, -Jtr, rcond=None)[0]
        dR = _rotvec_matrix(xi[:3])
        R = orthonormalize(dR @ R)
        t = dR @ t + xi[3:]
    return R, t


def global_register(source, target, src_feat, tgt_feat, params=None):
    """Coarse transform mapping ``source`` onto ``target`` from feature correspondences."""
    params = params or GlobalParams()
    corr = match_features(src_feat, tgt_feat)
    if len(corr) < 3:
        raise InsufficientCorrespondences(f"{len(corr)} mutual feature matches, need 3")
    corr = tuple_filter(source.points, target.points, corr, params.tuple_scale,
                        params.max_tuples, params.seed)
    if len(corr) < 3:
        raise InsufficientCorrespondences("no correspondence triple passed the tuple test")

    ms = source.points.mean(axis=0)
    mt = target.points.mean(axis=0)
    s_c, t_c = source.points - ms, target.points - mt
    scale = max(np.linalg.norm(s_c, axis=1).max(), np.linalg.norm(t_c, axis=1).max())
    scale = scale if scale > 0 else 1.0
    diameter = 2.0 * scale
    R, t_hat = gnc_align(s_c / scale, t_c / scale, corr,
                         mu_start=(diameter / scale) ** 2,
                         mu_end=(params.voxel / scale) ** 2,
                         iterations=params.iterations, halve_every=params.halve_every)
    return RigidTransform(R, mt - R @ ms + scale * t_hat)


# ---------------------------------------------------------------------------
# ICP


def best_fit_transform(src, dst):
    """Least-squares rigid transform taking ``src`` rows onto ``dst`` rows (SVD, reflection-safe)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, cd - R @ cs)


def _point_to_plane_step(src, dst, normals):
    # minimise sum ((R q + t - p) . n)^2 with a small-angle linearisation
    A = np.concatenate([np.cross(src, normals), normals], axis=1)
    b = np.einsum("ij,ij->i", dst - src, normals)
    xi = np.linalg.lstsq(A, b, rcond=None)[0]
    return RigidTransform(orthonormalize(_rotvec_matrix(xi[:3])), xi[3:])


def rotation_vector(R):
    """Axis-angle vector of a rotation matrix."""
    c = float(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0))
    angle = math.acos(c)
    if angle < 1e-12:
        return np.zeros(3)
    if math.pi - angle < 1e-6:
        # near a half turn the antisymmetric part vanishes; read the axis off R + I
        B = (R + np.eye(3)) / 2.0
        axis = B[np.argmax(np.diag(B))]
        return angle * axis / np.linalg.norm(axis)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return angle / (2.0 * math.sin(angle)) * w


def scaled_step(step, pivot, alpha):
    """Stretch a rigid step by ``alpha``: rotation angle about ``pivot`` and displacement of ``pivot``."""
    tau = step.rotation @ pivot + step.translation - pivot
    Ra = _rotvec_matrix(alpha * rotation_vector(step.rotation))
    return RigidTransform(Ra, pivot - Ra @ pivot + alpha * tau)


def truncated_objective(d, max_corr_dist):
    """Squared error over matched points, with unmatched points charged at the gate."""
    return float(np.sum(np.minimum(d * d, max_corr_dist**2)))


def icp(source, target, init=None, max_corr_dist=0.003, max_iter=30, method="point_to_point",
        rel_tol=1e-6, accelerate=True):
    """Refine ``init`` so that it maps ``source`` onto ``target``.

    Each iteration matches every transformed source point to its nearest
    target point within ``max_corr_dist`` and solves for the rigid update in
    closed form.  ``objective_history`` holds the truncated objective (see
    :func:`truncated_objective`) at ``init`` and after every update; for
    point-to-point it never increases.

    With ``accelerate`` the point-to-point step is over-relaxed: it is
    repeatedly doubled while that lowers the objective further.  On
    near-spherical caps the plain iteration creeps along a flat valley and
    the stopping rule fires long before the minimum.
    """
    if max_corr_dist <= 0:
        raise ValueError("max_corr_dist must be positive")
    if len(source) == 0 or len(target) == 0:
        raise EmptyCloud("ICP needs non-empty clouds")
    if method not in ("point_to_point", "point_to_plane"):
        raise ValueError(f"unknown ICP method {method!r}")
    if method == "point_to_plane" and target.normals is None:
        raise ValueError("point-to-plane ICP needs target normals")
    T = init or RigidTransform.identity()
    tree = cKDTree(target.points)
    n = len(source)

    def evaluate(T):
        moved = T.apply(source.points)
        d, idx = tree.query(moved, k=1)
        valid = d <= max_corr_dist
        if not valid.any():
            raise NoCorrespondences(f"no target point within {max_corr_dist} of the source")
        return moved, d, idx, valid, truncated_objective(d, max_corr_dist)

    def scores(d, valid):
        return valid.sum() / n, math.sqrt(np.mean(d[valid] ** 2))

    moved, d, idx, valid, E = evaluate(T)
    history = [E]
    fitness, rmse = scores(d, valid)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        src, dst = moved[valid], target.points[idx[valid]]
        if method == "point_to_plane":
            step = _point_to_plane_step(src, dst, target.normals[idx[valid]])
        else:
            step = best_fit_transform(src, dst)
        T_new = step.compose(T)
        state = evaluate(T_new)
        if accelerate and method == "point_to_point":
            pivot = src.mean(axis=0)
            alpha = 2.0
            while alpha <= 64.0:
                T_try = scaled_step(step, pivot, alpha).compose(T)
                trial = evaluate(T_try)
                if trial[4] >= state[4]:
                    break
                T_new, state = T_try, trial
                alpha *= 2.0
        T_new = RigidTransform(orthonormalize(T_new.rotation), T_new.translation)
        state = evaluate(T_new)
        if method == "point_to_point" and state[4] > E:
            # only round-off can raise it; we are at the fixed point
            history.append(E)
            break
        T = T_new
        moved, d, idx, valid, E = state
        history.append(E)
        new_fitness, new_rmse = scores(d, valid)
        done = (abs(new_fitness - fitness) <= rel_tol * max(fitness, 1e-12)
                and abs(new_rmse - rmse) <= rel_tol * max(rmse, 1e-12))
        fitness, rmse = new_fitness, new_rmse
        if done:
            break
    return RegistrationResult(
        transform=T,
        fitness=float(fitness),
        inlier_rmse=float(rmse),
        iterations=iterations,
        objective_history=history,
    )


def icp_point_to_point(source, target, init=None, max_corr_dist=0.003, max_iter=30, accelerate=True):
    return icp(source, target, init, max_corr_dist, max_iter, "point_to_point", accelerate=accelerate)


# ---------------------------------------------------------------------------
# full pose estimation


@dataclass(frozen=True)
class PoseParams:
    voxel: float = 0.002
    fpfh_radius_factor: float = 5.0
    normal_knn: int = 30
    icp_corr_factor: float = 1.5
    icp_max_iter: int = 30
    icp_method: str = "point_to_point"
    icp_accelerate: bool = True
    tuple_scale: float = 0.9
    seed: int = 0


def _prepare(cloud, params):
    down = voxel_downsample(PointCloud(cloud.points), params.voxel)
    knn = min(params.normal_knn, len(down))
    if knn < 3:
        raise DegenerateNeighborhood(f"only {len(down)} points after downsampling")
    with_normals = estimate_normals(down, knn)
    # a cap is a dome: orienting away from its own centroid makes model and
    # sample normals agree no matter where the sensor sits
    oriented = orient_normals_away_from(with_normals, down.points.mean(axis=0))
    feats, _ = compute_fpfh(oriented, params.fpfh_radius_factor * params.voxel)
    return oriented, feats


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PerceptionError as exc:
        raise StageError(name, exc) from exc


def centroid_init(model, sample):
    """Identity rotation with the model centroid moved onto the sample centroid."""
    return RigidTransform(np.eye(3), sample.points.mean(axis=0) - model.points.mean(axis=0))


def choose_init(model, sample, candidates, max_corr_dist):
    """Pick the candidate start with the lowest truncated objective (first wins ties)."""
    tree = cKDTree(sample.points)
    best = None
    for name, T in candidates:
        d, _ = tree.query(T.apply(model.points), k=1)
        E = truncated_objective(d, max_corr_dist)
        if best is None or E < best[0]:
            best = (E, name, T)
    return best[1], best[2]


def estimate_pose(model, sample, params=None, model_up=(0.0, 0.0, 1.0)):
    """Register ``model`` (source) to ``sample`` (target).

    Returns ``(result, quaternion, normal)`` where ``normal`` is the model
    up vector rotated into the sample frame.  Failures are wrapped in
    :class:`StageError` naming the stage.

    Hemispherical caps give FPFH little to work with, and under sensor
    noise the feature matches can be too few or point the wrong way.  ICP
    therefore starts from whichever of the global result and the centroid
    alignment scores lower on the truncated objective, and from the
    centroid alignment alone when feature matching fails.  The model is
    expected to be stored roughly in the pose the sensor sees caps in.
    ``result.init`` records which start was used.
    """
    params = params or PoseParams()
    if len(model) == 0 or len(sample) == 0:
        raise StageError("input", EmptyCloud("model and sample must be non-empty"))
    gate = params.icp_corr_factor * params.voxel
    src, src_feat = _stage("features", _prepare, model, params)
    tgt, tgt_feat = _stage("features", _prepare, sample, params)
    gparams = GlobalParams(voxel=params.voxel, tuple_scale=params.tuple_scale, seed=params.seed)
    candidates = []
    try:
        candidates.append(("global", global_register(src, tgt, src_feat, tgt_feat, gparams)))
    except InsufficientCorrespondences:
        pass
    candidates.append(("centroid", centroid_init(model, sample)))
    init_name, init = choose_init(model, sample, candidates, gate)
    target = sample
    if params.icp_method == "point_to_plane":
        target = _stage("normals", estimate_normals, sample, min(params.normal_knn, len(sample)))
    result = _stage("icp", icp, PointCloud(model.points), target, init, gate,
                    params.icp_max_iter, params.icp_method, accelerate=params.icp_accelerate)
    result.init = init_name
    R = result.transform.rotation
    return result, rotation_to_quaternion(R), cap_normal(R, model_up)
