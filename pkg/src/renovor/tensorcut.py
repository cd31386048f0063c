"""Tensor-cut vessel segmentation.

Binary MRF over the voxel grid whose energy combines an intensity part and a
tensor part:

    E(L) = sum_x -log Pr(I_x | L_x) + lambda_I * sum_(m,n) V(L_m, L_n)
         + omega * [ sum_x -log Pr(T_x | L_x) + lambda_T * sum_(m,n) U(L_m, L_n) ]

Intensity likelihoods are per-class Gaussian mixtures fitted to seed samples;
tensor likelihoods are isotropic Gaussians in geodesic distance to per-class
Frechet means of seed tensors. Smoothness is a Potts model with
boundary-sensitive weights (intensity contrast and tensor geodesic contrast),
divided by the physical neighbor distance. The energy is minimized exactly by
max-flow/min-cut.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from renovor.maxflow import FlowNetwork, max_flow_min_cut
from renovor.spd import frechet_mean, geodesic_distance, geodesic_distance_field, geodesic_distance_pairs
from renovor.vesselness import TensorField
from renovor.volume import LabelVolume, ScalarVolume, dilate_ball

__all__ = [
    "FOREGROUND",
    "BACKGROUND",
    "GmmModel",
    "MrfEnergyParams",
    "SeedLabels",
    "PairwiseWeights",
    "TensorCutProblem",
    "fit_gmm",
    "gmm_neg_log_likelihood",
    "tensor_neg_log_likelihood",
    "pairwise_weights",
    "estimate_seeds",
    "build_problem",
    "tensor_cut_segment",
]

FOREGROUND = 1
BACKGROUND = 0

NLL_CLAMP = 50.0
HARD_SEED_CAPACITY = 1e9
VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class GmmModel:
    """1-D Gaussian mixture: weights sum to 1, variances are floored."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood_history: tuple[float, ...] = ()

    def __post_init__(self):
        w = np.asarray(self.weights, np.float64)
        m = np.asarray(self.means, np.float64)
        v = np.asarray(self.variances, np.float64)
        if not (w.shape == m.shape == v.shape) or w.ndim != 1 or w.size < 1:
            raise ValueError("weights/means/variances must be equal-length 1-D")
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be >= 0 and sum to 1")
        if v.min() <= 0:
            raise ValueError("variances must be positive")
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.weights.size


def fit_gmm(
    samples,
    n_components: int = 2,
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 200,
    var_floor: float = VAR_FLOOR,
) -> GmmModel:
    """EM fit of a 1-D GMM from k-means++ initialization (seeded RNG).

    Raises ValueError when there are fewer than n_components distinct samples.
    The per-iteration total log-likelihood is kept on the returned model.
    """
    x = np.asarray(samples, np.float64).ravel()
    k = int(n_components)
    if k < 1:
        raise ValueError("n_components must be >= 1")
    distinct = np.unique(x)
    if distinct.size < k:
        raise ValueError(f"need at least {k} distinct samples, got {distinct.size}")

    rng = np.random.default_rng(seed)
    centers = [x[int(rng.integers(x.size))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total == 0:
            unused = distinct[~np.isin(distinct, centers)]
            centers.append(float(unused[0]))
        else:
            centers.append(float(rng.choice(x, p=d2 / total)))
    centers = np.sort(np.array(centers))

    # hard assignment to nearest center gives the starting parameters
    assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
    weights = np.empty(k)
    means = np.empty(k)
    variances = np.empty(k)
    for c in range(k):
        sel = x[assign == c]
        weights[c] = max(sel.size, 1) / x.size
        means[c] = sel.mean() if sel.size else centers[c]
        variances[c] = max(sel.var() if sel.size else 0.0, var_floor)
    weights /= weights.sum()

    history = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        log_comp = (
            np.log(weights)[None, :]
            - 0.5 * np.log(2.0 * np.pi * variances)[None, :]
            - 0.5 * (x[:, None] - means[None, :]) ** 2 / variances[None, :]
        )
        log_norm = logsumexp(log_comp, axis=1)
        ll = float(log_norm.sum())
        history.append(ll)
        resp = np.exp(log_comp - log_norm[:, None])
        nk = np.maximum(resp.sum(axis=0), 1e-12)
        weights = nk / x.size
        weights /= weights.sum()
        means = (resp * x[:, None]).sum(axis=0) / nk
        variances = np.maximum(
            (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / nk, var_floor
        )
        if abs(ll - prev_ll) <= tol:
            break
        prev_ll = ll
    order = np.argsort(means)
    return GmmModel(
        weights[order], means[order], variances[order], tuple(history)
    )


def gmm_neg_log_likelihood(model: GmmModel, value):
    """-log of the mixture density, clamped to <= 50. Scalar in, scalar out;
    arrays are evaluated elementwise."""
    x = np.asarray(value, np.float64)
    log_comp = (
        np.log(model.weights)
        - 0.5 * np.log(2.0 * np.pi * model.variances)
        - 0.5 * (x[..., None] - model.means) ** 2 / model.variances
    )
    nll = np.minimum(-logsumexp(log_comp, axis=-1), NLL_CLAMP)
    return float(nll) if np.isscalar(value) or x.ndim == 0 else nll


def tensor_neg_log_likelihood(
    foreground_mean, background_mean, dispersion: float, tensor_six, label: int
) -> float:
    """Tensor data term: squared geodesic distance to the class mean over
    2*dispersion^2 (the additive normalization constant is omitted)."""
    if dispersion <= 0:
        raise ValueError("dispersion must be > 0")
    mean = foreground_mean if label == FOREGROUND else background_mean
    d = geodesic_distance(tensor_six, mean)
    return d * d / (2.0 * dispersion * dispersion)


@dataclass(frozen=True)
class MrfEnergyParams:
    """Energy weights; sigma values default to self-tuning from the data
    (mean absolute neighbor intensity difference / mean neighbor geodesic
    distance)."""

    lambda_i: float = 1.0
    lambda_t: float = 1.0
    omega: float = 0.5
    sigma_boundary_i: float | None = None
    sigma_boundary_t: float | None = None
    neighborhood: int = 6

    def __post_init__(self):
        if self.lambda_i < 0 or self.lambda_t < 0 or self.omega < 0:
            raise ValueError("lambda_i, lambda_t, omega must be >= 0")
        if self.sigma_boundary_i is not None and self.sigma_boundary_i <= 0:
            raise ValueError("sigma_boundary_i must be > 0")
        if self.sigma_boundary_t is not None and self.sigma_boundary_t <= 0:
            raise ValueError("sigma_boundary_t must be > 0")
        if self.neighborhood not in (6, 26):
            raise ValueError("neighborhood must be 6 or 26")


@dataclass(frozen=True)
class SeedLabels:
    """Disjoint foreground/background voxel masks ([z,y,x] boolean)."""

    foreground: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        fg = np.ascontiguousarray(self.foreground, bool)
        bg = np.ascontiguousarray(self.background, bool)
        if fg.shape != bg.shape or fg.ndim != 3:
            raise ValueError("seed masks must be equal-shape 3-D booleans")
        if np.any(fg & bg):
            raise ValueError("foreground and background seeds must be disjoint")
        fg.flags.writeable = False
        bg.flags.writeable = False
        object.__setattr__(self, "foreground", fg)
        object.__setattr__(self, "background", bg)


def _half_offsets(neighborhood: int):
    if neighborhood == 6:
        return [(0, 0, 1), (0, 1, 0), (1, 0, 0)]
    offsets = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dz, dy, dx) > (0, 0, 0):
                    offsets.append((dz, dy, dx))
    return offsets


class PairwiseWeights(NamedTuple):
    index_a: np.ndarray  # flat x-fastest voxel indices
    index_b: np.ndarray
    capacity: np.ndarray  # lambda_I term + omega*lambda_T term, per pair
    sigma_i: float
    sigma_t: float


def pairwise_weights(
    vol: ScalarVolume, field: TensorField | None, params: MrfEnergyParams
) -> PairwiseWeights:
    """n-link capacities for every neighbor pair:
    lambda_I*exp(-dI^2/2sigma_I^2)/dist + omega*lambda_T*exp(-d_geo^2/2sigma_T^2)/dist.

    The tensor part is skipped (and sigma_t reported as 0) when
    omega*lambda_T is 0 or no field is given.
    """
    nz, ny, nx = vol.geometry.shape_zyx
    sx, sy, sz = vol.geometry.spacing
    intensity = vol.data.astype(np.float64)
    flat_index = np.arange(nz * ny * nx, dtype=np.int64).reshape(nz, ny, nx)
    use_tensor = params.omega * params.lambda_t > 0 and field is not None

    def axis_slices(n, d):
        if d >= 0:
            return slice(0, n - d), slice(d, n)
        return slice(-d, n), slice(0, n + d)

    idx_a, idx_b, di, dist, dgeo = [], [], [], [], []
    for dz, dy, dx in _half_offsets(params.neighborhood):
        (sz_src, sz_dst) = axis_slices(nz, dz)
        (sy_src, sy_dst) = axis_slices(ny, dy)
        (sx_src, sx_dst) = axis_slices(nx, dx)
        src = (sz_src, sy_src, sx_src)
        dst = (sz_dst, sy_dst, sx_dst)
        a = flat_index[src].ravel()
        b = flat_index[dst].ravel()
        idx_a.append(a)
        idx_b.append(b)
        di.append(intensity[src].ravel() - intensity[dst].ravel())
        dist.append(
            np.full(a.size, np.sqrt((dx * sx) ** 2 + (dy * sy) ** 2 + (dz * sz) ** 2))
        )
        if use_tensor:
            six = field.data.reshape(-1, 6)
            dgeo.append(geodesic_distance_pairs(six[a], six[b]))

    index_a = np.concatenate(idx_a)
    index_b = np.concatenate(idx_b)
    delta_i = np.concatenate(di)
    dist_mm = np.concatenate(dist)

    # self-tuned sigmas are floored at 1e-6 so that float-noise-level
    # contrasts (near-constant volumes / near-identical tensors) behave as
    # zero contrast instead of being amplified into full boundaries
    sigma_i = params.sigma_boundary_i
    if sigma_i is None:
        sigma_i = max(float(np.mean(np.abs(delta_i))), 1e-6)
    capacity = params.lambda_i * np.exp(
        -(delta_i**2) / (2.0 * sigma_i**2)
    ) / dist_mm

    sigma_t = 0.0
    if use_tensor:
        d_geo = np.concatenate(dgeo)
        sigma_t = params.sigma_boundary_t
        if sigma_t is None:
            sigma_t = max(float(np.mean(d_geo)), 1e-6)
        capacity = capacity + params.omega * params.lambda_t * np.exp(
            -(d_geo**2) / (2.0 * sigma_t**2)
        ) / dist_mm

    return PairwiseWeights(index_a, index_b, capacity, float(sigma_i), float(sigma_t))


def estimate_seeds(
    vol: ScalarVolume,
    vesselness_vol: ScalarVolume,
    fg_vesselness_percentile: float = 99.5,
    bg_intensity_percentile: float = 50.0,
    vessel_region_percentile: float = 95.0,
    exclusion_dilate_mm: float = 2.0,
    fg_intensity_percentile: float = 0.0,
) -> SeedLabels:
    """Seed policy: foreground = strongest vesselness voxels; background =
    low-intensity voxels away from any (dilated) plausible vessel.

    ``fg_intensity_percentile`` > 0 additionally requires foreground seeds to
    be bright (contrast-enhanced vessels are), which rejects high-curvature
    organ rims whose Hessians look tubular but whose intensity is parenchymal.
    """
    v = vesselness_vol.data.astype(np.float64)
    fg = v >= np.percentile(v, fg_vesselness_percentile)
    if fg_intensity_percentile > 0:
        fg &= vol.data >= np.percentile(vol.data, fg_intensity_percentile)
    vessel_region = v >= np.percentile(v, vessel_region_percentile)
    excl = dilate_ball(
        LabelVolume(vol.geometry, vessel_region.astype(np.uint16)),
        exclusion_dilate_mm,
    ).mask()
    bg = (vol.data <= np.percentile(vol.data, bg_intensity_percentile)) & ~excl
    if not fg.any() or not bg.any():
        raise ValueError("seed estimation produced an empty seed set")
    return SeedLabels(fg, bg & ~fg)


@dataclass(frozen=True)
class TensorCutProblem:
    """A fully-instantiated MRF instance: data terms, n-link table, seeds."""

    geometry: object
    data_fg: np.ndarray  # D_x(FOREGROUND), flat
    data_bg: np.ndarray  # D_x(BACKGROUND), flat
    pairwise: PairwiseWeights
    seeds: SeedLabels
    gmm_fg: GmmModel
    gmm_bg: GmmModel
    tensor_fg_mean: np.ndarray | None
    tensor_bg_mean: np.ndarray | None
    tensor_dispersion: float | None

    def energy(self, labels_flat: np.ndarray) -> float:
        """E(L) for any labeling (True = foreground), seed terms excluded."""
        lab = np.asarray(labels_flat, bool).ravel()
        e = float(self.data_fg[lab].sum() + self.data_bg[~lab].sum())
        differ = lab[self.pairwise.index_a] != lab[self.pairwise.index_b]
        return e + float(self.pairwise.capacity[differ].sum())

    def solve(self) -> np.ndarray:
        """Exact minimizer of the energy respecting seeds (flat bool array)."""
        n = self.data_fg.size
        source, sink = n, n + 1
        net = FlowNetwork(n + 2, source, sink)

        shift = np.minimum(self.data_fg, self.data_bg)
        cap_source = self.data_bg - shift  # cut when x takes BACKGROUND
        cap_sink = self.data_fg - shift  # cut when x takes FOREGROUND
        fg = self.seeds.foreground.ravel()
        bg = self.seeds.background.ravel()
        cap_source = np.where(fg, HARD_SEED_CAPACITY, np.where(bg, 0.0, cap_source))
        cap_sink = np.where(bg, HARD_SEED_CAPACITY, np.where(fg, 0.0, cap_sink))

        nodes = np.arange(n, dtype=np.int64)
        nz_s = cap_source > 0
        net.add_arcs(
            np.full(int(nz_s.sum()), source, np.int64), nodes[nz_s], cap_source[nz_s]
        )
        nz_t = cap_sink > 0
        net.add_arcs(
            nodes[nz_t], np.full(int(nz_t.sum()), sink, np.int64), cap_sink[nz_t]
        )
        net.add_arcs(
            self.pairwise.index_a,
            self.pairwise.index_b,
            self.pairwise.capacity,
            self.pairwise.capacity,
        )
        _, side = max_flow_min_cut(net)
        return side[:n].copy()


def _subsample(indices: np.ndarray, limit: int) -> np.ndarray:
    if indices.size <= limit:
        return indices
    step = int(np.ceil(indices.size / limit))
    return indices[::step]


def build_problem(
    vol: ScalarVolume,
    field: TensorField | None,
    seeds: SeedLabels,
    params: MrfEnergyParams | None = None,
    n_gmm_components: int = 2,
    gmm_seed: int = 0,
    max_tensor_seeds: int = 200,
) -> TensorCutProblem:
    """Fit the likelihood models from the seeds and assemble the MRF.

    Both negative log-likelihoods are clamped at 50 when entering the data
    terms, keeping all capacities bounded far below the hard-seed capacity.
    """
    params = params or MrfEnergyParams()
    if seeds.foreground.shape != vol.geometry.shape_zyx:
        raise ValueError("seed masks and volume geometry disagree")
    if not seeds.foreground.any() or not seeds.background.any():
        raise ValueError("both seed sets must be non-empty")
    use_tensor = params.omega > 0 and field is not None

    intensity = vol.data.astype(np.float64).ravel()
    fg_flat = seeds.foreground.ravel()
    bg_flat = seeds.background.ravel()

    def fit_for(selection):
        samples = intensity[selection]
        k = min(n_gmm_components, np.unique(samples).size)
        return fit_gmm(samples, k, seed=gmm_seed)

    gmm_fg = fit_for(fg_flat)
    gmm_bg = fit_for(bg_flat)
    data_fg = gmm_neg_log_likelihood(gmm_fg, intensity)
    data_bg = gmm_neg_log_likelihood(gmm_bg, intensity)

    tensor_fg_mean = tensor_bg_mean = None
    dispersion = None
    if use_tensor:
        six = field.data.reshape(-1, 6).astype(np.float64)
        fg_idx = _subsample(np.flatnonzero(fg_flat), max_tensor_seeds)
        bg_idx = _subsample(np.flatnonzero(bg_flat), max_tensor_seeds)
        tensor_fg_mean = frechet_mean(six[fg_idx]).mean
        tensor_bg_mean = frechet_mean(six[bg_idx]).mean
        d_fg_seeds = geodesic_distance_pairs(
            six[fg_idx], np.broadcast_to(tensor_fg_mean, (fg_idx.size, 6))
        )
        d_bg_seeds = geodesic_distance_pairs(
            six[bg_idx], np.broadcast_to(tensor_bg_mean, (bg_idx.size, 6))
        )
        dispersion = max(
            float(np.concatenate([d_fg_seeds, d_bg_seeds]).mean()), 1e-6
        )
        inv_two_disp2 = 1.0 / (2.0 * dispersion * dispersion)
        d_fg = geodesic_distance_field(field, tensor_fg_mean).ravel()
        d_bg = geodesic_distance_field(field, tensor_bg_mean).ravel()
        data_fg = data_fg + params.omega * np.minimum(
            d_fg * d_fg * inv_two_disp2, NLL_CLAMP
        )
        data_bg = data_bg + params.omega * np.minimum(
            d_bg * d_bg * inv_two_disp2, NLL_CLAMP
        )

    pw = pairwise_weights(vol, field if use_tensor else None, params)
    return TensorCutProblem(
        geometry=vol.geometry,
        data_fg=data_fg,
        data_bg=data_bg,
        pairwise=pw,
        seeds=seeds,
        gmm_fg=gmm_fg,
        gmm_bg=gmm_bg,
        tensor_fg_mean=tensor_fg_mean,
        tensor_bg_mean=tensor_bg_mean,
        tensor_dispersion=dispersion,
    )


def tensor_cut_segment(
    vol: ScalarVolume,
    field: TensorField | None,
    seeds: SeedLabels,
    params: MrfEnergyParams | None = None,
    **kwargs,
) -> LabelVolume:
    """Segment the volume by exact minimization of the tensor-cut energy."""
    problem = build_problem(vol, field, seeds, params, **kwargs)
    labels = problem.solve()
    out = labels.reshape(vol.geometry.shape_zyx).astype(np.uint16)
    return LabelVolume(vol.geometry, out)
