"""Nets, Voronoi weights, embedding maps and their near-isometry reports.

Map kinds (named after their construction; the letters are the config
surface of the CLI):

* ``G``          heat kernels from net points, max-norm target
* ``H``          Voronoi-weighted heat kernels, Euclidean target
* ``F``          exponentially weighted eigenfunctions, Euclidean target
* ``kuratowski`` distances to net points, max-norm target (baseline)
"""

import math
from dataclasses import dataclass

import numpy as np

from .manifold import TriMesh
from .heat import HeatEvaluator
from . import reporting


@dataclass(frozen=True)
class Net:
    """Ordered sample points with covering radius delta and cell weights."""

    points: np.ndarray
    delta: float
    weights: np.ndarray

    def __len__(self):
        return len(self.points)


def _resolution(manifold):
    if isinstance(manifold, TriMesh):
        return manifold.mean_edge_length()
    P = manifold.sample_points()
    return (manifold.volume / len(P)) ** (1.0 / manifold.dim)


def _mesh_net_fields(manifold, ids):
    return np.stack([manifold.graph_distance_from(i) for i in ids])


def build_net(manifold, delta, seed_point=None):
    """Farthest-point-sampled delta-net with Voronoi weights.

    Deterministic: seeded at vertex 0 (mesh) or the first canonical sample
    point (analytic); each step adds the sample point farthest from the
    net until the covering radius drops to delta.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if delta < _resolution(manifold):
        raise ValueError("net finer than discretization")

    # run until the covering radius is strictly below delta (a point at
    # exactly delta still triggers refinement, so equispaced configurations
    # split once more)
    stop = delta * (1.0 - 1e-12)
    mesh = isinstance(manifold, TriMesh)
    if mesh:
        candidates = manifold.sample_points()
        seed = 0 if seed_point is None else int(seed_point)
        mind = manifold.graph_distance_from(seed)
        chosen = [seed]
        while mind.max() >= stop:
            nxt = int(np.argmax(mind))
            chosen.append(nxt)
            mind = np.minimum(mind, manifold.graph_distance_from(nxt))
        points = np.asarray(chosen, dtype=int)
    else:
        candidates = manifold.sample_points()
        seed = candidates[0] if seed_point is None else np.asarray(seed_point)
        mind = manifold.distance_from(seed, candidates)
        chosen = [seed]
        while mind.max() >= stop:
            nxt = int(np.argmax(mind))
            chosen.append(candidates[nxt])
            mind = np.minimum(mind,
                              manifold.distance_from(candidates[nxt], candidates))
        points = np.vstack(chosen)

    weights, assignment, covering = _voronoi(manifold, points)
    if covering > delta * (1 + 1e-9):
        raise ValueError("covering radius exceeds delta after sampling")
    return Net(points, float(delta), weights)


def _voronoi(manifold, points):
    """Nearest-net-point assignment (ties to the lowest index) and weights."""
    if isinstance(manifold, TriMesh):
        fields = _mesh_net_fields(manifold, points)
        masses = manifold.masses
    else:
        samples = manifold.sample_points()
        fields = manifold.distance_between(points, samples)
        masses = manifold.sample_weights(samples)
    assignment = np.argmin(fields, axis=0)
    covering = float(fields.min(axis=0).max())
    weights = np.zeros(len(points))
    np.add.at(weights, assignment, masses)
    return weights, assignment, covering


def voronoi_weights(manifold, net):
    """Cell masses |A_i| of the nearest-point partition induced by the net."""
    return _voronoi(manifold, net.points)[0]


def replicate_net(net, lam):
    """Replicated point list with multiplicities ceil(|A_i| / lam)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    counts = np.ceil(net.weights / lam).astype(int)
    if isinstance(net.points, np.ndarray) and net.points.ndim == 2:
        points = np.repeat(net.points, counts, axis=0)
    else:
        points = np.repeat(net.points, counts)
    return points, counts


# ---------------------------------------------------------------------------
# Embedding maps
# ---------------------------------------------------------------------------

MAP_KINDS = ("G", "H", "F", "kuratowski")


@dataclass(frozen=True)
class EmbeddingMap:
    kind: str
    norm: str        # "max" | "euclidean"
    scale: float
    t: float = None
    evaluator: HeatEvaluator = None
    manifold: object = None
    net_points: np.ndarray = None
    component_weights: np.ndarray = None  # sqrt cell masses for H
    eigencount: int = None

    def ambient_dim(self):
        if self.kind == "F":
            return self.eigencount
        return len(self.net_points)


def map_scale(kind, dim, t):
    """The normalization making the target dilatation band [1-eps, 1+eps]."""
    n = dim
    if kind == "G":
        return (2 * t) ** ((n + 1) / 2.0) * (2 * math.pi) ** (n / 2.0) \
            * math.exp(0.5)
    if kind in ("H", "F"):
        # 1/V_e with V_e = 1 / (sqrt(2) (4 pi)^(n/4))
        return (2 * t) ** ((n + 2) / 4.0) * math.sqrt(2.0) \
            * (4 * math.pi) ** (n / 4.0)
    if kind == "kuratowski":
        return 1.0
    raise ValueError(f"unknown map kind {kind!r}")


def make_map(kind, *, evaluator=None, net=None, manifold=None, t=None,
             eigencount=None, weights=None):
    if kind not in MAP_KINDS:
        raise ValueError(f"unknown map kind {kind!r}")
    if kind == "kuratowski":
        if manifold is None or net is None:
            raise ValueError("kuratowski map needs a manifold and a net")
        return EmbeddingMap(kind, "max", 1.0, manifold=manifold,
                            net_points=net.points)
    if t is None or t <= 0:
        raise ValueError("heat-kernel maps need t > 0")
    man = evaluator.manifold
    scale = map_scale(kind, evaluator.spectrum.dim, t)
    if kind == "G":
        return EmbeddingMap(kind, "max", scale, t=t, evaluator=evaluator,
                            manifold=man, net_points=net.points)
    if kind == "H":
        w = net.weights if weights is None else np.asarray(weights, dtype=float)
        return EmbeddingMap(kind, "euclidean", scale, t=t, evaluator=evaluator,
                            manifold=man, net_points=net.points,
                            component_weights=np.sqrt(w))
    if eigencount is None or eigencount < 1:
        raise ValueError("F map needs an eigenfunction count >= 1")
    if eigencount >= evaluator.spectrum.count:
        raise ValueError("eigencount exceeds the computed spectrum")
    return EmbeddingMap(kind, "euclidean", scale, t=t, evaluator=evaluator,
                        manifold=man, eigencount=eigencount)


def evaluate_map(emap, points):
    """Image vectors of the map, one row per input point."""
    if emap.kind == "kuratowski":
        man = emap.manifold
        if isinstance(man, TriMesh):
            fields = _mesh_net_fields(man, emap.net_points)
            return fields[:, np.asarray(points, dtype=int)].T
        return man.distance_between(np.atleast_2d(points), emap.net_points)
    if emap.kind == "F":
        sp = emap.evaluator.spectrum
        lam = sp.eigenvalues[1:emap.eigencount + 1]
        vals = sp.values(points)[:, 1:emap.eigencount + 1]
        return emap.scale * np.exp(-lam * emap.t) * vals
    kernels = emap.evaluator.kernel_matrix(points, emap.t, emap.net_points)
    if emap.kind == "H":
        kernels = kernels * emap.component_weights
    return emap.scale * kernels


def image_distance(emap, fx, fy):
    diff = fx - fy
    if emap.norm == "max":
        return np.abs(diff).max(axis=-1)
    return np.linalg.norm(diff, axis=-1)


# ---------------------------------------------------------------------------
# Pair sampling
# ---------------------------------------------------------------------------

def sample_near_pairs(manifold, h_near, count, rng):
    """Point pairs with geodesic separation in (0, h_near]."""
    if isinstance(manifold, TriMesh):
        nv = len(manifold.vertices)
        sources = rng.choice(nv, size=min(64, nv), replace=False)
        xs, ys, ds = [], [], []
        for s in sources:
            field = manifold.graph_distance_from(s)
            close = np.nonzero((field > 0) & (field <= h_near))[0]
            for v in close:
                xs.append(s)
                ys.append(int(v))
                ds.append(field[v])
        if not xs:
            raise ValueError("no pairs within h_near")
        idx = rng.permutation(len(xs))[:count]
        return (np.asarray(xs)[idx], np.asarray(ys)[idx],
                np.asarray(ds)[idx])
    P = manifold.sample_points()
    base = P[rng.integers(0, len(P), size=count)]
    radii = rng.uniform(h_near * 0.25, h_near, size=count)
    partners = np.empty_like(base)
    for i in range(count):
        frame = manifold.tangent_frame(base[i])
        direction = frame.T @ _unit_vector(rng, manifold.dim)
        partners[i] = manifold.exp(base[i], radii[i] * direction)[0]
    dists = manifold.distance(base, partners)
    keep = dists > 0
    if not np.any(keep):
        raise ValueError("no pairs within h_near")
    return base[keep], partners[keep], dists[keep]


def _unit_vector(rng, n):
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


def sample_far_pairs(manifold, h_far, count, rng):
    """Point pairs with geodesic separation >= h_far."""
    if isinstance(manifold, TriMesh):
        nv = len(manifold.vertices)
        sources = rng.choice(nv, size=min(32, nv), replace=False)
        xs, ys, ds = [], [], []
        per = max(4, count // len(sources))
        for s in sources:
            field = manifold.graph_distance_from(s)
            far = np.nonzero(field >= h_far)[0]
            if far.size:
                pick = rng.choice(far, size=min(per, far.size), replace=False)
                for v in pick:
                    xs.append(s)
                    ys.append(int(v))
                    ds.append(field[v])
        if not xs:
            raise ValueError("no pairs beyond h_far")
        idx = rng.permutation(len(xs))[:count]
        return (np.asarray(xs)[idx], np.asarray(ys)[idx], np.asarray(ds)[idx])
    P = manifold.sample_points()
    xs, ys, ds = [], [], []
    tries = 0
    while len(xs) < count and tries < 50 * count:
        i, j = rng.integers(0, len(P), size=2)
        d = manifold.distance(P[i:i + 1], P[j:j + 1])[0]
        tries += 1
        if d >= h_far:
            xs.append(P[i])
            ys.append(P[j])
            ds.append(d)
    if not xs:
        raise ValueError("no pairs beyond h_far")
    return np.vstack(xs), np.vstack(ys), np.asarray(ds)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingReport:
    kind: str
    ratios: np.ndarray
    distances: np.ndarray
    h_near: float
    t: float
    params: dict

    @property
    def dil_min(self):
        return float(self.ratios.min())

    @property
    def dil_max(self):
        return float(self.ratios.max())

    def quantile(self, q):
        return float(np.quantile(self.ratios, q))

    def within_band(self, lo, hi):
        return float(np.mean((self.ratios >= lo) & (self.ratios <= hi)))

    def summary(self):
        out = {"map": self.kind, "dil_min": self.dil_min,
               "dil_max": self.dil_max, "dil_median": self.quantile(0.5),
               "pairs": len(self.ratios), "h_near": self.h_near}
        if self.t is not None:
            out["t"] = self.t
        out.update(self.params)
        return out


def default_h_near(manifold):
    if isinstance(manifold, TriMesh):
        return 4.0 * manifold.mean_edge_length()
    return _resolution(manifold) * 4.0


def default_h_far(manifold):
    if isinstance(manifold, TriMesh):
        return manifold.diameter_estimate() / 8.0
    return manifold.diameter() / 8.0


def dilatation_report(emap, manifold, h_near, *, pairs=None, count=400,
                      seed=0):
    """Difference-quotient dilatation over near pairs.

    The stored scale already carries the normalizing constant, so a
    near-isometry shows ratios inside [1-eps, 1+eps] directly.
    """
    if h_near <= 0:
        raise ValueError("h_near must be positive")
    if isinstance(manifold, TriMesh) and h_near < 3 * manifold.mean_edge_length():
        raise ValueError("h_near below 3 mesh edge lengths: difference "
                         "quotients would be dominated by graph error")
    if pairs is None:
        rng = np.random.default_rng(seed)
        xs, ys, ds = sample_near_pairs(manifold, h_near, count, rng)
    else:
        xs, ys, ds = pairs
    fx = evaluate_map(emap, xs)
    fy = evaluate_map(emap, ys)
    ratios = image_distance(emap, fx, fy) / ds
    return EmbeddingReport(emap.kind, ratios, ds, float(h_near), emap.t,
                           {"norm": emap.norm, "m": emap.ambient_dim()})


def injectivity_report(emap, manifold, h_far, *, pairs=None, count=400,
                       seed=0):
    """Minimal image separation over far pairs; positive margin certifies
    injectivity at the sample resolution."""
    if h_far <= 0:
        raise ValueError("h_far must be positive")
    if pairs is None:
        rng = np.random.default_rng(seed)
        xs, ys, ds = sample_far_pairs(manifold, h_far, count, rng)
    else:
        xs, ys, ds = pairs
    fx = evaluate_map(emap, xs)
    fy = evaluate_map(emap, ys)
    seps = image_distance(emap, fx, fy)
    return {"margin": float(seps.min()), "pairs": len(seps),
            "h_far": float(h_far), "min_distance": float(np.min(ds))}


def continuous_dilatation(ev, p, t):
    """Dilatation of the kernel map into L2(M) at p, by quadrature.

    Returns the maximum over an orthonormal tangent frame at p of
    (2t)^((n+2)/4) sqrt(2) (4 pi)^(n/4) ||v . grad K_N(p,t;.)||_L2.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    sp = ev.spectrum
    n = sp.dim
    man = ev.manifold
    frame = sp.tangent_frame(p)
    if sp.vectors is not None:
        Q = man.sample_points()
        wq = man.masses
        gradp = sp.gradients(np.array([p]))[0][: ev.n_trunc + 1]
    else:
        Q = man.sample_points()
        wq = man.sample_weights(Q)
        gradp = sp.gradients(np.atleast_2d(p))[0][: ev.n_trunc + 1]
    vq = sp.values(Q)[:, : ev.n_trunc + 1]
    w = ev.weights(t)
    scale = map_scale("H", n, t)
    best = 0.0
    for v in frame:
        coeff = w * (gradp @ v)
        field = vq @ coeff
        quad = float(np.sum(wq * field ** 2))
        best = max(best, scale * math.sqrt(quad))
    return best


def scan_embedding(kind, *, evaluator=None, net=None, manifold=None,
                   eigencount=None, t_max=1.0, levels=8, h_near=None,
                   h_far=None, count=400, seed=0):
    """Evaluate the map over a geometric t-grid and pick the best time.

    A suitable small t is known to exist but not constructively; the scan
    substitutes for the missing constants.
    """
    man = manifold if manifold is not None else evaluator.manifold
    h_near = default_h_near(man) if h_near is None else h_near
    h_far = default_h_far(man) if h_far is None else h_far
    results = []
    for j in range(levels):
        t = t_max * 2.0 ** (-j)
        emap = make_map(kind, evaluator=evaluator, net=net, manifold=man,
                        t=t, eigencount=eigencount)
        rep = dilatation_report(emap, man, h_near, count=count, seed=seed)
        inj = injectivity_report(emap, man, h_far, count=count, seed=seed)
        results.append({"t": t, "report": rep, "injectivity": inj})
    best = min(results,
               key=lambda r: max(abs(r["report"].dil_max - 1.0),
                                 abs(1.0 - r["report"].dil_min)))
    return results, best


def export_embedding(emap, points, path):
    image = evaluate_map(emap, points)
    header = ["point"] + [f"coord_{i + 1}" for i in range(image.shape[1])]
    rows = [[i] + list(row) for i, row in enumerate(image)]
    reporting.write_csv(path, header, rows)
