"""Model state and the scoring pipeline.

Parameters all live in tangent space (entity embeddings, relation
translations) or are plain reals (scales, angles, biases, curvature
pre-activations), so optimization stays Euclidean; the ball only ever
holds intermediate values.

The whole pipeline for a batch of queries runs through ``_forward``,
which both ``score``/``score_against_all`` and the trainer use, so a
number scored during evaluation is bitwise the number scored during
training.  ``backward`` consumes the cache that ``_forward`` builds and
hand-accumulates reverse-mode gradients; there is no autograd anywhere.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import BALL_EPS, DEN_EPS, artanh_ratio, tanh_ratio, tanh_ratio_prime_over_z

CURVATURE_MODES = ("fixed_one", "global", "per_relation", "attention")
GEOMETRIES = ("hyperbolic", "euclidean")

# softplus(SOFTPLUS_UNIT) = 1; used to start trainable curvatures at 1
SOFTPLUS_UNIT = float(np.log(np.e - 1.0))
# curvatures are floored here (softplus can underflow to 0 in f64)
CURV_FLOOR = 1e-12

PARAM_ORDER = (
    "ent_emb",
    "ent_bias",
    "rel_emb",
    "rel_scale",
    "rel_theta",
    "rel_trans",
    "attn_a",
    "attn_p",
    "curv_raw",
)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out[0] if scalar else out


@dataclass
class ModelConfig:
    dim: int
    curvature_mode: str = "attention"
    geometry: str = "hyperbolic"
    use_inter_level: bool = True
    use_intra_level: bool = True
    init_scale: float = 1e-3

    def validate(self):
        if self.dim < 2 or self.dim % 2:
            raise ValueError(f"dim must be a positive even integer, got {self.dim}")
        if self.curvature_mode not in CURVATURE_MODES:
            raise ValueError(f"unknown curvature_mode {self.curvature_mode!r}")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")
        return self


@dataclass
class SparseGrads:
    """Gradients restricted to the rows a batch actually touched."""

    ent_rows: np.ndarray  # (K,) unique entity ids
    ent_emb: np.ndarray   # (K, d)
    ent_bias: np.ndarray  # (K,)
    rel_rows: np.ndarray  # (L,) unique relation ids
    rel_emb: np.ndarray
    rel_scale: np.ndarray
    rel_theta: np.ndarray
    rel_trans: np.ndarray
    attn_a: np.ndarray    # (d,)
    attn_p: np.ndarray    # (d,)
    curv_raw: np.ndarray | None = None  # () global / (L,) per_relation rows

    def to_dense(self, model):
        """Full-shape gradient arrays (for finite-difference checks)."""
        dense = {name: np.zeros_like(arr) for name, arr in model.params.items()}
        dense["ent_emb"][self.ent_rows] = self.ent_emb
        dense["ent_bias"][self.ent_rows] = self.ent_bias
        for name in ("rel_emb", "rel_scale", "rel_theta", "rel_trans"):
            dense[name][self.rel_rows] = getattr(self, name)
        dense["attn_a"] = self.attn_a.copy()
        dense["attn_p"] = self.attn_p.copy()
        if self.curv_raw is not None:
            if model.config.curvature_mode == "global":
                dense["curv_raw"] = np.asarray(float(self.curv_raw))
            else:
                dense["curv_raw"][self.rel_rows] = self.curv_raw
        return dense


def _segment_sum(values, index, n_segments):
    """Sum `values` rows into `n_segments` buckets given by `index`."""
    values = np.asarray(values, dtype=np.float64)
    flat_idx = index.ravel()
    if values.ndim == index.ndim:
        return np.bincount(flat_idx, weights=values.ravel(), minlength=n_segments)
    d = values.shape[-1]
    flat = values.reshape(-1, d)
    out = np.empty((n_segments, d))
    for j in range(d):
        out[:, j] = np.bincount(flat_idx, weights=flat[:, j], minlength=n_segments)
    return out


class KGEModel:
    def __init__(self, config, n_entities, n_relations, params):
        self.config = config.validate()
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)  # after reciprocal augmentation
        self.params = params

    # -- construction ------------------------------------------------

    @classmethod
    def init(cls, config, n_entities, n_relations, seed=0):
        """Fresh parameters: Gaussian embeddings, identity transforms."""
        config.validate()
        if n_entities < 1 or n_relations < 1:
            raise ValueError("need at least one entity and one relation")
        rng = np.random.default_rng(seed)
        d = config.dim
        s = config.init_scale
        params = {
            "ent_emb": rng.normal(0.0, 1.0, (n_entities, d)) * s,
            "ent_bias": np.zeros(n_entities),
            "rel_emb": rng.normal(0.0, 1.0, (n_relations, d)) * s,
            "rel_scale": np.ones((n_relations, d // 2)),
            "rel_theta": np.zeros((n_relations, d // 2)),
            "rel_trans": rng.normal(0.0, 1.0, (n_relations, d)) * s,
            "attn_a": rng.normal(0.0, 1.0, d) * s,
            "attn_p": rng.normal(0.0, 1.0, d) * s,
        }
        if config.curvature_mode == "global":
            params["curv_raw"] = np.asarray(SOFTPLUS_UNIT)
        elif config.curvature_mode == "per_relation":
            params["curv_raw"] = np.full(n_relations, SOFTPLUS_UNIT)
        return cls(config, n_entities, n_relations, params)

    def copy(self):
        params = {k: np.array(v, copy=True) for k, v in self.params.items()}
        return KGEModel(self.config, self.n_entities, self.n_relations, params)

    # -- id hygiene ---------------------------------------------------

    def _check_entities(self, ids):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_entities):
            raise IndexError("entity id out of range")
        return ids

    def _check_relations(self, ids):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_relations):
            raise IndexError("relation id out of range")
        return ids

    # -- curvature ----------------------------------------------------

    def _curvature_batch(self, he, re, r_ids):
        """Per-query curvature plus the pieces backward needs.

        Returns (c, aux) with c shaped (B,).
        """
        mode = self.config.curvature_mode
        B = he.shape[0]
        if mode == "fixed_one":
            return np.ones(B), {}
        if mode == "global":
            raw = float(self.params["curv_raw"])
            c0 = float(softplus(np.asarray(raw)))
            c = np.full(B, max(c0, CURV_FLOOR))
            dcdraw = float(sigmoid(np.asarray(raw))) if c0 >= CURV_FLOOR else 0.0
            return c, {"dcdraw": dcdraw}
        if mode == "per_relation":
            raw = self.params["curv_raw"][r_ids]
            c0 = softplus(raw)
            floored = c0 < CURV_FLOOR
            c = np.maximum(c0, CURV_FLOOR)
            dcdraw = np.where(floored, 0.0, sigmoid(raw))
            return c, {"dcdraw": dcdraw}
        # attention: a sigmoid gate over the two projections picks how
        # much of the head vs the relation embedding feeds the softplus.
        a = self.params["attn_a"]
        p = self.params["attn_p"]
        lh = np.sum(he * a, axis=-1)
        lr = np.sum(re * a, axis=-1)
        alpha_h = sigmoid(lh - lr)
        alpha_r = 1.0 - alpha_h
        v = alpha_h[:, None] * he + alpha_r[:, None] * re
        q = np.sum(p * v, axis=-1)
        c0 = softplus(q)
        floored = c0 < CURV_FLOOR
        c = np.maximum(c0, CURV_FLOOR)
        dcdq = np.where(floored, 0.0, sigmoid(q))
        return c, {"alpha_h": alpha_h, "alpha_r": alpha_r, "v": v, "dcdq": dcdq}

    def curvature(self, h, r):
        """c_{h,r} for a single query, as a python float."""
        h = int(self._check_entities(np.asarray([h]))[0])
        r = int(self._check_relations(np.asarray([r]))[0])
        he = self.params["ent_emb"][[h]]
        re = self.params["rel_emb"][[r]]
        c, _ = self._curvature_batch(he, re, np.asarray([r]))
        return float(c[0])

    # -- scoring ------------------------------------------------------

    def transform_head(self, h, r, c=None):
        """Head after scale, exp0 and rotation: a point on the ball."""
        if self.config.geometry != "hyperbolic":
            raise ValueError("transform_head is defined for hyperbolic geometry")
        h = int(self._check_entities(np.asarray([h]))[0])
        r = int(self._check_relations(np.asarray([r]))[0])
        if c is None:
            c = self.curvature(h, r)
        he = self.params["ent_emb"][h]
        if self.config.use_inter_level:
            he = geometry.block_scale(he, self.params["rel_scale"][r])
        point = geometry.exp0(he, c)
        if self.config.use_intra_level:
            point = geometry.block_rotate(point, self.params["rel_theta"][r])
        return point

    def score(self, h, r, t):
        scores = self._forward(
            np.asarray([h]), np.asarray([r]), np.asarray([[t]]), need_cache=False
        )
        return float(scores[0, 0])

    def score_against_all(self, h, r, chunk=16384):
        """score(h, r, j) for every entity j, bitwise equal to the loop."""
        h = np.asarray([h])
        r = np.asarray([r])
        out = np.empty(self.n_entities)
        for start in range(0, self.n_entities, chunk):
            tails = np.arange(start, min(start + chunk, self.n_entities))
            out[tails] = self._forward(h, r, tails[None, :], need_cache=False)[0]
        return out

    def _forward(self, h_ids, r_ids, t_ids, need_cache=False):
        """Scores for tails t_ids[b, m] against query (h_ids[b], r_ids[b]).

        Shapes: h_ids (B,), r_ids (B,), t_ids (B, M) -> (B, M).
        """
        h_ids = self._check_entities(np.asarray(h_ids))
        r_ids = self._check_relations(np.asarray(r_ids))
        t_ids = self._check_entities(np.asarray(t_ids))
        P = self.params
        he = P["ent_emb"][h_ids]          # (B, d)
        re = P["rel_emb"][r_ids]
        w = P["rel_trans"][r_ids]
        te = P["ent_emb"][t_ids]          # (B, M, d)
        bias = P["ent_bias"][h_ids][:, None] + P["ent_bias"][t_ids]

        if self.config.geometry == "euclidean":
            return self._forward_euclidean(h_ids, r_ids, t_ids, he, w, te, bias, need_cache)

        c, curv_aux = self._curvature_batch(he, re, r_ids)
        sc = np.sqrt(c)                   # (B,)

        # head: inter-level scaling in tangent space, exp0, rotation
        if self.config.use_inter_level:
            k = P["rel_scale"][r_ids]
            u = (he.reshape(he.shape[:-1] + (-1, 2)) * k[..., None]).reshape(he.shape)
        else:
            k = None
            u = he
        nu2 = np.sum(u * u, axis=-1)
        nu = np.sqrt(nu2)
        zu = sc * nu
        fu = tanh_ratio(zu)
        ru = tanh_ratio_prime_over_z(zu)
        x1 = fu[:, None] * u
        if self.config.use_intra_level:
            th = P["rel_theta"][r_ids]
            cos, sin = np.cos(th), np.sin(th)
            x1p = x1.reshape(x1.shape[:-1] + (-1, 2))
            x2 = np.empty_like(x1p)
            x2[..., 0] = x1p[..., 0] * cos - x1p[..., 1] * sin
            x2[..., 1] = x1p[..., 0] * sin + x1p[..., 1] * cos
            x2 = x2.reshape(x1.shape)
        else:
            th = cos = sin = None
            x2 = x1

        # relation translation mapped onto the ball at this query's c
        nw2 = np.sum(w * w, axis=-1)
        zw = sc * np.sqrt(nw2)
        fw = tanh_ratio(zw)
        rw = tanh_ratio_prime_over_z(zw)
        eps = fw[:, None] * w

        # lhs = x2 (+)_c eps
        cB = c[:, None]
        dot1 = np.sum(x2 * eps, axis=-1, keepdims=True)
        a1 = np.sum(x2 * x2, axis=-1, keepdims=True)
        b1 = np.sum(eps * eps, axis=-1, keepdims=True)
        A1 = 1.0 + 2.0 * cB * dot1 + cB * b1
        B1 = 1.0 - cB * a1
        D1 = 1.0 + 2.0 * cB * dot1 + cB * cB * a1 * b1
        self._check_denominator(D1, h_ids, r_ids)
        lhs_raw = (A1 * x2 + B1 * eps) / D1
        lhs, proj1 = self._project(lhs_raw, cB)

        # tails onto the ball
        nt2 = np.sum(te * te, axis=-1)    # (B, M)
        zt = sc[:, None] * np.sqrt(nt2)
        ft = tanh_ratio(zt)
        rt = tanh_ratio_prime_over_z(zt)
        tH = ft[..., None] * te

        # md = (-lhs) (+)_c tH, then the gyrodistance
        cM = c[:, None, None]
        xneg = -lhs[:, None, :]
        dot2 = np.sum(xneg * tH, axis=-1, keepdims=True)
        a2 = np.sum(lhs * lhs, axis=-1)[:, None, None]
        b2 = np.sum(tH * tH, axis=-1, keepdims=True)
        A2 = 1.0 + 2.0 * cM * dot2 + cM * b2
        B2 = 1.0 - cM * a2
        D2 = 1.0 + 2.0 * cM * dot2 + cM * cM * a2 * b2
        self._check_denominator(D2, h_ids, r_ids)
        md_raw = (A2 * xneg + B2 * tH) / D2
        md, proj2 = self._project(md_raw, cM)

        nm2 = np.sum(md * md, axis=-1)     # (B, M)
        nm = np.sqrt(nm2)
        g = sc[:, None] * nm
        gmask = g > 1.0 - BALL_EPS
        geometry._count_clamps(gmask)
        gcl = np.minimum(g, 1.0 - BALL_EPS)
        atg = np.arctanh(gcl)
        dist = 2.0 * atg / sc[:, None]
        scores = -dist * dist + bias

        if not need_cache:
            return scores
        cache = {
            "h_ids": h_ids, "r_ids": r_ids, "t_ids": t_ids,
            "he": he, "re": re, "w": w, "te": te,
            "c": c, "sc": sc, "curv_aux": curv_aux,
            "k": k, "u": u, "nu2": nu2, "nu": nu, "zu": zu, "fu": fu, "ru": ru,
            "x1": x1, "cos": cos, "sin": sin, "x2": x2,
            "nw2": nw2, "fw": fw, "rw": rw, "eps": eps,
            "dot1": dot1, "a1": a1, "b1": b1, "A1": A1, "B1": B1, "D1": D1,
            "lhs_raw": lhs_raw, "lhs": lhs, "proj1": proj1,
            "nt2": nt2, "ft": ft, "rt": rt, "tH": tH,
            "dot2": dot2, "a2": a2, "b2": b2, "A2": A2, "B2": B2, "D2": D2,
            "md_raw": md_raw, "md": md, "proj2": proj2,
            "nm": nm, "g": g, "gmask": gmask, "gcl": gcl, "atg": atg, "dist": dist,
        }
        return scores, cache

    def _forward_euclidean(self, h_ids, r_ids, t_ids, he, w, te, bias, need_cache):
        P = self.params
        if self.config.use_inter_level:
            k = P["rel_scale"][r_ids]
            u = (he.reshape(he.shape[:-1] + (-1, 2)) * k[..., None]).reshape(he.shape)
        else:
            k = None
            u = he
        if self.config.use_intra_level:
            th = P["rel_theta"][r_ids]
            cos, sin = np.cos(th), np.sin(th)
            up = u.reshape(u.shape[:-1] + (-1, 2))
            x2 = np.empty_like(up)
            x2[..., 0] = up[..., 0] * cos - up[..., 1] * sin
            x2[..., 1] = up[..., 0] * sin + up[..., 1] * cos
            x2 = x2.reshape(u.shape)
        else:
            cos = sin = None
            x2 = u
        lhs = x2 + w
        diff = lhs[:, None, :] - te        # (B, M, d)
        dist2 = 4.0 * np.sum(diff * diff, axis=-1)  # (2||x-y||)^2
        scores = -dist2 + bias
        if not need_cache:
            return scores
        cache = {
            "h_ids": h_ids, "r_ids": r_ids, "t_ids": t_ids,
            "he": he, "te": te, "k": k, "u": u,
            "cos": cos, "sin": sin, "x2": x2, "diff": diff,
        }
        return scores, cache

    @staticmethod
    def _check_denominator(D, h_ids, r_ids):
        bad = np.abs(D) < DEN_EPS
        if np.any(bad):
            b = int(np.argwhere(bad)[0][0])
            raise ValueError(
                f"degenerate mobius denominator for query (h={int(h_ids[b])}, r={int(r_ids[b])})"
            )

    @staticmethod
    def _project(x, c_col):
        """Radial projection inside the clamp radius, with mask for backward."""
        n = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
        limit = (1.0 - BALL_EPS) / np.sqrt(c_col)
        over = n > limit
        geometry._count_clamps(over)
        scale = np.where(over, limit / np.where(over, n, 1.0), 1.0)
        return x * scale, (over, scale, n)

    # -- backward -----------------------------------------------------

    def backward(self, cache, sbar):
        """Accumulate d(sum(sbar * scores))/d(params) as SparseGrads."""
        if self.config.geometry == "euclidean":
            return self._backward_euclidean(cache, sbar)
        P = self.params
        h_ids, r_ids, t_ids = cache["h_ids"], cache["r_ids"], cache["t_ids"]
        c, sc = cache["c"], cache["sc"]
        cB = c[:, None]
        cM = c[:, None, None]

        # score = -dist^2 + b_h + b_t
        dist, g, gcl, gmask, nm, md = (
            cache["dist"], cache["g"], cache["gcl"], cache["gmask"], cache["nm"], cache["md"],
        )
        bias_h_bar = np.sum(sbar, axis=-1)             # (B,)
        bias_t_bar = sbar                              # (B, M)

        # distance through arctanh(sqrt(c)*||md||)*2/sqrt(c):
        # md_bar = -8 * artanh_ratio(g)/(1-g^2) * sbar * md  (0 when clamped)
        one_m_g2 = 1.0 - gcl * gcl
        coef = np.where(gmask, 0.0, -8.0 * artanh_ratio(gcl) / one_m_g2 * sbar)
        md_bar = coef[..., None] * md
        # c enters dist directly: d(dist)/dc = -atg/c^{3/2} + nm/(c(1-g^2)) (2nd term 0 if clamped)
        dist_bar = -2.0 * dist * sbar
        ddist_dc = -cache["atg"] / (c[:, None] * sc[:, None]) + np.where(
            gmask, 0.0, nm / (c[:, None] * one_m_g2)
        )
        c_bar = np.sum(dist_bar * ddist_dc, axis=-1)   # (B,)

        # projection 2 backward
        md_raw_bar, c_bar2 = self._project_backward(
            md_bar, cache["md_raw"], cache["proj2"], cM
        )
        c_bar += np.sum(c_bar2, axis=(-1, -2)) if np.ndim(c_bar2) else 0.0

        # mobius 2 backward: md_raw = (-lhs) (+)_c tH
        lhs = cache["lhs"]
        xneg = -lhs[:, None, :]
        tH = cache["tH"]
        xb, yb, cb = self._mobius_backward(
            md_raw_bar, cache["md_raw"], xneg, tH,
            cache["dot2"], cache["a2"], cache["b2"],
            cache["A2"], cache["B2"], cache["D2"], cM,
        )
        lhs_bar = -np.sum(xb, axis=1)                  # (B, d)
        tH_bar = yb
        c_bar += np.sum(cb, axis=1)                    # cb is (B, M)

        # tail exp0 backward
        te, ft, rt, nt2 = cache["te"], cache["ft"], cache["rt"], cache["nt2"]
        dot_t = np.sum(tH_bar * te, axis=-1)           # (B, M)
        te_bar = ft[..., None] * tH_bar + (dot_t * rt * c[:, None])[..., None] * te
        c_bar += np.sum(dot_t * rt * nt2 / 2.0, axis=-1)

        # projection 1 backward
        lhs_raw_bar, c_bar1 = self._project_backward(
            lhs_bar, cache["lhs_raw"], cache["proj1"], cB
        )
        if np.ndim(c_bar1):
            c_bar += np.sum(c_bar1, axis=-1)

        # mobius 1 backward: lhs_raw = x2 (+)_c eps
        x2, eps = cache["x2"], cache["eps"]
        xb, yb, cb = self._mobius_backward(
            lhs_raw_bar, cache["lhs_raw"], x2, eps,
            cache["dot1"], cache["a1"], cache["b1"],
            cache["A1"], cache["B1"], cache["D1"], cB,
        )
        x2_bar = xb
        eps_bar = yb
        c_bar += cb                                    # cb is (B,)

        # translation exp0 backward
        w, fw, rw, nw2 = cache["w"], cache["fw"], cache["rw"], cache["nw2"]
        dot_w = np.sum(eps_bar * w, axis=-1)           # (B,)
        w_bar = fw[:, None] * eps_bar + (dot_w * rw * c)[:, None] * w
        c_bar += dot_w * rw * nw2 / 2.0

        # rotation backward
        x1 = cache["x1"]
        if self.config.use_intra_level:
            cos, sin = cache["cos"], cache["sin"]
            x2b = x2_bar.reshape(x2_bar.shape[:-1] + (-1, 2))
            x1p = x1.reshape(x1.shape[:-1] + (-1, 2))
            x1_bar = np.empty_like(x2b)
            x1_bar[..., 0] = x2b[..., 0] * cos + x2b[..., 1] * sin
            x1_bar[..., 1] = -x2b[..., 0] * sin + x2b[..., 1] * cos
            x1_bar = x1_bar.reshape(x1.shape)
            th_bar = (
                x2b[..., 0] * (-sin * x1p[..., 0] - cos * x1p[..., 1])
                + x2b[..., 1] * (cos * x1p[..., 0] - sin * x1p[..., 1])
            )                                          # (B, d/2)
        else:
            x1_bar = x2_bar
            th_bar = None

        # head exp0 backward
        u, fu, ru, nu2 = cache["u"], cache["fu"], cache["ru"], cache["nu2"]
        dot_u = np.sum(x1_bar * u, axis=-1)
        u_bar = fu[:, None] * x1_bar + (dot_u * ru * c)[:, None] * u
        c_bar += dot_u * ru * nu2 / 2.0

        # inter-level scaling backward
        he = cache["he"]
        if self.config.use_inter_level:
            k = cache["k"]
            ub = u_bar.reshape(u_bar.shape[:-1] + (-1, 2))
            hep = he.reshape(he.shape[:-1] + (-1, 2))
            he_bar = (ub * k[..., None]).reshape(he.shape)
            k_bar = np.sum(ub * hep, axis=-1)          # (B, d/2)
        else:
            he_bar = u_bar
            k_bar = None

        # curvature head backward
        re = cache["re"]
        re_bar = np.zeros_like(re)
        attn_a_bar = np.zeros(self.config.dim)
        attn_p_bar = np.zeros(self.config.dim)
        curv_raw_bar = None
        mode = self.config.curvature_mode
        aux = cache["curv_aux"]
        if mode == "global":
            curv_raw_bar = np.asarray(np.sum(c_bar) * aux["dcdraw"])
        elif mode == "per_relation":
            curv_raw_bar = c_bar * aux["dcdraw"]       # (B,) scattered below
        elif mode == "attention":
            p = P["attn_p"]
            a = P["attn_a"]
            alpha_h, alpha_r, v = aux["alpha_h"], aux["alpha_r"], aux["v"]
            q_bar = c_bar * aux["dcdq"]                # (B,)
            attn_p_bar = np.sum(q_bar[:, None] * v, axis=0)
            v_bar = q_bar[:, None] * p
            ah_bar = np.sum(v_bar * he, axis=-1)
            ar_bar = np.sum(v_bar * re, axis=-1)
            he_bar = he_bar + alpha_h[:, None] * v_bar
            re_bar = re_bar + alpha_r[:, None] * v_bar
            delta_bar = alpha_h * alpha_r * (ah_bar - ar_bar)
            attn_a_bar = np.sum(delta_bar[:, None] * (he - re), axis=0)
            he_bar = he_bar + delta_bar[:, None] * a
            re_bar = re_bar - delta_bar[:, None] * a

        return self._gather(
            h_ids, r_ids, t_ids, he_bar, bias_h_bar, te_bar, bias_t_bar,
            re_bar, k_bar, th_bar, w_bar, attn_a_bar, attn_p_bar, curv_raw_bar,
        )

    def _backward_euclidean(self, cache, sbar):
        h_ids, r_ids, t_ids = cache["h_ids"], cache["r_ids"], cache["t_ids"]
        diff = cache["diff"]
        bias_h_bar = np.sum(sbar, axis=-1)
        bias_t_bar = sbar
        diff_bar = -8.0 * sbar[..., None] * diff
        lhs_bar = np.sum(diff_bar, axis=1)
        te_bar = -diff_bar
        w_bar = lhs_bar
        x2_bar = lhs_bar
        x1 = cache["u"]
        if self.config.use_intra_level:
            cos, sin = cache["cos"], cache["sin"]
            x2b = x2_bar.reshape(x2_bar.shape[:-1] + (-1, 2))
            x1p = x1.reshape(x1.shape[:-1] + (-1, 2))
            x1_bar = np.empty_like(x2b)
            x1_bar[..., 0] = x2b[..., 0] * cos + x2b[..., 1] * sin
            x1_bar[..., 1] = -x2b[..., 0] * sin + x2b[..., 1] * cos
            x1_bar = x1_bar.reshape(x1.shape)
            th_bar = (
                x2b[..., 0] * (-sin * x1p[..., 0] - cos * x1p[..., 1])
                + x2b[..., 1] * (cos * x1p[..., 0] - sin * x1p[..., 1])
            )
        else:
            x1_bar = x2_bar
            th_bar = None
        he = cache["he"]
        if self.config.use_inter_level:
            k = cache["k"]
            ub = x1_bar.reshape(x1_bar.shape[:-1] + (-1, 2))
            hep = he.reshape(he.shape[:-1] + (-1, 2))
            he_bar = (ub * k[..., None]).reshape(he.shape)
            k_bar = np.sum(ub * hep, axis=-1)
        else:
            he_bar = x1_bar
            k_bar = None
        re_bar = np.zeros_like(self.params["rel_emb"][r_ids])
        d = self.config.dim
        return self._gather(
            h_ids, r_ids, t_ids, he_bar, bias_h_bar, te_bar, bias_t_bar,
            re_bar, k_bar, th_bar, w_bar, np.zeros(d), np.zeros(d), None,
        )

    @staticmethod
    def _project_backward(out_bar, x_raw, proj, c_col):
        over, scale, n = proj
        if not np.any(over):
            return out_bar, 0.0
        dot = np.sum(out_bar * x_raw, axis=-1, keepdims=True)
        # projected: out = limit * x/||x||; grad is tangential, scaled
        n2 = np.where(over, n * n, 1.0)
        tang = scale * (out_bar - (dot / n2) * x_raw)
        x_bar = np.where(over, tang, out_bar)
        # limit = (1-eps)/sqrt(c) pulls c into the projected outputs
        c_contrib = np.where(over, dot * scale * (-0.5 / c_col), 0.0)
        return x_bar, c_contrib

    @staticmethod
    def _mobius_backward(g_bar, out_raw, x, y, dot, nx2, ny2, A, B, D, c_col):
        """VJPs of out = (A*x + B*y)/D through x, y and c."""
        gx = np.sum(g_bar * x, axis=-1, keepdims=True)
        gy = np.sum(g_bar * y, axis=-1, keepdims=True)
        go = np.sum(g_bar * out_raw, axis=-1, keepdims=True)
        two_c = 2.0 * c_col
        x_bar = (A * g_bar + two_c * gx * y - two_c * gy * x
                 - go * (two_c * y + two_c * c_col * ny2 * x)) / D
        y_bar = (B * g_bar + two_c * gx * (x + y)
                 - go * (two_c * x + two_c * c_col * nx2 * y)) / D
        c_bar = (gx * (2.0 * dot + ny2) - gy * nx2
                 - go * (2.0 * dot + 2.0 * c_col * nx2 * ny2)) / D
        return x_bar, y_bar, np.squeeze(c_bar, axis=-1)

    def _gather(self, h_ids, r_ids, t_ids, he_bar, bias_h_bar, te_bar, bias_t_bar,
                re_bar, k_bar, th_bar, w_bar, attn_a_bar, attn_p_bar, curv_raw_bar):
        """Scatter per-query gradients into unique-row sparse arrays."""
        d = self.config.dim
        ent_ids = np.concatenate([h_ids, t_ids.ravel()])
        ent_rows, ent_inv = np.unique(ent_ids, return_inverse=True)
        B = h_ids.shape[0]
        inv_h = ent_inv[:B]
        inv_t = ent_inv[B:].reshape(t_ids.shape)
        K = ent_rows.shape[0]
        ent_emb_g = _segment_sum(he_bar, inv_h, K) + _segment_sum(te_bar, inv_t, K)
        ent_bias_g = _segment_sum(bias_h_bar, inv_h, K) + _segment_sum(bias_t_bar, inv_t, K)

        rel_rows, rel_inv = np.unique(r_ids, return_inverse=True)
        L = rel_rows.shape[0]
        rel_emb_g = _segment_sum(re_bar, rel_inv, L)
        rel_scale_g = (_segment_sum(k_bar, rel_inv, L) if k_bar is not None
                       else np.zeros((L, d // 2)))
        rel_theta_g = (_segment_sum(th_bar, rel_inv, L) if th_bar is not None
                       else np.zeros((L, d // 2)))
        rel_trans_g = _segment_sum(w_bar, rel_inv, L)

        curv_g = None
        if self.config.curvature_mode == "global":
            curv_g = np.asarray(0.0 if curv_raw_bar is None else curv_raw_bar)
        elif self.config.curvature_mode == "per_relation":
            curv_g = (np.zeros(L) if curv_raw_bar is None
                      else _segment_sum(curv_raw_bar, rel_inv, L))

        return SparseGrads(
            ent_rows=ent_rows, ent_emb=ent_emb_g, ent_bias=ent_bias_g,
            rel_rows=rel_rows, rel_emb=rel_emb_g, rel_scale=rel_scale_g,
            rel_theta=rel_theta_g, rel_trans=rel_trans_g,
            attn_a=attn_a_bar, attn_p=attn_p_bar, curv_raw=curv_g,
        )
