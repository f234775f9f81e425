"""A small pre-norm transformer decoder with hand-written gradients.

Everything runs in float64 numpy. Attention in every layer is restricted by
a boolean allow-mask (one per sequence), so the same weights can be run
under any masking strategy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import masked_softmax
from .errors import ConfigurationError, ContractViolation, VerificationFailure
from .scene import TokenLayout, segment_spans

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    d_model: int = 32
    n_heads: int = 2
    d_head: int = 16
    n_layers: int = 2
    d_ff: int = 64
    max_positions: int = 64
    feature_dim: int = 0
    # "shared": every object token uses one position id (order-free object segment);
    # "per_token": ordinary absolute positions for every token
    object_positions: str = "shared"

    def __post_init__(self):
        if self.object_positions not in ("shared", "per_token"):
            raise ConfigurationError(f"unknown object_positions mode {self.object_positions!r}")
        for name in ("vocab_size", "d_model", "n_heads", "d_head", "n_layers", "d_ff", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")


def position_ids(layout: TokenLayout, mode: str = "shared") -> np.ndarray:
    """Absolute position id of every token.

    In ``shared`` mode all objects reuse the same ids; with several tokens per
    object the ids still distinguish a token's slot within its object.
    """
    if mode == "per_token":
        return np.arange(layout.n)
    t = layout.tokens_per_object
    sys_ids = np.arange(layout.n_system)
    obj_ids = np.tile(layout.n_system + np.arange(t), layout.n_objects)
    rest_start = layout.n_system + t
    rest = rest_start + np.arange(layout.n_instruction + layout.n_response)
    return np.concatenate([sys_ids, obj_ids, rest]).astype(np.int64)


class DecoderParams:
    """Named float64 weight arrays plus the config that shaped them."""

    def __init__(self, config: DecoderConfig, arrays: dict):
        self.config = config
        self.arrays = arrays
        self.validate()

    @staticmethod
    def shapes(cfg: DecoderConfig) -> dict:
        d, h, e, f = cfg.d_model, cfg.n_heads, cfg.d_head, cfg.d_ff
        shapes = {"tok_emb": (cfg.vocab_size, d), "pos_emb": (cfg.max_positions, d)}
        if cfg.feature_dim:
            shapes["feat_proj"] = (cfg.feature_dim, d)
        for l in range(cfg.n_layers):
            shapes.update({
                f"l{l}.ln1": (d,),
                f"l{l}.Wq": (h, d, e),
                f"l{l}.Wk": (h, d, e),
                f"l{l}.Wv": (h, d, e),
                f"l{l}.Wo": (h, e, d),
                f"l{l}.ln2": (d,),
                f"l{l}.W1": (d, f),
                f"l{l}.W2": (f, d),
            })
        shapes["lnf"] = (d,)
        shapes["W_out"] = (d, cfg.vocab_size)
        return shapes

    @classmethod
    def init(cls, config: DecoderConfig, seed: int = 0) -> "DecoderParams":
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in cls.shapes(config).items():
            if name.endswith(("ln1", "ln2", "lnf")):
                arrays[name] = np.ones(shape)
            elif name in ("tok_emb", "pos_emb"):
                arrays[name] = rng.normal(0.0, 1.0, shape) * 0.5
            else:
                fan_in = shape[-2]
                arrays[name] = rng.normal(0.0, 1.0, shape) / np.sqrt(fan_in)
        return cls(config, arrays)

    @classmethod
    def zeros(cls, config: DecoderConfig) -> "DecoderParams":
        return cls(config, {k: np.zeros(s) for k, s in cls.shapes(config).items()})

    def validate(self):
        expected = self.shapes(self.config)
        if set(expected) != set(self.arrays):
            raise ConfigurationError("parameter names do not match the config")
        for k, s in expected.items():
            a = self.arrays[k]
            if a.shape != s:
                raise ConfigurationError(f"{k} has shape {a.shape}, expected {s}")
            if not np.all(np.isfinite(a)):
                raise ConfigurationError(f"{k} contains non-finite values")

    def copy(self) -> "DecoderParams":
        return DecoderParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def __getitem__(self, key):
        return self.arrays[key]

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())


@dataclass
class SequenceBatch:
    """A batch of ``B`` sequences sharing one layout.

    ``allow`` is ``(n, n)`` or ``(B, n, n)``. ``targets`` hold the token each
    response position must predict.
    """

    token_ids: np.ndarray
    layout: TokenLayout
    allow: np.ndarray
    features: np.ndarray | None = None
    targets: np.ndarray | None = None
    candidates: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.token_ids = np.atleast_2d(np.asarray(self.token_ids, dtype=np.int64))
        B, n = self.token_ids.shape
        if n != self.layout.n:
            raise ConfigurationError(f"sequence length {n} does not match layout n={self.layout.n}")
        allow = np.asarray(getattr(self.allow, "allow", self.allow), dtype=bool)
        if allow.shape[-2:] != (n, n):
            raise ConfigurationError(f"mask shape {allow.shape} does not match n={n}")
        self.allow = allow
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.ndim == 2:
                f = f[None]
            if f.shape[:2] != (B, n):
                raise ConfigurationError("features must be (B, n, F)")
            self.features = f
        if self.targets is not None:
            t = np.atleast_2d(np.asarray(self.targets, dtype=np.int64))
            if t.shape != (B, self.layout.n_response):
                raise ConfigurationError("targets must cover the response segment")
            self.targets = t
        if self.candidates is not None:
            self.candidates = np.asarray(self.candidates, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    def subset(self, idx) -> "SequenceBatch":
        allow = self.allow if self.allow.ndim == 2 else self.allow[idx]
        return SequenceBatch(
            self.token_ids[idx], self.layout, allow,
            None if self.features is None else self.features[idx],
            None if self.targets is None else self.targets[idx],
            self.candidates if self.candidates is None or self.candidates.ndim == 1
            else self.candidates[idx],
        )

    def with_allow(self, allow) -> "SequenceBatch":
        return SequenceBatch(self.token_ids, self.layout, allow, self.features,
                             self.targets, self.candidates, dict(self.meta))


# -- building blocks ---------------------------------------------------------

def _ln_fwd(x, g):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g, (xhat, rstd)


def _ln_bwd(dy, g, cache):
    xhat, rstd = cache
    dg = (dy * xhat).reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg


def _gelu_fwd(x):
    x2 = x * x
    t = np.tanh(x * (_GELU_C + _GELU_C * 0.044715 * x2))
    y = t + 1.0
    y *= x
    y *= 0.5
    return y, (x, x2, t)


def _gelu_bwd(dy, cache):
    x, x2, t = cache
    # 0.5 (1 + t) + 0.5 x (1 - t^2) * d(inner)/dx, built in place
    s = t * t
    np.subtract(1.0, s, out=s)
    d = x2 * (3 * 0.044715 * _GELU_C)
    d += _GELU_C
    d *= x
    d *= s
    d += t
    d += 1.0
    d *= 0.5
    d *= dy
    return d


def _flat_in(W):
    """(H, d, e) -> (d, H*e)"""
    H, d, e = W.shape
    return W.transpose(1, 0, 2).reshape(d, H * e)


def _unflat_in(Wf, shape):
    H, d, e = shape
    return Wf.reshape(d, H, e).transpose(1, 0, 2)


def _flat_out(W):
    """(H, e, d) -> (H*e, d)"""
    return W.reshape(-1, W.shape[-1])


def _split_heads(x, W, flat=False, n_heads=None):
    """(B, n, d) times per-head projections -> (B, H, n, e)."""
    Wf = W if flat else _flat_in(W)
    H = n_heads if flat else W.shape[0]
    y = x @ Wf
    B, n, he = y.shape
    return y.reshape(B, n, H, he // H).transpose(0, 2, 1, 3)


def _merge_heads(z):
    B, H, n, e = z.shape
    return z.transpose(0, 2, 1, 3).reshape(B, n, H * e)


def _outer(a, b):
    """Sum over batch and positions of outer products: (B, n, p), (B, n, r) -> (p, r)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _batch_allow(batch):
    allow = batch.allow
    return allow[None, None] if allow.ndim == 2 else allow[:, None]


def forward(params: DecoderParams, batch: SequenceBatch, keep_cache: bool = False, rows=None):
    """Logits ``(B, n, vocab)``; with ``keep_cache`` also the activations for :func:`backward`.

    ``rows`` (a slice) restricts the last layer and the output projection to
    those positions, which is all a loss over the response needs; the logits
    are then ``(B, len(rows), vocab)``.
    """
    cfg = params.config
    P = params.arrays
    ids = batch.token_ids
    if ids.max() >= cfg.vocab_size or ids.min() < 0:
        raise ConfigurationError("token id outside the vocabulary")
    pos = position_ids(batch.layout, cfg.object_positions)
    if pos.max() >= cfg.max_positions:
        raise ConfigurationError(f"sequence needs {pos.max() + 1} positions, model has {cfg.max_positions}")
    if cfg.feature_dim and (batch.features is None or batch.features.shape[-1] != cfg.feature_dim):
        raise ConfigurationError(f"model expects {cfg.feature_dim}-dim input features")
    allow = _batch_allow(batch)
    if not np.all(allow.any(axis=-1)):
        raise ContractViolation("attention row with every entry blocked")

    x = P["tok_emb"][ids] + P["pos_emb"][pos][None]
    if cfg.feature_dim:
        x = x + batch.features @ P["feat_proj"]
    scale = 1.0 / np.sqrt(cfg.d_head)
    caches = []
    for l in range(cfg.n_layers):
        sel = rows if rows is not None and l == cfg.n_layers - 1 else slice(None)
        c = {"sel": sel}
        u, c["ln1"] = _ln_fwd(x, P[f"l{l}.ln1"])
        q = _split_heads(u[:, sel], P[f"l{l}.Wq"])
        k = _split_heads(u, P[f"l{l}.Wk"])
        v = _split_heads(u, P[f"l{l}.Wv"])
        a = masked_softmax(q @ k.swapaxes(-1, -2) * scale, allow[..., sel, :])
        z = a @ v
        x2 = x[:, sel] + _merge_heads(z) @ _flat_out(P[f"l{l}.Wo"])
        u2, c["ln2"] = _ln_fwd(x2, P[f"l{l}.ln2"])
        h_pre = u2 @ P[f"l{l}.W1"]
        h, c["gelu"] = _gelu_fwd(h_pre)
        x3 = x2 + h @ P[f"l{l}.W2"]
        if keep_cache:
            c.update(u=u, q=q, k=k, v=v, a=a, z=z, u2=u2, h=h)
            caches.append(c)
        x = x3
    uf, lnf_cache = _ln_fwd(x, P["lnf"])
    logits = uf @ P["W_out"]
    if not keep_cache:
        return logits
    return logits, {"layers": caches, "uf": uf, "lnf": lnf_cache, "pos": pos, "allow": allow}


def backward(params: DecoderParams, batch: SequenceBatch, cache: dict, dlogits: np.ndarray) -> dict:
    """Gradient of a scalar loss w.r.t. every parameter, given ``dL/dlogits``."""
    cfg = params.config
    P = params.arrays
    grads = {}
    grads["W_out"] = _outer(cache["uf"], dlogits)
    dx, grads["lnf"] = _ln_bwd(dlogits @ P["W_out"].T, P["lnf"], cache["lnf"])
    scale = 1.0 / np.sqrt(cfg.d_head)
    for l in reversed(range(cfg.n_layers)):
        c = cache["layers"][l]
        # feed-forward branch
        grads[f"l{l}.W2"] = _outer(c["h"], dx)
        dh = _gelu_bwd(dx @ P[f"l{l}.W2"].T, c["gelu"])
        grads[f"l{l}.W1"] = _outer(c["u2"], dh)
        du2 = dh @ P[f"l{l}.W1"].T
        dx2_ln, grads[f"l{l}.ln2"] = _ln_bwd(du2, P[f"l{l}.ln2"], c["ln2"])
        dx2 = dx + dx2_ln
        # attention branch
        Wo = P[f"l{l}.Wo"]
        grads[f"l{l}.Wo"] = _outer(_merge_heads(c["z"]), dx2).reshape(Wo.shape)
        dz = _split_heads(dx2, _flat_out(Wo).T, flat=True, n_heads=Wo.shape[0])
        a = c["a"]
        da = dz @ c["v"].swapaxes(-1, -2)
        dv = a.swapaxes(-1, -2) @ dz
        ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
        dq = ds @ c["k"]
        dk = ds.swapaxes(-1, -2) @ c["q"]
        u, sel = c["u"], c["sel"]
        du = np.zeros_like(u)
        for name, dh_ in (("Wq", dq), ("Wk", dk), ("Wv", dv)):
            W = P[f"l{l}.{name}"]
            dflat = _merge_heads(dh_)
            src = u[:, sel] if name == "Wq" else u
            grads[f"l{l}.{name}"] = _unflat_in(_outer(src, dflat), W.shape)
            if name == "Wq":
                du[:, sel] += dflat @ _flat_in(W).T
            else:
                du += dflat @ _flat_in(W).T
        dx, grads[f"l{l}.ln1"] = _ln_bwd(du, P[f"l{l}.ln1"], c["ln1"])
        dx[:, sel] += dx2
    grads["pos_emb"] = np.zeros_like(P["pos_emb"])
    np.add.at(grads["pos_emb"], cache["pos"], dx.sum(axis=0))
    grads["tok_emb"] = np.zeros_like(P["tok_emb"])
    np.add.at(grads["tok_emb"], batch.token_ids.ravel(), dx.reshape(-1, cfg.d_model))
    if cfg.feature_dim:
        grads["feat_proj"] = _outer(batch.features, dx)
    return grads


def decoder_forward(params: DecoderParams, batch: SequenceBatch) -> np.ndarray:
    """Per-position logits; a single unbatched sequence returns ``(n, vocab)``."""
    logits = forward(params, batch)
    return logits[0] if batch.size == 1 else logits


# -- objective ---------------------------------------------------------------

def log_softmax(x):
    m = x.max(axis=-1, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def nll_loss(logits, targets, response_span, reduction: str = "mean", return_grad: bool = False):
    """Negative log-likelihood of ``targets`` at the response positions.

    ``logits`` is ``(n, V)`` or ``(B, n, V)``; ``targets`` is ``(m,)`` or
    ``(B, m)``. The loss is summed over tokens and then averaged over all
    ``B * m`` tokens unless ``reduction='sum'``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    squeeze = logits.ndim == 2
    if squeeze:
        logits = logits[None]
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    span = range(response_span.start, response_span.stop) if not isinstance(response_span, range) else response_span
    m = len(span)
    if m == 0:
        raise ContractViolation("empty response span")
    if targets.shape != (logits.shape[0], m):
        raise ContractViolation(f"targets shape {targets.shape} does not match response span of {m}")
    if reduction not in ("mean", "sum"):
        raise ConfigurationError(f"unknown reduction {reduction!r}")
    sl = logits[:, span.start:span.stop]
    lp = log_softmax(sl)
    picked = np.take_along_axis(lp, targets[..., None], axis=-1)[..., 0]
    denom = picked.size if reduction == "mean" else 1.0
    loss = -picked.sum() / denom
    if not return_grad:
        return float(loss)
    g = np.exp(lp)
    np.put_along_axis(g, targets[..., None], np.take_along_axis(g, targets[..., None], -1) - 1.0, -1)
    dlogits = np.zeros_like(logits)
    dlogits[:, span.start:span.stop] = g / denom
    return float(loss), (dlogits[0] if squeeze else dlogits)


def loss_and_grads(params: DecoderParams, batch: SequenceBatch, reduction: str = "mean"):
    """Loss, parameter gradients and the response-position logits ``(B, m, vocab)``."""
    span = segment_spans(batch.layout).response
    rows = slice(span.start, span.stop)
    logits, cache = forward(params, batch, keep_cache=True, rows=rows)
    loss, dlogits = nll_loss(logits, batch.targets, range(0, len(span)), reduction, return_grad=True)
    return loss, backward(params, batch, cache, dlogits), logits


def batch_loss(params: DecoderParams, batch: SequenceBatch, reduction: str = "mean") -> float:
    span = segment_spans(batch.layout).response
    logits = forward(params, batch, rows=slice(span.start, span.stop))
    return nll_loss(logits, batch.targets, range(0, len(span)), reduction)


# -- gradient check ------------------------------------------------------------

@dataclass
class GradCheckReport:
    passed: bool
    tolerance: float
    epsilon: float
    n_checked: int
    max_error: float
    worst: list  # (error, name, index, analytic, numeric), largest first
    failures: list

    def summary(self) -> str:
        head = (f"grad check {'passed' if self.passed else 'FAILED'}: {self.n_checked} coordinates, "
                f"max rel err {self.max_error:.3e} (tol {self.tolerance:.0e})")
        lines = [head]
        for err, name, idx, an, nu in (self.failures or self.worst)[:5]:
            lines.append(f"  {name}{list(idx)} analytic={an:.6e} numeric={nu:.6e} err={err:.3e}")
        return "\n".join(lines)


def grad_check(params: DecoderParams, batch: SequenceBatch, epsilon: float = 1e-5,
               tolerance: float = 1e-4, max_per_param: int | None = 64, seed: int = 0,
               corrupt=None, strict: bool = True) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``max_per_param`` caps how many coordinates are sampled from each array
    (``None`` checks all). ``corrupt`` is an optional callable applied to the
    analytic gradient dict before comparison, used for fault injection.
    """
    for a in params.arrays.values():
        if a.dtype != np.float64:
            raise ContractViolation("gradient check requires float64 parameters")
    _, grads, _ = loss_and_grads(params, batch)
    if corrupt is not None:
        grads = {k: v.copy() for k, v in grads.items()}
        corrupt(grads)
    rng = np.random.default_rng(seed)
    probe = params.copy()
    records = []
    for name in sorted(probe.arrays):
        arr = probe.arrays[name]
        flat = np.arange(arr.size)
        if max_per_param is not None and arr.size > max_per_param:
            flat = np.sort(rng.choice(arr.size, max_per_param, replace=False))
        for f in flat:
            idx = np.unravel_index(f, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + epsilon
            lp = batch_loss(probe, batch)
            arr[idx] = orig - epsilon
            lm = batch_loss(probe, batch)
            arr[idx] = orig
            numeric = (lp - lm) / (2 * epsilon)
            analytic = float(grads[name][idx])
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            records.append((err, name, tuple(int(i) for i in idx), analytic, numeric))
    records.sort(key=lambda r: -r[0])
    failures = [r for r in records if r[0] > tolerance]
    report = GradCheckReport(
        passed=not failures, tolerance=tolerance, epsilon=epsilon, n_checked=len(records),
        max_error=records[0][0] if records else 0.0, worst=records[:10], failures=failures)
    if strict and failures:
        raise VerificationFailure(report.summary(), report)
    return report


def corrupt_gradient(name: str = "l0.Wv", index=None, delta: float = 1e-2):
    """Fault injector for :func:`grad_check`: shifts one coordinate of one gradient."""
    def apply(grads):
        g = grads[name]
        idx = (0,) * g.ndim if index is None else tuple(index)
        g[idx] += delta
    return apply
