"""Dense variational autoencoder over 36-angle limb poses, written against numpy.

Forward and backward passes are explicit so the whole model fits in a few
arrays; training uses Adam on ``w1 * KL + w2 * ||A - A_hat||^2``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

INPUT_DIM = 36
LATENT_DIM = 16
FORMAT_VERSION = 1


class PriorError(ValueError):
    pass


class NonFiniteLossError(PriorError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    w1: float = 0.005  # KL weight
    w2: float = 0.01  # reconstruction weight
    epochs: int = 200
    batch_size: int = 128
    rng_seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    hidden_dims: tuple[int, ...] = (256, 128)

    def validate(self, corpus_size: int | None = None) -> None:
        if not self.learning_rate > 0:
            raise PriorError("learning_rate must be > 0")
        if self.epochs < 1:
            raise PriorError("epochs must be >= 1")
        if self.batch_size < 1:
            raise PriorError("batch_size must be >= 1")
        if corpus_size is not None and self.batch_size > corpus_size:
            raise PriorError(f"batch_size {self.batch_size} exceeds corpus size {corpus_size}")


@dataclass
class Dense:
    w: np.ndarray  # (in, out)
    b: np.ndarray  # (out,)

    def __call__(self, x):
        return x @ self.w + self.b


@dataclass
class PriorModel:
    encoder_layers: list[Dense]
    mu_head: Dense
    logvar_head: Dense
    decoder_layers: list[Dense]
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return (self.encoder_layers[0].w if self.encoder_layers else self.mu_head.w).shape[0]

    @property
    def latent_dim(self) -> int:
        return self.mu_head.w.shape[1]

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return tuple(l.w.shape[1] for l in self.encoder_layers)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Named parameter arrays, in a fixed order (views, not copies)."""
        out = []
        for i, l in enumerate(self.encoder_layers):
            out += [(f"enc{i}.w", l.w), (f"enc{i}.b", l.b)]
        out += [("mu.w", self.mu_head.w), ("mu.b", self.mu_head.b)]
        out += [("logvar.w", self.logvar_head.w), ("logvar.b", self.logvar_head.b)]
        for i, l in enumerate(self.decoder_layers):
            out += [(f"dec{i}.w", l.w), (f"dec{i}.b", l.b)]
        return out

    def check(self) -> None:
        dims = [self.input_dim, *self.hidden_dims]
        for l, (a, b) in zip(self.encoder_layers, zip(dims, dims[1:])):
            if l.w.shape != (a, b) or l.b.shape != (b,):
                raise PriorError("encoder shape chain broken")
        last = dims[-1]
        for head in (self.mu_head, self.logvar_head):
            if head.w.shape != (last, self.latent_dim) or head.b.shape != (self.latent_dim,):
                raise PriorError("head shapes inconsistent")
        ddims = [self.latent_dim, *reversed(self.hidden_dims), self.input_dim]
        if len(self.decoder_layers) != len(ddims) - 1:
            raise PriorError("decoder is not the mirror of the encoder")
        for l, (a, b) in zip(self.decoder_layers, zip(ddims, ddims[1:])):
            if l.w.shape != (a, b) or l.b.shape != (b,):
                raise PriorError("decoder shape chain broken (must mirror encoder)")


def _he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Dense:
    bound = np.sqrt(6.0 / fan_in)
    return Dense(rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out))


def init_model(
    hidden_dims=(256, 128), input_dim: int = INPUT_DIM, latent_dim: int = LATENT_DIM, seed: int = 0
) -> PriorModel:
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden_dims]
    enc = [_he_uniform(rng, a, b) for a, b in zip(dims, dims[1:])]
    mu = _he_uniform(rng, dims[-1], latent_dim)
    # small log-variance head so initial posteriors are near unit variance
    lv = Dense(rng.uniform(-0.01, 0.01, size=(dims[-1], latent_dim)), np.zeros(latent_dim))
    ddims = [latent_dim, *reversed(hidden_dims), input_dim]
    dec = [_he_uniform(rng, a, b) for a, b in zip(ddims, ddims[1:])]
    model = PriorModel(enc, mu, lv, dec, meta={"init_seed": seed})
    model.check()
    return model


def _as_batch(x, dim: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != dim:
        raise PriorError(f"{what} must have {dim} components, got shape {np.shape(x)}")
    return x, single


def _mlp(layers: list[Dense], x: np.ndarray, relu_last: bool):
    """Run a stack, returning the output and the per-layer inputs/pre-activations."""
    cache = []
    for i, l in enumerate(layers):
        pre = l(x)
        cache.append((x, pre))
        x = pre if (i == len(layers) - 1 and not relu_last) else np.maximum(pre, 0.0)
    return x, cache


def encode(model: PriorModel, pose) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and log-variance for one pose (or a batch of poses)."""
    x, single = _as_batch(pose, model.input_dim, "pose")
    h, _ = _mlp(model.encoder_layers, x, relu_last=True)
    mu, lv = model.mu_head(h), model.logvar_head(h)
    return (mu[0], lv[0]) if single else (mu, lv)


def decode(model: PriorModel, z) -> np.ndarray:
    z, single = _as_batch(z, model.latent_dim, "latent code")
    out, _ = _mlp(model.decoder_layers, z, relu_last=False)
    return out[0] if single else out


@dataclass
class LossTerms:
    total: float
    kl: float
    rec: float


def _forward(model: PriorModel, batch: np.ndarray, noise: np.ndarray):
    h, enc_cache = _mlp(model.encoder_layers, batch, relu_last=True)
    mu = model.mu_head(h)
    lv = model.logvar_head(h)
    sigma = np.exp(0.5 * lv)
    z = mu + noise * sigma
    recon, dec_cache = _mlp(model.decoder_layers, z, relu_last=False)
    return h, enc_cache, mu, lv, sigma, z, recon, dec_cache


def _terms(batch, mu, lv, recon, config: TrainConfig) -> LossTerms:
    rec = float(np.mean(np.sum((batch - recon) ** 2, axis=1)))
    kl = float(np.mean(-0.5 * np.sum(1.0 + lv - mu**2 - np.exp(lv), axis=1)))
    return LossTerms(config.w1 * kl + config.w2 * rec, kl, rec)


def elbo_loss(model: PriorModel, batch, config: TrainConfig, noise) -> LossTerms:
    batch, _ = _as_batch(batch, model.input_dim, "batch")
    noise, _ = _as_batch(noise, model.latent_dim, "noise")
    if len(noise) != len(batch):
        raise PriorError("need one noise vector per batch element")
    _, _, mu, lv, _, _, recon, _ = _forward(model, batch, noise)
    return _terms(batch, mu, lv, recon, config)


def loss_and_grads(model: PriorModel, batch, config: TrainConfig, noise) -> tuple[LossTerms, list[np.ndarray]]:
    """Loss terms plus gradients of ``total`` in :meth:`PriorModel.parameters` order."""
    batch, _ = _as_batch(batch, model.input_dim, "batch")
    noise, _ = _as_batch(noise, model.latent_dim, "noise")
    n = len(batch)
    h, enc_cache, mu, lv, sigma, z, recon, dec_cache = _forward(model, batch, noise)
    terms = _terms(batch, mu, lv, recon, config)

    # d total / d recon
    g = config.w2 * 2.0 * (recon - batch) / n
    dec_grads = []
    for i in reversed(range(len(model.decoder_layers))):
        x_in, pre = dec_cache[i]
        if i != len(model.decoder_layers) - 1:
            g = g * (pre > 0)
        dec_grads.append((x_in.T @ g, g.sum(axis=0)))
        g = g @ model.decoder_layers[i].w.T
    dec_grads.reverse()
    gz = g

    # KL per sample: -0.5 * sum(1 + lv - mu^2 - exp(lv))
    g_mu = gz + config.w1 * mu / n
    g_lv = gz * noise * 0.5 * sigma + config.w1 * 0.5 * (np.exp(lv) - 1.0) / n

    mu_grads = (h.T @ g_mu, g_mu.sum(axis=0))
    lv_grads = (h.T @ g_lv, g_lv.sum(axis=0))
    g = g_mu @ model.mu_head.w.T + g_lv @ model.logvar_head.w.T
    enc_grads = []
    for i in reversed(range(len(model.encoder_layers))):
        x_in, pre = enc_cache[i]
        g = g * (pre > 0)
        enc_grads.append((x_in.T @ g, g.sum(axis=0)))
        g = g @ model.encoder_layers[i].w.T
    enc_grads.reverse()

    grads = []
    for gw, gb in enc_grads:
        grads += [gw, gb]
    grads += [*mu_grads, *lv_grads]
    for gw, gb in dec_grads:
        grads += [gw, gb]
    return terms, grads


class Adam:
    def __init__(self, params: list[np.ndarray], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainHistory:
    total: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)
    rec: list[float] = field(default_factory=list)


def train_prior(corpus, config: TrainConfig | None = None, history: TrainHistory | None = None) -> PriorModel:
    """Train from scratch; per-epoch mean losses are appended to ``history`` if given.

    Mini-batches come from a per-epoch shuffle; the last short batch is kept.
    Epoch means are weighted by batch size.
    """
    config = config or TrainConfig()
    corpus = np.asarray(corpus, dtype=np.float64)
    if corpus.ndim != 2 or len(corpus) == 0:
        raise PriorError("corpus must be a non-empty (n, 36) array")
    if corpus.shape[1] != INPUT_DIM:
        raise PriorError(f"corpus rows must have {INPUT_DIM} angles")
    config.validate(len(corpus))
    rng = np.random.default_rng(config.rng_seed)
    model = init_model(config.hidden_dims, seed=int(rng.integers(2**63)))
    params = [p for _, p in model.parameters()]
    opt = Adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    history = history if history is not None else TrainHistory()
    n = len(corpus)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for bi, start in enumerate(range(0, n, config.batch_size)):
            batch = corpus[order[start : start + config.batch_size]]
            noise = rng.standard_normal((len(batch), model.latent_dim))
            terms, grads = loss_and_grads(model, batch, config, noise)
            if not np.isfinite(terms.total):
                raise NonFiniteLossError(epoch, bi)
            opt.step(grads)
            sums += len(batch) * np.array([terms.total, terms.kl, terms.rec])
        t, k, r = sums / n
        history.total.append(t)
        history.kl.append(k)
        history.rec.append(r)
        if epoch == 0 or (epoch + 1) % 50 == 0:
            log.info("epoch %d: total %.5f kl %.4f rec %.4f", epoch + 1, t, k, r)
    cfg = asdict(config)
    cfg["hidden_dims"] = list(config.hidden_dims)
    model.meta = {"config": cfg, "corpus_size": n, "final_rec": history.rec[-1], "final_kl": history.kl[-1]}
    return model


def save_model(model: PriorModel, path: str | Path) -> None:
    """Write weights and metadata to an ``.npz`` archive (shapes are validated on load)."""
    arrays = {name: p for name, p in model.parameters()}
    header = {
        "format_version": FORMAT_VERSION,
        "input_dim": model.input_dim,
        "latent_dim": model.latent_dim,
        "hidden_dims": list(model.hidden_dims),
        "meta": model.meta,
    }
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_model(path: str | Path) -> PriorModel:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format_version") != FORMAT_VERSION:
            raise PriorError(f"unsupported model format {header.get('format_version')}")
        n_hidden = len(header["hidden_dims"])
        try:
            enc = [Dense(data[f"enc{i}.w"], data[f"enc{i}.b"]) for i in range(n_hidden)]
            mu = Dense(data["mu.w"], data["mu.b"])
            lv = Dense(data["logvar.w"], data["logvar.b"])
            dec = [Dense(data[f"dec{i}.w"], data[f"dec{i}.b"]) for i in range(n_hidden + 1)]
        except KeyError as e:
            raise PriorError(f"model file missing array {e}") from e
    model = PriorModel(enc, mu, lv, dec, meta=header["meta"])
    model.check()
    if model.input_dim != header["input_dim"] or model.latent_dim != header["latent_dim"]:
        raise PriorError("model header does not match stored arrays")
    return model


def load_corpus(path: str | Path) -> np.ndarray:
    """Read a pose CSV: one row of 36 radians per pose, optional header line."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            if lineno == 1:
                continue
            raise PriorError(f"{path}:{lineno}: non-numeric value")
        if len(vals) != INPUT_DIM:
            raise PriorError(f"{path}:{lineno}: expected {INPUT_DIM} values, got {len(vals)}")
        rows.append(vals)
    if not rows:
        raise PriorError(f"{path}: no poses")
    return np.array(rows)


def write_corpus(poses, path: str | Path, header: bool = True) -> None:
    poses = np.asarray(poses, dtype=np.float64)
    lines = []
    if header:
        lines.append(",".join(f"a{i}" for i in range(poses.shape[1])))
    lines += [",".join(repr(float(v)) for v in row) for row in poses]
    Path(path).write_text("\n".join(lines) + "\n")
