"""Conditional Wasserstein autoencoder for the state-dependent residual g(x, w).

The encoder maps (residual, state condition) to the mean and log-variance of
a diagonal Gaussian over the 2-d latent; the decoder is deterministic and maps
(latent, state condition) back to a residual. Training minimizes the mean
squared reconstruction error plus ``lam`` times the unbiased MMD^2 between the
encoded latents of a batch and as many standard-normal draws.

Residuals are standardized internally (offset and scale stored with the
model); all public functions take and return normalized residuals in dataset
units and normalized states of which the first two components (CA50, IMEP)
form the condition.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .engine import Dataset
from .mlp import Adam, MlpParams, flat_grads, init_mlp, mlp_backward, mlp_eval, mlp_forward, zeros_mlp
from .mmd import KernelSpec, mmd2_unbiased, mmd2_unbiased_grad, mmd_permutation_null

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LATENT_DIM = 2
COND_DIM = 2
RESIDUAL_DIM = 2
LOGVAR_CLAMP = (-8.0, 4.0)
INPUT_ORDER = "residual,state"


@dataclass
class WaeModel:
    encoder: MlpParams
    decoder: MlpParams
    residual_offset: np.ndarray = field(default_factory=lambda: np.zeros(RESIDUAL_DIM))
    residual_scale: np.ndarray = field(default_factory=lambda: np.ones(RESIDUAL_DIM))
    seed: int | None = None
    loss_trace: list = field(default_factory=list)

    def copy(self) -> "WaeModel":
        return WaeModel(self.encoder.copy(), self.decoder.copy(), self.residual_offset.copy(),
                        self.residual_scale.copy(), self.seed, list(self.loss_trace))

    def save(self, path) -> None:
        def pack(p: MlpParams):
            return {"sizes": list(p.sizes), "activations": list(p.activations),
                    "weights": [W.tolist() for W in p.weights], "biases": [b.tolist() for b in p.biases]}

        doc = {"format_version": FORMAT_VERSION, "latent_dim": LATENT_DIM, "input_order": INPUT_ORDER,
               "condition": ["ca50_n", "imep_n"], "logvar_clamp": list(LOGVAR_CLAMP),
               "residual_offset": self.residual_offset.tolist(),
               "residual_scale": self.residual_scale.tolist(), "seed": self.seed,
               "loss_trace": list(self.loss_trace),
               "encoder": pack(self.encoder), "decoder": pack(self.decoder)}
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "WaeModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format {doc.get('format_version')}")

        def unpack(d):
            return MlpParams(tuple(d["sizes"]), [np.array(W, dtype=float) for W in d["weights"]],
                             [np.array(b, dtype=float) for b in d["biases"]], tuple(d["activations"]))

        return cls(unpack(doc["encoder"]), unpack(doc["decoder"]), np.array(doc["residual_offset"]),
                   np.array(doc["residual_scale"]), doc.get("seed"), doc.get("loss_trace", []))


def new_model(rng: np.random.Generator | None = None, hidden=(30, 30, 30)) -> WaeModel:
    """Freshly initialized model, or an all-zero one when ``rng`` is None."""
    enc_sizes = (RESIDUAL_DIM + COND_DIM, *hidden, 2 * LATENT_DIM)
    dec_sizes = (LATENT_DIM + COND_DIM, *hidden, RESIDUAL_DIM)
    if rng is None:
        return WaeModel(zeros_mlp(enc_sizes), zeros_mlp(dec_sizes))
    return WaeModel(init_mlp(enc_sizes, rng), init_mlp(dec_sizes, rng))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 320
    epochs: int = 15
    lam: float = 2.5
    lr: float = 1e-3
    lr_decay: float = 0.8  # multiplicative per epoch
    seed: int = 0
    reconstruction: str = "mse"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for the unbiased MMD term")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.reconstruction != "mse":
            raise ValueError(f"unsupported reconstruction metric {self.reconstruction!r}")


def _cond(x) -> np.ndarray:
    return np.asarray(x, dtype=float)[..., :COND_DIM]


def encode(m: WaeModel, y, x):
    """Latent mean and clamped log-variance for normalized residual ``y`` and state ``x``."""
    ys = (np.asarray(y, dtype=float) - m.residual_offset) / m.residual_scale
    inp = np.concatenate([np.atleast_2d(ys), np.atleast_2d(_cond(x))], axis=-1)
    out, _ = mlp_forward(m.encoder, inp)
    mu, lv = out[:, :LATENT_DIM], np.clip(out[:, LATENT_DIM:], *LOGVAR_CLAMP)
    if np.ndim(y) == 1:
        return mu[0], lv[0]
    return mu, lv


def encoder_sample(m: WaeModel, y, x, rng: np.random.Generator | None = None, eta=None) -> np.ndarray:
    mu, lv = encode(m, y, x)
    if eta is None:
        eta = rng.standard_normal(np.shape(mu))
    return mu + np.exp(0.5 * lv) * eta


def decoder_eval(m: WaeModel, w, x) -> np.ndarray:
    """Deterministic residual g(x, w) in normalized dataset units."""
    w = np.asarray(w, dtype=float)
    c = _cond(x)
    if w.ndim == 1 and c.ndim == 1:
        return decoder_eval(m, w[None], c[None])[0]
    w2 = w.reshape(-1, LATENT_DIM)
    c2 = np.broadcast_to(c, w.shape[:-1] + (COND_DIM,)).reshape(-1, COND_DIM)
    out = mlp_eval(m.decoder, np.concatenate([w2, c2], axis=1))
    out *= m.residual_scale
    out += m.residual_offset
    return out.reshape(w.shape[:-1] + (RESIDUAL_DIM,))


def sample_conditional_residuals(m: WaeModel, x, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return decoder_eval(m, rng.standard_normal((n, LATENT_DIM)), np.asarray(x, dtype=float))


def wae_batch_loss(m: WaeModel, Y: np.ndarray, X: np.ndarray, cfg: TrainConfig, k: KernelSpec,
                   eta: np.ndarray, prior: np.ndarray):
    """Loss and flat parameter gradient on one batch.

    ``eta`` are the reparameterization draws and ``prior`` the standard-normal
    reference draws, both (B, latent). Returns ``(loss, grad_enc, grad_dec, parts)``.
    """
    B = Y.shape[0]
    if B < 2:
        raise ValueError("batch must contain at least 2 records")
    Ys = (Y - m.residual_offset) / m.residual_scale
    C = _cond(X)
    enc_out, enc_cache = mlp_forward(m.encoder, np.concatenate([Ys, C], axis=1))
    mu = enc_out[:, :LATENT_DIM]
    lv_raw = enc_out[:, LATENT_DIM:]
    lv = np.clip(lv_raw, *LOGVAR_CLAMP)
    std = np.exp(0.5 * lv)
    Z = mu + std * eta
    Yh, dec_cache = mlp_forward(m.decoder, np.concatenate([Z, C], axis=1))
    diff = Yh - Ys
    recon = float(np.mean(diff**2))
    mmd, dZ_mmd = mmd2_unbiased_grad(Z, prior, k.sigma)
    loss = recon + cfg.lam * mmd

    dWd, dbd, ddec_in = mlp_backward(m.decoder, dec_cache, 2.0 * diff / diff.size)
    dZ = ddec_in[:, :LATENT_DIM] + cfg.lam * dZ_mmd
    inside = (lv_raw > LOGVAR_CLAMP[0]) & (lv_raw < LOGVAR_CLAMP[1])
    denc = np.concatenate([dZ, dZ * eta * 0.5 * std * inside], axis=1)
    dWe, dbe, _ = mlp_backward(m.encoder, enc_cache, denc)
    return loss, flat_grads(dWe, dbe), flat_grads(dWd, dbd), {"recon": recon, "mmd": mmd}


def wae_train(data: Dataset, cfg: TrainConfig = TrainConfig(), k: KernelSpec = KernelSpec(0.5),
              model: WaeModel | None = None) -> WaeModel:
    """Mini-batch Adam training; deterministic per ``cfg.seed``.

    The per-epoch mean loss is stored in ``model.loss_trace``.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    m = new_model(rng) if model is None else model.copy()
    m.seed = cfg.seed
    m.residual_offset = data.residuals.mean(axis=0)
    m.residual_scale = data.residuals.std(axis=0) + 1e-12
    ne = m.encoder.n_params
    theta = np.concatenate([m.encoder.flat(), m.decoder.flat()])
    opt = Adam(theta.size, lr=cfg.lr)
    n = len(data)
    bs = min(cfg.batch_size, n)
    trace = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        lr = cfg.lr * cfg.lr_decay**epoch
        losses = []
        for start in range(0, n - bs + 1, bs):
            idx = perm[start:start + bs]
            eta = rng.standard_normal((bs, LATENT_DIM))
            prior = rng.standard_normal((bs, LATENT_DIM))
            loss, ge, gd, _ = wae_batch_loss(m, data.residuals[idx], data.states[idx], cfg, k, eta, prior)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch + 1}, batch starting {start}")
            theta = opt.step(theta, np.concatenate([ge, gd]), lr)
            m.encoder.set_flat(theta[:ne])
            m.decoder.set_flat(theta[ne:])
            losses.append(loss)
        trace.append(float(np.mean(losses)))
        log.info("epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, trace[-1])
    m.loss_trace = trace
    return m


# ---------------------------------------------------------------- evaluation

# operating points of the conditional comparison, physical (ca50, imep)
SLICE_POINTS = {"stable": (7.0, 3.0), "boundary": (2.0, 2.2)}


def _summary(S: np.ndarray) -> dict:
    mu = S.mean(0)
    sd = S.std(0)
    skew = (((S - mu) / sd) ** 3).mean(0)
    return {"mean": mu.tolist(), "std": sd.tolist(), "skew": skew.tolist(),
            "corr": float(np.corrcoef(S.T)[0, 1])}


def evaluate_fit(m: WaeModel, test: Dataset, k: KernelSpec = KernelSpec(0.5), seed: int = 0,
                 n_perm: int = 200, n_slice: int = 10000, reference_sampler=None) -> dict:
    """Distributional fit report on held-out data.

    * ``marginal``: MMD^2 between residuals generated at the test states and the
      test residuals, with the 95% quantile of its permutation null;
    * ``latent``: MMD^2 between encoded test latents and fresh prior draws, with
      the 95% quantile of a prior-vs-prior permutation null of equal sizes;
    * ``slices``: summaries of ``n_slice`` generated residuals at the stable and
      boundary operating points, plus MMD^2 against ``reference_sampler``
      (``f(x_norm, n, rng) -> residuals``) when one is given.
    """
    from .engine import normalize_state, dpmax_of

    if len(test) == 0:
        raise ValueError("empty test set")
    rng = np.random.Generator(np.random.Philox(key=seed))
    n = len(test)
    gen = decoder_eval(m, rng.standard_normal((n, LATENT_DIM)), test.states)
    obs, null = mmd_permutation_null(gen, test.residuals, k, n_perm, rng)
    lat = encoder_sample(m, test.residuals, test.states, rng)
    prior = rng.standard_normal((n, LATENT_DIM))
    lat_stat = mmd2_unbiased(lat, prior, k)
    _, pnull = mmd_permutation_null(rng.standard_normal((n, LATENT_DIM)), prior, k, n_perm, rng)
    report = {
        "format_version": FORMAT_VERSION,
        "n_test": n,
        "kernel_sigma": k.sigma,
        "marginal": {"mmd2": obs, "null_q95": float(np.quantile(null, 0.95))},
        "latent": {"mmd2": lat_stat, "null_q95": float(np.quantile(pnull, 0.95))},
        "slices": {},
    }
    for name, (ca, im) in SLICE_POINTS.items():
        xn = normalize_state(np.array([ca, im, float(dpmax_of(ca, im))]))
        S = sample_conditional_residuals(m, xn, n_slice, rng)
        entry = {"state": [ca, im], "generated": _summary(S)}
        if reference_sampler is not None:
            R = reference_sampler(xn, n_slice, rng)
            entry["reference"] = _summary(R)
            entry["mmd2"] = mmd2_unbiased(S, R, k)
        report["slices"][name] = entry
    return report
