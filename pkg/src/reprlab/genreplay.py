"""Long-term generative replay: a WGAN-GP (+ drift) trained on a mixture of
current-task replay states and states generated by the previous GAN.

Spaces: replay stores raw byte stacks; the GAN lives in rescaled space
[-1, 1].  Input noise U(-w, w) is applied in raw units, so for items that are
already rescaled (generated or pseudo states) it becomes U(-w, w) * 2/255.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from reprlab.envs.gridworld import rescale
from reprlab.errors import ConfigurationError, ContractError, NumericError
from reprlab.tensor import autodiff as ad
from reprlab.tensor.autodiff import Tensor
from reprlab.tensor.checkpoint import save_arrays
from reprlab.tensor.nn import Network, NetworkParams, backward, differentiable
from reprlab.tensor.optim import OptimizerState, adam, adam_step

LATENT_DIM = 100
RAW_TO_SCALED = 2.0 / 255.0


@dataclass
class GanConfig:
    steps: int = 20_000
    batch_size: int = 100
    lr: float = 0.001
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    gp_lambda: float = 10.0
    drift: float = 1e-6
    noise: float = 10.0
    latent_dim: int = LATENT_DIM
    log_every: int = 100


@dataclass
class GanPair:
    gen_net: Network
    disc_net: Network
    gen: NetworkParams
    disc: NetworkParams
    gen_opt: OptimizerState | None = None
    disc_opt: OptimizerState | None = None
    tasks_seen: int = 0
    log: list[tuple[int, float, float, float, float]] = field(default_factory=list)

    def frozen(self) -> GanPair:
        """A parameter snapshot without optimizer state, safe to share."""
        return GanPair(self.gen_net, self.disc_net, self.gen.copy(), self.disc.copy(),
                       None, None, self.tasks_seen)

    def param_bytes(self) -> int:
        return self.gen.flat.nbytes + self.disc.flat.nbytes

    def sample(self, count: int, rng: np.random.Generator, batch: int = 500) -> np.ndarray:
        """``count`` generated states, z ~ U(-1, 1)^latent, batch-norm in inference mode."""
        latent = self.gen_net.input_shape[0]
        out = np.empty((count,) + self.gen_net.output_shape, dtype=self.gen.dtype)
        with ad.no_grad():
            for lo in range(0, count, batch):
                hi = min(lo + batch, count)
                z = sample_latent(rng, hi - lo, latent, self.gen.dtype)
                out[lo:hi] = self.gen_net.apply(self.gen, z, training=False).data
        return out


@dataclass
class PseudoBuffer:
    """Generated states (rescaled space) plus optional frozen soft targets."""

    states: np.ndarray
    source: str
    targets: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.states)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if len(self) == 0:
            raise ContractError("pseudo buffer is empty")
        return rng.integers(0, len(self), size=n)


def sample_latent(rng: np.random.Generator, n: int, dim: int = LATENT_DIM,
                  dtype=np.float64) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(n, dim)).astype(dtype)


# -- data mixing ------------------------------------------------------------------
def real_mask(T: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-item draws r ~ U[0, 1); an item is real when r < 1/T."""
    if T < 1:
        raise ContractError("task count T must be at least 1")
    return rng.random(n) < 1.0 / T


def mix_source(T: int, replay_states, pseudo_states, rng: np.random.Generator):
    """One state for GAN training: real replay state if r < 1/T, else pseudo.

    Returns ``(state, is_real)``.
    """
    if T > 1 and (pseudo_states is None or len(pseudo_states) == 0):
        raise ContractError("T > 1 needs a non-empty pseudo buffer")
    if real_mask(T, 1, rng)[0]:
        return replay_states[int(rng.integers(len(replay_states)))], True
    return pseudo_states[int(rng.integers(len(pseudo_states)))], False


def mix_batch(T: int, replay_states, pseudo_states, n: int, rng: np.random.Generator,
              noise: float = 0.0, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """A rescaled, noised batch of ``n`` items mixed per item as in :func:`mix_source`.

    ``replay_states`` are raw; ``pseudo_states`` are already rescaled.
    """
    if T > 1 and (pseudo_states is None or len(pseudo_states) == 0):
        raise ContractError("T > 1 needs a non-empty pseudo buffer")
    is_real = real_mask(T, n, rng)
    out = np.empty((n,) + tuple(replay_states.shape[1:]), dtype=dtype)
    k = int(is_real.sum())
    if k:
        raw = replay_states[rng.integers(0, len(replay_states), size=k)]
        out[is_real] = add_input_noise(raw, rng, noise)
    if n - k:
        fake = pseudo_states[rng.integers(0, len(pseudo_states), size=n - k)]
        out[~is_real] = add_scaled_noise(fake, rng, noise)
    return out, is_real


def add_input_noise(x_raw, rng: np.random.Generator, width: float = 10.0) -> np.ndarray:
    """Raw-space noise U(-width, width), then the [-1, 1] rescaling."""
    x = np.asarray(x_raw, dtype=np.float64)
    if width:
        x = x + rng.uniform(-width, width, size=x.shape)
    return rescale(x)


def add_scaled_noise(x, rng: np.random.Generator, width: float = 10.0) -> np.ndarray:
    """The same raw-space noise for an input that is already rescaled."""
    x = np.asarray(x)
    if not width:
        return x
    return x + (RAW_TO_SCALED * rng.uniform(-width, width, size=x.shape)).astype(x.dtype)


# -- losses -----------------------------------------------------------------------
def gradient_penalty_terms(disc_net: Network, disc_pair, x_hat: np.ndarray) -> Tensor:
    """Per-item input-gradient norms of D at ``x_hat`` (differentiable in phi)."""
    xh = Tensor(x_hat, requires_grad=True)
    d_hat = disc_net.apply(disc_pair, xh)
    (g,) = ad.grad(d_hat.sum(), [xh], create_graph=True)
    sq = (g * g).reshape(g.shape[0], -1).sum(axis=1)
    return ad.sqrt(sq)


def disc_loss(disc_net: Network, disc_pair, x_real, x_fake, rng: np.random.Generator,
              gp_lambda: float = 10.0, drift: float = 1e-6,
              stats: dict | None = None) -> Tensor:
    """D(x~) - D(x) + lambda (||grad D(x^)|| - 1)^2 + drift (D(x)^2 + D(x~)^2), batch mean.

    The interpolation weight is drawn per item.  Real and fake items share
    one forward pass (the critic has no batch statistics, so this is exact).
    If ``stats`` is given, the batch means of D(real) and D(fake) are stored
    under ``"d_real"`` and ``"d_fake"``.
    """
    x_real = np.asarray(x_real)
    x_fake = np.asarray(x_fake)
    if x_real.shape != x_fake.shape:
        raise ContractError(f"real {x_real.shape} and fake {x_fake.shape} batches differ")
    n = x_real.shape[0]
    eps = rng.uniform(0.0, 1.0, size=(n,) + (1,) * (x_real.ndim - 1)).astype(x_real.dtype)
    x_hat = eps * x_real + (1.0 - eps) * x_fake
    d_both = disc_net.apply(disc_pair, np.concatenate([x_real, x_fake])).reshape(2 * n)
    d_real, d_fake = ad.take_slice(d_both, 0, 0, n), ad.take_slice(d_both, 0, n, 2 * n)
    if stats is not None:
        stats["d_real"] = float(d_real.data.mean())
        stats["d_fake"] = float(d_fake.data.mean())
    norms = gradient_penalty_terms(disc_net, disc_pair, x_hat)
    gp = (norms - 1.0) * (norms - 1.0)
    per_item = d_fake - d_real + gp * gp_lambda + (d_real * d_real + d_fake * d_fake) * drift
    return per_item.mean()


def gen_loss(gen_net: Network, gen_pair, disc_net: Network, disc_params: NetworkParams,
             z, noise: np.ndarray | None = None, training: bool = True) -> Tensor:
    """Batch mean of -D(G(z)); ``noise`` (rescaled units) is added before D."""
    x = gen_net.apply(gen_pair, z, training=training)
    if noise is not None:
        x = x + noise
    return -disc_net.apply(disc_params, x).mean()


# -- training ---------------------------------------------------------------------
def init_gan(gen_net: Network, disc_net: Network, rng: np.random.Generator,
             cfg: GanConfig, dtype=np.float64) -> GanPair:
    gen = gen_net.init(rng, dtype)
    disc = disc_net.init(rng, dtype)
    return GanPair(gen_net, disc_net, gen, disc,
                   adam(gen, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps),
                   adam(disc, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps))


def train_gan(gen_net: Network, disc_net: Network, replay_states: np.ndarray, T: int,
              cfg: GanConfig, *, init_rng: np.random.Generator, rng: np.random.Generator,
              prev_gan: GanPair | None = None, pseudo: PseudoBuffer | None = None,
              pseudo_count: int = 20_000,
              on_log: Callable[[int, float, float, float, float], None] | None = None,
              dtype=np.float64) -> GanPair:
    """Fresh GAN trained for ``cfg.steps`` alternating (disc, gen) updates.

    ``replay_states`` are raw current-task states.  For T > 1 the other
    items come from ``pseudo`` (or a buffer generated from ``prev_gan``).
    Logged rows are (step, loss_d, loss_g, mean D(real), mean D(fake)).
    """
    if T < 1:
        raise ConfigurationError("T must be at least 1")
    if T > 1 and pseudo is None:
        if prev_gan is None:
            raise ConfigurationError("training the GAN on task T > 1 needs the previous GAN")
        pseudo = generate_pseudo_buffer(prev_gan, pseudo_count, rng)
    pseudo_states = pseudo.states if pseudo is not None else None
    gan = init_gan(gen_net, disc_net, init_rng, cfg, dtype)
    gan.tasks_seen = T
    n = cfg.batch_size
    latent = gen_net.input_shape[0]
    acc = np.zeros(4)
    acc_n = 0
    stats: dict[str, float] = {}
    for step in range(1, cfg.steps + 1):
        # discriminator step
        x_real, _ = mix_batch(T, replay_states, pseudo_states, n, rng, cfg.noise, dtype)
        z = sample_latent(rng, n, latent, dtype)
        with ad.no_grad():
            fake = gen_net.apply(gan.gen, z, training=True).data
        fake = add_scaled_noise(fake, rng, cfg.noise)
        dpair = differentiable(gan.disc)
        ld = disc_loss(disc_net, dpair, x_real, fake, rng, cfg.gp_lambda, cfg.drift, stats)
        ld_v = ld.item()
        if not math.isfinite(ld_v):
            raise NumericError(f"non-finite discriminator loss {ld_v} at GAN step {step}")
        gan.disc = adam_step(gan.disc_opt, gan.disc, backward(ld, dpair))
        # generator step
        z = sample_latent(rng, n, latent, dtype)
        noise = (RAW_TO_SCALED * rng.uniform(-cfg.noise, cfg.noise,
                                             size=(n,) + gen_net.output_shape)).astype(dtype)
        gpair = differentiable(gan.gen)
        lg = gen_loss(gen_net, gpair, disc_net, gan.disc, z, noise)
        lg_v = lg.item()
        if not math.isfinite(lg_v):
            raise NumericError(f"non-finite generator loss {lg_v} at GAN step {step}")
        gan.gen = adam_step(gan.gen_opt, gan.gen, backward(lg, gpair))
        if cfg.log_every:
            acc += (ld_v, lg_v, stats["d_real"], stats["d_fake"])
            acc_n += 1
            if step % cfg.log_every == 0:
                row = (step, *(acc / acc_n).tolist())
                gan.log.append(row)
                if on_log is not None:
                    on_log(*row)
                acc[:] = 0.0
                acc_n = 0
    return gan


def generate_pseudo_buffer(gan: GanPair, count: int, rng: np.random.Generator) -> PseudoBuffer:
    """``count`` i.i.d. states G(z) from a frozen GAN."""
    states = gan.sample(count, rng)
    return PseudoBuffer(states, source=f"gan-T{gan.tasks_seen}")


def dump_pseudo_states(path, buffer: PseudoBuffer, real: np.ndarray | None = None) -> int:
    """Write generated (and optionally real, rescaled) states for inspection."""
    arrays = {"generated": buffer.states}
    if real is not None:
        arrays["real"] = np.asarray(real)
    return save_arrays(path, arrays, meta={"source": buffer.source})
