# app/services/diffusion_service.py

import logging
import math
from typing import Callable, Optional

import numpy as np

from app.models.diffusion import Architecture, Batch, NoiseModel, Schedule
from app.utils.exceptions import InvalidSchedule, NumericalOverflow
from app.utils.rng import SeedLike, stream

logger = logging.getLogger(__name__)

Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]


def linear_schedule(T: int, beta_1: float, beta_T: float) -> Schedule:
    if T < 1:
        raise InvalidSchedule(f"step count must be >= 1, got {T}")
    if not (0 < beta_1 <= beta_T < 1):
        raise InvalidSchedule(
            f"need 0 < beta_1 <= beta_T < 1, got beta_1={beta_1}, beta_T={beta_T}"
        )
    return Schedule(betas=np.linspace(beta_1, beta_T, T))


def _alpha_bar(schedule: Schedule, t) -> np.ndarray:
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    return schedule.alpha_bars[t - 1]


def diffuse_forward(x0, t, eps, schedule: Schedule) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, row-wise for arrays."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    ab = _alpha_bar(schedule, t)
    if ab.ndim:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features of the step index: [sin(t w_k), cos(t w_k)]."""
    if dim < 2 or dim % 2:
        raise ValueError("embedding dimension must be even and >= 2")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def init_model(arch: Architecture, seed: SeedLike) -> NoiseModel:
    """Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = stream(seed)
    chunks = []
    fan_in = arch.data_dim + arch.embed_dim
    for shape in arch.shapes:
        if len(shape) == 2:
            fan_in = shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
    return NoiseModel(arch=arch, params=np.concatenate(chunks))


def forward(model: NoiseModel, x: np.ndarray, t):
    """Predicted noise for points `x` at steps `t`, plus the activations."""
    W1, b1, W2, b2, W3, b3 = model.layers()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t), (x.shape[0],))
    inp = np.concatenate([x, time_embedding(t, model.arch.embed_dim)], axis=1)
    h1 = np.tanh(inp @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    out = h2 @ W3 + b3
    return out, (inp, h1, h2)


def loss_and_grad(
    model: NoiseModel, batch: Batch, schedule: Schedule
) -> tuple[float, np.ndarray]:
    """
    Mean over the batch of ||eps - F_w(x_t, t)||^2 and its exact gradient
    with respect to the flat parameter vector.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("batch must be nonempty")
    xt = diffuse_forward(batch.x0, batch.t, batch.eps, schedule)
    out, (inp, h1, h2) = forward(model, xt, batch.t)
    resid = out - batch.eps
    loss = float(np.sum(resid * resid) / n)
    if not math.isfinite(loss):
        raise NumericalOverflow("non-finite loss in forward pass")

    _, _, W2, _, W3, _ = model.layers()
    d_out = 2.0 * resid / n
    d_W3 = h2.T @ d_out
    d_b3 = d_out.sum(axis=0)
    d_z2 = (d_out @ W3.T) * (1.0 - h2 * h2)
    d_W2 = h1.T @ d_z2
    d_b2 = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ W2.T) * (1.0 - h1 * h1)
    d_W1 = inp.T @ d_z1
    d_b1 = d_z1.sum(axis=0)

    grad = np.concatenate(
        [g.ravel() for g in (d_W1, d_b1, d_W2, d_b2, d_W3, d_b3)]
    )
    if not np.all(np.isfinite(grad)):
        raise NumericalOverflow("non-finite gradient")
    return loss, grad


def batch_loss(model: NoiseModel, batch: Batch, schedule: Schedule) -> float:
    xt = diffuse_forward(batch.x0, batch.t, batch.eps, schedule)
    out, _ = forward(model, xt, batch.t)
    return float(np.sum((out - batch.eps) ** 2) / len(batch))


def sgd_step(model: NoiseModel, grad: np.ndarray, lr: float) -> NoiseModel:
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    return NoiseModel(arch=model.arch, params=model.params - lr * grad)


def sample(
    model: NoiseModel,
    schedule: Schedule,
    n: int,
    seed: SeedLike,
    stochastic: bool = True,
    predictor: Optional[Predictor] = None,
) -> np.ndarray:
    """
    Ancestral sampling from x_T ~ N(0, I) down to x_0.

    x_T is the first draw of the seeded stream. `stochastic=False` drops the
    sigma_t z term at every step; `predictor` replaces the network.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream(seed)
    predict = predictor or (lambda x, t: forward(model, x, t)[0])
    x = rng.standard_normal((n, 2))
    for t in range(schedule.T, 0, -1):
        beta = schedule.betas[t - 1]
        alpha = schedule.alphas[t - 1]
        ab = schedule.alpha_bars[t - 1]
        eps_hat = predict(x, np.full(n, t))
        x = (x - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(alpha)
        if t > 1 and stochastic:
            x = x + math.sqrt(beta) * rng.standard_normal((n, 2))
    if not np.all(np.isfinite(x)):
        raise NumericalOverflow("sampler diverged")
    return x


def mixture_modes(modes: int = 8, radius: float = 4.0) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(modes) / modes
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def mixture_dataset(
    n: int,
    seed: SeedLike,
    modes: int = 8,
    radius: float = 4.0,
    variance: float = 0.1,
) -> np.ndarray:
    """n points from an equal-weight Gaussian mixture with centres on a circle."""
    rng = stream(seed)
    centres = mixture_modes(modes, radius)
    comp = rng.integers(modes, size=n)
    return centres[comp] + math.sqrt(variance) * rng.standard_normal((n, 2))


def nearest_mode(points: np.ndarray, modes: int = 8) -> np.ndarray:
    """Index of the angular sector each point falls in."""
    angles = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2.0 * np.pi)
    return np.rint(angles / (2.0 * np.pi / modes)).astype(np.int64) % modes


def make_batch(
    points: np.ndarray, schedule: Schedule, batch_size: int, rng: SeedLike
) -> Batch:
    rng = stream(rng)
    if len(points) == 0 or batch_size < 1:
        raise ValueError("batch needs at least one point")
    idx = rng.integers(len(points), size=batch_size)
    t = rng.integers(1, schedule.T + 1, size=batch_size)
    eps = rng.standard_normal((batch_size, 2))
    return Batch(x0=points[idx], t=t, eps=eps)


def train_local(
    model: NoiseModel,
    points: np.ndarray,
    schedule: Schedule,
    iters: int,
    lr: float,
    batch_size: int,
    rng: SeedLike,
) -> tuple[NoiseModel, float]:
    """Plain gradient descent for `iters` steps; returns the model and mean loss."""
    rng = stream(rng)
    losses = []
    for _ in range(iters):
        batch = make_batch(points, schedule, batch_size, rng)
        loss, grad = loss_and_grad(model, batch, schedule)
        model = sgd_step(model, grad, lr)
        losses.append(loss)
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    logger.debug("Local training: %d steps, mean loss %.6f", iters, mean_loss)
    return model, mean_loss
