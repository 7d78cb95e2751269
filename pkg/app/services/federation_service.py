# app/services/federation_service.py

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from app.core.config import settings
from app.models.diffusion import Architecture, NoiseModel, Schedule
from app.models.enums import AllocationPolicy, PartitionMode
from app.models.federation import FederationState, LocalUpdate, RunLedger
from app.schemas.allocation import AllocationDecision
from app.schemas.config import QUANT_MODE, RunConfig, quant_bit_width
from app.schemas.device import ChannelParams, DeviceProfile
from app.schemas.federation import DeviceRoundEntry, RoundReport
from app.services import (
    allocation_service,
    diffusion_service,
    link_service,
    metrics_service,
    quant_service,
)
from app.utils.exceptions import (
    ConfigError,
    InfeasibleSplit,
    ShapeError,
    TooFewSamples,
)
from app.utils.rng import SeedLike, Stream, stream

logger = logging.getLogger(__name__)
audit_logger = logging.getLogger("audit")

# Probability weight of a device's two preferred modes under mode_skew
MODE_SKEW_WEIGHT = 9.0


def partition_dataset(
    points: np.ndarray,
    K: int,
    mode: PartitionMode,
    seed: SeedLike,
    modes: int = 8,
) -> List[np.ndarray]:
    """
    Split `points` into K disjoint nonempty subsets covering the input.

    iid_uniform splits a seeded permutation into near-equal parts. mode_skew
    first gives each device one point, then assigns the rest so device k
    draws mostly from mixture modes k and k+1.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    n = len(points)
    if K > n:
        raise TooFewSamples(f"cannot split {n} points across {K} devices")
    rng = stream(seed)
    order = rng.permutation(n)
    if mode == PartitionMode.IID_UNIFORM:
        return [points[idx] for idx in np.array_split(order, K)]

    labels = diffusion_service.nearest_mode(points, modes)
    weights = np.ones((K, modes))
    for k in range(K):
        weights[k, [k % modes, (k + 1) % modes]] = MODE_SKEW_WEIGHT
    owner = np.empty(n, dtype=np.int64)
    owner[order[:K]] = np.arange(K)
    rest = order[K:]
    probs = weights[:, labels[rest]]
    cdf = np.cumsum(probs / probs.sum(axis=0), axis=0)
    u = rng.random(len(rest))
    owner[rest] = np.minimum((cdf < u).sum(axis=0), K - 1)
    return [points[np.sort(np.flatnonzero(owner == k))] for k in range(K)]


def local_update(
    global_model: NoiseModel,
    points: np.ndarray,
    schedule: Schedule,
    local_iters: int,
    lr: float,
    batch_size: int,
    bit_width: Optional[int],
    train_seed: SeedLike,
    quant_seed: SeedLike,
) -> LocalUpdate:
    """
    Train a copy of the global model on one device's data, then quantize it
    to `bit_width` bits. None uploads full-precision weights.
    """
    model = global_model.copy()
    model, loss = diffusion_service.train_local(
        model, points, schedule, local_iters, lr, batch_size, train_seed
    )
    if local_iters == 0:
        loss = diffusion_service.batch_loss(
            model,
            diffusion_service.make_batch(points, schedule, batch_size, train_seed),
            schedule,
        )
    if bit_width is None:
        return LocalUpdate(
            weights=model.params,
            payload=None,
            bit_width=quant_service.FULL_PRECISION_BITS,
            local_loss=loss,
            quant_mse=0.0,
        )
    spec = quant_service.build_spec(model.params, 1 << bit_width)
    payload = quant_service.quantize(model.params, spec, quant_seed)
    received = quant_service.decode_payload(quant_service.encode_payload(payload))
    weights = quant_service.dequantize(received)
    return LocalUpdate(
        weights=weights,
        payload=received,
        bit_width=bit_width,
        local_loss=loss,
        quant_mse=metrics_service.mse(weights, model.params),
    )


def aggregate_fedavg(uploads: Sequence[np.ndarray], sizes: Sequence[int]) -> np.ndarray:
    """sum_k (D_k / sum D) w_k, accumulated in device order."""
    if len(uploads) == 0 or len(uploads) != len(sizes):
        raise ShapeError("need one size per upload and at least one upload")
    dim = np.shape(uploads[0])
    if any(np.shape(u) != dim for u in uploads):
        raise ShapeError("uploads differ in dimension")
    if any(s <= 0 for s in sizes):
        raise ValueError("dataset sizes must be positive")
    total = float(sum(sizes))
    acc = np.zeros(dim, dtype=np.float64)
    for upload, size in zip(uploads, sizes):
        acc += (size / total) * np.asarray(upload, dtype=np.float64)
    return acc


def _policy(quant_mode: str, policy: AllocationPolicy) -> AllocationPolicy:
    if policy != AllocationPolicy.AUTO:
        return policy
    if quant_mode == "on_demand":
        return AllocationPolicy.OPTIMIZED
    return AllocationPolicy.EVEN_SPLIT


def _allocate(
    k: int,
    profile: DeviceProfile,
    ch: ChannelParams,
    bit_width: int,
    policy: AllocationPolicy,
    config: RunConfig,
) -> AllocationDecision:
    if policy == AllocationPolicy.OPTIMIZED:
        decision, _ = allocation_service.solve(
            profile,
            ch,
            config.solver.lam,
            bit_width=bit_width,
            objective=config.solver.objective,
            device_id=k,
        )
        return decision
    try:
        return allocation_service.even_split_decision(
            profile, ch, bit_width, config.solver.objective, device_id=k
        )
    except InfeasibleSplit as exc:
        audit_logger.warning("Device %d infeasible under even split", k)
        raise InfeasibleSplit(f"device {k}: {exc.detail}") from exc


def setup_federation(
    config: RunConfig,
    quant_mode: Optional[str] = None,
    allocation: Optional[AllocationPolicy] = None,
) -> FederationState:
    """
    Build data, partitions, the initial model and every device's allocation.
    Profiles take the network's parameter count as M and the local dataset
    size as D, so energy is charged for the bits actually sent.
    """
    training = config.training
    quant_mode = quant_mode or training.quant_mode
    if not QUANT_MODE.match(quant_mode):
        raise ConfigError(f"unknown quant mode {quant_mode!r}")
    policy = _policy(quant_mode, allocation or training.allocation)
    seed = config.seed

    arch = Architecture(hidden=training.hidden, embed_dim=training.embed_dim)
    schedule = diffusion_service.linear_schedule(
        training.T, training.beta_1, training.beta_T
    )
    mixture = dict(
        modes=training.mixture_modes,
        radius=training.mixture_radius,
        variance=training.mixture_variance,
    )
    points = diffusion_service.mixture_dataset(
        config.K * training.samples_per_device, stream(seed, Stream.DATA), **mixture
    )
    datasets = partition_dataset(
        points,
        config.K,
        training.partition,
        stream(seed, Stream.PARTITION),
        modes=training.mixture_modes,
    )
    reference = diffusion_service.mixture_dataset(
        training.eval_samples, stream(seed, Stream.EVAL), **mixture
    )
    model = diffusion_service.init_model(arch, stream(seed, Stream.INIT))

    profiles, channels, bit_widths, decisions = [], [], [], []
    fixed = quant_bit_width(quant_mode)
    for k in range(config.K):
        profile = config.profile(k).model_copy(
            update={"model_size": arch.param_count, "data_size": len(datasets[k])}
        )
        ch = config.channel_for(k)
        if fixed is None:
            b = quant_service.level_for_demand(profile.demand)[1]
        else:
            b = fixed
        profiles.append(profile)
        channels.append(ch)
        bit_widths.append(b)
        decisions.append(_allocate(k, profile, ch, b, policy, config))

    logger.info(
        "Federation ready: K=%d, mode=%s, policy=%s, M=%d, bits=%s",
        config.K,
        quant_mode,
        policy.value,
        arch.param_count,
        bit_widths,
    )
    return FederationState(
        config=config,
        quant_mode=quant_mode,
        schedule=schedule,
        model=model,
        datasets=datasets,
        reference=reference,
        profiles=profiles,
        channels=channels,
        bit_widths=bit_widths,
        decisions=decisions,
    )


def _participants(state: FederationState, round_index: int) -> List[int]:
    share = state.config.training.participation
    if share >= 1.0:
        return list(range(state.K))
    count = max(1, int(round(share * state.K)))
    rng = stream(state.config.seed, Stream.SELECTION, round_index)
    return sorted(int(k) for k in rng.choice(state.K, size=count, replace=False))


def run_round(
    state: FederationState, round_index: int, evaluate: bool = False
) -> RoundReport:
    """
    One global round: local updates on a frozen snapshot, FedAvg over the
    received uploads, and energy charged at each device's decision.
    """
    training = state.config.training
    seed = state.config.seed
    quantized = state.quant_mode != "none"
    snapshot = NoiseModel(arch=state.model.arch, params=state.model.params.copy())
    snapshot.params.setflags(write=False)
    chosen = _participants(state, round_index)

    def job(k: int) -> LocalUpdate:
        return local_update(
            snapshot,
            state.datasets[k],
            state.schedule,
            training.local_iters,
            training.lr,
            training.batch_size,
            state.bit_widths[k] if quantized else None,
            stream(seed, Stream.LOCAL_TRAIN, round_index, k),
            stream(seed, Stream.QUANTIZE, round_index, k),
        )

    if settings.WORKERS > 1 and len(chosen) > 1:
        with ThreadPoolExecutor(max_workers=settings.WORKERS) as pool:
            updates = list(pool.map(job, chosen))
    else:
        updates = [job(k) for k in chosen]

    params = aggregate_fedavg(
        [u.weights for u in updates], [len(state.datasets[k]) for k in chosen]
    )
    state.model = NoiseModel(arch=state.model.arch, params=params)

    entries = []
    for k, update in zip(chosen, updates):
        decision = state.decisions[k]
        profile = state.profiles[k]
        bits = quant_service.payload_bits(profile.model_size, update.bit_width)
        split = link_service.total_energy_split(
            profile,
            state.channels[k],
            bits,
            decision.theta,
            decision.pi,
            state.config.solver.objective,
        )
        entries.append(
            DeviceRoundEntry(
                round=round_index,
                device_id=k,
                bit_width=update.bit_width,
                bits_sent=bits,
                theta=decision.theta,
                pi=decision.pi,
                E_cmp=split.E_cmp,
                E_com=split.E_com,
                E_total=split.E_cmp + split.E_com,
                T_cmp=decision.T_cmp,
                T_com=decision.T_com,
                local_loss=update.local_loss,
                quant_mse=update.quant_mse,
            )
        )
        audit_logger.info(
            "round=%d device=%d bits=%d E_cmp=%.6g E_com=%.6g",
            round_index,
            k,
            bits,
            split.E_cmp,
            split.E_com,
        )

    frechet = None
    if evaluate:
        samples = diffusion_service.sample(
            state.model,
            state.schedule,
            training.eval_samples,
            stream(seed, Stream.EVAL, round_index),
        )
        frechet = metrics_service.frechet_points(samples, state.reference)

    state.rounds_done = round_index
    report = RoundReport.from_entries(round_index, entries, frechet)
    logger.info(
        "Round %d: E=%.6g J, bits=%d, loss=%.5f%s",
        round_index,
        report.total_energy,
        report.total_bits,
        report.mean_loss,
        "" if frechet is None else f", frechet={frechet:.5f}",
    )
    return report


def run_training(
    config: RunConfig,
    quant_mode: Optional[str] = None,
    allocation: Optional[AllocationPolicy] = None,
) -> RunLedger:
    """Rounds 1..R of quantized federated diffusion training."""
    state = setup_federation(config, quant_mode, allocation)
    rounds = config.training.rounds
    every = config.training.eval_every
    reports = []
    for r in range(1, rounds + 1):
        reports.append(run_round(state, r, evaluate=(r % every == 0 or r == rounds)))
    ledger = RunLedger(
        mode=state.quant_mode,
        seed=config.seed,
        rounds=reports,
        final_params=state.model.params.copy(),
        config=config.model_dump(mode="json", by_alias=True),
    )
    logger.info(
        "Training %s finished: %d rounds, %.6g J, %d bits",
        ledger.mode,
        len(reports),
        ledger.total_energy,
        ledger.total_bits,
    )
    return ledger


DEVICE_COLUMNS = list(DeviceRoundEntry.model_fields)
ROUND_COLUMNS = [
    "round",
    "total_energy_J",
    "total_bits",
    "mean_loss",
    "frechet",
    "cumulative_energy_J",
    "cumulative_bits",
]
SUMMARY_COLUMNS = ["mode", "final_frechet", "total_energy_J", "total_bits"]


def ledger_frames(ledger: RunLedger) -> tuple[pd.DataFrame, pd.DataFrame]:
    """(per-device-per-round rows, per-round rows)."""
    devices = pd.DataFrame(
        [e.model_dump() for r in ledger.rounds for e in r.devices],
        columns=DEVICE_COLUMNS,
    )
    rounds = pd.DataFrame(
        [
            {
                "round": r.round,
                "total_energy_J": r.total_energy,
                "total_bits": r.total_bits,
                "mean_loss": r.mean_loss,
                "frechet": r.frechet,
            }
            for r in ledger.rounds
        ],
        columns=ROUND_COLUMNS[:5],
    )
    rounds["cumulative_energy_J"] = rounds["total_energy_J"].cumsum()
    rounds["cumulative_bits"] = rounds["total_bits"].cumsum()
    return devices, rounds


def ledger_summary(ledger: RunLedger) -> dict:
    final = ledger.final_frechet
    return {
        "mode": ledger.mode,
        "final_frechet": float("nan") if final is None else final,
        "total_energy_J": ledger.total_energy,
        "total_bits": ledger.total_bits,
    }
