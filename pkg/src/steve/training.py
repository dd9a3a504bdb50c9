"""Training loop, evaluation metrics and the ablation suite."""

from __future__ import annotations

import copy
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import Dataset, Sample, WindowSpec, chrono_split, collate, make_windows, ood_filter
from .deconfound import TASKS, VariationalNet, adversarial_loss, club_loss, fit_variational, sample_vectors
from .errors import ConfigError, DivergenceError, EmptyScenarioError, NonFiniteError
from .head import prediction_loss, total_loss
from .model import STEVE, ModelConfig

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    dwa_temperature: float = 2.0
    q_steps: int = 1
    precision: str = "float32"
    mape_floor: float = 1.0
    mi_fit_steps: int = 300

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("learning_rate, batch_size and max_epochs must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.dwa_temperature <= 0 or self.q_steps < 0:
            raise ConfigError("dwa_temperature must be positive and q_steps >= 0")
        if self.precision not in DTYPES:
            raise ConfigError(f"precision must be one of {sorted(DTYPES)}")


@dataclass(frozen=True)
class AblationVariant:
    name: str
    use_club: bool = True
    reverse: bool = True
    tasks: tuple[str, ...] = TASKS


VARIANTS = {
    "full": AblationVariant("full"),
    "wo_cd": AblationVariant("wo_cd", use_club=False),
    "wo_gr": AblationVariant("wo_gr", reverse=False),
    "wo_idp": AblationVariant("wo_idp", use_club=False, reverse=False),
    "wo_sl": AblationVariant("wo_sl", tasks=("ti", "tl")),
    "wo_ti": AblationVariant("wo_ti", tasks=("sl", "tl")),
    "wo_tl": AblationVariant("wo_tl", tasks=("sl", "ti")),
}


def dwa_weights(prev_losses, temperature: float = 2.0, active=None) -> np.ndarray:
    """Dynamic weight averaging over task terms.

    ``prev_losses`` holds per-task losses of the last epochs, oldest first
    (``[epochs, tasks]``). With two epochs of history, weight_i is
    proportional to ``exp(r_i / temperature)`` where ``r_i`` is the ratio of
    the latest to the previous loss; weights of active tasks sum to their
    count. Short history or a zero denominator falls back to uniform weights.
    """
    prev = np.asarray(prev_losses, dtype=np.float64)
    n_tasks = prev.shape[-1] if prev.ndim == 2 else len(active)
    active = np.ones(n_tasks, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    uniform = active.astype(np.float64)
    if prev.ndim != 2 or prev.shape[0] < 2:
        return uniform
    last, before = prev[-1][active], prev[-2][active]
    if np.any(before == 0) or not np.all(np.isfinite(last / before)):
        return uniform
    r = last / before
    e = np.exp((r - r.max()) / temperature)
    out = np.zeros(n_tasks)
    out[active] = active.sum() * e / e.sum()
    return out


@dataclass
class RunRecord:
    variant: str
    seed: int
    config: dict
    epochs: list = field(default_factory=list)  # dicts: epoch, L_P, L_S, L_D, L_O, val_MAE
    best_epoch: int = -1
    best_val_mae: float = float("inf")
    checkpoint_path: str | None = None
    wall_time: float = 0.0

    @property
    def val_mae(self) -> list[float]:
        return [e["val_MAE"] for e in self.epochs]

    def losses(self, key: str) -> list[float]:
        return [e[key] for e in self.epochs]


def _batch_tensors(samples: Sequence[Sample], dtype) -> dict[str, torch.Tensor]:
    arr = collate(samples)
    return {
        "inputs": torch.as_tensor(arr["inputs"], dtype=dtype),
        "target": torch.as_tensor(arr["target"], dtype=dtype),
        "temporal": torch.as_tensor(arr["temporal"]),
        "load": torch.as_tensor(arr["load"]),
    }


def fit_scaler(model: STEVE, train: Sequence[Sample]) -> None:
    flows = train[0].flows
    last = max(s.target_time_index for s in train)
    seen = flows[: last + 1].reshape(-1, flows.shape[-1]).astype(np.float64)
    model.set_scaler(seen.mean(axis=0), seen.std(axis=0))


def objective(model: STEVE, batch: dict, variant: AblationVariant, weights: torch.Tensor,
              q_optimizer: torch.optim.Optimizer | None = None, q_steps: int = 1):
    """One forward pass: returns (L_O, L_P, L_S, L_D, task_terms)."""
    out = model(batch["inputs"])
    pair = out.pair
    if variant.use_club:
        zi = sample_vectors(model.pooler, pair.z_i)
        zv = sample_vectors(model.pooler, pair.z_v)
        if q_optimizer is not None and q_steps:
            fit_variational(model.q, zi, zv, q_steps, q_optimizer)
        # a negative estimate only means q lags behind the encoders; MI itself is >= 0
        l_d = club_loss(zi, zv, model.q).clamp_min(0.0)
    else:
        l_d = out.y_hat.new_zeros(())
    l_s, terms = adversarial_loss(model.pooler, model.ssl, pair, batch["temporal"], batch["load"],
                                  weights, eta=model.cfg.grl_eta, reverse=variant.reverse,
                                  tasks=variant.tasks)
    l_p = prediction_loss(out.y_hat, batch["target"])
    try:
        l_o = total_loss(l_p, l_s, l_d)
    except NonFiniteError as exc:
        raise DivergenceError(str(exc)) from exc
    return l_o, l_p, l_s, l_d, terms


@torch.no_grad()
def predict_samples(model: STEVE, samples: Sequence[Sample], batch_size: int = 64):
    """Predictions, targets and priors as numpy arrays ``[S, N, F]``, ``[S, N, F]``, ``[S, 2]``."""
    model.eval()
    preds, targets, alphas = [], [], []
    for i in range(0, len(samples), batch_size):
        batch = _batch_tensors(samples[i:i + batch_size], model.dtype)
        out = model(batch["inputs"])
        preds.append(out.y_hat.numpy())
        targets.append(batch["target"].numpy())
        alphas.append(out.alpha.numpy())
    model.train()
    return np.concatenate(preds), np.concatenate(targets), np.concatenate(alphas)


def metrics(y: np.ndarray, y_hat: np.ndarray, node_mask=None, mape_floor: float = 1.0) -> tuple[float, float]:
    """MAE over all (masked) entries; MAPE in percent over entries with ``y >= mape_floor``."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.size == 0:
        raise EmptyScenarioError("no samples in scenario")
    keep = np.ones(y.shape, dtype=bool)
    if node_mask is not None:
        node_mask = np.asarray(node_mask, dtype=bool)
        if not node_mask.any():
            raise EmptyScenarioError("node mask selects no nodes")
        keep &= node_mask[None, :, None]
    err = np.abs(y - y_hat)
    mae = float(err[keep].mean())
    big = keep & (y >= mape_floor)
    mape = float((err[big] / y[big]).mean() * 100.0) if big.any() else float("nan")
    return mae, mape


def evaluate(model: STEVE, samples: Sequence[Sample], scenario: str = "all", clusters=None,
             mape_floor: float = 1.0) -> tuple[float, float]:
    chosen, mask = ood_filter(samples, scenario, clusters)
    if not chosen:
        raise EmptyScenarioError(f"scenario {scenario!r} selects no samples")
    y_hat, y, _ = predict_samples(model, chosen)
    return metrics(y, y_hat, mask, mape_floor)


def _seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def train(model: STEVE, train_samples: Sequence[Sample], val_samples: Sequence[Sample],
          cfg: TrainConfig = TrainConfig(), variant: AblationVariant = VARIANTS["full"],
          run_dir=None) -> RunRecord:
    """Mini-batch Adam on L_O = L_P + L_S + L_D with validation-MAE early stopping.

    The best-validation parameters are restored into ``model`` before returning.
    """
    cfg.validate()
    rng = _seed_everything(cfg.seed)
    model.to(DTYPES[cfg.precision])
    fit_scaler(model, train_samples)
    model.train()
    opt = torch.optim.Adam(model.main_parameters(), lr=cfg.learning_rate)
    q_opt = torch.optim.Adam(model.q.parameters(), lr=cfg.learning_rate)
    active = np.array([t in variant.tasks for t in TASKS] * 2)
    task_history: list[np.ndarray] = []
    record = RunRecord(variant.name, cfg.seed, {"train": asdict(cfg), "model": model.config_dict(),
                                                 "variant": asdict(variant)})
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.snapshot").write_text(json.dumps(record.config, indent=2, sort_keys=True))
        record.checkpoint_path = str(run_dir / "checkpoint.best")
    best_state = None
    stale = 0
    started = time.perf_counter()
    for epoch in range(1, cfg.max_epochs + 1):
        weights = torch.as_tensor(dwa_weights(task_history[-2:], cfg.dwa_temperature, active))
        order = rng.permutation(len(train_samples))
        sums = np.zeros(4)
        term_sum = np.zeros(6)
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = _batch_tensors([train_samples[i] for i in order[start:start + cfg.batch_size]], model.dtype)
            l_o, l_p, l_s, l_d, terms = objective(model, batch, variant, weights, q_opt, cfg.q_steps)
            opt.zero_grad()
            l_o.backward()
            opt.step()
            sums += [t.item() for t in (l_p, l_s, l_d, l_o)]
            term_sum += terms.numpy()
            n_batches += 1
        task_history.append(term_sum / n_batches)
        val_mae, _ = evaluate(model, val_samples, mape_floor=cfg.mape_floor)
        l_p, l_s, l_d, l_o = sums / n_batches
        record.epochs.append(dict(epoch=epoch, L_P=l_p, L_S=l_s, L_D=l_d, L_O=l_o, val_MAE=val_mae))
        log.info("%s seed=%d epoch %d L_O=%.4f val_MAE=%.4f", variant.name, cfg.seed, epoch, l_o, val_mae)
        if val_mae < record.best_val_mae:
            record.best_val_mae, record.best_epoch = val_mae, epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
            if run_dir is not None:
                model.save_checkpoint(record.checkpoint_path)
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    record.wall_time = time.perf_counter() - started
    if run_dir is not None:
        write_metrics(record, run_dir / "metrics.csv")
    return record


def write_metrics(record: RunRecord, path) -> None:
    cols = ["epoch", "L_P", "L_S", "L_D", "L_O", "val_MAE"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(record.epochs)


def write_alpha_log(model: STEVE, samples: Sequence[Sample], ds: Dataset, path) -> None:
    _, _, alpha = predict_samples(model, samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_time", "alpha1", "alpha2"])
        for s, (a1, a2) in zip(samples, alpha):
            writer.writerow([ds.timestamp(s.target_time_index).isoformat(), f"{a1:.6f}", f"{a2:.6f}"])


def write_results(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "MAE", "MAPE"])
        for scenario, mae, mape in rows:
            writer.writerow([scenario, f"{mae:.6f}", f"{mape:.6f}"])


@torch.no_grad()
def _sample_vectors(model: STEVE, samples, batch_size=64):
    zi, zv = [], []
    model.eval()
    for i in range(0, len(samples), batch_size):
        batch = _batch_tensors(samples[i:i + batch_size], model.dtype)
        pair = model.encode(batch["inputs"])
        zi.append(sample_vectors(model.pooler, pair.z_i))
        zv.append(sample_vectors(model.pooler, pair.z_v))
    model.train()
    return torch.cat(zi), torch.cat(zv)


def mi_estimate(model: STEVE, fit_samples: Sequence[Sample], heldout: Sequence[Sample],
                steps: int = 300, batch_size: int = 32, seed: int = 0, lr: float = 1e-3) -> float:
    """Held-out CLUB estimate between the two branches, using a freshly fitted q.

    The fresh q makes the estimate comparable between models trained with
    and without the disentanglement penalty.
    """
    zi_fit, zv_fit = _sample_vectors(model, fit_samples)
    zi_out, zv_out = _sample_vectors(model, heldout)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        q = VariationalNet(model.cfg.hidden_dim, model.cfg.hidden_dim).to(model.dtype)
    opt = torch.optim.Adam(q.parameters(), lr=lr)
    with torch.enable_grad():
        fit_variational(q, zi_fit, zv_fit, steps, opt)
    values = []
    with torch.no_grad():
        for i in range(0, len(zi_out), batch_size):
            values.append(float(club_loss(zi_out[i:i + batch_size], zv_out[i:i + batch_size], q)))
    return float(np.mean(values))


# ---------------------------------------------------------------------- pipeline


@dataclass
class Splits:
    samples: list
    train: list
    val: list
    test: list


def prepare(ds: Dataset, spec: WindowSpec = WindowSpec()) -> Splits:
    samples = make_windows(ds, spec)
    return Splits(samples, *chrono_split(samples))


def build_model(ds: Dataset, spec: WindowSpec = WindowSpec(), **model_kw) -> STEVE:
    cfg = ModelConfig(num_nodes=ds.num_nodes, channels=ds.channels, window=spec.length, **model_kw)
    return STEVE(cfg, ds.adjacency)


def run_variant(ds: Dataset, splits: Splits, variant: str, train_cfg: TrainConfig,
                model_kw: dict, spec: WindowSpec, scenarios: Sequence[str], clusters=None,
                run_dir=None, with_mi: bool = False) -> dict:
    model = build_model(ds, spec, seed=train_cfg.seed, **model_kw)
    record = train(model, splits.train, splits.val, train_cfg, VARIANTS[variant], run_dir)
    results = {sc: evaluate(model, splits.test, sc, clusters, train_cfg.mape_floor) for sc in scenarios}
    out = {"variant": variant, "seed": train_cfg.seed, "record": record, "results": results}
    if with_mi:
        out["mi"] = mi_estimate(model, splits.train, splits.test, train_cfg.mi_fit_steps, seed=train_cfg.seed)
    return out


def _run_variant_job(args):
    return run_variant(*args)


def ablation_suite(ds: Dataset, train_cfg: TrainConfig = TrainConfig(), seeds=(0, 1, 2),
                   variants=tuple(VARIANTS), scenarios=("workday", "holiday"), model_kw=None,
                   spec: WindowSpec = WindowSpec(), clusters=None, parallel: int = 1,
                   with_mi: bool = False) -> tuple[list[dict], list[dict]]:
    """Train every variant for every seed and tabulate test metrics per scenario.

    Returns (summary rows, raw per-run results). Summary rows hold the
    seed-averaged MAE/MAPE for each (variant, scenario); ``full`` is flagged
    as the reference row.
    """
    model_kw = model_kw or {}
    splits = prepare(ds, spec)
    jobs = [(ds, splits, v, TrainConfig(**{**asdict(train_cfg), "seed": s}), model_kw, spec,
             scenarios, clusters, None, with_mi) for v in variants for s in seeds]
    if parallel > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(parallel) as pool:
            runs = pool.map(_run_variant_job, jobs)
    else:
        runs = [_run_variant_job(j) for j in jobs]
    rows = []
    for v in variants:
        mine = [r for r in runs if r["variant"] == v]
        for sc in scenarios:
            rows.append({
                "variant": v,
                "scenario": sc,
                "MAE": float(np.mean([r["results"][sc][0] for r in mine])),
                "MAPE": float(np.mean([r["results"][sc][1] for r in mine])),
                "reference": v == "full",
            })
    return rows, runs


def write_ablation(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "scenario", "MAE", "MAPE", "reference"])
        writer.writeheader()
        writer.writerows(rows)
