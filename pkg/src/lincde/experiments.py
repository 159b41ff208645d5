"""Training harness for the area/volume prediction benchmark.

Five model configurations (single and stacked diagonal recurrences, plus a
fixed-weight dense NCDE baseline) are trained on the synthetic datasets and
compared by final test MSE relative to target variance.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .datasets import Dataset, DatasetSpec, gen_dataset
from .models import MODEL_KINDS, NcdeModel, make_model
from .paths import DomainError


@dataclass(frozen=True)
class TrainConfig:
    model: str
    state_dim: int = 256
    hidden_dim: int = 256
    batch_size: int = 32
    lr: float = 3e-5
    steps: int = 20_000
    seed: int = 0
    eval_every: int = 100
    eval_cap: int = 1000
    holdout: float = 0.1

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise DomainError(f"unknown model kind {self.model!r}")
        sizes = (self.state_dim, self.hidden_dim, self.batch_size, self.steps)
        if min(sizes) < 1 or self.lr <= 0:
            raise DomainError("sizes and learning rate must be positive")

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class RunRecord:
    config: TrainConfig
    curve: list  # rows (step, train_mse, test_mse)
    final_train_mse: float
    final_test_mse: float
    target_variance: float
    wall_time: float
    aborted: bool = False

    def to_json_line(self) -> str:
        # wall time deliberately excluded: identical seeds must give
        # identical bytes
        return json.dumps(
            {
                "config": asdict(self.config),
                "config_hash": self.config.digest(),
                "curve": self.curve,
                "final_train_mse": self.final_train_mse,
                "final_test_mse": self.final_test_mse,
                "target_variance": self.target_variance,
                "aborted": self.aborted,
            },
            sort_keys=True,
        )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns fresh (params, state) dicts."""
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {key!r}")
    t = state.get("t", 0) + 1
    m = dict(state.get("m", {}))
    v = dict(state.get("v", {}))
    new_params = {}
    for key, p in params.items():
        g = grads[key]
        m[key] = beta1 * m.get(key, np.zeros_like(p)) + (1 - beta1) * g
        v[key] = beta2 * v.get(key, np.zeros_like(p)) + (1 - beta2) * g * g
        mhat = m[key] / (1 - beta1**t)
        vhat = v[key] / (1 - beta2**t)
        new_params[key] = p - lr * mhat / (np.sqrt(vhat) + eps)
    return new_params, {"t": t, "m": m, "v": v}


def _predict_chunked(model, params, x, chunk: int = 32) -> np.ndarray:
    # bounded memory: the recurrence forward caches per-step activations
    out = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], chunk):
        out[lo : lo + chunk] = model.predict(params, x[lo : lo + chunk])
    return out


def _split(n: int, holdout: float, seed: int):
    rng = np.random.Generator(np.random.Philox(key=int(seed) + 1_000_003))
    perm = rng.permutation(n)
    n_test = max(1, int(round(holdout * n)))
    return perm[n_test:], perm[:n_test]


def train_model(config: TrainConfig, dataset: Dataset) -> RunRecord:
    start = time.perf_counter()
    values, targets = dataset.values, dataset.targets
    n, Lp1, d = values.shape
    L = Lp1 - 1
    train_idx, test_idx = _split(n, config.holdout, config.seed)
    tvar = float(np.var(targets[test_idx]))

    if config.model == "linear-ncde":
        model = NcdeModel(d, config.state_dim, config.seed)
        states = model.final_states(dataset.int_increments, dataset.scale, L)
        model.fit(states[train_idx], targets[train_idx])
        train_mse = float(
            np.mean((model.predict(states[train_idx]) - targets[train_idx]) ** 2)
        )
        test_mse = float(
            np.mean((model.predict(states[test_idx]) - targets[test_idx]) ** 2)
        )
        return RunRecord(
            config=config,
            curve=[[0, train_mse, test_mse]],
            final_train_mse=train_mse,
            final_test_mse=test_mse,
            target_variance=tvar,
            wall_time=time.perf_counter() - start,
        )

    # gradient models consume slope tokens: the recurrence then integrates
    # against dX rather than dt, which is where the area lives
    x_all = np.diff(values, axis=1) * L
    model = make_model(config.model, d, config.state_dim, L, config.hidden_dim)
    params = model.init_params(config.seed)
    state = {}
    rng = np.random.Generator(np.random.Philox(key=int(config.seed) + 7))
    eval_test = test_idx[: config.eval_cap]
    eval_train = train_idx[: config.eval_cap]
    curve = []
    aborted = False
    for step in range(config.steps):
        batch = rng.choice(train_idx, size=config.batch_size, replace=False)
        loss, grads = model.loss_and_grads(params, x_all[batch], targets[batch])
        if not np.isfinite(loss) or loss > 1e6:
            aborted = True
            curve.append([step, float(loss), float("nan")])
            break
        if step % config.eval_every == 0:
            train_mse = float(
                np.mean(
                    (_predict_chunked(model, params, x_all[eval_train])
                     - targets[eval_train]) ** 2
                )
            )
            test_mse = float(
                np.mean(
                    (_predict_chunked(model, params, x_all[eval_test])
                     - targets[eval_test]) ** 2
                )
            )
            curve.append([step, train_mse, test_mse])
        try:
            params, state = adam_step(params, grads, state, config.lr)
        except FloatingPointError as err:
            raise FloatingPointError(f"step {step}: {err}") from err
    final_train = float(
        np.mean(
            (_predict_chunked(model, params, x_all[train_idx])
             - targets[train_idx]) ** 2
        )
    )
    final_test = float(
        np.mean(
            (_predict_chunked(model, params, x_all[test_idx])
             - targets[test_idx]) ** 2
        )
    )
    curve.append([config.steps, final_train, final_test])
    return RunRecord(
        config=config,
        curve=curve,
        final_train_mse=final_train,
        final_test_mse=final_test,
        target_variance=tvar,
        wall_time=time.perf_counter() - start,
        aborted=aborted,
    )


def run_suite(manifest_path: str) -> dict:
    """Run every config in a manifest; write JSON-lines results and CSV curves.

    Manifest layout:
        {"dataset": {"num_samples": ..., "d": ..., "num_steps": ..., "seed": ...},
         "configs": [{"model": ..., ...}, ...],
         "out_dir": "...",
         "thresholds": {"ordering": [...], "max_fvu": {...}, "min_fvu": {...}}}
    Returns a report dict; report["passed"] drives the CLI exit code.
    """
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    configs = [TrainConfig(**c) for c in manifest.get("configs", [])]
    out_dir = manifest.get("out_dir", os.path.dirname(manifest_path) or ".")
    os.makedirs(out_dir, exist_ok=True)
    report = {"runs": [], "checks": [], "passed": True}
    if not configs:
        return report
    if "dataset" not in manifest:
        raise FileNotFoundError("manifest lists configs but no dataset")
    dataset = gen_dataset(DatasetSpec(**manifest["dataset"]))

    records = []
    for config in configs:
        records.append(train_model(config, dataset))

    with open(os.path.join(out_dir, "results.jsonl"), "w") as fh:
        for rec in records:
            fh.write(rec.to_json_line() + "\n")
    with open(os.path.join(out_dir, "curves.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "step", "train_mse", "test_mse"])
        for rec in records:
            for step, train_mse, test_mse in rec.curve:
                writer.writerow([rec.config.model, step, train_mse, test_mse])

    by_model = {rec.config.model: rec for rec in records}
    fvu = {
        name: rec.final_test_mse / rec.target_variance
        for name, rec in by_model.items()
    }
    thresholds = manifest.get("thresholds", {})
    ordering = thresholds.get("ordering", [])
    if ordering:
        vals = [by_model[m].final_test_mse for m in ordering]
        ok = all(vals[i] < vals[i + 1] for i in range(len(vals) - 1))
        report["checks"].append(
            {"check": "ordering", "models": ordering, "mse": vals, "passed": ok}
        )
        report["passed"] &= ok
    for name, bound in thresholds.get("max_fvu", {}).items():
        ok = fvu[name] <= bound
        report["checks"].append(
            {"check": "max_fvu", "model": name, "fvu": fvu[name],
             "bound": bound, "passed": ok}
        )
        report["passed"] &= ok
    for name, bound in thresholds.get("min_fvu", {}).items():
        ok = fvu[name] >= bound
        report["checks"].append(
            {"check": "min_fvu", "model": name, "fvu": fvu[name],
             "bound": bound, "passed": ok}
        )
        report["passed"] &= ok
    report["passed"] = bool(report["passed"])
    report["runs"] = [
        {
            "model": rec.config.model,
            "final_train_mse": rec.final_train_mse,
            "final_test_mse": rec.final_test_mse,
            "fvu": fvu[rec.config.model],
            "wall_time": rec.wall_time,
        }
        for rec in records
    ]
    return report
