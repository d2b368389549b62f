"""Training runs over the loss grid, written out as CSV (and optional SVG).

Each (loss, repetition) pair is an independent job with its own dataset
copy, networks, RNG streams and output files. Jobs run inline or on a
process pool; the summary table is assembled afterwards in job order, so
the files do not depend on scheduling.
"""
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import datasets, experiments, pseudolabel
from .datasets import write_csv
from .errors import NonFinite
from .losses import METRIC_COLUMNS, make_spec, train

SUMMARY_COLUMNS = ("loss_kind", "repetition", "seed", "epochs_completed", "diverged", "mse", "nll", "kl", "w2")
SCENARIO_ARCH = {
    "bivariate_p1": None,
    "sinusoid": dict(hidden_layers=4, hidden_width=50, activation="tanh"),
    "csv": dict(hidden_layers=4, hidden_width=50, activation="tanh"),
}


def worker_count():
    """Pool size from ``HETREG_THREADS`` (default: CPU count)."""
    raw = os.environ.get("HETREG_THREADS", "")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        n = 1
    return max(1, n)


def slug(kind):
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", str(kind)).strip("-")


def build_dataset(scenario, rep):
    """Train/test split for one repetition; the data seed is ``seed + rep``."""
    kind = scenario["kind"]
    seed = scenario["seed"] + rep
    n = scenario["n_samples"]
    if kind == "sinusoid":
        ds = datasets.gen_sinusoid(scenario["variant"], n or datasets.SINUSOID_SAMPLES, seed)
    elif kind == "multivariate":
        ds = datasets.gen_multivariate(scenario["dim"], n, seed)
    elif kind == "csv":
        table = datasets.load_csv(scenario["path"], scenario["has_header"])
        ds = datasets.feature_split(table, scenario["input_fraction"], scenario["seed"])
        if n:
            ds = ds.subset(np.arange(min(n, len(ds))))
        if scenario["standardize"]:
            ds, _ = datasets.standardize(ds)
    else:
        raise ValueError(f"scenario {kind!r} has no train/test split")
    return datasets.train_test_split(ds, 0.2, seed)


def _arch(cfg, ds):
    kind = cfg.scenario["kind"]
    arch = dict(SCENARIO_ARCH.get(kind) or experiments.multivariate_arch(ds.target_dim))
    for key in ("hidden_layers", "hidden_width", "activation"):
        if cfg.run[key] is not None:
            arch[key] = cfg.run[key]
    return arch


@dataclass
class Job:
    cfg: object
    loss_index: int
    rep: int
    deterministic: bool

    @property
    def settings(self):
        return self.cfg.losses[self.loss_index]

    @property
    def stem(self):
        return f"{slug(self.settings.kind)}_rep{self.rep}"


@dataclass
class JobResult:
    stem: str
    loss_kind: str
    rep: int
    seed: int
    log: list
    diverged: bool


def metric_rows(log):
    return [[row[c] for c in METRIC_COLUMNS] for row in log]


def run_job(job):
    """Train one (loss, repetition) and write its CSVs; returns a summary."""
    cfg, ls, rep = job.cfg, job.settings, job.rep
    seed = cfg.scenario["seed"] + rep
    out_dir = cfg.output_dir
    if cfg.scenario["kind"] == "bivariate_p1":
        run = experiments.run_problem1(
            ls.kind, seed, lr=ls.lr, steps=ls.epochs, n_samples=cfg.scenario["n_samples"],
            schedule=ls.schedule, record_timing=not job.deterministic,
        )
        result = run.result
        write_csv(os.path.join(out_dir, f"{job.stem}_trajectory.csv"), experiments.TRAJECTORY_COLUMNS,
                  [list(t) for t in run.trajectory])
    else:
        tr, te = build_dataset(cfg.scenario, rep)
        spec = make_spec(ls.kind, tr.input_dim, tr.target_dim, lr=ls.lr, epochs=ls.epochs, batch=ls.batch,
                         seed=seed, schedule=ls.schedule, weight_decay=ls.weight_decay, pseudo_k=ls.pseudo_k,
                         **_arch(cfg, tr))
        labels = experiments.select_labels(spec, tr, ls.labels, ls.pseudo_k)
        result = train(tr, spec, labels, eval_ds=te, record_timing=not job.deterministic,
                       record_memory=not job.deterministic)
    write_csv(os.path.join(out_dir, f"{job.stem}.csv"), METRIC_COLUMNS, metric_rows(result.log))
    return JobResult(job.stem, str(ls.kind), rep, seed, result.log, result.diverged)


def run_config(cfg, deterministic=False, workers=None, plots=None):
    """Run every job of ``cfg``; returns the job results in job order."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    jobs = [Job(cfg, i, rep, deterministic) for rep in range(cfg.repetitions) for i in range(len(cfg.losses))]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(run_job, jobs))
    else:
        results = [run_job(j) for j in jobs]
    write_summary(os.path.join(cfg.output_dir, "summary.csv"), results)
    if cfg.run["plots"] if plots is None else plots:
        write_plots(cfg, results)
    return results


def write_summary(path, results):
    rows = []
    for r in results:
        last = r.log[-1] if r.log else {}
        rows.append([r.loss_kind, r.rep, r.seed, len(r.log), int(r.diverged)]
                    + [last.get(c, float("nan")) for c in ("mse", "nll", "kl", "w2")])
    write_csv(path, SUMMARY_COLUMNS, rows)


def write_plots(cfg, results):
    """Best-effort SVG line plots of each metric per epoch; skipped without matplotlib."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        # fixed element ids and no timestamp, so reruns give identical files
        matplotlib.rcParams["svg.hashsalt"] = "hetreg"
    except ImportError:
        return False
    for metric in ("mse", "nll", "kl", "w2"):
        fig, ax = plt.subplots(figsize=(6, 4))
        drawn = False
        for r in results:
            xs = [row["epoch"] for row in r.log]
            ys = [row[metric] for row in r.log]
            if xs and np.any(np.isfinite(ys)):
                ax.plot(xs, ys, label=r.stem, linewidth=1)
                drawn = True
        if drawn:
            ax.set_xlabel("epoch")
            ax.set_ylabel(metric)
            ax.set_yscale("log" if metric in ("kl", "w2") else "linear")
            ax.legend(fontsize=7)
            fig.savefig(os.path.join(cfg.output_dir, f"{metric}.svg"), metadata={"Date": None})
        plt.close(fig)
    return True


def raise_on_divergence(results):
    bad = [r for r in results if r.diverged]
    if bad:
        first = bad[0]
        raise NonFinite(f"{first.loss_kind} (repetition {first.rep}) diverged", log=first.log,
                        epoch=len(first.log) + 1)


def pseudolabel_dataset(scenario):
    """Full (unsplit) dataset for label export."""
    kind = scenario["kind"]
    seed = scenario["seed"]
    n = scenario["n_samples"]
    if kind == "sinusoid":
        return datasets.gen_sinusoid(scenario["variant"], n or datasets.SINUSOID_SAMPLES, seed)
    if kind == "multivariate":
        return datasets.gen_multivariate(scenario["dim"], n, seed)
    if kind == "bivariate_p1":
        problem = datasets.gen_bivariate_p1(seed)
        return experiments.problem1_dataset(problem, n or experiments.n_samples_default(), seed)
    table = datasets.load_csv(scenario["path"], scenario["has_header"])
    ds = datasets.feature_split(table, scenario["input_fraction"], seed)
    if scenario["standardize"]:
        ds, _ = datasets.standardize(ds)
    return ds


def brute_force_check(ds, labels, k, rows):
    """Compare labels on ``rows`` against the naive reference; returns mismatching rows."""
    idx, dist, w, mu, cov = pseudolabel.reference_rows(ds, k, rows)
    bad = []
    for j, i in enumerate(rows):
        if not (np.array_equal(labels.indices[i], idx[j]) and np.array_equal(labels.mean[i], mu[j])
                and np.array_equal(labels.cov[i], cov[j])):
            bad.append(int(i))
    return bad

