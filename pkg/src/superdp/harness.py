"""Training runs, the three paired experiments, and run reports.

A run is configured by a flat ``key=value`` file (namespaces ``run.``,
``model.``, ``dp.``, ``schedule.``, ``data.``) and writes into its output
directory:

* ``metrics.csv``: one row per step; validation and privacy columns are
  filled at epoch boundaries, and every ``run.eval_every`` steps if set.
* ``summary.txt``: flat ``key=value`` run summary.
* ``config.txt``: the resolved configuration.
* ``model.ckpt``: final parameters.

Nothing written depends on wall-clock time, so a rerun with the same config
and seed reproduces every file byte for byte.
"""

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import accountant, data, dp, kernels, model, schedule
from .errors import ConfigError, DataError, InputError, NumericalError

log = logging.getLogger(__name__)

REFERENCE_NOTE = "reference defaults, not published values"

DEFAULTS = {
    "run.name": "run",
    "run.seed": 0,
    "run.epochs": 2,
    "run.batch_size": 128,
    "run.workers": 1,
    "run.micro_batch": 64,
    "run.baseline_accuracy": 0.0,
    "run.eval_every": 0,  # extra validation every N steps; 0 = epoch boundaries only
    "model.conv1": 8,
    "model.conv2": 16,
    "model.kernel": 5,
    "model.hidden": 32,
    "model.dropout": 0.25,
    "model.dropout_2d": True,  # drop whole feature maps
    "model.momentum": 0.9,
    "dp.enabled": True,
    "dp.noise_multiplier": 1.1,
    "dp.clip_norm": 1.0,
    "dp.sample_rate": 0.01,
    "dp.delta": 1e-5,
    "schedule.kind": "one_cycle",
    "schedule.max_lr": 0.2,
    "schedule.div_factor": 25.0,
    "schedule.final_div_factor": 1e4,
    "schedule.pct_up": 0.3,
    "schedule.cycle_momentum": True,
    "schedule.max_momentum": 0.95,
    "schedule.min_momentum": 0.85,
    "schedule.initial_lr": 0.05,
    "schedule.decay_factor": 0.1,
    "schedule.patience": 2,
    "schedule.min_lr": 5e-5,
    "schedule.threshold": 1e-4,
    "data.dir": "data/mnist",
    "data.subset": 0,
    "data.val_subset": 0,
    "data.mean": data.MNIST_MEAN,
    "data.std": data.MNIST_STD,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(value, str):
        value = value.strip()
        try:
            if isinstance(default, bool):
                if value.lower() in _TRUE:
                    return True
                if value.lower() in _FALSE:
                    return False
                raise ValueError(value)
            if isinstance(default, int):
                return int(value)
            if isinstance(default, float):
                return float(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None
        return value
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, (int, float)) and not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    return type(default)(value)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_kv(text):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = dict(DEFAULTS)
        for key, value in self.values.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, value)
        self.values = merged
        self.validate()

    @classmethod
    def from_text(cls, text):
        return cls(parse_kv(text))

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def override(self, mapping):
        vals = dict(self.values)
        vals.update(mapping)
        return RunConfig(vals)

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self):
        return "".join(f"{k}={_fmt(self.values[k])}\n" for k in sorted(self.values))

    @property
    def private(self):
        return self.values["dp.enabled"]

    def validate(self):
        v = self.values
        if v["run.epochs"] < 1:
            raise ConfigError("run.epochs must be >= 1")
        if v["run.batch_size"] < 1 or v["run.micro_batch"] < 1 or v["run.workers"] < 1:
            raise ConfigError("run.batch_size, run.micro_batch and run.workers must be >= 1")
        if v["run.eval_every"] < 0:
            raise ConfigError("run.eval_every must be >= 0")
        if v["schedule.kind"] not in ("one_cycle", "plateau"):
            raise ConfigError(f"schedule.kind must be one_cycle or plateau, got {v['schedule.kind']!r}")
        if self.private:
            self.privacy_params()
        self.schedule_spec(10)

    def privacy_params(self):
        v = self.values
        return dp.PrivacyParams(v["dp.noise_multiplier"], v["dp.clip_norm"], v["dp.sample_rate"], v["dp.delta"])

    def architecture(self):
        v = self.values
        return model.default_architecture(conv1=v["model.conv1"], conv2=v["model.conv2"], kernel=v["model.kernel"],
                                          hidden=v["model.hidden"], dropout=v["model.dropout"],
                                          dropout_2d=v["model.dropout_2d"])

    def schedule_spec(self, total_steps):
        v = self.values
        if v["schedule.kind"] == "one_cycle":
            return schedule.OneCycle(
                max_lr=v["schedule.max_lr"], total_steps=total_steps, div_factor=v["schedule.div_factor"],
                final_div_factor=v["schedule.final_div_factor"], pct_up=v["schedule.pct_up"],
                max_momentum=v["schedule.max_momentum"], min_momentum=v["schedule.min_momentum"],
                cycle_momentum=v["schedule.cycle_momentum"], base_momentum=v["model.momentum"])
        return schedule.Plateau(
            initial_lr=v["schedule.initial_lr"], decay_factor=v["schedule.decay_factor"],
            patience=v["schedule.patience"], min_lr=v["schedule.min_lr"],
            threshold=v["schedule.threshold"], momentum=v["model.momentum"])


def steps_per_epoch(config, n_train):
    if config.private:
        return max(1, math.ceil(1.0 / config["dp.sample_rate"] - 1e-9))
    return max(1, math.ceil(n_train / config["run.batch_size"]))


def accuracy_loss(private_acc, baseline_acc):
    """1 - private/baseline validation accuracy."""
    if not baseline_acc > 0:
        raise InputError("baseline accuracy must be > 0")
    return 1.0 - private_acc / baseline_acc


def load_data(config):
    v = config.values
    train, val = data.load_mnist(v["data.dir"], v["data.mean"], v["data.std"])
    return prepare_data(config, train, val)


def prepare_data(config, train, val):
    v = config.values
    if v["data.subset"]:
        train = data.subset(train, v["data.subset"], v["run.seed"])
    if v["data.val_subset"]:
        val = data.subset(val, v["data.val_subset"], v["run.seed"] + 1)
    return train, val


PRIVATE_COLUMNS = ("epoch", "step", "lr", "momentum", "train_loss", "val_accuracy", "val_loss", "epsilon", "best_order")
PUBLIC_COLUMNS = PRIVATE_COLUMNS[:7]


@dataclass
class RunMetrics:
    rows: list
    epochs: list  # per-epoch dicts: epoch, val_accuracy, val_loss[, epsilon, best_order]
    summary: dict
    private: bool

    @property
    def columns(self):
        return PRIVATE_COLUMNS if self.private else PUBLIC_COLUMNS

    def final_accuracy(self):
        return self.epochs[-1]["val_accuracy"]

    def final_epsilon(self):
        return self.epochs[-1].get("epsilon") if self.epochs else None

    def epochs_to_reach(self, accuracy):
        """First epoch whose validation accuracy is >= ``accuracy``, else None."""
        for e in self.epochs:
            if e["val_accuracy"] >= accuracy:
                return e["epoch"]
        return None

    def csv_text(self):
        buf = io.StringIO()
        _write_rows(buf, self.columns, self.rows)
        return buf.getvalue()


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(fh, columns, rows, header=True):
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in columns])


def _write_summary(path, summary):
    with open(path, "w") as fh:
        for k in summary:
            fh.write(f"{k}={_cell(summary[k])}\n")


def read_summary(path):
    with open(path) as fh:
        return parse_kv(fh.read())


def train_run(config, out_dir=None, datasets=None):
    """Train one model; returns its RunMetrics and, if ``out_dir`` is set, persists them."""
    v = config.values
    train, val = datasets if datasets is not None else load_data(config)
    if len(train) == 0 or len(val) == 0:
        raise DataError("empty training or validation set")
    seed = v["run.seed"]
    net = model.build_network(config.architecture(), seed)
    streams = dp.RngStreams.from_seed(seed)
    spe = steps_per_epoch(config, len(train))
    total = spe * v["run.epochs"]
    spec = config.schedule_spec(total)
    plateau = spec if isinstance(spec, schedule.Plateau) else None
    pstate = schedule.PlateauState.start(plateau) if plateau else None
    momentum = model.MomentumState.zeros(net.param_count)
    ledger = accountant.RdpLedger() if config.private else None
    pp = config.privacy_params() if config.private else None
    columns = PRIVATE_COLUMNS if config.private else PUBLIC_COLUMNS

    summary = {
        "name": v["run.name"],
        "mode": "private" if config.private else "non-private",
        "schedule": v["schedule.kind"],
        "epochs": v["run.epochs"],
        "steps_per_epoch": spe,
        "params": net.param_count,
        "n_train": len(train),
        "n_val": len(val),
        "seed": seed,
    }
    if config.private:
        summary.update({"noise_multiplier": pp.noise_multiplier, "clip_norm": pp.clip_norm,
                        "sample_rate": pp.sample_rate, "delta": pp.target_delta, "dp_defaults": REFERENCE_NOTE})

    csv_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.txt"), "w") as fh:
            fh.write(config.to_text())
        csv_fh = open(os.path.join(out_dir, "metrics.csv"), "w", newline="")
        _write_rows(csv_fh, columns, [])

    rows, epochs = [], []
    step = 0
    x, y = train.images, train.labels
    try:
        for epoch in range(1, v["run.epochs"] + 1):
            perm = None if config.private else streams.sampling.permutation(len(train))
            for k in range(spe):
                if plateau:
                    lr, mu = pstate.lr, plateau.momentum
                else:
                    lr, mu = schedule.one_cycle_lr(spec, step), schedule.one_cycle_momentum(spec, step)
                if config.private:
                    idx = dp.poisson_sample(len(train), pp.sample_rate, streams.sampling)
                    loss, update = float("nan"), None
                    if len(idx):
                        grads, loss = model.per_sample_gradients(
                            net, x[idx], y[idx], rng=streams.dropout,
                            workers=v["run.workers"], micro_batch=v["run.micro_batch"])
                        clipped = dp.clip_rows(grads, pp.clip_norm)
                        update = dp.noisy_aggregate(clipped, pp.noise_multiplier, pp.clip_norm, len(idx),
                                                    streams.noise)
                    # an empty lot still invokes the mechanism
                    ledger.step(pp.sample_rate, pp.noise_multiplier)
                else:
                    idx = perm[k * v["run.batch_size"]:(k + 1) * v["run.batch_size"]]
                    loss, update = model.loss_and_gradient(net, x[idx], y[idx], rng=streams.dropout)
                step += 1
                if update is not None:
                    if not (math.isfinite(loss) and np.all(np.isfinite(update))):
                        raise NumericalError(f"non-finite loss or update at step {step} (epoch {epoch}, lr {lr!r})")
                    model.apply_update(net, update, lr, momentum, mu)
                row = {"epoch": epoch, "step": step, "lr": float(lr), "momentum": float(mu),
                       "train_loss": float(loss) if len(idx) else None}
                epoch_end = k == spe - 1
                if epoch_end or (v["run.eval_every"] and step % v["run.eval_every"] == 0):
                    acc, vloss = model.evaluate(net, val.images, val.labels)
                    if not math.isfinite(vloss):
                        raise NumericalError(f"non-finite validation loss at step {step} (epoch {epoch})")
                    row.update(val_accuracy=acc, val_loss=vloss)
                    if config.private:
                        rep = ledger.to_dp(pp.target_delta)
                        row.update(epsilon=rep.epsilon, best_order=rep.best_order)
                if epoch_end:
                    ep = {k_: row[k_] for k_ in ("epoch", "val_accuracy", "val_loss", "epsilon", "best_order")
                          if k_ in row}
                    epochs.append(ep)
                    log.info("%s epoch %d: val_acc=%.4f val_loss=%.4f%s", v["run.name"], epoch, acc, vloss,
                             f" eps={ep['epsilon']:.4f}" if config.private else "")
                    if plateau:
                        schedule.plateau_lr(plateau, pstate, vloss)
                rows.append(row)
                if csv_fh:
                    _write_rows(csv_fh, columns, [row], header=False)
                    csv_fh.flush()
    except NumericalError as exc:
        summary.update(status="aborted", reason=str(exc), steps=step)
        if out_dir:
            _write_summary(os.path.join(out_dir, "summary.txt"), summary)
        raise
    finally:
        if csv_fh:
            csv_fh.close()

    summary.update(status="ok", steps=step, final_val_accuracy=epochs[-1]["val_accuracy"],
                   final_val_loss=epochs[-1]["val_loss"])
    if config.private:
        summary.update(epsilon=epochs[-1]["epsilon"], best_order=epochs[-1]["best_order"])
    if v["run.baseline_accuracy"] > 0:
        summary["accuracy_loss"] = accuracy_loss(epochs[-1]["val_accuracy"], v["run.baseline_accuracy"])
    metrics = RunMetrics(rows, epochs, summary, config.private)
    if out_dir:
        _write_summary(os.path.join(out_dir, "summary.txt"), summary)
        model.save_checkpoint(net, os.path.join(out_dir, "model.ckpt"))
    log.debug("kernel backend: %s", kernels.BACKEND)
    return metrics


def load_run(run_dir):
    """Rebuild RunMetrics from a finished run directory."""
    summary = read_summary(os.path.join(run_dir, "summary.txt"))
    private = summary.get("mode") == "private"
    rows, epochs = [], []
    with open(os.path.join(run_dir, "metrics.csv"), newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {k: (None if val == "" else float(val)) for k, val in rec.items()}
            row["epoch"], row["step"] = int(row["epoch"]), int(row["step"])
            rows.append(row)
    spe = int(summary["steps_per_epoch"])
    for row in rows:
        if row["step"] % spe == 0:  # last step of an epoch
            ep = {"epoch": row["epoch"], "val_accuracy": row["val_accuracy"], "val_loss": row["val_loss"]}
            if private:
                ep.update(epsilon=row["epsilon"], best_order=row["best_order"])
            epochs.append(ep)
    return RunMetrics(rows, epochs, summary, private)


# --- experiments -------------------------------------------------------------

# Model roster for the paired comparisons; values override the base config.
MODELS = {
    "baseline": {"run.name": "baseline", "dp.enabled": False, "schedule.kind": "plateau",
                 "schedule.initial_lr": 0.05, "run.epochs": 5},
    "dp_onecycle": {"run.name": "dp_onecycle", "dp.enabled": True, "schedule.kind": "one_cycle",
                    "run.epochs": 2},
    # plain SGD, no momentum
    "dp_plateau": {"run.name": "dp_plateau", "dp.enabled": True, "schedule.kind": "plateau",
                   "schedule.initial_lr": 0.05, "model.momentum": 0.0, "run.epochs": 25},
}

EXPERIMENT_MODELS = {
    1: ("dp_onecycle", "dp_plateau"),
    2: ("baseline", "dp_onecycle", "dp_plateau"),
    3: ("dp_onecycle", "dp_plateau"),
}


def model_config(name, base=None, overrides=None):
    """Config for a roster model; ``overrides`` keys may be scoped as ``name:key``."""
    cfg = (base or RunConfig()).override(MODELS[name])
    scoped = {}
    for key, value in (overrides or {}).items():
        if ":" in key:
            who, key = key.split(":", 1)
            if who != name:
                continue
        scoped[key] = value
    return cfg.override(scoped)


def run_or_load(config, run_dir, datasets=None):
    """Reuse a finished run in ``run_dir`` when its stored config matches."""
    cfg_path = os.path.join(run_dir, "config.txt")
    sum_path = os.path.join(run_dir, "summary.txt")
    if os.path.exists(cfg_path) and os.path.exists(sum_path):
        with open(cfg_path) as fh:
            same = fh.read() == config.to_text()
        if same and read_summary(sum_path).get("status") == "ok":
            log.info("reusing %s", run_dir)
            return load_run(run_dir)
    return train_run(config, run_dir, datasets)


def _table(path, columns, rows):
    with open(path, "w", newline="") as fh:
        _write_rows(fh, columns, rows)
    return path


def _by_epoch(runs, key):
    n = max(len(m.epochs) for m in runs.values())
    out = []
    for i in range(n):
        row = {"epoch": i + 1}
        for name, m in runs.items():
            row[name] = m.epochs[i][key] if i < len(m.epochs) else None
        out.append(row)
    return out


def experiment(exp_id, out_dir, base=None, overrides=None, datasets=None):
    """Run (or reuse) the paired models for one experiment and write its figure tables."""
    if exp_id not in EXPERIMENT_MODELS:
        raise InputError(f"unknown experiment id {exp_id!r}; expected 1, 2 or 3")
    base = base or RunConfig()
    if datasets is None:
        datasets = load_data(base)
    runs_dir = os.path.join(out_dir, "runs")
    runs = {}
    for name in EXPERIMENT_MODELS[exp_id]:
        cfg = model_config(name, base, overrides)
        runs[name] = run_or_load(cfg, os.path.join(runs_dir, name), datasets)
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    if exp_id == 1:
        written["fig1"] = _table(os.path.join(out_dir, "fig1_val_accuracy.csv"), ("epoch",) + tuple(runs),
                                 _by_epoch(runs, "val_accuracy"))
        n = max(len(m.rows) for m in runs.values())
        lr_rows = [{"step": i + 1, **{k: (m.rows[i]["lr"] if i < len(m.rows) else None) for k, m in runs.items()}}
                   for i in range(n)]
        written["fig2"] = _table(os.path.join(out_dir, "fig2_learning_rate.csv"), ("step",) + tuple(runs), lr_rows)
    elif exp_id == 2:
        base_acc = runs["baseline"].final_accuracy()
        rows = [{"model": "baseline", "epsilon": math.inf, "val_accuracy": base_acc, "accuracy_loss": 0.0}]
        for name in ("dp_onecycle", "dp_plateau"):
            m = runs[name]
            rows.append({"model": name, "epsilon": m.final_epsilon(), "val_accuracy": m.final_accuracy(),
                         "accuracy_loss": accuracy_loss(m.final_accuracy(), base_acc)})
        written["fig3"] = _table(os.path.join(out_dir, "fig3_accuracy_loss.csv"),
                                 ("model", "epsilon", "val_accuracy", "accuracy_loss"), rows)
    else:
        written["fig4"] = _table(os.path.join(out_dir, "fig4_epsilon.csv"), ("epoch",) + tuple(runs),
                                 _by_epoch(runs, "epsilon"))
    return written, runs


def report(runs_dir, baseline=None):
    """Join run summaries under ``runs_dir`` into accuracy-loss-vs-epsilon rows."""
    found = []
    for root, _dirs, files in os.walk(runs_dir):
        if "summary.txt" in files:
            s = read_summary(os.path.join(root, "summary.txt"))
            if s.get("status") == "ok":
                s["_dir"] = os.path.relpath(root, runs_dir)
                found.append(s)
    found.sort(key=lambda s: s["_dir"])
    base = None
    for s in found:
        if s.get("mode") == "non-private" and (baseline is None or s.get("name") == baseline):
            base = s
            break
    rows = []
    for s in found:
        acc = float(s["final_val_accuracy"])
        rows.append({
            "run": s["_dir"], "mode": s.get("mode"), "schedule": s.get("schedule"), "epochs": s.get("epochs"),
            "val_accuracy": acc, "epsilon": float(s["epsilon"]) if "epsilon" in s else math.inf,
            "accuracy_loss": accuracy_loss(acc, float(base["final_val_accuracy"])) if base else None,
        })
    return rows


REPORT_COLUMNS = ("run", "mode", "schedule", "epochs", "val_accuracy", "epsilon", "accuracy_loss")
