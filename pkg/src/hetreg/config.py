"""Run configuration files.

Configs are INI files with three kinds of section::

    [scenario]
    kind = multivariate        ; bivariate_p1 | sinusoid | multivariate | csv
    dim = 8
    seed = 0

    [run]
    losses = W2_bound, NLL_full
    epochs = 20
    repetitions = 5

    [loss.NLL_full]
    lr = 1e-3

``[loss.NAME]`` sections override run-level training keys for one loss.
Unknown sections and keys are errors, reported with their line number.
"""
import configparser
import re
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .losses import LOSS_NAMES, LossKind, Schedule

SCENARIO_KINDS = ("bivariate_p1", "sinusoid", "multivariate", "csv")

# key -> (type, default, help); a default of None means "derived"
SCHEMA = {
    "scenario": {
        "kind": (str, "sinusoid", "one of " + ", ".join(SCENARIO_KINDS)),
        "variant": (int, 1, "sinusoid variant 1, 2 or 3"),
        "dim": (int, 8, "multivariate target dimension (2..64)"),
        "n_samples": (int, None, "rows to generate; scenario default when omitted"),
        "seed": (int, 0, "data seed; repetition r uses seed + r"),
        "path": (str, None, "csv scenario: numeric table to load"),
        "has_header": (bool, False, "csv scenario: skip the first line"),
        "input_fraction": (float, 0.25, "csv scenario: share of columns used as inputs"),
        "standardize": (bool, True, "csv scenario: zero-mean unit-variance columns"),
    },
    "run": {
        "losses": (str, "W2_bound", "comma-separated loss names"),
        "output_dir": (str, "runs", "directory for CSVs and plots"),
        "repetitions": (int, 1, "independent trials with consecutive seeds"),
        "epochs": (int, 100, "training epochs (optimizer steps for bivariate_p1)"),
        "lr": (float, None, "learning rate; 1e-2 for bivariate_p1, else 1e-3"),
        "batch": (int, 64, "minibatch size (bivariate_p1 is always full batch)"),
        "hidden_layers": (int, None, "hidden layers per network; scenario default when omitted"),
        "hidden_width": (int, None, "hidden width; scenario default when omitted"),
        "activation": (str, None, "tanh or elu; scenario default when omitted"),
        "weight_decay": (float, 0.01, "AdamW decoupled weight decay"),
        "schedule": (str, "standard", "standard | warmup | hybrid"),
        "mean_only_fraction": (float, 0.5, "warmup: share of epochs training only the mean"),
        "switch_epoch": (int, 0, "hybrid: epochs trained with the first loss"),
        "switch_to": (str, "NLL_full", "hybrid: loss used after the switch"),
        "labels": (str, "auto", "covariance labels: auto | pseudo | ground_truth"),
        "pseudo_k": (int, None, "neighbors per pseudo-label; 10 x target dim when omitted"),
        "beta": (float, 0.5, "BetaNLL exponent"),
        "plots": (bool, True, "write SVG line plots when matplotlib is available"),
    },
}
LOSS_KEYS = ("lr", "epochs", "batch", "weight_decay", "beta", "schedule", "mean_only_fraction",
             "switch_epoch", "switch_to", "labels", "pseudo_k")


@dataclass
class LossSettings:
    kind: LossKind
    schedule: Schedule
    lr: float
    epochs: int
    batch: int
    weight_decay: float
    labels: str
    pseudo_k: Optional[int]


@dataclass
class RunConfig:
    scenario: dict
    run: dict
    losses: list = field(default_factory=list)
    source: Optional[str] = None

    @property
    def output_dir(self):
        return self.run["output_dir"]

    @property
    def repetitions(self):
        return self.run["repetitions"]


def print_schema():
    """Human-readable description of every section and key."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (typ, default, text) in keys.items():
            shown = "-" if default is None else default
            lines.append(f"  {key:<20} {typ.__name__:<6} default {shown!s:<10} {text}")
        lines.append("")
    lines.append("[loss.NAME]  NAME in " + ", ".join(LOSS_NAMES))
    lines.append("  overrides any of: " + ", ".join(LOSS_KEYS))
    return "\n".join(lines)


def _key_lines(text):
    """(section, key) -> 1-based line number, and section -> header line."""
    where = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = lineno
            continue
        m = re.match(r"([^=:\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            where[(section, m.group(1).strip().lower())] = lineno
    return where


def _convert(typ, value, section, key, where):
    try:
        if typ is bool:
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return typ(value.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {value!r} as {typ.__name__}",
                          where.get((section, key))) from None


def parse_config(text, source=None):
    """Parse config text into a :class:`RunConfig`.

    Raises
    ------
    ConfigError
        Syntax errors, unknown sections or keys, bad values; the message
        carries the line number when it can be located.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", lineno) from None
    where = _key_lines(text)

    values = {}
    overrides = {}
    for section in parser.sections():
        if section in SCHEMA:
            schema = SCHEMA[section]
        elif section.startswith("loss."):
            name = section[len("loss."):]
            if name not in LOSS_NAMES:
                raise ConfigError(f"unknown loss section [{section}]", where.get((section, None)))
            schema = {k: SCHEMA["run"][k] for k in LOSS_KEYS}
        else:
            raise ConfigError(f"unknown section [{section}]", where.get((section, None)))
        parsed = {}
        for key, value in parser.items(section):
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{section}]", where.get((section, key)))
            parsed[key] = _convert(schema[key][0], value, section, key, where)
        if section in SCHEMA:
            values[section] = parsed
        else:
            overrides[section[len("loss."):]] = parsed

    scenario = {k: spec[1] for k, spec in SCHEMA["scenario"].items()}
    scenario.update(values.get("scenario", {}))
    run = {k: spec[1] for k, spec in SCHEMA["run"].items()}
    run.update(values.get("run", {}))
    cfg = RunConfig(scenario, run, source=source)
    _validate(cfg, where)
    cfg.losses = _loss_settings(cfg, overrides, where)
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def _validate(cfg, where):
    sc = cfg.scenario
    line = lambda key, section="scenario": where.get((section, key))  # noqa: E731
    if sc["kind"] not in SCENARIO_KINDS:
        raise ConfigError(f"scenario kind must be one of {SCENARIO_KINDS}", line("kind"))
    if sc["kind"] == "sinusoid" and sc["variant"] not in (1, 2, 3):
        raise ConfigError("sinusoid variant must be 1, 2 or 3", line("variant"))
    if sc["kind"] == "multivariate" and not 2 <= sc["dim"] <= 64:
        raise ConfigError("multivariate dim must lie in [2, 64]", line("dim"))
    if sc["kind"] == "csv" and not sc["path"]:
        raise ConfigError("csv scenario needs a path", line("kind"))
    if sc["n_samples"] is not None and sc["n_samples"] < 2:
        raise ConfigError("n_samples must be at least 2", line("n_samples"))
    if not 0.0 < sc["input_fraction"] < 1.0:
        raise ConfigError("input_fraction must lie in (0, 1)", line("input_fraction"))
    run = cfg.run
    if run["repetitions"] < 1:
        raise ConfigError("repetitions must be >= 1", line("repetitions", "run"))
    if run["epochs"] < 0:
        raise ConfigError("epochs must be >= 0", line("epochs", "run"))
    if run["batch"] < 1:
        raise ConfigError("batch must be >= 1", line("batch", "run"))
    if run["activation"] not in (None, "tanh", "elu"):
        raise ConfigError("activation must be tanh or elu", line("activation", "run"))


def _parse_loss(name, beta, line):
    try:
        return LossKind(name, beta)
    except ValueError as exc:
        raise ConfigError(str(exc), line) from None


def _loss_settings(cfg, overrides, where):
    names = [s.strip() for s in cfg.run["losses"].split(",") if s.strip()]
    if not names:
        raise ConfigError("no losses listed", where.get(("run", "losses")))
    out = []
    for name in names:
        section = f"loss.{name}"
        merged = dict(cfg.run)
        merged.update(overrides.get(name, {}))

        def line(key):
            return where.get((section, key), where.get(("run", key)))

        kind = _parse_loss(name, merged["beta"], line("losses") or where.get(("run", "losses")))
        if merged["lr"] is None:
            merged["lr"] = 1e-2 if cfg.scenario["kind"] == "bivariate_p1" else 1e-3
        if merged["labels"] not in ("auto", "pseudo", "ground_truth"):
            raise ConfigError("labels must be auto, pseudo or ground_truth", line("labels"))
        try:
            if merged["schedule"] == "hybrid":
                then = _parse_loss(merged["switch_to"], merged["beta"], line("switch_to"))
                schedule = Schedule("hybrid", switch_epoch=merged["switch_epoch"], then=then)
                if merged["epochs"] and not merged["switch_epoch"] < merged["epochs"]:
                    raise ConfigError("switch_epoch must be smaller than epochs", line("switch_epoch"))
            else:
                schedule = Schedule(merged["schedule"], mean_only_fraction=merged["mean_only_fraction"])
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), line("schedule")) from None
        out.append(LossSettings(kind, schedule, merged["lr"], merged["epochs"], merged["batch"],
                                merged["weight_decay"], merged["labels"], merged["pseudo_k"]))
    return out
