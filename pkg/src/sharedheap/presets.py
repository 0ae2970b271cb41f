"""Named experiment suites: committed config bundles plus trend checks.

A preset file (``presets/<name>.json``) holds a ``base`` config, a list of
``runs`` (each a label plus overrides of the base) and a list of ``trends``.
Each trend names a metric and a check over labelled runs:

``chain``
    every consecutive pair of ``runs`` satisfies ``relation``.
``pairs``
    every ``[a, b]`` in ``pairs`` satisfies ``a relation b``. A label of the
    form ``other:label`` refers to a run of another preset.
``all_equal``
    every run's metric equals ``value``.
``all_positive``
    every run's metric is > 0.
``argmin_in``
    the run with the smallest metric (first one on ties) is in ``allowed``.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

from .errors import UsageError
from .experiment import ExperimentConfig, run_experiment
from .metrics import CSV_COLUMNS

PRESET_NAMES = ("table1", "figure1", "figure2", "figure3-table2", "figure4", "figure5")

RELATIONS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
}


def load_preset(name: str) -> dict:
    if name not in PRESET_NAMES:
        raise UsageError(f"unknown preset {name!r}; expected one of {', '.join(PRESET_NAMES)}")
    text = resources.files("sharedheap").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def preset_configs(name: str) -> list:
    """``[(label, ExperimentConfig)]`` in run order."""
    spec = load_preset(name)
    out = []
    for run in spec["runs"]:
        overrides = {k: v for k, v in run.items() if k != "label"}
        out.append((run["label"], ExperimentConfig.from_dict({**spec["base"], **overrides})))
    return out


@dataclass
class Verdict:
    name: str
    check: str
    metric: str
    holds: bool
    values: dict

    def line(self) -> str:
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.values.items())
        return f"{'PASS' if self.holds else 'FAIL'}  {self.name}  [{self.metric}: {vals}]"

    def to_dict(self) -> dict:
        return {"name": self.name, "check": self.check, "metric": self.metric,
                "holds": self.holds, "values": self.values}


def _fmt(v):
    return f"{v:g}" if isinstance(v, float) else str(v)


@dataclass
class PresetResult:
    name: str
    labels: list
    results: list
    verdicts: list = field(default_factory=list)

    @property
    def reports(self):
        return [r.report for r in self.results]

    def result(self, label):
        return self.results[self.labels.index(label)]

    @property
    def oracles_ok(self) -> bool:
        return all(r.oracle_ok for r in self.results)

    @property
    def trends_ok(self) -> bool:
        return all(v.holds for v in self.verdicts)

    def to_json(self) -> str:
        doc = {
            "preset": self.name,
            "runs": [{"label": lab, "report": res.report.to_dict()}
                     for lab, res in zip(self.labels, self.results)],
            "trends": [v.to_dict() for v in self.verdicts],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=("label",) + CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for lab, res in zip(self.labels, self.results):
            writer.writerow({"label": lab, **res.report.csv_row()})
        return buf.getvalue()

    def trends_json(self) -> str:
        return json.dumps([v.to_dict() for v in self.verdicts], indent=2, sort_keys=True)


def _run_config(config):
    return run_experiment(config)


class PresetRunner:
    """Runs presets, remembering every result so cross-preset checks are free."""

    def __init__(self, jobs: int = 1):
        self.jobs = jobs
        self._done = {}

    @staticmethod
    def _key(config):
        return json.dumps(config.to_dict(), sort_keys=True)

    def run_configs(self, configs):
        todo = []
        for c in configs:
            k = self._key(c)
            if k not in self._done and all(k != self._key(t) for t in todo):
                todo.append(c)
        if self.jobs > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                finished = list(pool.map(_run_config, todo))
        else:
            finished = [_run_config(c) for c in todo]
        for c, res in zip(todo, finished):
            self._done[self._key(c)] = res
        return [self._done[self._key(c)] for c in configs]

    def run(self, name: str) -> PresetResult:
        spec = load_preset(name)
        pairs = preset_configs(name)
        labels = [lab for lab, _ in pairs]
        results = self.run_configs([cfg for _, cfg in pairs])
        out = PresetResult(name, labels, results)
        out.verdicts = [self._verdict(name, t, out) for t in spec.get("trends", [])]
        return out

    def _value(self, name, current, label, metric):
        if ":" in label:
            other, lab = label.split(":", 1)
            configs = dict(preset_configs(other))
            if lab not in configs:
                raise UsageError(f"preset {other!r} has no run {lab!r}")
            res = self.run_configs([configs[lab]])[0]
        else:
            if label not in current.labels:
                raise UsageError(f"preset {name!r} has no run {label!r}")
            res = current.result(label)
        return res.report.value(metric)

    def _verdict(self, name, trend, current) -> Verdict:
        check = trend["check"]
        metric = trend.get("metric", "total")
        get = lambda lab: self._value(name, current, lab, metric)  # noqa: E731
        if check == "pairs":
            rel = RELATIONS[trend["relation"]]
            values = {}
            holds = True
            for a, b in trend["pairs"]:
                va, vb = get(a), get(b)
                values[a], values[b] = va, vb
                holds = holds and rel(va, vb)
            return Verdict(trend["name"], check, metric, holds, values)
        labels = trend["runs"]
        values = {lab: get(lab) for lab in labels}
        seq = [values[lab] for lab in labels]
        if check == "chain":
            rel = RELATIONS[trend["relation"]]
            holds = all(rel(a, b) for a, b in zip(seq, seq[1:]))
        elif check == "all_equal":
            holds = all(v == trend["value"] for v in seq)
        elif check == "all_positive":
            holds = all(v > 0 for v in seq)
        elif check == "argmin_in":
            best = min(range(len(seq)), key=lambda i: seq[i])
            holds = labels[best] in trend["allowed"]
        else:
            raise UsageError(f"unknown trend check {check!r} in preset {name!r}")
        return Verdict(trend["name"], check, metric, holds, values)


def run_preset(name: str, runner: PresetRunner | None = None) -> PresetResult:
    """Run every point of preset ``name`` and evaluate its trend checks."""
    return (runner or PresetRunner()).run(name)
