"""Benchmark driver: corpus preparation, training runs, ablations and reports.

Run layout written by ``train``/``ablate``::

    OUT/<instance>/<method>/<config>/seed<k>/
        instance.json      canonical copy of the instance trained on
        episodes.jsonl     one record per episode
        summary.json       best plan, gap inputs, greedy-policy evaluation, switches
        timing.json        wall time (kept apart so the files above are reproducible)
        checkpoint_final.npz
        advisor.jsonl      prompts and replies (advisor methods only)
    OUT/<instance>/<method>/<config>/aggregate.json

Every number printed by ``report`` is recomputed from those files.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import instance as I
from .agent import ABLATIONS, TrainConfig, evaluate_policy, report_lines, train
from .backends import ChatCompletionsBackend, MockBackend
from .errors import Infeasible, InfeasibleAugmentation, MissingOracle, TooLarge, VRPError
from .milp import CLOCK_MODES, DISTANCE_ONLY, GENERALIZED, GLOBAL, exact_solve, gap

log = logging.getLogger(__name__)

METHODS = ("dqn", "llm-mock", "llm-remote")
ADVISOR_METHODS = ("llm-mock", "llm-remote")
LLM_ONLY_ABLATIONS = ("no-llm-memory", "no-llm-per")
DASH = "—"
ORACLE_LIMIT = 8
MANIFEST = "manifest.json"
RESULT_FIELDS = ("instance", "method", "config", "runs", "found", "gap_mean", "gap_std",
                 "satisfaction", "episodes_to_best", "wall_time")


# ---------------------------------------------------------------------------
# small I/O helpers
# ---------------------------------------------------------------------------

def atomic_write(path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def load_any(path) -> I.Instance:
    """Canonical JSON or TSPLIB text, decided by extension."""
    path = Path(path)
    if path.suffix == ".vrp":
        return I.read_vrp(path)
    return I.load(path)


# ---------------------------------------------------------------------------
# corpora
# ---------------------------------------------------------------------------

def solvable_instances(sizes, cfg: I.AugmentConfig = I.AugmentConfig(), first_seed: int = 0,
                       max_tries: int = 200) -> list[I.Instance]:
    """One augmented synthetic instance per entry of ``sizes``; seeds are
    tried in increasing order and kept only when the oracle finds a plan."""
    out = []
    seed = first_seed
    for n in sizes:
        for _ in range(max_tries):
            s, seed = seed, seed + 1
            try:
                inst = I.augment(I.synthetic_instance(n, s), replace(cfg, seed=s))
                exact_solve(inst, weights=GENERALIZED)
            except (InfeasibleAugmentation, Infeasible):
                continue
            out.append(inst)
            break
        else:
            raise InfeasibleAugmentation(f"no solvable {n}-customer instance in {max_tries} seeds")
    return out


def desk_corpus() -> list[I.Instance]:
    """Ten oracle-solvable instances with 5 to 8 customers."""
    return solvable_instances((5, 6, 7, 8, 5, 6, 7, 8, 6, 7))


def tiny_corpus(count: int = 5, customers: int = 6) -> list[I.Instance]:
    return solvable_instances((customers,) * count, first_seed=1000)


# ---------------------------------------------------------------------------
# run specification and execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    instance: I.Instance
    method: str
    seeds: tuple[int, ...]
    out_dir: Path
    config: TrainConfig = field(default_factory=TrainConfig)
    ablation: str = "all"
    model: str | None = None
    base_url: str | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.method == "llm-remote" and not self.model:
            raise ValueError("llm-remote needs a model name")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")

    @property
    def run_root(self) -> Path:
        return Path(self.out_dir) / self.instance.name / self.method / self.ablation

    def seed_dir(self, seed: int) -> Path:
        return self.run_root / f"seed{seed}"

    def train_config(self) -> TrainConfig:
        sw = replace(self.config.switches, **ABLATIONS[self.ablation])
        return replace(self.config, switches=sw)


def _backend(spec: RunSpec, seed: int, log_path):
    if spec.method == "llm-mock":
        return MockBackend(seed=seed, log_path=log_path)
    if spec.method == "llm-remote":
        return ChatCompletionsBackend(spec.model, base_url=spec.base_url, log_path=log_path)
    return None


def run_one(spec: RunSpec, seed: int) -> dict:
    """Train one seed and write its files; returns the summary."""
    d = spec.seed_dir(seed)
    d.mkdir(parents=True, exist_ok=True)
    cfg = spec.train_config()
    inst_text = I.serialize(spec.instance)
    atomic_write(d / "instance.json", inst_text)
    adv_log = d / "advisor.jsonl"
    if adv_log.exists():
        adv_log.unlink()
    backend = _backend(spec, seed, adv_log if spec.method in ADVISOR_METHODS else None)
    log.info("train %s %s/%s seed %d: advisor %s", spec.instance.name, spec.method,
             spec.ablation, seed, "enabled" if backend else "disabled")
    t0 = time.perf_counter()
    res = train(spec.instance, cfg, backend, seed=seed, out_dir=d)
    wall = time.perf_counter() - t0
    ev = evaluate_policy(spec.instance, res.params, params=cfg.reward_params)
    feas = [r.feasible for r in res.reports]
    summary = {
        "instance": spec.instance.name,
        "instance_sha256": sha256_text(inst_text),
        "n_customers": spec.instance.n_customers,
        "method": spec.method,
        "config": spec.ablation,
        "switches": cfg.switches.__dict__.copy(),
        "seed": seed,
        "episodes": cfg.episodes,
        "best_cost": res.best_cost,
        "best_episode": res.best_episode,
        "best_plan": res.best_plan.to_list() if res.best_plan else None,
        "greedy_cost": ev.mean_cost,
        "satisfaction": ev.satisfaction_rate,
        "train_feasible_rate": float(np.mean(feas)) if feas else 0.0,
        "llm_calls": int(sum(r.llm_calls for r in res.reports)),
        "phase_switch": res.phase_switch,
        "train_config": cfg.to_dict(),
    }
    atomic_write(d / "episodes.jsonl", report_lines(res.reports))
    atomic_write(d / "summary.json", dump_json(summary))
    atomic_write(d / "timing.json", dump_json({"wall_time": wall}))
    return summary


def _run_safe(args) -> tuple[int, dict | None, str | None]:
    spec, seed = args
    try:
        return seed, run_one(spec, seed), None
    except Exception as exc:  # surfaced per run, the batch continues
        log.exception("run %s seed %d failed", spec.instance.name, seed)
        return seed, None, f"{type(exc).__name__}: {exc}"


def aggregate(summaries: list[dict]) -> dict:
    """Mean over seeds; each seed contributes its best-gap when it found a
    feasible plan. ``oracle`` must be attached to the summaries first."""
    gaps = [s["gap"] for s in summaries if s.get("gap") is not None]
    eps = [s["best_episode"] for s in summaries if s["best_episode"] is not None]
    return {
        "runs": len(summaries),
        "found": len(gaps),
        "gap_mean": float(np.mean(gaps)) if gaps else None,
        "gap_std": float(np.std(gaps)) if gaps else None,
        "satisfaction": float(np.mean([s["satisfaction"] for s in summaries])),
        "episodes_to_best": float(np.mean(eps)) if eps else None,
    }


def run_spec(spec: RunSpec, jobs: int = 1) -> tuple[list[dict], list[str]]:
    work = [(spec, s) for s in spec.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_safe, work))
    else:
        results = [_run_safe(w) for w in work]
    summaries = [r for _, r, _ in results if r is not None]
    errors = [f"seed {s}: {e}" for s, _, e in results if e is not None]
    if summaries:
        opt = oracle_cost(spec.instance, None)
        for s in summaries:
            s["gap"] = gap(s["best_cost"], opt) if s["best_cost"] is not None else None
        agg = aggregate(summaries)
        agg.update(instance=spec.instance.name, method=spec.method, config=spec.ablation,
                   seeds=[s["seed"] for s in summaries], oracle_cost=opt, errors=errors)
        atomic_write(spec.run_root / "aggregate.json", dump_json(agg))
    return summaries, errors


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def oracle_cost(inst: I.Instance, best_known: float | None) -> float:
    if inst.n_customers <= ORACLE_LIMIT:
        return exact_solve(inst, limit=ORACLE_LIMIT, weights=GENERALIZED).best_cost
    if best_known is not None:
        return float(best_known)
    raise MissingOracle(f"{inst.name}: {inst.n_customers} customers exceeds the oracle "
                        f"limit and no best-known cost is recorded")


def _best_known(manifest_paths) -> dict[str, float]:
    known = {}
    for p in manifest_paths:
        m = json.loads(Path(p).read_text())
        for e in m["instances"]:
            if e.get("best_known") is not None:
                known[e["name"]] = float(e["best_known"])
    return known


def collect(runs_dir, manifests=()) -> tuple[list[dict], list[dict]]:
    """Read every ``summary.json`` below ``runs_dir``; returns result rows
    (one per instance/method/config) and per-episode curve rows."""
    runs_dir = Path(runs_dir)
    known = _best_known(manifests)
    groups: dict[tuple, list[dict]] = {}
    curves = []
    oracle_cache: dict[str, float] = {}
    for path in sorted(runs_dir.rglob("summary.json")):
        s = json.loads(path.read_text())
        d = path.parent
        if s["instance_sha256"] not in oracle_cache:
            inst = I.load(d / "instance.json")
            oracle_cache[s["instance_sha256"]] = oracle_cost(inst, known.get(inst.name))
        opt = oracle_cache[s["instance_sha256"]]
        s["gap"] = gap(s["best_cost"], opt) if s["best_cost"] is not None else None
        timing = d / "timing.json"
        s["wall_time"] = json.loads(timing.read_text())["wall_time"] if timing.exists() else None
        groups.setdefault((s["instance"], s["method"], s["config"]), []).append(s)
        with open(d / "episodes.jsonl", encoding="utf-8") as fh:
            for line in fh:
                r = json.loads(line)
                curves.append({"instance": s["instance"], "method": s["method"],
                               "config": s["config"], "seed": s["seed"],
                               "episode": r["episode"], "return": r["ret"],
                               "cost": r["cost"], "feasible": int(r["feasible"])})
    rows = []
    for (inst, method, config), ss in sorted(groups.items()):
        agg = aggregate(sorted(ss, key=lambda s: s["seed"]))
        walls = [s["wall_time"] for s in ss if s["wall_time"] is not None]
        rows.append({"instance": inst, "method": method, "config": config, **agg,
                     "wall_time": float(np.mean(walls)) if walls else None})
    return rows, curves


def method_rows(rows: list[dict]) -> list[dict]:
    """Aggregate rows per (method, config) over instances."""
    by: dict[tuple, list[dict]] = {}
    for r in rows:
        by.setdefault((r["method"], r["config"]), []).append(r)
    out = []
    for (method, config), rs in sorted(by.items()):
        gaps = [r["gap_mean"] for r in rs if r["gap_mean"] is not None]
        eps = [r["episodes_to_best"] for r in rs if r["episodes_to_best"] is not None]
        walls = [r["wall_time"] for r in rs if r["wall_time"] is not None]
        out.append({
            "instance": "ALL", "method": method, "config": config,
            "runs": sum(r["runs"] for r in rs), "found": sum(r["found"] for r in rs),
            "gap_mean": float(np.mean(gaps)) if gaps else None,
            "gap_std": float(np.std(gaps)) if gaps else None,
            "satisfaction": float(np.mean([r["satisfaction"] for r in rs])),
            "episodes_to_best": float(np.mean(eps)) if eps else None,
            "wall_time": float(np.mean(walls)) if walls else None,
        })
    return out


def _cell(v, pct=False) -> str:
    if v is None:
        return DASH
    if isinstance(v, float):
        return f"{100 * v:.1f}" if pct else f"{v:.2f}"
    return str(v)


def format_table(rows: list[dict]) -> str:
    head = ["instance", "method", "config", "runs", "found", "gap%", "gap_sd",
            "satisf%", "ep_best", "wall_s"]
    body = [[r["instance"], r["method"], r["config"], _cell(r["runs"]), _cell(r["found"]),
             _cell(r["gap_mean"]), _cell(r["gap_std"]), _cell(r["satisfaction"], pct=True),
             _cell(r["episodes_to_best"]), _cell(r["wall_time"])] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(c.ljust(w) if k < 3 else c.rjust(w)
                       for k, (c, w) in enumerate(zip(line, widths))).rstrip()
             for line in [head] + body]
    return "\n".join(lines) + "\n"


def to_csv(rows: list[dict], fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else repr(r[k]) if isinstance(r[k], float)
                        else r[k]) for k in fields})
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def ablation_rows(rows: list[dict], methods) -> list[dict]:
    """Exactly one row per (method, ablation); advisor-only ablations are
    dashed for plain DQN."""
    have = {(r["method"], r["config"]): r for r in method_rows(rows)}
    out = []
    for m in methods:
        for name in ABLATIONS:
            r = have.get((m, name))
            if r is None or (m == "dqn" and name in LLM_ONLY_ABLATIONS):
                r = {"instance": "ALL", "method": m, "config": name,
                     **{k: None for k in RESULT_FIELDS[3:]}}
            out.append(r)
    return out


def write_report(rows: list[dict], curves: list[dict], out_dir, title_rows=None) -> str:
    out = Path(out_dir)
    if title_rows is None:
        # per-method rows only add information across several instances
        title_rows = method_rows(rows) if len({r["instance"] for r in rows}) > 1 else []
    table_rows = rows + title_rows
    text = format_table(table_rows)
    atomic_write(out / "results.txt", text)
    atomic_write(out / "results.csv", to_csv(table_rows, RESULT_FIELDS))
    atomic_write(out / "curves.csv", to_csv(curves, ("instance", "method", "config", "seed",
                                                     "episode", "return", "cost", "feasible")))
    return text


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

class UsageError(Exception):
    pass


def _augment_cfg(args) -> I.AugmentConfig:
    return I.AugmentConfig(window_tightness=args.window_tightness,
                           break_fraction=args.break_fraction, seed=args.seed)


def cmd_augment(args) -> int:
    inst = I.augment(load_any(args.input), _augment_cfg(args))
    text = I.serialize(inst)
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_prepare(args) -> int:
    out = Path(args.out)
    manifest_path = out / MANIFEST
    if manifest_path.exists() and not args.force:
        raise UsageError(f"{manifest_path} exists; pass --force to overwrite")
    cfg = _augment_cfg(args)
    if args.desk:
        entries = [(inst, "synthetic") for inst in desk_corpus()]
    else:
        if not args.inputs:
            raise UsageError("give input files or --desk")
        entries = [(I.augment(load_any(p), replace(cfg, seed=args.seed + k)), str(p))
                   for k, p in enumerate(args.inputs)]
    records = []
    for inst, source in entries:
        text = I.serialize(inst)
        fname = f"{inst.name}.json"
        atomic_write(out / fname, text)
        best = None
        if inst.n_customers <= ORACLE_LIMIT:
            best = exact_solve(inst, limit=ORACLE_LIMIT, weights=GENERALIZED).best_cost
        records.append({"name": inst.name, "file": fname, "source": source,
                        "seed": inst.rng_seed, "n_customers": inst.n_customers,
                        "sha256": sha256_text(text), "best_known": best})
    manifest = {"format_version": 1, "augment": cfg.__dict__.copy(), "instances": records}
    atomic_write(manifest_path, dump_json(manifest))
    print(f"prepared {len(records)} instances in {out}")
    return 0


def _instances(paths) -> list[I.Instance]:
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            m = json.loads((p / MANIFEST).read_text())
            out += [I.load(p / e["file"]) for e in m["instances"]]
        elif p.name == MANIFEST:
            m = json.loads(p.read_text())
            out += [I.load(p.parent / e["file"]) for e in m["instances"]]
        else:
            out.append(load_any(p))
    return out


def _train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    cfg = TrainConfig.from_dict(base)
    over = {k: getattr(args, k) for k in ("episodes", "warmup", "lr", "gamma")
            if getattr(args, k, None) is not None}
    return replace(cfg, **over)


def _seeds(args) -> tuple[int, ...]:
    if args.seeds:
        return tuple(args.seeds)
    return tuple(range(args.n_seeds))


def _run_matrix(args, methods, ablations) -> int:
    cfg = _train_config(args)
    failed = 0
    for inst in _instances(args.instances):
        for m in methods:
            for ab in ablations:
                if m == "dqn" and ab in LLM_ONLY_ABLATIONS:
                    continue
                spec = RunSpec(inst, m, _seeds(args), Path(args.out), cfg, ab,
                               model=args.model, base_url=args.base_url)
                sums, errs = run_spec(spec, args.jobs)
                for e in errs:
                    print(f"FAILED {inst.name} {m}/{ab} {e}", file=sys.stderr)
                failed += len(errs)
                for s in sums:
                    g = "n/a" if s["gap"] is None else f"{s['gap']:.2f}%"
                    print(f"{inst.name} {m}/{ab} seed {s['seed']}: best gap {g}, "
                          f"greedy satisfied {s['satisfaction']:.0%}")
    return 1 if failed else 0


def cmd_train(args) -> int:
    if args.method not in METHODS:
        raise UsageError(f"--method must be one of {METHODS}")
    return _run_matrix(args, [args.method], [args.ablation])


def cmd_ablate(args) -> int:
    code = _run_matrix(args, args.methods, list(ABLATIONS))
    rows, curves = collect(args.out)
    text = write_report(rows, curves, args.out, ablation_rows(rows, args.methods))
    sys.stdout.write(text)
    return code


def cmd_report(args) -> int:
    rows, curves = collect(args.runs, args.manifest or ())
    if not rows:
        raise UsageError(f"no run summaries under {args.runs}")
    text = write_report(rows, curves, args.out or args.runs)
    sys.stdout.write(text)
    return 0


def cmd_oracle(args) -> int:
    inst = load_any(args.instance)
    weights = GENERALIZED if args.weights == "generalized" else DISTANCE_ONLY
    sol = exact_solve(inst, limit=args.limit, clock_mode=args.clock_mode, weights=weights)
    print(dump_json({"instance": inst.name, "cost": sol.best_cost,
                     "routes": sol.best_plan.to_list()}), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="llmq-bench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def aug_flags(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--window-tightness", type=float, default=0.3)
        sp.add_argument("--break-fraction", type=float, default=0.2)

    sp = sub.add_parser("augment", help="add windows and path breaks to one instance")
    sp.add_argument("input")
    sp.add_argument("-o", "--output")
    aug_flags(sp)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("prepare", help="write augmented instances and a manifest")
    sp.add_argument("inputs", nargs="*")
    sp.add_argument("--out", required=True)
    sp.add_argument("--desk", action="store_true", help="the built-in 10-instance corpus")
    sp.add_argument("--force", action="store_true")
    aug_flags(sp)
    sp.set_defaults(func=cmd_prepare)

    def run_flags(sp):
        sp.add_argument("instances", nargs="+", help="instance files or prepared directories")
        sp.add_argument("--out", required=True)
        sp.add_argument("--seeds", type=int, nargs="+")
        sp.add_argument("--n-seeds", type=int, default=3)
        sp.add_argument("--config", help="JSON file with TrainConfig fields")
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--warmup", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--model", help="model name for llm-remote")
        sp.add_argument("--base-url", help="overrides the LLMQ_API_BASE variable")

    sp = sub.add_parser("train", help="train one method over seeds")
    run_flags(sp)
    sp.add_argument("--method", default="llm-mock", choices=METHODS)
    sp.add_argument("--ablation", default="all", choices=list(ABLATIONS))
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("ablate", help="run the six switch configurations")
    run_flags(sp)
    sp.add_argument("--methods", nargs="+", default=["dqn", "llm-mock"], choices=METHODS)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", help="tabulate run directories")
    sp.add_argument("runs")
    sp.add_argument("--out")
    sp.add_argument("--manifest", nargs="*", help="manifests with best-known costs")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("oracle", help="solve a small instance exactly")
    sp.add_argument("instance")
    sp.add_argument("--limit", type=int, default=ORACLE_LIMIT)
    sp.add_argument("--clock-mode", default=GLOBAL, choices=CLOCK_MODES)
    sp.add_argument("--weights", default="generalized", choices=["generalized", "distance"])
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (VRPError, MissingOracle, TooLarge) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
