"""Experiment commands. Each writes plot-ready CSV/JSONL into the output
directory plus a ``run_<command>.json`` record listing every artifact with
its sha256, so ``verify`` can cross-check a finished run.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import __version__
from ..attacks import (
    AttackConfig,
    SubstituteConfig,
    blackbox_eval,
    correctly_classified,
    min_distortion,
    noise_accuracy_sweep,
    train_substitute,
    write_attack_records,
)
from ..data import (
    ConfigError,
    Dataset,
    DataError,
    NoiseConfig,
    cifar10_files,
    load_cifar10_pair,
    load_dataset,
    noise_augmented_training_set,
    split_per_class,
    synth_images,
)
from ..grad import BnnConfig, SgdConfig, TrainLog, train_bnn, train_mlp
from ..models import VoteEnsemble, sign
from ..scd import ScdConfig, train_scd
from ..serialize import load_ensemble, load_model, save_ensemble
from .config import ExperimentConfig

log = logging.getLogger("mlp01")


# ---------------------------------------------------------------------------
# plumbing


def build_id() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).parent,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"mlp01-{__version__}" + (f"+{rev}" if rev else "")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_csv(path, header, rows, digest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["config_digest", *header])
        for r in rows:
            w.writerow([digest, *[repr(x) if isinstance(x, float) else x for x in r]])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def pool_map(fn, items, workers):
    """Ordered map; results line up with `items` regardless of completion order."""
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


class Run:
    """Collects artifacts and metrics for one command invocation."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg, self.command = cfg, command
        self.digest = cfg.digest()
        self.out = cfg.out
        self.out.mkdir(parents=True, exist_ok=True)
        self.t0 = time.perf_counter()
        self.artifacts: list[Path] = []
        self.metrics: dict = {}

    def add(self, *paths):
        self.artifacts.extend(Path(p) for p in paths)

    def csv(self, name, header, rows):
        p = write_csv(self.out / name, header, rows, self.digest)
        self.add(p)
        return p

    def finish(self) -> dict:
        cfg_path = self.out / f"config_{self.command}.ini"
        cfg_path.write_text(self.cfg.to_ini())
        record = {
            "command": self.command,
            "config_digest": self.digest,
            "build": build_id(),
            "wall_clock_s": round(time.perf_counter() - self.t0, 3),
            "metrics": self.metrics,
            "artifacts": {
                str(p.relative_to(self.out)): sha256_file(p) for p in sorted(set(self.artifacts))
            },
            "config_file": cfg_path.name,
        }
        (self.out / f"run_{self.command}.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        return record


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg["data"]
    rng = np.random.default_rng(cfg.seed)
    if d["source"] == "cifar10":
        root = cfg.cifar_dir()
        train = load_cifar10_pair(cifar10_files(root, "train"), d["class_a"], d["class_b"])
        test = load_cifar10_pair(cifar10_files(root, "test"), d["class_a"], d["class_b"])
    elif d["source"] == "cache":
        train, test = load_dataset(d["train_cache"]), load_dataset(d["test_cache"])
    else:
        n_tr = d["train_per_class"] or 1000
        n_te = d["test_per_class"] or 500
        full = synth_images(n_tr + n_te, d["dim"], d["synth_seed"], contrast=d["contrast"])
        neg, pos = full.class_indices(-1), full.class_indices(1)
        train = full.subset(np.concatenate([neg[:n_tr], pos[:n_tr]]))
        test = full.subset(np.concatenate([neg[n_tr:], pos[n_tr:]]))
    available = int(max(np.sum(train.labels == 1), np.sum(train.labels == -1)))
    n_train = cfg.scaled(d["train_per_class"] or available)
    if n_train < available:
        train = split_per_class(train, n_train, rng)
    if d["test_per_class"] and d["source"] != "synthetic":
        test = split_per_class(test, d["test_per_class"], rng)
    return train, test


def model_name(kind: str, sigma: float) -> str:
    return kind if sigma == 0 else f"{kind}_n{sigma:g}"


def member_configs(cfg: ExperimentConfig, kind: str) -> list:
    m = cfg["models"]
    votes = cfg.scaled(m["votes"])
    seeds = [cfg.seed + i for i in range(votes)]
    if kind == "mlp01":
        s = cfg["scd"]
        return [
            ScdConfig(hidden_nodes=m["hidden"], batch_fraction=s["batch_fraction"],
                      features_per_step=s["features_per_step"], step_size=s["step_size"],
                      epochs=cfg.scaled(s["epochs"]), votes=1, seed=sd)
            for sd in seeds
        ]
    g = cfg["sgd"]
    if kind == "mlp":
        return [
            SgdConfig(hidden=(m["hidden"],), batch_size=g["batch_size"], momentum=g["momentum"],
                      learning_rate=g["learning_rate"], epochs=cfg.scaled(g["epochs"]), seed=sd)
            for sd in seeds
        ]
    b = cfg["bnn"]
    return [
        BnnConfig(hidden=(m["hidden"],), batch_size=g["batch_size"], momentum=g["momentum"],
                  learning_rate=b["learning_rate"], epochs=cfg.scaled(b["epochs"]), seed=sd,
                  surrogate=b["surrogate"], clip=b["clip"])
        for sd in seeds
    ]


def _train_member(job):
    kind, data, mcfg = job
    if kind == "mlp01":
        params, trace = train_scd(data, mcfg)
        rows = [(i + 1, l, int(a), nd) for i, (l, a, nd) in enumerate(zip(trace.loss, trace.accepted, trace.node))]
        return params, ["epoch", "loss", "accepted", "node"], rows
    tlog = TrainLog()
    params = (train_mlp if kind == "mlp" else train_bnn)(data, mcfg, log=tlog)
    rows = [(i + 1, l, a) for i, (l, a) in enumerate(zip(tlog.loss, tlog.accuracy))]
    return params, ["epoch", "loss", "accuracy"], rows


def accuracy(model, data: Dataset) -> float:
    return float(np.mean(model.predict(data.features) == data.labels))


def discover_models(out: Path, only=()) -> dict[str, VoteEnsemble]:
    root = out / "models"
    names = sorted(p.parent.name for p in root.glob("*/manifest.json")) if root.is_dir() else []
    if not names:
        raise DataError(f"no trained models under {root}; run `train` first")
    if only:
        missing = sorted(set(only) - set(names))
        if missing:
            raise DataError(f"requested model(s) {', '.join(missing)} not found under {root}")
        names = [n for n in names if n in only]
    return {n: load_ensemble(root / n) for n in names}


def _check_model_digests(models, digest):
    for name, e in models.items():
        md = e.meta.get("metadata", {}).get("config_digest")
        if md != digest:
            log.warning("model %s was trained under config %s, current config is %s", name, md, digest)


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: ExperimentConfig) -> dict:
    run = Run(cfg, "train")
    train, test = load_data(cfg)
    m = cfg["models"]
    log.info("train: n=%d d=%d, test n=%d", train.n, train.d, test.n)
    summary = []
    for kind in m["kinds"]:
        for sigma in m["noise"]:
            name = model_name(kind, sigma)
            data = train
            if sigma > 0:
                data = noise_augmented_training_set(train, NoiseConfig(sigma, m["noise_seed"]), m["noise_mode"])
            cfgs = member_configs(cfg, kind)
            log.info("training %s: %d members", name, len(cfgs))
            results = pool_map(_train_member, [(kind, data, c) for c in cfgs], cfg.workers)
            ens = VoteEnsemble(tuple(r[0] for r in results))
            meta = {
                "config_digest": run.digest,
                "name": name,
                "kind": kind,
                "train_noise_sigma": sigma,
                "seeds": [c.seed for c in cfgs],
                "member_config": asdict(cfgs[0]) | {"seed": None},
                "init": "N(0,1) weights" if kind == "mlp01" else "U(+-1/sqrt(fan_in)) weights, zero biases",
            }
            mdir = save_ensemble(ens, cfg.out / "models" / name, meta)
            run.add(mdir / "manifest.json", *sorted(mdir.glob("member_*.m01")))
            for i, (_, header, rows) in enumerate(results):
                run.csv(f"traces/{name}/member_{i:03d}.csv", header, rows)
            tr, te = accuracy(ens, train), accuracy(ens, test)
            summary.append((name, kind, sigma, len(ens), tr, te))
            run.metrics[name] = {"train_accuracy": tr, "test_accuracy": te, "votes": len(ens)}
            log.info("%s: train %.4f test %.4f", name, tr, te)
    run.csv("train_summary.csv", ["model", "kind", "train_noise_sigma", "votes", "train_accuracy", "test_accuracy"], summary)
    return run.finish()


def cmd_noise_sweep(cfg: ExperimentConfig) -> dict:
    run = Run(cfg, "noise-sweep")
    models = discover_models(cfg.out)
    _check_model_digests(models, run.digest)
    _, test = load_data(cfg)
    ns = cfg["noise_sweep"]
    sigmas = tuple(ns["sigmas"]) if 0.0 in ns["sigmas"] else (0.0, *ns["sigmas"])
    rows = []
    for name, ens in models.items():
        sweep = noise_accuracy_sweep(ens, test, sigmas, ns["seed"])
        rows.extend((name, sigma, acc) for sigma, acc in sweep)
        run.metrics[name] = {"clean_accuracy": dict(sweep)[0.0]}
    run.csv("noise_sweep.csv", ["model", "sigma", "accuracy"], rows)
    return run.finish()


def _attack_job(job):
    name, ens, x, y, kind, acfg, seed = job
    res = min_distortion(ens, x, y, kind, acfg, seed)
    b = res.best
    recheck = bool(ens.predict(b.adversarial) != y) if res.success else False
    return {
        "model": name,
        "attack": kind,
        "norm": acfg.norm if kind == "hopskipjump" else "l2",
        "restarts": acfg.restarts,
        "l2": res.l2_min,
        "linf": res.linf_min,
        "queries": b.queries,
        "success": bool(res.success and recheck),
    }


def cmd_min_distortion(cfg: ExperimentConfig) -> dict:
    run = Run(cfg, "min-distortion")
    models = discover_models(cfg.out, cfg["attack"]["models"])
    _check_model_digests(models, run.digest)
    _, test = load_data(cfg)
    a = cfg["attack"]
    order = np.random.default_rng(a["image_seed"]).permutation(test.n)
    records, chosen = [], []
    for idx in order:
        if len(chosen) >= a["images"]:
            break
        x, y = test.features[idx], int(test.labels[idx])
        wrong = [n for n, e in models.items() if int(e.predict(x)) != y]
        if wrong:
            log.info("image %d skipped: misclassified by %s", idx, ", ".join(wrong))
            records.append({"image_id": int(idx), "status": "skipped",
                            "reason": "misclassified by " + ", ".join(wrong)})
            continue
        chosen.append(int(idx))
    if len(chosen) < a["images"]:
        log.warning("only %d of %d requested images are correctly classified by all models", len(chosen), a["images"])
    jobs, keys = [], []
    for img in chosen:
        x, y = test.features[img], int(test.labels[img])
        for mi, (name, ens) in enumerate(models.items()):
            for ai, kind in enumerate(a["kinds"]):
                norms = a["hsj_norms"] if kind == "hopskipjump" else ("l2",)
                for ni, norm in enumerate(norms):
                    acfg = AttackConfig(max_iter=a["max_iter"], restarts=a["restarts"], init_evals=a["init_evals"],
                                        trials=a["trials"], norm=norm)
                    seed = int(np.random.SeedSequence([cfg.seed, img, mi, ai, ni]).generate_state(1)[0])
                    jobs.append((name, ens, x, y, kind, acfg, seed))
                    keys.append(img)
    for img, rec in zip(keys, pool_map(_attack_job, jobs, cfg.workers)):
        records.append({"image_id": img, "status": "attacked", **rec})
    for r in records:
        r["config_digest"] = run.digest
    write_attack_records(cfg.out / "attacks.jsonl", records)
    run.add(cfg.out / "attacks.jsonl")

    attacked = [r for r in records if r["status"] == "attacked"]
    per_image = [(r["image_id"], r["model"], r["attack"], r["norm"], r["l2"], r["linf"], r["queries"], int(r["success"]))
                 for r in attacked]
    run.csv("min_distortion_images.csv", ["image_id", "model", "attack", "norm", "l2", "linf", "queries", "success"], per_image)
    agg = []
    groups = sorted({(r["model"], r["attack"], r["norm"]) for r in attacked})
    for model, attack, norm in groups:
        rs = [r for r in attacked if (r["model"], r["attack"], r["norm"]) == (model, attack, norm) and r["success"]]
        col = "l2" if norm == "l2" else "linf"
        vals = [r[col] for r in rs]
        mean = float(np.mean(vals)) if vals else float("nan")
        agg.append((model, attack, norm, len(vals), mean, float(np.min(vals)) if vals else float("nan")))
        run.metrics[f"{model}/{attack}/{norm}"] = {"mean": mean, "images": len(vals)}
    run.csv("min_distortion.csv", ["model", "attack", "norm", "images", "mean_distortion", "min_distortion"], agg)
    return run.finish()


def _blackbox_job(job):
    name, ens, seed_X, holdout, eval_set, scfg, epsilons, noise_seed = job
    try:
        sub = train_substitute(ens, seed_X, scfg, holdout=holdout)
    except (ConfigError, FloatingPointError) as exc:
        return name, None, f"substitute training failed: {exc}"
    correct = correctly_classified(ens, eval_set)
    if correct.n == 0:
        return name, None, "target classifies no evaluation point correctly"
    adv = blackbox_eval(ens, sub.params, eval_set, epsilons)
    gauss = noise_accuracy_sweep(ens, correct, epsilons, noise_seed)
    return name, (sub.agreement, sub.queries, correct.n, adv, gauss), ""


def cmd_blackbox(cfg: ExperimentConfig) -> dict:
    run = Run(cfg, "blackbox")
    models = discover_models(cfg.out, cfg["blackbox"]["models"])
    _check_model_digests(models, run.digest)
    _, test = load_data(cfg)
    b = cfg["blackbox"]
    if test.n <= b["seed_count"]:
        raise ConfigError(f"test split has {test.n} points; need more than blackbox.seed_count={b['seed_count']} "
                          "so that some remain for evaluation")
    rng = np.random.default_rng(cfg.seed)
    seed_idx = np.sort(rng.choice(test.n, size=b["seed_count"], replace=False))
    rest = np.setdiff1d(np.arange(test.n), seed_idx)
    eval_set = test.subset(rest)
    scfg = SubstituteConfig(seed_count=len(seed_idx), epochs=b["epochs"], hidden=tuple(b["hidden"]), step=b["step"],
                            cap=b["cap"], train_passes=b["train_passes"], batch_size=b["batch_size"],
                            learning_rate=b["learning_rate"], seed=cfg.seed)
    epsilons = tuple(b["epsilons"])
    jobs = [(n, e, test.features[seed_idx], eval_set.features, eval_set, scfg, epsilons, b["noise_seed"])
            for n, e in models.items()]
    rows, sub_rows = [], []
    for name, res, err in pool_map(_blackbox_job, jobs, cfg.workers):
        if res is None:
            log.error("%s: %s", name, err)
            run.metrics[name] = {"error": err}
            continue
        agreement, queries, n_pts, adv, gauss = res
        for eps, acc in adv:
            rows.append((name, eps, "adversarial", acc, n_pts))
        for eps, acc in gauss:
            rows.append((name, eps, "gaussian", acc, n_pts))
        for r, ag in enumerate(agreement, start=1):
            sub_rows.append((name, r, ag))
        run.metrics[name] = {"queries": queries, "final_agreement": agreement[-1] if agreement else None,
                             "adversarial": dict((f"{e:.6g}", a) for e, a in adv)}
    run.csv("blackbox.csv", ["model", "epsilon", "curve", "accuracy", "n_points"], rows)
    run.csv("blackbox_substitutes.csv", ["model", "round", "agreement"], sub_rows)
    return run.finish()


def cmd_batch_size_study(cfg: ExperimentConfig) -> dict:
    run = Run(cfg, "batch-size-study")
    train, test = load_data(cfg)
    s, bs = cfg["scd"], cfg["batch_study"]
    rows = []
    for frac in bs["fractions"]:
        scfg = ScdConfig(hidden_nodes=0, batch_fraction=frac, features_per_step=s["features_per_step"],
                         step_size=s["step_size"], epochs=cfg.scaled(bs["epochs"]), votes=1, seed=cfg.seed)

        def record(epoch, state, frac=frac):
            test_acc = float(np.mean(sign(test.features @ state.w + state.w0) == test.labels))
            rows.append((frac, epoch, 1.0 - state.errors / train.n, test_acc))

        train_scd(train, scfg, callback=record)
        final = rows[-1]
        run.metrics[f"{frac:g}"] = {"train_accuracy": final[2], "test_accuracy": final[3]}
        log.info("batch fraction %g: train %.4f test %.4f", frac, final[2], final[3])
    run.csv("batch_size_study.csv", ["fraction", "epoch", "train_accuracy", "test_accuracy"], rows)
    return run.finish()


COMMANDS = {
    "train": cmd_train,
    "noise-sweep": cmd_noise_sweep,
    "min-distortion": cmd_min_distortion,
    "blackbox": cmd_blackbox,
    "batch-size-study": cmd_batch_size_study,
}


# ---------------------------------------------------------------------------
# verification


def verify(out) -> list[str]:
    """Cross-check every run record in `out`; returns a list of problems (empty = ok)."""
    out = Path(out)
    problems = []
    records = sorted(out.glob("run_*.json"))
    if not records:
        return [f"{out}: no run records"]
    for rp in records:
        rec = json.loads(rp.read_text())
        digest = rec["config_digest"]
        for rel, sha in rec["artifacts"].items():
            p = out / rel
            if not p.is_file():
                problems.append(f"{rp.name}: missing artifact {rel}")
                continue
            if sha256_file(p) != sha:
                problems.append(f"{rp.name}: {rel} changed since the run (sha256 mismatch)")
            found = _embedded_digests(p)
            if found and found != {digest}:
                problems.append(f"{rp.name}: {rel} carries digest(s) {sorted(found)}, expected {digest}")
    return problems


def _embedded_digests(p: Path) -> set:
    if p.suffix == ".csv":
        return {r["config_digest"] for r in read_csv(p)}
    if p.suffix == ".jsonl":
        return {json.loads(line).get("config_digest") for line in p.read_text().splitlines() if line.strip()}
    if p.name == "manifest.json":
        return {json.loads(p.read_text())["metadata"].get("config_digest")}
    if p.suffix == ".m01":
        return {load_model(p)[1].get("config_digest")}
    return set()
