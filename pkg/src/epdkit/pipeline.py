"""Dataset generation, manifest persistence, splits, eval and reports.

A generation run enumerates (task, scene, kind, level) cells. Each cell runs
one 50-step episode under its distortion spec; the three reward aggregators
score the shared trace, the clean and distorted initial frames land in
``ref/`` and ``dist/``, and the manifest records raw scores plus derived
labels:

* per task and per agent, raw J is min-max normalized over the run,
* ``task_score`` is the mean of the three normalized agent values,
* ``dmos`` min-max normalizes ``task_score`` per task onto [0, 5].

The manifest is a single JSON document with a canonical serialization
(sorted keys, floats rounded to 6 decimals) so regeneration under a fixed
seed is byte-identical. ``EPDKIT_THREADS`` caps generation workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import multiprocessing
import os
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, sim
from .distortions import LEVELS, DistortionSpec, list_kinds
from .imagebuf import load_png, save_png
from .rng import derive_seed, make_rng

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1
AGENTS = ("ppo", "sac", "tdmpc2")
SUBSETS = ("all", "push", "pick")


class PipelineError(RuntimeError):
    pass


@dataclass
class EpdRecord:
    id: str
    task: str
    scene_index: int
    scene_seed: int
    kind: str
    level: int
    episode_seed: int
    ref_path: str
    dist_path: str
    agent_scores: dict  # raw J per agent
    task_score: float = 0.0
    dmos: float = 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["agent_scores"] = {k: _r6(v) for k, v in self.agent_scores.items()}
        d["task_score"] = _r6(self.task_score)
        d["dmos"] = _r6(self.dmos)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EpdRecord":
        return cls(**d)


@dataclass
class Manifest:
    format: int
    config: dict
    records: list
    split: dict = field(default_factory=dict)  # record id -> "train" | "val"
    split_hash: str = ""

    def to_json(self) -> dict:
        return {
            "format": self.format,
            "config": self.config,
            "records": [r.to_json() for r in self.records],
            "split": self.split,
            "split_hash": self.split_hash,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Manifest":
        return cls(
            format=d["format"],
            config=d["config"],
            records=[EpdRecord.from_json(r) for r in d["records"]],
            split=d.get("split", {}),
            split_hash=d.get("split_hash", ""),
        )

    def by_id(self) -> dict:
        return {r.id: r for r in self.records}

    def subset(self, name: str):
        if name == "all":
            return list(self.records)
        if name not in SUBSETS:
            raise PipelineError(f"unknown subset {name!r}")
        return [r for r in self.records if r.task == name]


def _r6(x: float) -> float:
    return float(round(float(x), 6))


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def save_manifest(manifest: Manifest, out_dir) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(canonical_json(manifest.to_json()) + "\n")
    return path


def load_manifest(out_dir) -> Manifest:
    path = Path(out_dir)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise PipelineError(f"manifest not found: {path}")
    return Manifest.from_json(json.loads(path.read_text()))


# ---------------------------------------------------------------------------
# generation


def worker_count() -> int:
    env = os.environ.get("EPDKIT_THREADS", "")
    if env:
        return max(1, int(env))
    return max(1, multiprocessing.cpu_count() // 2)


def _cell_id(task: str, scene_index: int, kind: str, level: int) -> str:
    return f"{task}_{scene_index:03d}_{kind}_{level}"


def _run_cell(args):
    task, scene_index, scene_seed, kind, level, episode_seed, out_dir = args
    scene = sim.random_scene(scene_seed)
    spec = DistortionSpec(kind, level, episode_seed)
    res = sim.run_episode(scene, task, spec)
    rid = _cell_id(task, scene_index, kind, level)
    ref_rel = f"ref/{rid}.png"
    dist_rel = f"dist/{rid}.png"
    save_png(res.ref_frame, Path(out_dir) / ref_rel)
    save_png(res.eval_frame, Path(out_dir) / dist_rel)
    return EpdRecord(
        id=rid,
        task=task,
        scene_index=scene_index,
        scene_seed=scene_seed,
        kind=kind,
        level=level,
        episode_seed=episode_seed,
        ref_path=ref_rel,
        dist_path=dist_rel,
        agent_scores={k: float(v) for k, v in res.agent_scores().items()},
    )


def _label_records(records):
    """Fill task_score and dmos in place (per-task normalization groups)."""
    for task in sorted({r.task for r in records}):
        group = [r for r in records if r.task == task]
        norm = {}
        for agent in AGENTS:
            raw = np.array([r.agent_scores[agent] for r in group])
            norm[agent] = metrics.normalize_scores(raw, 0.0, 1.0)
        for i, r in enumerate(group):
            r.task_score = float(np.mean([norm[a][i] for a in AGENTS]))
        dmos = metrics.normalize_scores(np.array([r.task_score for r in group]), 0.0, 5.0)
        for r, v in zip(group, dmos):
            r.dmos = float(v)
        # keep derived labels at canonical precision so regeneration and
        # round-trips are exact
        for r in group:
            r.task_score = _r6(r.task_score)
            r.dmos = _r6(r.dmos)
            r.agent_scores = {k: _r6(v) for k, v in r.agent_scores.items()}


def generate(out_dir, n_scenes: int, tasks=("push", "pick"), kinds=None,
             levels=LEVELS, master_seed: int = 0, workers: int | None = None) -> Manifest:
    """Build an EPD-style dataset; |tasks| * n_scenes * |kinds| * |levels| records."""
    if n_scenes < 2:
        raise PipelineError("need at least 2 scenes per task")
    kinds = tuple(kinds) if kinds else tuple(k.kind for k in list_kinds())
    tasks = tuple(tasks)
    out_dir = Path(out_dir)
    created = not out_dir.exists()
    (out_dir / "ref").mkdir(parents=True, exist_ok=True)
    (out_dir / "dist").mkdir(parents=True, exist_ok=True)

    jobs = []
    for ti, task in enumerate(tasks):
        for scene_index in range(n_scenes):
            scene_seed = derive_seed(master_seed, 0x5C, ti, scene_index)
            for ki, kind in enumerate(kinds):
                for level in levels:
                    episode_seed = derive_seed(master_seed, 0xEF, ti, scene_index, ki, level)
                    jobs.append((task, scene_index, scene_seed, kind, level,
                                 episode_seed, str(out_dir)))

    nproc = workers if workers is not None else worker_count()
    try:
        if nproc > 1:
            with multiprocessing.Pool(nproc) as pool:
                records = pool.map(_run_cell, jobs, chunksize=8)
        else:
            records = [_run_cell(j) for j in jobs]
        records.sort(key=lambda r: r.id)
        _label_records(records)
    except Exception:
        if created:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise

    manifest = Manifest(
        format=FORMAT_VERSION,
        config={
            "n_scenes": n_scenes,
            "tasks": list(tasks),
            "kinds": list(kinds),
            "levels": list(levels),
            "master_seed": master_seed,
            "image_size": sim.IMG_SIZE,
            "episode_steps": sim.EPISODE_STEPS,
        },
        records=records,
    )
    save_manifest(manifest, out_dir)
    return manifest


# ---------------------------------------------------------------------------
# split


def split(manifest: Manifest, ratio: float = 0.8, split_seed: int = 0) -> Manifest:
    """Stratified train/val assignment by (task, kind), stored in place."""
    if len(manifest.records) < 10:
        raise PipelineError("need at least 10 records to split")
    strata: dict = {}
    for r in manifest.records:
        strata.setdefault((r.task, r.kind), []).append(r)

    assignment = {}
    if any(len(v) < 5 for v in strata.values()):
        pool = sorted(manifest.records, key=lambda r: r.id)
        rng = make_rng(derive_seed(split_seed, 0x5811))
        order = rng.permutation(len(pool))
        n_train = round(ratio * len(pool))
        for pos, idx in enumerate(order):
            assignment[pool[idx].id] = "train" if pos < n_train else "val"
        manifest.config["split_warning"] = "stratum under 5 records; global split"
    else:
        for si, key in enumerate(sorted(strata)):
            group = sorted(strata[key], key=lambda r: r.id)
            rng = make_rng(derive_seed(split_seed, 0x5811, si))
            order = rng.permutation(len(group))
            n_train = round(ratio * len(group))
            for pos, idx in enumerate(order):
                assignment[group[idx].id] = "train" if pos < n_train else "val"

    manifest.split = {rid: assignment[rid] for rid in sorted(assignment)}
    manifest.split_hash = hashlib.sha256(
        canonical_json(manifest.split).encode()
    ).hexdigest()
    return manifest


def split_records(manifest: Manifest):
    train = [r for r in manifest.records if manifest.split.get(r.id) == "train"]
    val = [r for r in manifest.records if manifest.split.get(r.id) == "val"]
    return train, val


# ---------------------------------------------------------------------------
# eval


def _scorer_fn(name, root, mapping_seed=0):
    """Returns record -> float. ``name`` is psnr|ssim|dmos|random or a
    checkpoint path."""
    root = Path(root)
    if name == "dmos":
        return lambda r: r.dmos
    if name == "psnr":
        def fn(r):
            v = metrics.psnr(load_png(root / r.ref_path), load_png(root / r.dist_path))
            return v if np.isfinite(v) else 1e6
        return fn
    if name == "ssim":
        return lambda r: metrics.ssim(load_png(root / r.ref_path), load_png(root / r.dist_path))
    if name == "random":
        rng = make_rng(derive_seed(mapping_seed, 0xBAD))
        return lambda r: float(rng.random())
    ckpt_path = Path(name)
    if not ckpt_path.exists():
        raise PipelineError(f"unknown scorer or missing checkpoint: {name}")
    from . import model as model_mod
    from .checkpoint import load_checkpoint

    cfg, params, _, _ = load_checkpoint(ckpt_path)

    def fn(r):
        img = load_png(root / r.dist_path)
        img = resize_image(img, cfg.input_size)
        return model_mod.predict(img, params, cfg)

    return fn


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    """Area-average downscale to size x size (integer factor only)."""
    h = img.shape[0]
    if h == size:
        return img
    if h % size != 0:
        raise PipelineError(f"cannot resize {h} -> {size} (non-integer factor)")
    f = h // size
    return img.reshape(size, f, size, f, 3).mean(axis=(1, 3))


@dataclass
class EvalReport:
    scorer: str
    mapping: str
    rows: list  # {"subset", "srcc", "krcc", "plcc", "n"}

    def cell(self, subset: str, metric: str) -> float:
        for row in self.rows:
            if row["subset"] == subset:
                return row[metric]
        raise KeyError(subset)


def evaluate(manifest: Manifest, root, scorer: str = "psnr",
             mapping: str = "none", seed: int = 0,
             records=None) -> EvalReport:
    recs = records if records is not None else split_records(manifest)[1]
    if not recs:
        raise PipelineError("no val records; run split first")
    fn = _scorer_fn(scorer, root, mapping_seed=seed)
    preds = {r.id: float(fn(r)) for r in recs}
    rows = []
    for subset in SUBSETS:
        sub = [r for r in recs if subset == "all" or r.task == subset]
        if len(sub) < 2:
            continue
        x = np.array([preds[r.id] for r in sub])
        y = np.array([r.dmos for r in sub])
        rows.append({
            "subset": subset,
            "srcc": metrics.srcc(x, y),
            "krcc": metrics.krcc(x, y),
            "plcc": metrics.plcc(x, y, mapping=mapping),
            "n": len(sub),
        })
    return EvalReport(scorer=scorer, mapping=mapping, rows=rows)


def eval_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scorer", "mapping", "subset", "srcc", "krcc", "plcc", "n"])
        for row in report.rows:
            w.writerow([report.scorer, report.mapping, row["subset"],
                        f"{row['srcc']:.6f}", f"{row['krcc']:.6f}",
                        f"{row['plcc']:.6f}", row["n"]])


# ---------------------------------------------------------------------------
# analyze


def _cell_means(records, key=lambda r: (r.kind, r.level)):
    cells: dict = {}
    for r in records:
        cells.setdefault(key(r), []).append(r.dmos)
    return {k: float(np.mean(v)) for k, v in sorted(cells.items())}


def analyze(manifest: Manifest, out_dir) -> dict:
    """Emit the distribution and correlation reports; returns a summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = manifest.records
    if not records:
        raise PipelineError("empty manifest")
    levels = sorted({r.level for r in records})
    kinds = sorted({r.kind for r in records})

    # (a) per-(kind, level) mean/std grid
    gs = metrics.group_stats([(r.kind, r.level, r.dmos) for r in records])
    with open(out_dir / "score_grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["kind"]
        for lvl in levels:
            header += [f"l{lvl}_mean", f"l{lvl}_std"]
        header += ["avg_mean", "avg_std"]
        w.writerow(header)
        for kind in kinds:
            row = [kind]
            for lvl in levels:
                mean, std, _ = gs.cells[(kind, lvl)]
                row += [f"{mean:.4f}", f"{std:.4f}"]
            am, as_ = gs.kind_avg[kind]
            row += [f"{am:.4f}", f"{as_:.4f}"]
            w.writerow(row)

    # (b) all-vs-subtask SRCC matrix over (kind, level) cell means
    vectors = {}
    for subset in SUBSETS:
        sub = manifest.subset(subset)
        if sub:
            vectors[subset] = _cell_means(sub)
    names = [s for s in SUBSETS if s in vectors]
    common = sorted(set.intersection(*(set(vectors[n]) for n in names)))
    matrix = {}
    for a in names:
        for b in names:
            va = [vectors[a][c] for c in common]
            vb = [vectors[b][c] for c in common]
            matrix[(a, b)] = 1.0 if a == b else metrics.srcc(va, vb)
    with open(out_dir / "srcc_matrix.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subset"] + names)
        for a in names:
            w.writerow([a] + [f"{matrix[(a, b)]:.6f}" for b in names])

    # (c) per-agent per-category mean normalized score
    cat_of = {k.kind: k.category for k in list_kinds()}
    agent_norm: dict = {}
    for task in sorted({r.task for r in records}):
        group = [r for r in records if r.task == task]
        for agent in AGENTS:
            raw = np.array([r.agent_scores[agent] for r in group])
            for r, v in zip(group, metrics.normalize_scores(raw, 0.0, 5.0)):
                agent_norm[(r.id, agent)] = float(v)
    categories = sorted({cat_of[k] for k in kinds if k in cat_of})
    with open(out_dir / "agent_category.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["category"] + list(AGENTS))
        for cat in categories:
            sub = [r for r in records if cat_of.get(r.kind) == cat]
            row = [cat]
            for agent in AGENTS:
                row.append(f"{np.mean([agent_norm[(r.id, agent)] for r in sub]):.4f}")
            w.writerow(row)

    # (d) dmos histogram per kind
    bins = np.linspace(0.0, 5.0, 11)
    with open(out_dir / "dmos_hist.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind"] + [f"bin{i}" for i in range(10)])
        for kind in kinds:
            vals = [r.dmos for r in records if r.kind == kind]
            hist, _ = np.histogram(vals, bins=bins)
            w.writerow([kind] + hist.tolist())

    return {
        "kinds": len(kinds),
        "levels": len(levels),
        "srcc_matrix": {f"{a}|{b}": matrix[(a, b)] for a in names for b in names},
        "warnings": gs.warnings,
    }


# ---------------------------------------------------------------------------
# external correlation


def correlate_external(manifest: Manifest, external_csv) -> dict:
    """Correlate an external `id,score` CSV against dmos (poly3 PLCC + SRCC)."""
    ext = {}
    with open(external_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "score"]:
            raise PipelineError(
                f"external CSV must have header 'id,score', got {reader.fieldnames}"
            )
        for row in reader:
            ext[row["id"]] = float(row["score"])
    by_id = manifest.by_id()
    shared = sorted(set(ext) & set(by_id))
    if len(shared) < 0.8 * len(by_id):
        raise PipelineError(
            f"insufficient id overlap: {len(shared)}/{len(by_id)} (< 80%)"
        )
    x = np.array([ext[i] for i in shared])
    y = np.array([by_id[i].dmos for i in shared])
    plcc, fitted, fallback = metrics.plcc_report(x, y, mapping="poly3")
    return {
        "n": len(shared),
        "srcc": metrics.srcc(x, y),
        "plcc_poly3": plcc,
        "fit_fallback": fallback,
        "pairs": [
            {"id": i, "external": float(a), "dmos": float(b), "fitted": float(c)}
            for i, a, b, c in zip(shared, x, y, fitted)
        ],
    }


# ---------------------------------------------------------------------------
# training data adapters


def load_split_arrays(manifest: Manifest, root, input_size: int | None = None):
    """Materialize (train_x, train_y, val_x, val_y) model arrays from disk."""
    from .model import image_to_input

    root = Path(root)
    out = []
    for recs in split_records(manifest):
        if not recs:
            out += [np.zeros((0,)), np.zeros((0,))]
            continue
        xs, ys = [], []
        for r in recs:
            img = load_png(root / r.dist_path)
            if input_size is not None:
                img = resize_image(img, input_size)
            xs.append(image_to_input(img))
            ys.append(r.dmos)
        out += [np.stack(xs), np.array(ys)]
    return tuple(out)


def correlation_rows(preds: np.ndarray, targets: np.ndarray, tasks: list) -> list:
    """Per-subset SRCC/KRCC/PLCC rows for aligned prediction/target vectors."""
    rows = []
    tasks = np.asarray(tasks)
    for subset in SUBSETS:
        mask = np.ones(len(preds), dtype=bool) if subset == "all" else tasks == subset
        if mask.sum() < 2:
            continue
        x, y = preds[mask], targets[mask]
        rows.append({
            "subset": subset,
            "srcc": metrics.srcc(x, y),
            "krcc": metrics.krcc(x, y),
            "plcc": metrics.plcc(x, y),
            "n": int(mask.sum()),
        })
    return rows


def train_from_manifest(manifest: Manifest, root, cfg, hyper,
                        input_size: int | None = None):
    """Train on the manifest's stored split; returns (params, curve, report)."""
    from . import model as model_mod

    tx, ty, vx, vy = load_split_arrays(manifest, root, input_size)
    if len(tx) == 0:
        raise PipelineError("empty train split; run split first")
    params, curve = model_mod.train_model(tx, ty, vx, vy, cfg, hyper)
    report = []
    if len(vx):
        val_tasks = [r.task for r in split_records(manifest)[1]]
        preds = model_mod.predict_scores(vx, params, cfg)
        report = correlation_rows(preds, vy, val_tasks)
    return params, curve, report


def write_curve_csv(curve: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse", "val_mse"])
        for row in curve:
            w.writerow([row["epoch"], f"{row['train_mse']:.6f}", f"{row['val_mse']:.6f}"])


def ablation_run(manifest: Manifest, root, base_cfg, hyper, seeds=(0,),
                 input_size: int | None = None) -> list:
    """Train the four ablation variants on the shared split.

    Returns one row per (variant, seed, subset) with correlation metrics and
    the manifest's split hash (identical across variants by construction).
    """
    from dataclasses import replace as dc_replace

    from . import model as model_mod

    tx, ty, vx, vy = load_split_arrays(manifest, root, input_size)
    if len(tx) == 0 or len(vx) == 0:
        raise PipelineError("ablation needs populated train and val splits")
    val_tasks = [r.task for r in split_records(manifest)[1]]
    rows = []
    for name, cfg in model_mod.ablation_configs(base_cfg):
        for seed in seeds:
            hy = dc_replace(hyper, seed=seed)
            params, _ = model_mod.train_model(tx, ty, vx, vy, cfg, hy)
            preds = model_mod.predict_scores(vx, params, cfg)
            for stat in correlation_rows(preds, vy, val_tasks):
                rows.append({"variant": name, "seed": seed,
                             "split_hash": manifest.split_hash, **stat})
    return rows


def ablation_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "subset", "srcc", "krcc", "plcc", "n",
                    "split_hash"])
        for r in rows:
            w.writerow([r["variant"], r["seed"], r["subset"], f"{r['srcc']:.6f}",
                        f"{r['krcc']:.6f}", f"{r['plcc']:.6f}", r["n"],
                        r["split_hash"]])
