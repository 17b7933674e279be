"""Study stages. Each stage reads upstream artifacts, writes its own, and
records a ``stage.json`` with the config digest it ran under and a SHA-256
per output file; downstream stages refuse inputs whose record disagrees.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..attacks.harvest import AdvDataset, ManifestRow, harvest_adv_dataset, reattack_eval, step_histogram
from ..attacks.latent import AttackOutcome, LatentAttackConfig, latent_attack
from ..attacks.pixel import PIXEL_GRID, PixelAttackConfig, pixel_attack_batched
from ..detector.data import LabeledSet
from ..detector.model import Detector, predict_batched
from ..detector.train import DetectorTrainConfig, EvalReport, evaluate, train_detector
from ..diffusion.data import ToyDatasetSpec, real_images
from ..diffusion.generator import DenoiserTrainConfig, Generator, sample_images
from ..diffusion.zoo import SEEN, UNSEEN_IDS, build_generator_zoo, train_seen_generator
from ..omat.train import OmatConfig, omat_train, parse_strategy
from ..rng import Rng
from . import store
from .config import ExperimentConfig

STAGES = (
    "gen-data",
    "train-gen",
    "build-zoo",
    "train-det",
    "attack",
    "harvest",
    "omat",
    "reattack",
    "eval",
    "ablate-pixel",
    "export-latents",
    "report",
)

# config sections each stage's results depend on (upstream sections included)
_BASE = ("study", "data")
STAGE_SECTIONS = {
    "gen-data": _BASE,
    "train-gen": _BASE + ("zoo",),
    "build-zoo": _BASE + ("zoo",),
    "train-det": _BASE + ("zoo", "detector"),
    "attack": _BASE + ("zoo", "detector", "attack"),
    "harvest": _BASE + ("zoo", "detector", "attack", "harvest"),
    "omat": _BASE + ("zoo", "detector", "attack", "harvest", "omat"),
    "reattack": _BASE + ("zoo", "detector", "attack", "harvest", "omat", "reattack"),
    "eval": _BASE + ("zoo", "detector", "attack", "harvest", "omat"),
    "ablate-pixel": _BASE + ("zoo", "detector", "attack", "harvest", "omat", "pixel"),
    "export-latents": _BASE + ("zoo", "detector", "attack"),
    "report": _BASE + ("zoo", "detector", "attack", "harvest", "omat", "reattack", "pixel"),
}
UPSTREAM = {
    "gen-data": (),
    "train-gen": (),
    "build-zoo": ("train-gen",),
    "train-det": ("gen-data", "build-zoo"),
    "attack": ("build-zoo", "train-det"),
    "harvest": ("build-zoo", "train-det"),
    "omat": ("gen-data", "build-zoo", "train-det", "harvest"),
    "reattack": ("build-zoo", "train-det", "omat"),
    "eval": ("gen-data", "build-zoo", "train-det", "omat"),
    "ablate-pixel": ("gen-data", "build-zoo", "train-det", "harvest", "omat"),
    "export-latents": ("build-zoo", "attack"),
    "report": ("attack", "harvest", "reattack", "eval", "ablate-pixel", "export-latents"),
}


class UpstreamError(RuntimeError):
    """An upstream artifact is missing, corrupted, or from a different config."""


def slug(strategy: str) -> str:
    kind, rank = parse_strategy(strategy)
    return kind if rank is None else f"{kind}{rank}"


def _stage_dir(name: str) -> str:
    return name.replace("-", "_")


# ---------------------------------------------------------------------------
# worker pool: per-seed attacks fan out, results come back in submission order

_POOL_STATE: dict = {}


def _pool_init(gen, det):
    _POOL_STATE["gen"], _POOL_STATE["det"] = gen, det


def _pool_attack(job):
    c, cfg = job
    return latent_attack(_POOL_STATE["gen"], _POOL_STATE["det"], c, cfg)


def run_attacks(gen: Generator, d: Detector, jobs: list[tuple[int, LatentAttackConfig]], threads: int = 1) -> list[AttackOutcome]:
    if threads <= 1 or len(jobs) < 2:
        return [latent_attack(gen, d, c, cfg) for c, cfg in jobs]
    with ProcessPoolExecutor(threads, initializer=_pool_init, initargs=(gen, d)) as ex:
        return list(ex.map(_pool_attack, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


def _pool_harvest(job):
    c, per_class, cfg, budget = job
    return harvest_adv_dataset(_POOL_STATE["gen"], _POOL_STATE["det"], [c], per_class, cfg, budget)


def run_harvest(gen, d, classes, per_class, cfg, budget_factor, threads=1) -> AdvDataset:
    jobs = [(c, per_class, cfg, budget_factor) for c in classes]
    if threads <= 1:
        parts = [harvest_adv_dataset(gen, d, [c], per_class, cfg, budget_factor) for c in classes]
    else:
        with ProcessPoolExecutor(threads, initializer=_pool_init, initargs=(gen, d)) as ex:
            parts = list(ex.map(_pool_harvest, jobs))
    data = LabeledSet.empty(gen.image_shape)
    manifest, wins, attempts = [], [], []
    for p in parts:
        data = data.concat(p.data)
        manifest += p.manifest
        wins += p.outcomes
        attempts += p.attempts
    return AdvDataset(data, manifest, wins, attempts)


# ---------------------------------------------------------------------------


class Study:
    """A study rooted at ``out``; each public stage method maps to a CLI subcommand."""

    def __init__(self, cfg: ExperimentConfig, out: Path, log=print):
        self.cfg = cfg
        self.out = Path(out)
        self.log = log
        self._cache: dict = {}

    # -- bookkeeping -------------------------------------------------------

    def path(self, stage: str, *parts: str) -> Path:
        return self.out.joinpath(_stage_dir(stage), *parts)

    def _begin(self, stage: str) -> Path:
        for up in UPSTREAM[stage]:
            self.verify(up)
        d = self.path(stage)
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _finish(self, stage: str, started: float, summary: str) -> str:
        d = self.path(stage)
        outputs = {
            str(p.relative_to(d)): store.file_digest(p)
            for p in sorted(d.rglob("*"))
            if p.is_file() and p.name not in ("stage.json", "timing.json")
        }
        record = {"stage": stage, "config_digest": self.cfg.digest(STAGE_SECTIONS[stage]), "outputs": outputs}
        store.write_json(d / "stage.json", record)
        store.write_json(d / "timing.json", {"stage": stage, "seconds": round(time.perf_counter() - started, 3)})
        self.log(f"{stage}: {summary}")
        return summary

    def verify(self, stage: str) -> None:
        rec_path = self.path(stage, "stage.json")
        if not rec_path.is_file():
            raise UpstreamError(f"upstream stage {stage!r} has not been run (missing {rec_path})")
        rec = store.read_json(rec_path)
        want = self.cfg.digest(STAGE_SECTIONS[stage])
        if rec.get("config_digest") != want:
            raise UpstreamError(f"upstream stage {stage!r} was produced under a different config (digest mismatch)")
        for rel, digest in rec["outputs"].items():
            p = self.path(stage, rel)
            if not p.is_file():
                raise UpstreamError(f"upstream artifact missing: {p}")
            if store.file_digest(p) != digest:
                raise UpstreamError(f"upstream artifact changed since it was written: {p}")

    def run(self, stage: str) -> str:
        return getattr(self, "stage_" + stage.replace("-", "_"))()

    # -- loaders -----------------------------------------------------------

    def spec(self) -> ToyDatasetSpec:
        return ToyDatasetSpec(n_classes=self.cfg.data.n_classes, pixel_noise=self.cfg.data.pixel_noise, seed=self.cfg.seed("dataset"))

    def generator_ids(self) -> list[str]:
        return [SEEN, *UNSEEN_IDS]

    def generator(self, gid: str) -> Generator:
        key = ("gen", gid)
        if key not in self._cache:
            stage = "train-gen" if gid == SEEN else "build-zoo"
            self._cache[key] = store.load_generator(self.path(stage, gid))
        return self._cache[key]

    def detector(self, name: str = "baseline") -> Detector:
        key = ("det", name)
        if key not in self._cache:
            stem = self.path("train-det", "baseline") if name == "baseline" else self.path("omat", slug(name), "best")
            self._cache[key] = store.load_detector(stem)
        return self._cache[key]

    def standard_train(self) -> tuple[LabeledSet, LabeledSet]:
        real = store.load_arrays(self.path("gen-data", "real_train.omat"))["images"]
        fake = store.load_arrays(self.path("build-zoo", "fakes_train.omat"))["images"]
        return LabeledSet.real(real), LabeledSet.fake(fake, SEEN)

    def eval_sets(self) -> dict[str, LabeledSet]:
        real = LabeledSet.real(store.load_arrays(self.path("gen-data", "real_eval.omat"))["images"])
        fakes = store.load_arrays(self.path("build-zoo", "fakes_eval.omat"))
        return {gid: real.concat(LabeledSet.fake(fakes[gid], gid)) for gid in self.generator_ids()}

    def x_adv(self) -> LabeledSet:
        return LabeledSet.adversarial(store.load_arrays(self.path("harvest", "x_adv.omat"))["images"])

    def attack_cfg(self, **kw) -> LatentAttackConfig:
        a = self.cfg.attack
        return LatentAttackConfig(a.max_steps, a.learning_rate, a.success_threshold, **kw)

    def omat_cfg(self, strategy: str) -> OmatConfig:
        o = self.cfg.omat
        kind = parse_strategy(strategy)[0]
        return OmatConfig(
            strategy=strategy,
            epochs=o.epochs,
            weight_decay=o.weight_decay,
            learning_rate=getattr(o, f"lr_{kind}"),
            batch_size=getattr(o, f"batch_{kind}"),
            lambda_base=o.lambda_base,
            lambda_slope=o.lambda_slope,
            lambda_cap=o.lambda_cap,
            w_val=o.w_val,
            w_adv=o.w_adv,
            lora_dropout=o.lora_dropout,
            seed=self.cfg.seed("omat"),
        )

    def _class_fakes(self, gen: Generator, per_class: int, label: str) -> np.ndarray:
        n = self.cfg.data.n_classes
        z = Rng(self.cfg.seed(label)).normal((n * per_class, *gen.latent_shape))
        return sample_images(gen, z, np.repeat(np.arange(n), per_class))

    # -- stages ------------------------------------------------------------

    def stage_gen_data(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("gen-data")
        spec, data = self.spec(), self.cfg.data
        classes = range(spec.n_classes)
        xr, yr = real_images(spec, classes, data.train_per_class)
        xe, ye = real_images(spec, classes, data.eval_per_class, start=data.eval_start)
        store.save_arrays(d / "real_train.omat", {"images": xr, "classes": yr})
        store.save_arrays(d / "real_eval.omat", {"images": xe, "classes": ye})
        return self._finish("gen-data", t0, f"{len(xr)} real training images, {len(xe)} real evaluation images")

    def _zoo_train_cfg(self) -> DenoiserTrainConfig:
        z = self.cfg.zoo
        return DenoiserTrainConfig(steps=z.steps, batch_size=z.batch_size, learning_rate=z.learning_rate, per_class=z.per_class)

    def stage_train_gen(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("train-gen")
        gen = train_seen_generator(self.cfg.master_seed, self.spec(), self._zoo_train_cfg())
        store.save_generator(d / SEEN, gen)
        return self._finish("train-gen", t0, f"trained generator {SEEN!r}")

    def stage_build_zoo(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("build-zoo")
        seen = self.generator(SEEN)
        zoo = build_generator_zoo(self.cfg.master_seed, self.spec(), self._zoo_train_cfg(), seen=seen)
        for g in zoo[1:]:
            store.save_generator(d / g.generator_id, g)
        fakes = self._class_fakes(seen, self.cfg.zoo.fakes_per_class, "train-fakes")
        store.save_arrays(d / "fakes_train.omat", {"images": fakes})
        evals = {g.generator_id: self._class_fakes(g, self.cfg.data.eval_per_class, f"eval-fakes/{g.generator_id}") for g in zoo}
        store.save_arrays(d / "fakes_eval.omat", evals)
        return self._finish("build-zoo", t0, f"{len(zoo)} generators, {len(fakes)} seen-generator training fakes")

    def stage_train_det(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("train-det")
        c = self.cfg.detector
        tcfg = DetectorTrainConfig(
            archetype=c.archetype,
            widths=tuple(c.widths),
            epochs=c.epochs,
            learning_rate=c.learning_rate,
            weight_decay=c.weight_decay,
            batch_size=c.batch_size,
            seed=self.cfg.seed("detector"),
            filter_smoothing=c.filter_smoothing,
        )
        real, fake = self.standard_train()
        det, history = train_detector(real, fake, tcfg)
        store.save_detector(d / "baseline", det)
        store.write_csv(d / "history.csv", [vars(h) for h in history])
        rep = evaluate(det, self.eval_sets())
        write_eval(d / "eval", rep)
        return self._finish(
            "train-det", t0, f"baseline val_acc={history[-1].val_acc:.4f}, seen acc={rep.sets[SEEN].acc:.4f}"
        )

    def stage_attack(self) -> str:
        """Latent attack on fresh seeds ``0..seeds-1`` of one class against the baseline."""
        t0 = time.perf_counter()
        d = self._begin("attack")
        a = self.cfg.attack
        gen, det = self.generator(SEEN), self.detector()
        jobs = [(a.target_class, self.attack_cfg(seed=s)) for s in range(a.seeds)]
        outcomes = run_attacks(gen, det, jobs, self.cfg.study.threads)
        write_outcomes(d, outcomes)
        write_histogram(d / "step_histogram.csv", step_histogram(outcomes, a.max_steps, a.histogram_bin))
        z0 = Rng(self.cfg.seed("attack/clean")).normal((a.seeds, *gen.latent_shape))
        clean = predict_batched(det, sample_images(gen, z0, a.target_class))
        wins = sum(o.success for o in outcomes)
        summary = {
            "class": a.target_class,
            "seeds": a.seeds,
            "successes": wins,
            "success_rate": wins / a.seeds,
            "max_steps": a.max_steps,
            "mean_steps": float(np.mean([o.steps_used for o in outcomes if o.success])) if wins else None,
            "step0_fake_rate": float(np.mean([o.logits[0] >= 0.0 for o in outcomes])),
            "clean_fake_rate": float(np.mean(clean >= 0.0)),
        }
        store.write_json(d / "summary.json", summary)
        return self._finish("attack", t0, f"{wins}/{a.seeds} seeds succeeded within K={a.max_steps}")

    def stage_harvest(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("harvest")
        h = self.cfg.harvest
        gen, det = self.generator(SEEN), self.detector()
        adv = run_harvest(
            gen, det, range(self.cfg.data.n_classes), h.per_class, self.attack_cfg(seed=0), h.budget_factor, self.cfg.study.threads
        )
        store.save_arrays(d / "x_adv.omat", {"images": adv.data.images, "latents": adv.latents})
        store.write_csv(d / "manifest.csv", [vars(m) for m in adv.manifest], ["cls", "seed", "steps", "logit_final"])
        write_histogram(d / "step_histogram.csv", step_histogram(adv.outcomes, self.cfg.attack.max_steps, self.cfg.attack.histogram_bin))
        return self._finish("harvest", t0, f"{len(adv.data)} adversarial examples from {len(adv.attempts)} attempts")

    def stage_omat(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("omat")
        base = self.detector()
        real, fake = self.standard_train()
        std, x_adv = real.concat(fake), self.x_adv()
        lines = []
        for s in self.cfg.omat.strategies:
            ocfg = self.omat_cfg(s)
            res = omat_train(base, std, x_adv, ocfg, val_salt=self.cfg.seed("omat/val"))
            sd = d / slug(s)
            sd.mkdir(exist_ok=True)
            store.write_csv(sd / "history.csv", [vars(h) for h in res.history])
            store.save_detector(sd / "best", res.detector, {"strategy": s, "best_epoch": res.best_epoch, "omat_config": vars(ocfg)})
            lines.append(f"{s}@{res.best_epoch}")
        return self._finish("omat", t0, "best epochs " + ", ".join(lines))

    def stage_reattack(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("reattack")
        r = self.cfg.reattack
        gen = self.generator(SEEN)
        rows, hist = [], []
        for name in ("baseline", *r.strategies):
            det = self.detector(name)
            jobs = [
                (c, replace(self.attack_cfg(seed=r.seed_base + i), max_steps=r.max_steps))
                for c in range(self.cfg.data.n_classes)
                for i in range(r.seeds_per_class)
            ]
            outcomes = run_attacks(gen, det, jobs, self.cfg.study.threads)
            wins = [o.steps_used for o in outcomes if o.success]
            rows.append(
                {
                    "model": "base" if name == "baseline" else name,
                    "attempts": len(outcomes),
                    "successes": len(wins),
                    "success_pct": 100.0 * len(wins) / len(outcomes),
                    "avg_step": float(np.mean(wins)) if wins else None,
                    "max_steps": r.max_steps,
                }
            )
            hist += [
                {"model": rows[-1]["model"], "lo": lo, "hi": hi, "count": n}
                for lo, hi, n in step_histogram(outcomes, r.max_steps, self.cfg.attack.histogram_bin)
            ]
        store.write_json(d / "robustness.json", rows)
        store.write_csv(d / "robustness.csv", rows)
        store.write_csv(d / "step_histogram.csv", hist)
        return self._finish(
            "reattack", t0, "; ".join(f"{x['model']}: {x['success_pct']:.1f}% / {_fmt(x['avg_step'])} steps" for x in rows)
        )

    def stage_eval(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("eval")
        sets = self.eval_sets()
        base = evaluate(self.detector(), sets)
        reports = {"base": base}
        for s in self.cfg.omat.strategies:
            reports[s] = evaluate(self.detector(s), sets)
        rows = generalization_rows(reports, self.generator_ids())
        store.write_json(d / "generalization.json", {"rows": rows, "reports": {k: v.to_dict() for k, v in reports.items()}})
        store.write_csv(d / "generalization.csv", rows)
        best = max(rows[1:], key=lambda x: x["unseen_avg"])
        return self._finish(
            "eval", t0, f"unseen avg base {rows[0]['unseen_avg']:.4f}, best {best['model']} {best['unseen_avg']:.4f}"
        )

    def stage_ablate_pixel(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("ablate-pixel")
        rows = ablate_pixel(self, PIXEL_GRID)
        store.write_json(d / "pixel_ablation.json", rows)
        store.write_csv(d / "pixel_ablation.csv", rows)
        return self._finish("ablate-pixel", t0, f"{len(rows)} rows; latent unseen avg {rows[-1]['unseen_avg']:.4f}")

    def stage_export_latents(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("export-latents")
        outcomes = read_outcomes(self.path("attack"))
        n_rand, n_adv = export_latents(d / "latents.csv", outcomes)
        return self._finish("export-latents", t0, f"{n_rand} rand + {n_adv} adv latents")

    def stage_report(self) -> str:
        t0 = time.perf_counter()
        d = self._begin("report")
        tables = build_report(self)
        store.write_json(d / "tables.json", tables)
        store.write_csv(d / "tables.csv", flatten_tables(tables), ["table", "row", "column", "value"])
        timing = {s: store.read_json(self.path(s, "timing.json"))["seconds"] for s in STAGES[:-1] if self.path(s, "timing.json").is_file()}
        store.write_json(self.out / "timing.json", timing)
        return self._finish("report", t0, f"tables.json + tables.csv, config {tables['config_digest'][:12]}")


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.1f}"


# ---------------------------------------------------------------------------
# artifact helpers


def write_eval(stem: Path, rep: EvalReport) -> None:
    store.write_json(Path(stem).with_suffix(".json"), rep.to_dict())
    rows = [{"set": k, **vars(m)} for k, m in rep.sets.items()]
    store.write_csv(Path(stem).with_suffix(".csv"), rows, ["set", "acc", "fake_acc", "real_acc", "n_fake", "n_real"])


def write_histogram(path: Path, bins) -> None:
    store.write_csv(path, [{"lo": lo, "hi": hi, "count": n} for lo, hi, n in bins])


def write_outcomes(d: Path, outcomes: list[AttackOutcome]) -> None:
    rows = [
        {"seed": o.seed, "cls": o.cls, "success": int(o.success), "steps": o.steps_used, "logit_initial": o.logits[0], "logit_final": o.final_logit}
        for o in outcomes
    ]
    store.write_csv(d / "outcomes.csv", rows)
    arrays = {"z_init": np.stack([o.z_init for o in outcomes])}
    adv = [o.z_adv for o in outcomes if o.success]
    if adv:
        arrays["z_adv"] = np.stack(adv)
    store.save_arrays(d / "latents.omat", arrays)


def read_outcomes(d: Path) -> list[AttackOutcome]:
    rows = store.read_csv(Path(d) / "outcomes.csv")
    arrays = store.load_arrays(Path(d) / "latents.omat")
    z_adv = iter(arrays.get("z_adv", []))
    out = []
    for r, z0 in zip(rows, arrays["z_init"]):
        ok = r["success"] == "1"
        out.append(
            AttackOutcome(
                int(r["seed"]), int(r["cls"]), ok, int(r["steps"]), z0, next(z_adv) if ok else None,
                np.zeros(0), [float(r["logit_initial"]), float(r["logit_final"])],
            )
        )
    return out


def export_latents(path: Path, outcomes: list[AttackOutcome]) -> tuple[int, int]:
    """CSV rows ``kind, class, seed, z0..z{n-1}``: every initial latent (rand), then every success (adv)."""
    if not any(o.success for o in outcomes):
        raise ValueError("export_latents needs at least one successful attack")
    width = int(np.prod(outcomes[0].z_init.shape))
    cols = ["kind", "class", "seed"] + [f"z{i}" for i in range(width)]
    rows = []
    for kind, pick in (("rand", lambda o: o.z_init), ("adv", lambda o: o.z_adv)):
        for o in outcomes:
            z = pick(o)
            if z is None:
                continue
            rows.append({"kind": kind, "class": o.cls, "seed": o.seed, **{f"z{i}": v for i, v in enumerate(np.ravel(z))}})
    store.write_csv(path, rows, cols)
    return len(outcomes), sum(o.success for o in outcomes)


def import_latents(path: Path, latent_shape=(1, 4, 4)) -> list[dict]:
    """Inverse of :func:`export_latents`: dicts with kind, class, seed, and the latent array."""
    out = []
    for r in store.read_csv(path):
        z = np.array([float(r[k]) for k in r if k.startswith("z")]).reshape(latent_shape)
        out.append({"kind": r["kind"], "class": int(r["class"]), "seed": int(r["seed"]), "z": z})
    return out


def unseen_average(rep: EvalReport) -> float:
    return float(np.mean([m.acc for k, m in rep.sets.items() if k != SEEN]))


def generalization_rows(reports: dict[str, EvalReport], gids: list[str]) -> list[dict]:
    base = reports["base"]
    rows = []
    for name, rep in reports.items():
        row = {"model": name}
        for g in gids:
            row[g] = rep.sets[g].acc
            row[f"{g}_fake_acc"] = rep.sets[g].fake_acc
            row[f"{g}_real_acc"] = rep.sets[g].real_acc
            row[f"{g}_delta"] = rep.sets[g].acc - base.sets[g].acc
        row["avg"] = rep.avg
        row["unseen_avg"] = unseen_average(rep)
        row["avg_delta"] = rep.avg - base.avg
        row["unseen_avg_delta"] = row["unseen_avg"] - unseen_average(base)
        rows.append(row)
    return rows


def ablate_pixel(study: Study, grid=PIXEL_GRID) -> list[dict]:
    """Baseline row, one row per pixel attack config, then the latent-OMAT row.

    Each pixel set has the size of X_adv and is crafted from fresh standard
    fakes against the baseline; training uses the same OMAT config as the
    latent row (``[pixel] strategy``).
    """
    base = study.detector()
    sets = study.eval_sets()
    real, fake = study.standard_train()
    std, x_adv = real.concat(fake), study.x_adv()
    strategy = study.cfg.pixel.strategy
    ocfg = study.omat_cfg(strategy)
    gen = study.generator(SEEN)
    n = len(x_adv)
    classes = np.arange(n) % study.cfg.data.n_classes
    z = Rng(study.cfg.seed("pixel-source")).normal((n, *gen.latent_shape))
    src = sample_images(gen, z, classes)

    def row(attack, params, rep, fooled=None):
        return {
            "attack": attack,
            "params": params,
            "avg": rep.avg,
            "unseen_avg": unseen_average(rep),
            "seen_acc": rep.sets[SEEN].acc,
            "fooled_base": fooled,
        }

    rows = [row("baseline", "", evaluate(base, sets))]
    for pc in grid:
        xa = pixel_attack_batched(base, src, pc)
        fooled = float(np.mean(predict_batched(base, xa) < 0.0))
        res = omat_train(base, std, LabeledSet.adversarial(xa), ocfg, val_salt=study.cfg.seed("omat/val"))
        rows.append(row(pc.kind, _pixel_params(pc), evaluate(res.detector, sets), fooled))
    fooled = float(np.mean(predict_batched(base, x_adv.images) < 0.0))
    rows.append(row("latent", strategy, evaluate(study.detector(strategy), sets), fooled))
    return rows


def _pixel_params(pc: PixelAttackConfig) -> str:
    if pc.kind == "fgsm":
        return f"eps={pc.epsilon:g}"
    return f"eps={pc.epsilon:g};alpha={pc.step_size:g};T={pc.iterations}"


def build_report(study: Study) -> dict:
    cfg = study.cfg
    t1 = store.read_json(study.path("eval", "generalization.json"))["rows"]
    return {
        "experiment_id": f"omat-study-seed{cfg.master_seed}",
        "config_digest": cfg.digest(),
        "generators": study.generator_ids(),
        "generalization": t1,
        "pixel_ablation": store.read_json(study.path("ablate-pixel", "pixel_ablation.json")),
        "robustness": store.read_json(study.path("reattack", "robustness.json")),
        "attack": store.read_json(study.path("attack", "summary.json")),
        "step_histogram": [
            {k: int(v) for k, v in r.items()} for r in store.read_csv(study.path("attack", "step_histogram.csv"))
        ],
        "harvest": {
            "n_adv": len(store.read_csv(study.path("harvest", "manifest.csv"))),
            "mean_steps": float(np.mean([int(r["steps"]) for r in store.read_csv(study.path("harvest", "manifest.csv"))])),
        },
    }


def flatten_tables(tables: dict) -> list[dict]:
    rows = []
    for name in ("generalization", "pixel_ablation", "robustness"):
        for i, r in enumerate(tables[name]):
            label = r.get("model") or f"{r.get('attack')}{'(' + r['params'] + ')' if r.get('params') else ''}"
            for k, v in r.items():
                if k in ("model",):
                    continue
                rows.append({"table": name, "row": label, "column": k, "value": v})
    for r in tables["step_histogram"]:
        rows.append({"table": "steps", "row": f"{r['lo']}-{r['hi']}", "column": "count", "value": r["count"]})
    for k, v in tables["attack"].items():
        rows.append({"table": "attack", "row": "summary", "column": k, "value": v})
    return rows


def run_through(study: Study, target: str, start: str | None = None) -> list[str]:
    """Run stages from ``start`` (default: ``target`` alone) through ``target`` in pipeline order."""
    i_t = STAGES.index(target)
    i_s = i_t if start is None else STAGES.index(start)
    if i_s > i_t:
        raise ValueError(f"start stage {start!r} comes after {target!r}")
    return [study.run(s) for s in STAGES[i_s : i_t + 1]]
