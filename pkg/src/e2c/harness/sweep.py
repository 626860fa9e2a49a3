"""Multi-seed sweeps with one resumable archive directory per seed."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import E2CError
from ..trainer.loop import METRICS_FILE, train

log = logging.getLogger(__name__)


@dataclass
class MetricsArchive:
    root: Path
    seed: int

    @property
    def metrics(self):
        return self.root / METRICS_FILE

    @property
    def manifest_path(self):
        return self.root / "manifest.json"

    def manifest(self):
        if not self.manifest_path.exists():
            return None
        return json.loads(self.manifest_path.read_text())

    def is_complete(self, cfg, iterations):
        m = self.manifest()
        return bool(m and m.get("complete") and m.get("config_hash") == cfg.config_hash
                    and m.get("iterations") == iterations and self.metrics.exists())


def seed_dir(out, seed):
    return Path(out) / f"seed_{seed}"


@dataclass
class SweepResult:
    archives: list = field(default_factory=list)
    ran: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    failed: dict = field(default_factory=dict)


def _run_seed(args):
    cfg, seed, out, iterations, record_wall_time = args
    train(cfg, seed, out, iterations, resume=True, record_wall_time=record_wall_time)
    return seed


def sweep(cfg, seeds=None, out=None, iterations=None, jobs=1, record_wall_time=False):
    """Train every seed into ``out/seed_<s>``; completed archives are skipped.

    Any existing manifest written by a different config aborts the sweep
    before anything is touched. A failing seed does not stop the others;
    failures are collected in the result.
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    if not seeds:
        raise E2CError("sweep needs at least one seed")
    out = cfg.resolved_output_dir(out)
    iterations = cfg.iterations if iterations is None else int(iterations)
    archives = [MetricsArchive(seed_dir(out, s), s) for s in seeds]
    for a in archives:
        m = a.manifest()
        if m is not None and m.get("config_hash") != cfg.config_hash:
            raise E2CError(f"{a.manifest_path}: written by a different config (hash {m.get('config_hash')}); "
                           "refusing to overwrite")
    res = SweepResult(archives=archives)
    todo = []
    for a in archives:
        if a.is_complete(cfg, iterations):
            res.skipped.append(a.seed)
        else:
            todo.append((cfg, a.seed, a.root, iterations, record_wall_time))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = {ex.submit(_run_seed, t): t[1] for t in todo}
            for fut, seed in futures.items():
                try:
                    fut.result()
                    res.ran.append(seed)
                except Exception as exc:  # keep going with the other seeds
                    res.failed[seed] = repr(exc)
    else:
        for t in todo:
            try:
                _run_seed(t)
                res.ran.append(t[1])
            except Exception as exc:
                log.error("seed %s failed: %r", t[1], exc)
                res.failed[t[1]] = repr(exc)
    return res
