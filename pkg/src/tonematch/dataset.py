"""Training-pair construction: rank operator outputs by TMQI, cache targets, augment crops."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hdrio import HdrFormatError, decode_pfm, encode_pfm, read_hdr
from .image import HdrImage, ImageError, NormalizationMode, luminance, normalize
from .tmo import TmoId, apply_tmo
from .tmqi import DEFAULT_CONSTANTS, TmqiConstants, TmqiReport, tmqi

log = logging.getLogger(__name__)

HDR_SUFFIXES = (".hdr", ".pic", ".rgbe", ".pfm")
RANK_HEADER = ["scene", "tmo", "S", "N", "Q", "is_target"]
MANIFEST_HEADER = ["scene", "path", "height", "width", "lum_min", "lum_max", "sha256", "target"]

# jitter geometry (resize h, resize w, crop side) per training scale
GEOMETRY = {"single": (700, 1100, 512), "multi": (1400, 2200, 1024)}


class DatasetError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# ranking


@dataclass
class RankEntry:
    tmo: TmoId
    report: TmqiReport | None = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.report is not None


@dataclass
class RankingRecord:
    scene: str
    entries: list
    target: TmoId
    outputs: dict = field(default_factory=dict, repr=False)

    def target_entry(self) -> RankEntry:
        return next(e for e in self.entries if e.tmo == self.target)

    def csv_rows(self) -> list:
        rows = []
        for e in self.entries:
            if e.ok:
                r = e.report
                rows.append([self.scene, e.tmo.value, f"{r.structural:.10f}", f"{r.naturalness:.10f}",
                             f"{r.score:.10f}", int(e.tmo == self.target)])
            else:
                rows.append([self.scene, e.tmo.value, "", "", "", 0])
        return rows


def rank_scene(hdr: HdrImage | np.ndarray, ops, scene: str = "", keep_outputs: bool = False,
               constants: TmqiConstants = DEFAULT_CONSTANTS) -> RankingRecord:
    """Tone-map with every operator (default parameters), score each output, pick the best.

    Operator failures are recorded on their entry; ties go to the operator
    declared first in ``TmoId``.
    """
    ops = [TmoId.parse(o) for o in ops]
    if not ops:
        raise ValueError("rank_scene needs at least one operator")
    lum = luminance(hdr) if isinstance(hdr, HdrImage) else np.asarray(hdr, dtype=np.float32)
    entries, outputs = [], {}
    for op in ops:
        try:
            out = apply_tmo(op, None, lum)
            entries.append(RankEntry(op, tmqi(lum, out, constants)))
            if keep_outputs:
                outputs[op] = out
        except (ArithmeticError, ValueError) as exc:
            log.warning("%s: operator %s failed: %s", scene or "<scene>", op.value, exc)
            entries.append(RankEntry(op, None, f"{type(exc).__name__}: {exc}"))
    ok = [e for e in entries if e.ok]
    if not ok:
        raise DatasetError(f"{scene or '<scene>'}: every operator failed: "
                           + "; ".join(f"{e.tmo.value}: {e.error}" for e in entries))
    order = list(TmoId)
    best = max(ok, key=lambda e: (e.report.score, -order.index(e.tmo)))
    return RankingRecord(scene, entries, best.tmo, outputs)


# --------------------------------------------------------------------------
# pairs and augmentation


@dataclass(frozen=True)
class TrainingPair:
    x: np.ndarray
    y: np.ndarray
    scene: str = ""
    tmo: str = ""

    def __post_init__(self):
        if self.x.shape != self.y.shape or self.x.ndim != 2:
            raise ValueError(f"pair images must be equal 2-D shapes, got {self.x.shape} and {self.y.shape}")


@dataclass(frozen=True)
class AugmentSpec:
    resize_to: tuple
    crop_to: tuple
    flip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.crop_to[0] > self.resize_to[0] or self.crop_to[1] > self.resize_to[1]:
            raise ValueError(f"crop {self.crop_to} does not fit in resize {self.resize_to}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if min(self.crop_to) < 1:
            raise ValueError("crop size must be positive")

    @classmethod
    def for_scale(cls, scale: str, divisor: int = 1, flip_prob: float = 0.5, seed: int = 0) -> "AugmentSpec":
        rh, rw, c = GEOMETRY[scale]
        d = max(1, int(divisor))
        return cls((rh // d, rw // d), (c // d, c // d), flip_prob, seed)


def _linear_weights(n_in: int, n_out: int):
    # half-pixel centres, edge samples clamped
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(img: np.ndarray, size) -> np.ndarray:
    h, w = int(size[0]), int(size[1])
    a = np.asarray(img, dtype=np.float64)
    lo, hi, t = _linear_weights(a.shape[0], h)
    a = a[lo] * (1 - t)[:, None] + a[hi] * t[:, None]
    lo, hi, t = _linear_weights(a.shape[1], w)
    a = a[:, lo] * (1 - t) + a[:, hi] * t
    return a.astype(np.float32)


def augment(pair: TrainingPair, spec: AugmentSpec, rng: np.random.Generator) -> TrainingPair:
    """Resize both images, crop them at one shared random offset, flip them together."""
    x = resize_bilinear(pair.x, spec.resize_to)
    y = resize_bilinear(pair.y, spec.resize_to)
    ch, cw = spec.crop_to
    top = int(rng.integers(0, spec.resize_to[0] - ch + 1))
    left = int(rng.integers(0, spec.resize_to[1] - cw + 1))
    x = x[top:top + ch, left:left + cw]
    y = y[top:top + ch, left:left + cw]
    if rng.random() < spec.flip_prob:
        x, y = x[:, ::-1], y[:, ::-1]
    return TrainingPair(np.ascontiguousarray(x), np.ascontiguousarray(y), pair.scene, pair.tmo)


def make_pair(hdr: HdrImage, target_lum: np.ndarray, scene: str = "", tmo: str = "",
              mode: NormalizationMode | None = None) -> TrainingPair:
    x = normalize(luminance(hdr), mode)
    return TrainingPair(x, np.asarray(target_lum, dtype=np.float32), scene, tmo)


# --------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class SceneEntry:
    scene: str
    path: str
    height: int
    width: int
    lum_min: float
    lum_max: float
    sha256: str


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def dataset_manifest(directory) -> tuple[list, list]:
    """Scan a directory for HDR files in lexicographic order.

    Returns ``(entries, diagnostics)``; unreadable files appear only as a
    diagnostic string naming the file and the cause.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory}: not a directory")
    entries, diagnostics = [], []
    for path in sorted(p for p in directory.iterdir() if p.suffix.lower() in HDR_SUFFIXES and p.is_file()):
        try:
            img = read_hdr(path)
            lum = luminance(img)
        except (HdrFormatError, ImageError, OSError, ValueError) as exc:
            diagnostics.append(str(exc) if str(path) in str(exc) else f"{path}: {exc}")
            continue
        entries.append(SceneEntry(path.stem, str(path.resolve()), img.height, img.width,
                                  float(lum.min()), float(lum.max()), _digest(path)))
    return entries, diagnostics


# --------------------------------------------------------------------------
# on-disk cache


def _csv_text(rows, header, seed=None) -> str:
    buf = io.StringIO()
    if seed is not None:
        buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _rank_job(args):
    entry, ops, constants = args
    return rank_scene(read_hdr(entry.path), ops, entry.scene, True, constants)


def _cached_manifest(cache: Path) -> dict:
    path = cache / "manifest.csv"
    if not path.exists():
        return {}
    return {row["scene"]: row for row in read_csv_rows(path)}


def _is_fresh(entry: SceneEntry, cached: dict, cache: Path) -> bool:
    row = cached.get(entry.scene)
    return (row is not None and row["sha256"] == entry.sha256
            and (cache / f"{entry.scene}.target.pfm").exists() and (cache / f"{entry.scene}.rank.csv").exists())


def rank_all(entries, ops, jobs: int = 1, constants: TmqiConstants = DEFAULT_CONSTANTS) -> list:
    """Rank every scene, fanning out over a process pool; results keep input order."""
    work = [(e, ops, constants) for e in entries]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_rank_job, work))
    return [_rank_job(w) for w in work]


def build_dataset(in_dir, cache_dir, ops=None, jobs: int = 1, scale_div: int = 1, seed: int = 0,
                  constants: TmqiConstants = DEFAULT_CONSTANTS) -> dict:
    """Rank every scene and cache ``<scene>.target.pfm`` and ``<scene>.rank.csv``.

    Scenes whose source content hash matches the cached manifest are not
    re-ranked. Also writes ``manifest.csv`` and ``dataset.cfg`` (jitter
    geometry divided by ``scale_div``). Returns a summary dict.
    """
    ops = [TmoId.parse(o) for o in (ops or list(TmoId))]
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    entries, diagnostics = dataset_manifest(in_dir)
    ranking = f"{'+'.join(o.value for o in ops)}/{constants.hdr_scaling}"
    # a different operator set or metric configuration invalidates every cached target
    cached = _cached_manifest(cache) if read_dataset_cfg(cache).get("ranking") == ranking else {}
    stale = [e for e in entries if not _is_fresh(e, cached, cache)]
    targets = {e.scene: cached[e.scene]["target"] for e in entries if e not in stale}
    failed = []
    for entry, record in zip(stale, _safe_rank(stale, ops, jobs, failed, constants)):
        if record is None:
            continue
        target = record.outputs[record.target]
        (cache / f"{entry.scene}.target.pfm").write_bytes(encode_pfm(target[:, :, None]))
        (cache / f"{entry.scene}.rank.csv").write_text(_csv_text(record.csv_rows(), RANK_HEADER, seed))
        targets[entry.scene] = record.target.value
    diagnostics.extend(failed)
    kept = [e for e in entries if e.scene in targets]
    rows = [[e.scene, e.path, e.height, e.width, f"{e.lum_min:.9g}", f"{e.lum_max:.9g}", e.sha256,
             targets[e.scene]] for e in kept]
    (cache / "manifest.csv").write_text(_csv_text(rows, MANIFEST_HEADER, seed))
    cfg = [f"# seed={seed}", f"ranking={ranking}", f"scale_div={scale_div}"]
    for scale, (rh, rw, c) in GEOMETRY.items():
        d = max(1, scale_div)
        cfg += [f"{scale}_resize_h={rh // d}", f"{scale}_resize_w={rw // d}", f"{scale}_crop={c // d}"]
    (cache / "dataset.cfg").write_text("\n".join(cfg) + "\n")
    for d in diagnostics:
        log.warning("%s", d)
    return {"scenes": len(kept), "ranked": len(stale) - len(failed), "reused": len(kept) - (len(stale) - len(failed)),
            "diagnostics": diagnostics}


def _safe_rank(stale, ops, jobs, failed, constants):
    try:
        return rank_all(stale, ops, jobs, constants)
    except DatasetError:
        # fall back to one-by-one so a single all-failing scene does not sink the batch
        out = []
        for e in stale:
            try:
                out.append(_rank_job((e, ops, constants)))
            except DatasetError as exc:
                failed.append(str(exc))
                out.append(None)
        return out


def read_dataset_cfg(cache_dir) -> dict:
    path = Path(cache_dir) / "dataset.cfg"
    out = {}
    if path.exists():
        for line in path.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if "=" in line:
                k, v = (t.strip() for t in line.split("=", 1))
                out[k] = int(v) if v.lstrip("-").isdigit() else v
    return out


def load_pairs(cache_dir, mode: NormalizationMode | None = None) -> list:
    """Training pairs for every scene in a built cache, in manifest order."""
    cache = Path(cache_dir)
    manifest = cache / "manifest.csv"
    if not manifest.exists():
        raise DatasetError(f"{manifest}: missing; run build-dataset first")
    pairs = []
    for row in read_csv_rows(manifest):
        hdr = read_hdr(row["path"])
        target = decode_pfm((cache / f"{row['scene']}.target.pfm").read_bytes())[:, :, 0]
        pairs.append(make_pair(hdr, target, row["scene"], row["target"], mode))
    return pairs


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("TONEMATCH_JOBS", "1")))
    except ValueError:
        return 1
