"""Manifest-driven corpus construction, estimator evaluation, error
statistics and real-time-factor measurement."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EstimationError, RevtimeError
from .estimator import EstimatorConfig, MappingModel, estimate_t60
from .signal_core import (
    AudioBuffer,
    active_speech_level,
    convolve,
    load_wav,
    noise_gain_for_snr,
    save_wav,
)
from .room_acoustics import schroeder_edc, t60_from_edc

NOISE_TYPES = ("ambient", "fan", "babble", "synthetic_white", "synthetic_babble", "none")
MANIFEST_FIELDS = ("speech", "rir", "noise", "snr_db", "noise_type")

# Every mix is scaled to this peak before the 16-bit write (gain recorded in
# the sidecar). Convolution outputs are small, so writing them unscaled would
# park quantization noise near the signal's own noise floor and estimates
# from files would drift from estimates computed in memory.
PEAK_TARGET = 0.89


@dataclass(frozen=True)
class CorpusItem:
    """One noisy reverberant utterance with its ground-truth label."""

    item_id: str
    speech_path: str
    rir_path: str
    noise_path: str
    snr_db: float
    noise_type: str
    t60_true: float
    mix_path: str

    def __post_init__(self):
        if self.t60_true <= 0:
            raise RevtimeError("t60_true must be positive")
        if math.isnan(self.snr_db):
            raise RevtimeError("snr_db must not be NaN")
        if self.noise_type not in NOISE_TYPES:
            raise RevtimeError(f"unknown noise_type {self.noise_type!r}")

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "speech_path": self.speech_path,
            "rir_path": self.rir_path,
            "noise_path": self.noise_path,
            "snr_db": self.snr_db if math.isfinite(self.snr_db) else "inf",
            "noise_type": self.noise_type,
            "t60_true": self.t60_true,
            "mix_path": self.mix_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusItem":
        snr = d["snr_db"]
        return cls(
            item_id=d["item_id"],
            speech_path=d["speech_path"],
            rir_path=d["rir_path"],
            noise_path=d["noise_path"],
            snr_db=math.inf if snr == "inf" else float(snr),
            noise_type=d["noise_type"],
            t60_true=float(d["t60_true"]),
            mix_path=d["mix_path"],
        )


@dataclass(frozen=True)
class EvalRecord:
    """Outcome of one estimate: error, timing, and grouping keys."""

    item_id: str
    variant: str
    noise_type: str
    snr_db: float
    t60_true: float
    t60_est: float
    error: float
    cpu_time: float
    audio_duration: float
    flags: str = ""

    def __post_init__(self):
        if self.audio_duration <= 0:
            raise RevtimeError("audio_duration must be positive")
        if self.cpu_time < 0:
            raise RevtimeError("cpu_time must be non-negative")


@dataclass(frozen=True)
class BoxStats:
    """Five-number box summary with 1.5*IQR whiskers."""

    median: float
    q25: float
    q75: float
    whisker_lo: float
    whisker_hi: float
    n: int
    n_outliers: int

    def __post_init__(self):
        if not (self.q25 <= self.median <= self.q75):
            raise RevtimeError("quartiles must bracket the median")


def _parse_snr(text: str) -> float:
    text = text.strip().lower()
    if text in ("inf", "+inf", "clean"):
        return math.inf
    return float(text)


def read_manifest(path):
    """Parse a corpus manifest CSV. Paths are resolved relative to it."""
    base = Path(path).parent
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise RevtimeError(f"manifest missing columns: {sorted(missing)}")
        for raw in reader:
            snr = _parse_snr(raw["snr_db"])
            noise = raw["noise"].strip()
            if not math.isfinite(snr) and not noise:
                noise_path = ""
            elif not noise:
                raise RevtimeError("manifest row with finite SNR needs a noise path")
            else:
                noise_path = str(base / noise)
            rows.append({
                "speech": str(base / raw["speech"].strip()),
                "rir": str(base / raw["rir"].strip()),
                "noise": noise_path,
                "snr_db": snr,
                "noise_type": raw["noise_type"].strip(),
            })
    if not rows:
        raise RevtimeError(f"manifest {path} has no rows")
    return rows


def build_corpus(manifest, out_dir) -> list:
    """Realize every manifest row: convolve speech with its impulse
    response, mix noise at the target SNR, and write the mix plus a JSON
    sidecar carrying the Schroeder-measured true T60.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = read_manifest(manifest)
    t60_cache = {}
    items = []
    for idx, row in enumerate(rows):
        speech = load_wav(row["speech"])
        rir = load_wav(row["rir"])
        if rir.sample_rate != speech.sample_rate:
            raise RevtimeError(
                f"sample-rate mismatch between {row['speech']} and {row['rir']}"
            )
        if row["rir"] not in t60_cache:
            t60_cache[row["rir"]] = t60_from_edc(
                schroeder_edc(rir), rir.sample_rate
            )
        t60_true = t60_cache[row["rir"]]
        reverberant = convolve(speech, rir)
        if math.isfinite(row["snr_db"]):
            noise = load_wav(row["noise"])
            gain = noise_gain_for_snr(reverberant, noise, row["snr_db"])
            mix = reverberant.samples + gain * noise.samples[:len(reverberant)]
        else:
            gain = 0.0
            mix = reverberant.samples
        peak = float(np.max(np.abs(mix)))
        if peak == 0.0:
            raise RevtimeError(f"row {idx}: mix is silent")
        output_gain = PEAK_TARGET / peak
        mix_buf = AudioBuffer(output_gain * mix, speech.sample_rate)

        item_id = f"item{idx:04d}"
        mix_path = out / f"{item_id}.wav"
        save_wav(mix_buf, mix_path)
        item = CorpusItem(
            item_id=item_id,
            speech_path=row["speech"],
            rir_path=row["rir"],
            noise_path=row["noise"],
            snr_db=row["snr_db"],
            noise_type=row["noise_type"],
            t60_true=t60_true,
            mix_path=str(mix_path),
        )
        sidecar = item.to_dict()
        sidecar.update({
            "speech_level_db": active_speech_level(reverberant),
            "noise_gain": gain,
            "output_gain": output_gain,
        })
        with open(out / f"{item_id}.json", "w") as fh:
            json.dump(sidecar, fh, indent=2)
            fh.write("\n")
        items.append(item)
    with open(out / "items.json", "w") as fh:
        json.dump([it.to_dict() for it in items], fh, indent=2)
        fh.write("\n")
    return items


def load_items(corpus_dir) -> list:
    index = Path(corpus_dir) / "items.json"
    if not index.exists():
        raise RevtimeError(f"no items.json in {corpus_dir}")
    with open(index) as fh:
        return [CorpusItem.from_dict(d) for d in json.load(fh)]


def _eval_one(item: CorpusItem, model: MappingModel, cfg: EstimatorConfig):
    buf = load_wav(item.mix_path)
    # perf_counter, not process_time: per-item estimates run in about a
    # millisecond while CPU clocks on many hosts tick at 10 ms. In the
    # sequential reference mode the wall time of this compute-only region
    # is the CPU time. The call is timed twice and the minimum kept, which
    # rejects preemption spikes on busy machines; estimates are
    # deterministic so the repeat returns the identical result.
    start = time.perf_counter()
    result = estimate_t60(buf, model, cfg)
    mid = time.perf_counter()
    estimate_t60(buf, model, cfg)
    cpu = min(mid - start, time.perf_counter() - mid)
    return EvalRecord(
        item_id=item.item_id,
        variant=model.variant_tag,
        noise_type=item.noise_type,
        snr_db=item.snr_db,
        t60_true=item.t60_true,
        t60_est=result.t60,
        error=result.t60 - item.t60_true,
        cpu_time=cpu,
        audio_duration=buf.duration,
        flags="|".join(result.flags),
    )


def _eval_worker(args):
    item, model, cfg = args
    try:
        return ("ok", _eval_one(item, model, cfg))
    except EstimationError as exc:
        return ("err", (item.item_id, str(exc)))


def _paired_worker(args):
    idx, item, models = args
    # Rotate model order per item so no variant always runs cold after the
    # file load; otherwise the comparison bakes in a cache-warmth bias.
    k = idx % len(models)
    out = []
    for model in models[k:] + models[:k]:
        out.append((model.variant_tag, _eval_worker((item, model, model.config))))
    return out


def run_eval(items, model: MappingModel, cfg: EstimatorConfig | None = None,
             jobs: int = 1):
    """Estimate every corpus item. Only the estimate call itself is timed.

    Returns (records, failures); failed items are (item_id, message) pairs.
    jobs=1 is the sequential reference mode whose per-item CPU times feed
    the real-time-factor measurement.
    """
    if cfg is None:
        cfg = model.config
    records, failures = [], []
    if jobs <= 1:
        for item in items:
            status, payload = _eval_worker((item, model, cfg))
            (records if status == "ok" else failures).append(payload)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            args = [(item, model, cfg) for item in items]
            for status, payload in pool.map(_eval_worker, args):
                (records if status == "ok" else failures).append(payload)
    return records, failures


def run_eval_paired(items, models, jobs: int = 1):
    """Evaluate several models over the same items, back to back per item.

    Timing each variant on the same item under the same conditions makes
    the aggregate CPU times directly comparable; the variants' real-time
    factors come out of one pass instead of widely separated runs. Returns
    {variant_tag: (records, failures)}.
    """
    models = list(models)
    tags = [m.variant_tag for m in models]
    if len(set(tags)) != len(tags):
        raise RevtimeError("paired evaluation needs distinct variant tags")
    results = {tag: ([], []) for tag in tags}
    args = [(idx, item, models) for idx, item in enumerate(items)]
    if jobs <= 1:
        batches = map(_paired_worker, args)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(_paired_worker, args))
    for batch in batches:
        for tag, (status, payload) in batch:
            records, failures = results[tag]
            (records if status == "ok" else failures).append(payload)
    return results


def box_stats(records, group_by=("noise_type", "snr_db"), value: str = "error"):
    """Box summaries of one record field per group.

    Quartiles use linear interpolation; whiskers reach the most extreme data
    within 1.5*IQR of the box and everything beyond counts as an outlier.
    """
    if not records:
        raise RevtimeError("no records to summarize")
    groups = {}
    for rec in records:
        key = tuple(getattr(rec, k) for k in group_by)
        groups.setdefault(key, []).append(float(getattr(rec, value)))
    out = {}
    for key in sorted(groups):
        data = np.asarray(groups[key])
        q25, med, q75 = np.percentile(data, [25.0, 50.0, 75.0])
        iqr = q75 - q25
        inside = data[(data >= q25 - 1.5 * iqr) & (data <= q75 + 1.5 * iqr)]
        out[key] = BoxStats(
            median=float(med),
            q25=float(q25),
            q75=float(q75),
            whisker_lo=float(inside.min()),
            whisker_hi=float(inside.max()),
            n=int(data.size),
            n_outliers=int(data.size - inside.size),
        )
    return out


def rtf(records) -> float:
    """Real-time factor: total CPU time over total audio duration."""
    if not records:
        raise RevtimeError("no records to compute an RTF from")
    total_audio = sum(r.audio_duration for r in records)
    if total_audio <= 0:
        raise RevtimeError("zero total audio duration")
    return sum(r.cpu_time for r in records) / total_audio


RECORD_COLUMNS = ("item_id", "variant", "noise_type", "snr_db", "t60_true",
                  "t60_est", "error", "cpu_time", "audio_duration", "flags")


def write_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow([
                r.item_id, r.variant, r.noise_type, repr(r.snr_db),
                repr(r.t60_true), repr(r.t60_est), repr(r.error),
                repr(r.cpu_time), repr(r.audio_duration), r.flags,
            ])


def read_records(path) -> list:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(EvalRecord(
                item_id=row["item_id"],
                variant=row["variant"],
                noise_type=row["noise_type"],
                snr_db=float(row["snr_db"]),
                t60_true=float(row["t60_true"]),
                t60_est=float(row["t60_est"]),
                error=float(row["error"]),
                cpu_time=float(row["cpu_time"]),
                audio_duration=float(row["audio_duration"]),
                flags=row["flags"],
            ))
    return records


def write_report(stats_by_variant: dict, group_names, out_csv, out_dat) -> None:
    """Write grouped box statistics as CSV plus a gnuplot-ready data file.

    The data file has one row per variant within each group so variants sit
    side by side on the x axis, grouped by SNR.
    """
    rows = []
    for variant in sorted(stats_by_variant):
        for key, stats in stats_by_variant[variant].items():
            rows.append((key, variant, stats))
    rows.sort(key=lambda r: (r[0], r[1]))

    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", *group_names, "median", "q25", "q75",
                         "whisker_lo", "whisker_hi", "n", "n_outliers"])
        for key, variant, s in rows:
            writer.writerow([
                variant, *[repr(k) if isinstance(k, float) else k for k in key],
                repr(s.median), repr(s.q25), repr(s.q75),
                repr(s.whisker_lo), repr(s.whisker_hi), s.n, s.n_outliers,
            ])

    with open(out_dat, "w") as fh:
        fh.write("# box-and-whisker data, variants side by side within each group\n")
        fh.write(f"# columns: idx variant {' '.join(group_names)} "
                 "whisker_lo q25 median q75 whisker_hi n_outliers\n")
        fh.write("# gnuplot: plot 'boxplot.dat' u 1:5:4:8:7:xticlabels(2) "
                 "w candlesticks whiskerbars, '' u 1:6:6:6:6 w candlesticks\n")
        for idx, (key, variant, s) in enumerate(rows):
            keytxt = " ".join(repr(k) if isinstance(k, float) else str(k) for k in key)
            fh.write(f"{idx} {variant} {keytxt} {s.whisker_lo!r} {s.q25!r} "
                     f"{s.median!r} {s.q75!r} {s.whisker_hi!r} {s.n_outliers}\n")
