"""File-level orchestration behind the CLI: track a dataset, evaluate results.

Results layout (one directory)::

    <seq>.txt    predicted "x,y,w,h" per frame, frame 1 = the initial box
    times.txt    "seq,frame,seconds" per frame (wall clock, not deterministic)

Evaluation writes ``report.txt`` (key=value, deterministic), the two curves as
CSV, and ``fps.txt`` kept apart from the report so reports stay comparable
byte for byte across runs.
"""
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from .config import read_kv, write_kv
from .data import (
    SyntheticSpec, frame_paths, generate_corpus, list_sequences, read_boxes, read_frame, read_init_box,
    write_boxes,
)
from .metrics import PRECISION_THRESHOLDS, SUCCESS_THRESHOLDS, SequenceResult, evaluate_results
from .model import ModelConfig
from .tracker import TrackerHyper, init_track, track_frame
from .train import TrainConfig, train

log = logging.getLogger(__name__)

TIMES_FILE = "times.txt"
MODEL_PREFIX = "model."

# file names inside a pipeline config directory
PIPELINE_FILES = ("train_corpus.txt", "test_corpus.txt", "train.txt", "track.txt")


class HarnessError(RuntimeError):
    """A file-level contract was violated (missing, empty or mismatched inputs)."""


def track_sequence(model, seq_dir, hyper):
    """Track one sequence from its first ground-truth box.

    Only the first line of ``groundtruth.txt`` is read. Returns the predicted
    boxes (frame 1 included) and per-frame seconds.
    """
    paths = frame_paths(seq_dir)
    t0 = time.perf_counter()
    init = read_init_box(seq_dir)
    state = init_track(model, read_frame(paths[0]), init, hyper)
    boxes, times = [init], [time.perf_counter() - t0]
    for path in paths[1:]:
        frame = read_frame(path)
        t0 = time.perf_counter()
        box, state = track_frame(state, frame)
        times.append(time.perf_counter() - t0)
        boxes.append(box)
    return boxes, times


def run_tracker(data_dir, model, hyper, out_dir):
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    names = list_sequences(data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in names:
        boxes, times = track_sequence(model, data_dir / name, hyper)
        write_boxes(out_dir / f"{name}.txt", boxes)
        rows.extend(f"{name},{i},{t:.6f}\n" for i, t in enumerate(times, start=1))
        log.info("tracked %s: %d frames", name, len(boxes))
    (out_dir / TIMES_FILE).write_text("".join(rows))
    return names


def read_times(path):
    """Per-frame tracking seconds, skipping each sequence's initialisation frame."""
    secs = []
    for line in Path(path).read_text().splitlines():
        parts = line.strip().split(",")
        if len(parts) == 3 and parts[1] != "1":
            secs.append(float(parts[2]))
    return secs


def load_results(results_dir, data_dir):
    results_dir, data_dir = Path(results_dir), Path(data_dir)
    if not results_dir.is_dir():
        raise HarnessError(f"results directory {results_dir} does not exist")
    found = {p.stem for p in results_dir.glob("*.txt") if p.name != TIMES_FILE}
    if not found:
        raise HarnessError(f"results directory {results_dir} holds no result files")
    expected = set(list_sequences(data_dir))
    missing, extra = sorted(expected - found), sorted(found - expected)
    if missing or extra:
        raise HarnessError(f"sequence ids differ between results and dataset: "
                           f"missing results for {missing}, unknown results {extra}")
    results = []
    for name in sorted(expected):
        pred = read_boxes(results_dir / f"{name}.txt")
        gt = read_boxes(data_dir / name / "groundtruth.txt")
        if len(pred) != len(gt):
            raise HarnessError(f"{name}: {len(pred)} predicted boxes for {len(gt)} frames")
        results.append(SequenceResult(name, list(zip(pred, gt))))
    return results


def evaluate(results_dir, data_dir, out_dir):
    results = load_results(results_dir, data_dir)
    fps = float("nan")
    times_path = Path(results_dir) / TIMES_FILE
    if times_path.exists():
        secs = read_times(times_path)
        if secs and sum(secs) > 0:
            fps = len(secs) / sum(secs)
    report = evaluate_results(results, fps=fps)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_kv(out_dir / "report.txt", report.to_kv())
    with open(out_dir / "success_curve.csv", "w") as fh:
        fh.write("threshold,success_rate\n")
        fh.writelines(f"{t:.2f},{v:.6f}\n" for t, v in zip(SUCCESS_THRESHOLDS, report.success_curve))
    with open(out_dir / "precision_curve.csv", "w") as fh:
        fh.write("pixels,precision\n")
        fh.writelines(f"{t:g},{v:.6f}\n" for t, v in zip(PRECISION_THRESHOLDS, report.precision_curve))
    (out_dir / "fps.txt").write_text(f"fps={fps:.3f}\n")
    return report


def split_train_config(path):
    """Training keys plus optional ``model.*`` architecture keys from one file."""
    kv = read_kv(path)
    model_kv = {"config." + k[len(MODEL_PREFIX):]: v for k, v in kv.items() if k.startswith(MODEL_PREFIX)}
    train_kv = {k: v for k, v in kv.items() if not k.startswith(MODEL_PREFIX)}
    return TrainConfig.from_mapping(train_kv, source=str(path)), ModelConfig.from_kv(model_kv)


@dataclass
class PipelineRun:
    report: object
    loss_rows: list
    work_dir: Path

    @property
    def loss_reduction(self):
        """1 - (mean total loss over the last 10 steps) / (step-0 total loss)."""
        first = self.loss_rows[0]["total"]
        tail = [r["total"] for r in self.loss_rows[-10:]]
        return 1.0 - (sum(tail) / len(tail)) / first


def run_pipeline(config_dir, work_dir, progress=None):
    """gen -> train -> track -> eval from the four files in ``config_dir``.

    Writes ``train_data/``, ``test_data/``, ``weights/``, ``results/`` and
    ``eval/`` under ``work_dir``.
    """
    config_dir, work_dir = Path(config_dir), Path(work_dir)
    missing = [n for n in PIPELINE_FILES if not (config_dir / n).is_file()]
    if missing:
        raise HarnessError(f"{config_dir}: missing pipeline config files {missing}")
    train_spec = SyntheticSpec.from_file(config_dir / "train_corpus.txt")
    test_spec = SyntheticSpec.from_file(config_dir / "test_corpus.txt")
    config, model_config = split_train_config(config_dir / "train.txt")
    hyper = TrackerHyper.from_file(config_dir / "track.txt")

    generate_corpus(train_spec, work_dir / "train_data")
    generate_corpus(test_spec, work_dir / "test_data")
    model, rows = train(work_dir / "train_data", config, out_dir=work_dir / "weights",
                        model_config=model_config, progress=progress)
    run_tracker(work_dir / "test_data", model, hyper, work_dir / "results")
    report = evaluate(work_dir / "results", work_dir / "test_data", work_dir / "eval")
    return PipelineRun(report, rows, work_dir)
