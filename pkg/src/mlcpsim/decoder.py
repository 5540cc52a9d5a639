"""Runtime decoding and evaluation.

Per 20 ms tick the decoder computes the M+1 output values
``o = beta^T h`` from the (optionally normalized) hidden counts, then:

* type: ``s = argmax(o_1..o_M)`` (lowest index wins ties), classes 1..M;
* onset: ``G = 1`` iff the onset output strictly exceeds the threshold;
* tracking: ``G_track = 1`` iff at least ``lam`` of the last ``tau`` G bits
  are high and the refractory window from the previous detection (``Tr`` ms)
  has expired; each G_track rising edge re-arms the refractory timer;
* combined: ``F = G_track * s`` - the class label exactly when a tracked
  onset fires, else 0.

Evaluation scores movement type per trial by majority vote of the per-tick
class over the membership plateau, and onset detection by matching G_track
events against a tolerance window around the true onset (events outside it
count as false positives).  ``roc_sweep`` reuses the theta-independent
output streams to trace (TPR, FP/trial) across thresholds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .analog import ChipInstance, hidden_layer, normalize_rows
from .frontend import FrontendConfig, run_trial
from .spikeio import SpikeDataset, Trial
from .training import OutputWeights, TrapezoidParams

MODEL_FORMAT = "mlcpsim-model"
MODEL_VERSION = 1


@dataclass
class DecoderModel:
    """Everything needed to run the decoder: weights, thresholds, layout.

    ``beta`` is (L, M+1); columns 1..M drive the classifier and the last
    column the onset regressor.  ``chip_seed`` records which fabricated die
    the weights were trained against.
    """

    beta: np.ndarray
    support: np.ndarray
    m: int
    theta: float = 0.75
    lam: int = 6  # required high ticks in the tracking window
    tau: int = 10  # tracking window length, ticks
    tr_ms: float = 140.0  # refractory after a detection
    normalize: bool = True
    chip_seed: int = 0
    fmax_sel: int = 7
    frontend: FrontendConfig = None  # type: ignore[assignment]
    trap: TrapezoidParams = field(default_factory=TrapezoidParams)
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.support = np.asarray(self.support, dtype=bool)
        if self.beta.ndim != 2 or self.beta.shape[1] != self.m + 1:
            raise ValueError(f"beta must be (L, {self.m + 1}), got {self.beta.shape}")
        if not (1 <= self.lam <= self.tau):
            raise ValueError("need 1 <= lam <= tau")
        if self.tr_ms < 0:
            raise ValueError("tr_ms must be >= 0")
        if self.frontend is None:
            raise ValueError("model needs a frontend configuration")

    @classmethod
    def from_training(
        cls, weights: OutputWeights, m: int, frontend: FrontendConfig, **kwargs
    ) -> "DecoderModel":
        return cls(weights.beta, weights.support, m, frontend=frontend,
                   report=weights.report, **kwargs)


def save_model(model: DecoderModel, path: str | Path) -> None:
    """Write a decoder model to a versioned JSON file (byte-deterministic)."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "m": model.m,
        "theta": model.theta,
        "lam": model.lam,
        "tau": model.tau,
        "tr_ms": model.tr_ms,
        "normalize": model.normalize,
        "chip_seed": model.chip_seed,
        "fmax_sel": model.fmax_sel,
        "frontend": {
            "rows": model.frontend.rows,
            "s_ext": model.frontend.s_ext.tolist(),
            "sdl": model.frontend.sdl.tolist(),
            "t_s_ms": model.frontend.t_s_ms,
        },
        "trap": asdict(model.trap),
        "beta": model.beta.tolist(),
        "support": model.support.astype(int).tolist(),
        "report": model.report,
    }
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )


def load_model(path: str | Path) -> DecoderModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model file: {path}")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model file version {doc.get('version')}")
    fe = doc["frontend"]
    frontend = FrontendConfig(
        rows=fe["rows"], s_ext=np.array(fe["s_ext"]), sdl=np.array(fe["sdl"]),
        t_s_ms=fe["t_s_ms"],
    )
    return DecoderModel(
        beta=np.array(doc["beta"]),
        support=np.array(doc["support"], dtype=bool),
        m=doc["m"],
        theta=doc["theta"],
        lam=doc["lam"],
        tau=doc["tau"],
        tr_ms=doc["tr_ms"],
        normalize=doc["normalize"],
        chip_seed=doc["chip_seed"],
        fmax_sel=doc["fmax_sel"],
        frontend=frontend,
        trap=TrapezoidParams(**doc["trap"]),
        report=doc["report"],
    )


# ------------------------------------------------------------ per-tick ops

def classify_type(o: np.ndarray, m: int) -> int:
    """Predicted class 1..M: argmax over the type outputs, lowest index on ties."""
    return int(np.argmax(o[:m])) + 1


def onset_primary(o_onset: float, theta: float) -> int:
    """Primary onset bit: strictly above threshold."""
    return int(o_onset > theta)


class TrackingFsm:
    """Windowed-count onset tracker with refractory.

    Feeds on the per-tick G bit; emits G_track.  The bit goes high when at
    least ``lam`` of the last ``tau`` G bits (current included) are high and
    the tick is past the refractory deadline; each rising edge pushes the
    deadline ``tr_ms`` ahead, so detections can never crowd closer than that.
    """

    def __init__(self, lam: int, tau: int, tr_ms: float, t_s_ms: float):
        if not (1 <= lam <= tau):
            raise ValueError("need 1 <= lam <= tau")
        self.lam = lam
        self.tau = tau
        self.tr_ticks = tr_ms / t_s_ms
        self.reset()

    def reset(self) -> None:
        self.history = [0] * self.tau  # last tau G bits, newest last
        self.refractory_until = 0.0
        self.tick = 0
        self.prev_out = 0

    def step(self, g: int) -> int:
        self.history.pop(0)
        self.history.append(1 if g else 0)
        out = 1 if sum(self.history) >= self.lam and self.tick >= self.refractory_until else 0
        if out and not self.prev_out:
            self.refractory_until = self.tick + self.tr_ticks
        self.prev_out = out
        self.tick += 1
        return out


@dataclass
class DecodeResult:
    """Per-tick decoder outputs for one stream."""

    t_ms: np.ndarray  # end-of-window timestamps
    o: np.ndarray  # (T, M+1)
    s: np.ndarray  # predicted class per tick, 1..M
    g: np.ndarray
    g_track: np.ndarray
    f: np.ndarray

    def detections_ms(self) -> np.ndarray:
        """Timestamps of G_track rising edges."""
        rising = (self.g_track == 1) & (np.concatenate([[0], self.g_track[:-1]]) == 0)
        return self.t_ms[rising]


def decode_codes(codes: np.ndarray, model: DecoderModel, chip: ChipInstance,
                 noise_on: bool = False,
                 rng: np.random.Generator | None = None) -> DecodeResult:
    """Decode a (T, D) code stream: hidden layer, outputs, bits, tracking."""
    h = hidden_layer(codes, chip, noise_on=noise_on, rng=rng).astype(np.float64)
    if model.normalize:
        h = normalize_rows(h, codes)
    o = h @ model.beta
    n_ticks = codes.shape[0]
    t_ms = (np.arange(n_ticks) + 1) * model.frontend.t_s_ms
    s = np.argmax(o[:, : model.m], axis=1) + 1
    g = (o[:, model.m] > model.theta).astype(np.int64)
    fsm = TrackingFsm(model.lam, model.tau, model.tr_ms, model.frontend.t_s_ms)
    g_track = np.array([fsm.step(int(b)) for b in g], dtype=np.int64)
    f = g_track * s
    return DecodeResult(t_ms, o, s, g, g_track, f)


def decode_stream(trial: Trial, model: DecoderModel, chip: ChipInstance,
                  noise_on: bool = False,
                  rng: np.random.Generator | None = None) -> DecodeResult:
    """Decode one spike trial end to end."""
    codes = run_trial(model.frontend, trial)
    return decode_codes(codes, model, chip, noise_on=noise_on, rng=rng)


def write_stream_csv(path: str | Path, result: DecodeResult) -> None:
    """Stream output CSV: ``tick_ms,o_1..o_{M+1},s,G,G_track,F``."""
    n_out = result.o.shape[1]
    header = "tick_ms," + ",".join(f"o_{k}" for k in range(1, n_out + 1)) + ",s,G,G_track,F"
    lines = [header]
    for i in range(len(result.t_ms)):
        o_txt = ",".join(repr(float(v)) for v in result.o[i])
        lines.append(
            f"{result.t_ms[i]:g},{o_txt},{result.s[i]},{result.g[i]},"
            f"{result.g_track[i]},{result.f[i]}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    """Scores over a test set: type accuracy plus onset detection quality."""

    accuracy: float
    confusion: np.ndarray  # [true-1, predicted-1]
    tpr: float
    fp_per_trial: float
    latencies_ms: list
    n_trials: int
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "tpr": self.tpr,
            "fp_per_trial": self.fp_per_trial,
            "latencies_ms": self.latencies_ms,
            "n_trials": self.n_trials,
            "metadata": self.metadata,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def split_dataset(dataset: SpikeDataset, test_fraction: float, seed: int
                  ) -> tuple[SpikeDataset, SpikeDataset]:
    """Deterministic stratified train/test split (per-class shuffle)."""
    if not (0.0 < test_fraction < 1.0):
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in range(1, dataset.class_count + 1):
        members = [i for i, t in enumerate(dataset.trials) if t.label == cls]
        order = rng.permutation(len(members))
        n_test = max(1, int(round(test_fraction * len(members)))) if members else 0
        for pos, k in enumerate(order):
            (test_idx if pos < n_test else train_idx).append(members[k])
    train = SpikeDataset([dataset.trials[i] for i in sorted(train_idx)],
                         dataset.channel_count, dataset.class_count, dict(dataset.metadata))
    test = SpikeDataset([dataset.trials[i] for i in sorted(test_idx)],
                        dataset.channel_count, dataset.class_count, dict(dataset.metadata))
    return train, test


def majority_class(s_ticks: np.ndarray, m: int) -> int:
    """Majority vote with lowest-class tie-break; class 1 if no ticks."""
    if len(s_ticks) == 0:
        return 1
    counts = np.bincount(s_ticks, minlength=m + 1)
    return int(np.argmax(counts[1:])) + 1


def score_trial(result: DecodeResult, trial: Trial, model: DecoderModel,
                tol_ms: float) -> dict:
    """Type vote, onset hits and false positives for one decoded trial."""
    onset_ms = trial.onset / 1000.0
    plateau = (result.t_ms >= model.trap.t1_ms) & (result.t_ms <= model.trap.t2_ms)
    predicted = majority_class(result.s[plateau], model.m)
    detections = result.detections_ms()
    in_window = np.abs(detections - onset_ms) <= tol_ms
    hits = detections[in_window]
    return {
        "predicted": predicted,
        "hit": bool(in_window.any()),
        "latency_ms": float(hits[0] - onset_ms) if in_window.any() else None,
        "false_positives": int(np.sum(~in_window)),
    }


def evaluate(dataset: SpikeDataset, model: DecoderModel, chip: ChipInstance,
             noise_on: bool = False, noise_seed: int = 0,
             tol_ms: float = 150.0) -> EvalReport:
    """Score a test set trial by trial.

    Type accuracy is the fraction of trials whose plateau majority class
    matches the label; TPR the fraction with a detection within ``tol_ms``
    of the true onset; detections outside that window count as false
    positives.  With noise on, each trial uses its own counter-derived
    stream, so scores are independent of evaluation order.
    """
    if not dataset.trials:
        raise ValueError("cannot evaluate an empty test set")
    confusion = np.zeros((dataset.class_count, dataset.class_count), dtype=np.int64)
    hits = 0
    fps = 0
    latencies = []
    for idx, trial in enumerate(dataset.trials):
        rng = np.random.default_rng([noise_seed, idx]) if noise_on else None
        result = decode_stream(trial, model, chip, noise_on=noise_on, rng=rng)
        scores = score_trial(result, trial, model, tol_ms)
        confusion[trial.label - 1, scores["predicted"] - 1] += 1
        hits += scores["hit"]
        fps += scores["false_positives"]
        if scores["latency_ms"] is not None:
            latencies.append(scores["latency_ms"])
    n = len(dataset.trials)
    return EvalReport(
        accuracy=float(np.trace(confusion)) / n,
        confusion=confusion,
        tpr=hits / n,
        fp_per_trial=fps / n,
        latencies_ms=latencies,
        n_trials=n,
        metadata={"aggregation": "per-trial plateau majority", "tol_ms": tol_ms},
    )


def roc_sweep(dataset: SpikeDataset, model: DecoderModel, chip: ChipInstance,
              theta_grid: np.ndarray, noise_on: bool = False, noise_seed: int = 0,
              tol_ms: float = 150.0) -> list[tuple[float, float, float]]:
    """(theta, TPR, FP/trial) over a threshold grid, sorted by theta.

    The hidden-layer streams do not depend on theta, so they are computed
    once per trial and only the thresholding and tracking are re-run.
    """
    thetas = sorted(float(t) for t in np.asarray(theta_grid).ravel())
    if not thetas:
        raise ValueError("theta grid is empty")
    streams = []
    for idx, trial in enumerate(dataset.trials):
        rng = np.random.default_rng([noise_seed, idx]) if noise_on else None
        result = decode_stream(trial, model, chip, noise_on=noise_on, rng=rng)
        streams.append((trial, result.t_ms, result.o[:, model.m]))

    points = []
    for theta in thetas:
        hits = 0
        fps = 0
        for trial, t_ms, onset_out in streams:
            fsm = TrackingFsm(model.lam, model.tau, model.tr_ms, model.frontend.t_s_ms)
            g_track = np.array([fsm.step(int(v > theta)) for v in onset_out])
            rising = (g_track == 1) & (np.concatenate([[0], g_track[:-1]]) == 0)
            detections = t_ms[rising]
            in_window = np.abs(detections - trial.onset / 1000.0) <= tol_ms
            hits += bool(in_window.any())
            fps += int(np.sum(~in_window))
        n = len(streams)
        points.append((theta, hits / n, fps / n))
    return points


def write_roc_csv(path: str | Path, points: list[tuple[float, float, float]]) -> None:
    """ROC CSV: ``theta,tpr,fp_per_trial``."""
    lines = ["theta,tpr,fp_per_trial"]
    for theta, tpr, fp in points:
        lines.append(f"{theta!r},{tpr!r},{fp!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
