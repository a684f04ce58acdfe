"""Efficiency and quality measurement: expected time reduction rate,
task quality scores, layer-similarity saturation profiles, and
threshold-sweep tradeoff tables.

Wall-clock time is informational only; the layer-count based expected
time reduction rate is the efficiency metric.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import EOS, SyntheticExample
from .engine import ExitTrace, generate
from .exitpolicy import ExitPolicyConfig
from .model import ModelConfig

CSV_HEADER = ("policy,theta,beta,tau,time_reduction,quality,exact_match,"
              "token_f1,n_examples,wall_ms_per_example")


@dataclass
class BenchRow:
    policy: str
    theta: float
    beta: float
    tau: float
    time_reduction: float
    quality: float
    exact_match: float
    token_f1: float
    n_examples: int
    wall_ms_per_example: float


@dataclass
class SaturationProfile:
    image: list[float]
    text: list[float]
    decoder: list[float]


def fmt_float(x: float) -> str:
    """17-significant-digit decimal rendering (lossless for float64)."""
    return f"{x:.17g}"


def expected_time_reduction(trace: ExitTrace, cfg: ModelConfig,
                            encoder_weighting: str = "mean") -> float:
    """1 - [n_E/N_E + (sum w_i*n_D)/(sum w_i*N_D)] / 2 from an exit trace.

    n_E is the mean of the two encoder exit layers by default;
    encoder_weighting="tokens" weights them by modality token counts
    instead (sensitivity variant).
    """
    exits = trace.per_token_decoder_exit
    if not exits:
        raise ValueError("trace has no emitted tokens")
    p, q = trace.image_exit_layer, trace.text_exit_layer
    if encoder_weighting == "tokens":
        ni, nt = trace.image_tokens, trace.text_tokens
        enc_frac = (ni * p + nt * q) / ((ni + nt) * cfg.n_enc_layers)
    elif encoder_weighting == "mean":
        enc_frac = ((p + q) / 2.0) / cfg.n_enc_layers
    else:
        raise ValueError(f"unknown encoder_weighting {encoder_weighting!r}")
    dec_frac = sum(exits) / (len(exits) * cfg.n_dec_layers)
    return 1.0 - (enc_frac + dec_frac) / 2.0


def dataset_time_reduction(traces, cfg: ModelConfig,
                           encoder_weighting: str = "mean") -> float:
    traces = list(traces)
    if not traces:
        raise ValueError("no traces")
    return float(np.mean([expected_time_reduction(t, cfg, encoder_weighting)
                          for t in traces]))


def _strip_eos(tokens) -> list[int]:
    return [t for t in tokens if t != EOS]


def token_f1(pred, ref) -> float:
    """Token-multiset F1 against a single reference."""
    pred, ref = _strip_eos(pred), _strip_eos(ref)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = 0
    remaining = list(ref)
    for t in pred:
        if t in remaining:
            remaining.remove(t)
            overlap += 1
    return 2.0 * overlap / (len(pred) + len(ref))


def quality_scores(outputs, references, task: str) -> dict[str, float]:
    """Classification: accuracy. Generation: exact match and token F1."""
    outputs, references = list(outputs), list(references)
    if len(outputs) != len(references):
        raise ValueError(
            f"{len(outputs)} outputs vs {len(references)} references")
    if not outputs:
        raise ValueError("no outputs to score")
    em = float(np.mean([_strip_eos(o) == _strip_eos(r)
                        for o, r in zip(outputs, references)]))
    f1 = float(np.mean([token_f1(o, r) for o, r in zip(outputs, references)]))
    if task == "entail":
        acc = float(np.mean([
            (_strip_eos(o)[:1] or [None])[0] == _strip_eos(r)[0]
            for o, r in zip(outputs, references)]))
        return {"accuracy": acc, "exact_match": em, "token_f1": f1}
    return {"accuracy": em, "exact_match": em, "token_f1": f1}


def evaluate(p, cfg: ModelConfig, dataset, policy: ExitPolicyConfig,
             encoder_weighting: str = "mean"):
    """Run the engine over a dataset; returns (scores, time_reduction,
    traces, outputs, wall seconds)."""
    outputs, traces = [], []
    t0 = time.perf_counter()
    for ex in dataset:
        out = generate(ex, p, cfg, policy)
        outputs.append(out.tokens)
        traces.append(out.trace)
    wall = time.perf_counter() - t0
    refs = [ex.target_with_eos() for ex in dataset]
    scores = quality_scores(outputs, refs, dataset[0].task)
    reduction = dataset_time_reduction(traces, cfg, encoder_weighting)
    return scores, reduction, traces, outputs, wall


def sweep_policy(kind: str, theta: float,
                 base: ExitPolicyConfig) -> ExitPolicyConfig:
    """Policy for one sweep grid point: similarity kinds gate all three
    stacks at theta; confidence sweeps the level; patience sweeps the
    patience count (theta rounded)."""
    kw = dict(beta=base.beta, tau=base.tau, total_steps=base.total_steps,
              confidence_level=base.confidence_level, patience=base.patience)
    if kind in ("static", "decay"):
        return ExitPolicyConfig(kind=kind, theta=theta, theta_image=theta,
                                theta_text=theta, **kw)
    if kind == "confidence":
        kw["confidence_level"] = theta
        return ExitPolicyConfig(kind=kind, **kw)
    if kind == "patience":
        kw["patience"] = max(1, int(round(theta)))
        return ExitPolicyConfig(kind=kind, **kw)
    return ExitPolicyConfig(kind="never")


def threshold_sweep(p, cfg: ModelConfig, dataset, theta_grid, kind: str,
                    base: ExitPolicyConfig | None = None,
                    measure_wall: bool = False,
                    encoder_weighting: str = "mean") -> list[BenchRow]:
    theta_grid = list(theta_grid)
    if not theta_grid:
        raise ValueError("empty theta grid")
    base = base or ExitPolicyConfig(kind=kind if kind in
                                    ("static", "decay") else "never")
    quality_key = "accuracy" if dataset[0].task == "entail" else "exact_match"
    rows = []
    for theta in theta_grid:
        policy = sweep_policy(kind, theta, base)
        scores, reduction, traces, _, wall = evaluate(
            p, cfg, dataset, policy, encoder_weighting)
        rows.append(BenchRow(
            policy=kind, theta=theta, beta=policy.beta, tau=policy.tau,
            time_reduction=reduction, quality=scores[quality_key],
            exact_match=scores["exact_match"], token_f1=scores["token_f1"],
            n_examples=len(dataset),
            wall_ms_per_example=(1000.0 * wall / len(dataset)
                                 if measure_wall else 0.0)))
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            r.policy, fmt_float(r.theta), fmt_float(r.beta), fmt_float(r.tau),
            fmt_float(r.time_reduction), fmt_float(r.quality),
            fmt_float(r.exact_match), fmt_float(r.token_f1),
            str(r.n_examples), fmt_float(r.wall_ms_per_example)]))
    return "\n".join(lines) + "\n"


def saturation_profile(p, cfg: ModelConfig, dataset,
                       sample_count: int) -> SaturationProfile:
    """Mean layer-to-layer similarity per stack under policy=never.

    Entry i-1 is the mean signal between layer i and layer i-1 (layer 1
    compares against the embeddings)."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    policy = ExitPolicyConfig(kind="never")
    img = np.zeros(cfg.n_enc_layers)
    txt = np.zeros(cfg.n_enc_layers)
    dec = np.zeros(cfg.n_dec_layers)
    n_tokens = 0
    sample = list(dataset)[:sample_count]
    for ex in sample:
        out = generate(ex, p, cfg, policy, record_signals=True)
        sims = out.trace.per_layer_similarities
        img += np.array(sims["image"])
        txt += np.array(sims["text"])
        for step_sigs in sims["decoder"]:
            dec += np.array(step_sigs)
            n_tokens += 1
    return SaturationProfile(list(img / len(sample)), list(txt / len(sample)),
                             list(dec / max(1, n_tokens)))


def profile_to_csv(prof: SaturationProfile) -> str:
    lines = ["layer,stack,mean_similarity"]
    for stack, values in (("image", prof.image), ("text", prof.text),
                          ("decoder", prof.decoder)):
        for i, v in enumerate(values, start=1):
            lines.append(f"{i},{stack},{fmt_float(v)}")
    return "\n".join(lines) + "\n"
